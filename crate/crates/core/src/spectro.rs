//! Multi-resolution STFT, mel filterbanks, log-mel spectrograms and the
//! differentiable multi-resolution log-mel L1 loss.
//!
//! The STFT is a matrix product: frames (no padding) times a real and an
//! imaginary DFT matrix with the analysis window and the orthonormal `1/sqrt(W)`
//! scale folded in. Magnitudes (not power) go through the mel bank, then
//! `ln(max(., floor))`.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::signal::LeadSet;
use crate::tensor::{matmul_into, Bindings, ComputeGraph, NodeId, Tensor};

pub const DEFAULT_LOG_FLOOR: f64 = 1e-5;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / W)`.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftResolution {
    pub window_length: usize,
    pub hop_length: usize,
    pub window: WindowKind,
}

impl StftResolution {
    /// Hann window, hop of a quarter window.
    pub fn hann(window_length: usize) -> Self {
        Self { window_length, hop_length: (window_length / 4).max(1), window: WindowKind::Hann }
    }

    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    pub fn frames(&self, len: usize) -> usize {
        (len - self.window_length) / self.hop_length + 1
    }

    pub fn check(&self, len: usize) -> Result<()> {
        if self.window_length == 0 || !self.window_length.is_power_of_two() {
            return Err(Error::invalid(format!("window length {} is not a power of two", self.window_length)));
        }
        if self.hop_length == 0 || self.hop_length > self.window_length {
            return Err(Error::invalid(format!("hop {} must be in 1..={}", self.hop_length, self.window_length)));
        }
        if len < self.window_length {
            return Err(Error::invalid(format!("signal length {len} shorter than window {}", self.window_length)));
        }
        Ok(())
    }

    /// `(re, im)` analysis matrices `[window, bins]`.
    pub fn dft_matrices(&self) -> (Tensor, Tensor) {
        let w = self.window_length;
        let bins = self.bins();
        let win = self.window.coefficients(w);
        let norm = 1.0 / (w as f64).sqrt();
        let mut re = vec![0.0; w * bins];
        let mut im = vec![0.0; w * bins];
        for n in 0..w {
            for k in 0..bins {
                // reduce the phase index first so large n*k keeps full precision
                let phase = 2.0 * PI * ((n * k) % w) as f64 / w as f64;
                re[n * bins + k] = win[n] * norm * phase.cos();
                im[n * bins + k] = -win[n] * norm * phase.sin();
            }
        }
        (Tensor::matrix(w, bins, re), Tensor::matrix(w, bins, im))
    }
}

/// Triangular mel filters, `n_mels x (window / 2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelBank {
    pub n_mels: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub sample_rate_hz: f64,
    pub window_length: usize,
    pub centers_hz: Vec<f64>,
    pub weights: Tensor,
}

/// Filter centres equally spaced in mel between `f_min` and `f_max`; each row
/// is scaled so its largest tap is exactly 1.
pub fn mel_filterbank(
    sample_rate_hz: f64,
    window_length: usize,
    n_mels: usize,
    f_min_hz: f64,
    f_max_hz: f64,
) -> Result<MelBank> {
    if n_mels == 0 {
        return Err(Error::invalid("n_mels must be >= 1"));
    }
    let nyquist = sample_rate_hz / 2.0;
    if f_max_hz > nyquist {
        return Err(Error::invalid(format!("f_max {f_max_hz} Hz exceeds Nyquist {nyquist} Hz")));
    }
    if !(f_min_hz >= 0.0 && f_min_hz < f_max_hz) {
        return Err(Error::invalid(format!("need 0 <= f_min < f_max, got {f_min_hz}..{f_max_hz}")));
    }
    let bins = window_length / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(f_min_hz), hz_to_mel(f_max_hz));
    let edges: Vec<f64> =
        (0..n_mels + 2).map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64)).collect();
    let mut weights = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * sample_rate_hz / window_length as f64;
            *w = if f > left && f <= centre {
                (f - left) / (centre - left)
            } else if f > centre && f < right {
                (right - f) / (right - centre)
            } else {
                0.0
            };
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::invalid(format!(
                "mel filter {m} ({left:.2}..{right:.2} Hz) covers no DFT bin; use fewer mels or a longer window"
            )));
        }
        row.iter_mut().for_each(|w| *w /= peak);
    }
    Ok(MelBank {
        n_mels,
        f_min_hz,
        f_max_hz,
        sample_rate_hz,
        window_length,
        centers_hz: edges[1..=n_mels].to_vec(),
        weights: Tensor::matrix(n_mels, bins, weights),
    })
}

/// Complex STFT of one lead, `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stft {
    pub frames: usize,
    pub bins: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Stft {
    pub fn magnitude(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| (r * r + i * i).sqrt()).collect()
    }

    /// Frame energy of the implied full spectrum: interior bins count twice.
    pub fn onesided_energy(&self, frame: usize, window_length: usize) -> f64 {
        (0..self.bins)
            .map(|k| {
                let idx = frame * self.bins + k;
                let p = self.re[idx] * self.re[idx] + self.im[idx] * self.im[idx];
                let edge = k == 0 || (window_length % 2 == 0 && k == window_length / 2);
                if edge {
                    p
                } else {
                    2.0 * p
                }
            })
            .sum()
    }
}

pub fn stft(lead: &[f64], res: &StftResolution) -> Result<Stft> {
    res.check(lead.len())?;
    let (re_m, im_m) = res.dft_matrices();
    let (w, bins, frames) = (res.window_length, res.bins(), res.frames(lead.len()));
    let mut framed = Vec::with_capacity(frames * w);
    for f in 0..frames {
        framed.extend_from_slice(&lead[f * res.hop_length..f * res.hop_length + w]);
    }
    let mut re = vec![0.0; frames * bins];
    let mut im = vec![0.0; frames * bins];
    matmul_into(&framed, re_m.data(), &mut re, frames, w, bins);
    matmul_into(&framed, im_m.data(), &mut im, frames, w, bins);
    Ok(Stft { frames, bins, re, im })
}

/// One STFT resolution with its mel bank and cached matrices.
#[derive(Debug, Clone)]
pub struct SpectralResolution {
    pub stft: StftResolution,
    pub bank: MelBank,
    dft_re: Tensor,
    dft_im: Tensor,
    bank_t: Tensor,
}

impl SpectralResolution {
    pub fn new(stft: StftResolution, bank: MelBank) -> Result<Self> {
        if bank.window_length != stft.window_length {
            return Err(Error::invalid("mel bank built for a different window length"));
        }
        let (dft_re, dft_im) = stft.dft_matrices();
        let bank_t = bank.weights.transpose();
        Ok(Self { stft, bank, dft_re, dft_im, bank_t })
    }

    /// Hann window of `window` samples, hop `window / 4`, `window / 4` mels
    /// over `0..Nyquist`.
    pub fn standard(sample_rate_hz: f64, window: usize) -> Result<Self> {
        let stft = StftResolution::hann(window);
        let bank = mel_filterbank(sample_rate_hz, window, (window / 4).max(1), 0.0, sample_rate_hz / 2.0)?;
        Self::new(stft, bank)
    }
}

#[derive(Debug, Clone)]
pub struct MidtConfig {
    pub resolutions: Vec<SpectralResolution>,
    pub log_floor: f64,
}

impl MidtConfig {
    pub const DEFAULT_WINDOWS: [usize; 3] = [32, 64, 128];

    pub fn new(resolutions: Vec<SpectralResolution>, log_floor: f64) -> Result<Self> {
        if resolutions.len() < 2 {
            return Err(Error::invalid("multi-resolution loss needs at least two resolutions"));
        }
        if !(log_floor > 0.0) {
            return Err(Error::invalid("log floor must be positive"));
        }
        Ok(Self { resolutions, log_floor })
    }

    pub fn with_windows(sample_rate_hz: f64, windows: &[usize]) -> Result<Self> {
        let res =
            windows.iter().map(|&w| SpectralResolution::standard(sample_rate_hz, w)).collect::<Result<Vec<_>>>()?;
        Self::new(res, DEFAULT_LOG_FLOOR)
    }

    pub fn standard(sample_rate_hz: f64) -> Result<Self> {
        Self::with_windows(sample_rate_hz, &Self::DEFAULT_WINDOWS)
    }

    pub fn max_window(&self) -> usize {
        self.resolutions.iter().map(|r| r.stft.window_length).max().unwrap_or(0)
    }
}

/// Log-mel of a channels-first `[leads, len]` node: `[leads * frames, n_mels]`.
pub fn log_mel_node(g: &mut ComputeGraph, signal: NodeId, res: &SpectralResolution, floor: f64) -> NodeId {
    let frames = g.frame(signal, res.stft.window_length, res.stft.hop_length);
    let re_m = g.constant(res.dft_re.clone());
    let im_m = g.constant(res.dft_im.clone());
    let re = g.matmul(frames, re_m);
    let im = g.matmul(frames, im_m);
    let re2 = g.square(re);
    let im2 = g.square(im);
    let power = g.add(re2, im2);
    let mag = g.sqrt(power);
    let bank = g.constant(res.bank_t.clone());
    let mel = g.matmul(mag, bank);
    g.log_floor(mel, floor)
}

/// Mean absolute log-mel difference, averaged uniformly over resolutions.
pub fn spectral_l1_node(
    g: &mut ComputeGraph,
    x_hat: NodeId,
    x: NodeId,
    resolutions: &[SpectralResolution],
    floor: f64,
) -> NodeId {
    let mut total: Option<NodeId> = None;
    for res in resolutions {
        let a = log_mel_node(g, x_hat, res, floor);
        let b = log_mel_node(g, x, res, floor);
        let d = g.sub(a, b);
        let ad = g.abs(d);
        let m = g.mean(ad);
        total = Some(match total {
            Some(t) => g.add(t, m),
            None => m,
        });
    }
    let total = total.expect("at least one resolution");
    g.scale(total, 1.0 / resolutions.len() as f64)
}

pub fn midt_loss_node(g: &mut ComputeGraph, x_hat: NodeId, x: NodeId, cfg: &MidtConfig) -> NodeId {
    spectral_l1_node(g, x_hat, x, &cfg.resolutions, cfg.log_floor)
}

fn check_len(len: usize, resolutions: &[SpectralResolution]) -> Result<()> {
    resolutions.iter().try_for_each(|r| r.stft.check(len))
}

/// `frames x n_mels` log-mel spectrogram of one lead.
pub fn log_mel_spectrogram(lead: &[f64], res: &SpectralResolution, floor: f64) -> Result<Tensor> {
    check_len(lead.len(), std::slice::from_ref(res))?;
    let mut g = ComputeGraph::new();
    let x = g.constant(Tensor::matrix(1, lead.len(), lead.to_vec()));
    log_mel_node(&mut g, x, res, floor);
    Ok(g.evaluate(&Bindings::new())?)
}

/// Spectral L1 between two lead sets over arbitrary resolutions (one is allowed).
pub fn spectral_l1(x_hat: &LeadSet, x: &LeadSet, resolutions: &[SpectralResolution], floor: f64) -> Result<f64> {
    if !x_hat.same_shape(x) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            x_hat.length(),
            x_hat.n_leads(),
            x.length(),
            x.n_leads()
        )));
    }
    if resolutions.is_empty() {
        return Err(Error::invalid("no resolutions"));
    }
    check_len(x.length(), resolutions)?;
    let mut g = ComputeGraph::new();
    let a = g.constant(x_hat.to_channels());
    let b = g.constant(x.to_channels());
    spectral_l1_node(&mut g, a, b, resolutions, floor);
    Ok(g.evaluate(&Bindings::new())?.data()[0])
}

pub fn midt_loss(x_hat: &LeadSet, x: &LeadSet, cfg: &MidtConfig) -> Result<f64> {
    spectral_l1(x_hat, x, &cfg.resolutions, cfg.log_floor)
}

pub fn write_matrix_csv(m: &Tensor, out: &mut impl Write) -> Result<()> {
    let (rows, cols) = m.dims2().ok_or_else(|| Error::ShapeMismatch("expected a matrix".into()))?;
    for r in 0..rows {
        let line: Vec<String> = m.data()[r * cols..(r + 1) * cols].iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
