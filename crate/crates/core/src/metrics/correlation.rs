use crate::error::{Error, Result};
use crate::signal::LeadSet;
use crate::tensor::Tensor;

/// Pearson correlation between leads, pooling the samples of all records.
/// Returns a symmetric `[C, C]` matrix with a unit diagonal.
pub fn corr_matrix(records: &[LeadSet]) -> Result<Tensor> {
    let first = records.first().ok_or(Error::Empty("records"))?;
    let c = first.n_leads();
    if records.iter().any(|r| r.n_leads() != c) {
        return Err(Error::ShapeMismatch("records disagree on lead count".into()));
    }
    let n: usize = records.iter().map(|r| r.length()).sum();
    let mut mean = vec![0.0; c];
    for r in records {
        for row in r.samples().chunks_exact(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; c * c];
    for r in records {
        for row in r.samples().chunks_exact(c) {
            for i in 0..c {
                let di = row[i] - mean[i];
                for j in i..c {
                    cov[i * c + j] += di * (row[j] - mean[j]);
                }
            }
        }
    }
    let sd: Vec<f64> = (0..c).map(|i| cov[i * c + i].sqrt()).collect();
    if let Some(i) = sd.iter().position(|&s| s == 0.0) {
        return Err(Error::ConstantLead(i));
    }
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        out[i * c + i] = 1.0;
        for j in i + 1..c {
            let r = (cov[i * c + j] / (sd[i] * sd[j])).clamp(-1.0, 1.0);
            out[i * c + j] = r;
            out[j * c + i] = r;
        }
    }
    Ok(Tensor::matrix(c, c, out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrError {
    pub avg_abs: f64,
    pub max_abs: f64,
}

fn check_symmetric(m: &Tensor) -> Result<usize> {
    let (r, c) = m.dims2().ok_or_else(|| Error::ShapeMismatch("correlation matrix must be 2-D".into()))?;
    if r != c {
        return Err(Error::ShapeMismatch(format!("{r}x{c} is not square")));
    }
    let d = m.data();
    for i in 0..r {
        for j in i + 1..r {
            if d[i * r + j] != d[j * r + i] {
                return Err(Error::Asymmetric(i, j));
            }
        }
    }
    Ok(r)
}

/// Mean and max of `|real - synth|` over the unordered off-diagonal pairs.
pub fn corr_error(real: &Tensor, synth: &Tensor) -> Result<CorrError> {
    let c = check_symmetric(real)?;
    if check_symmetric(synth)? != c {
        return Err(Error::ShapeMismatch("correlation matrices differ in size".into()));
    }
    if c < 2 {
        return Err(Error::invalid("need at least two leads"));
    }
    let (mut sum, mut max, mut n) = (0.0, 0.0f64, 0usize);
    for i in 0..c {
        for j in i + 1..c {
            let d = (real.data()[i * c + j] - synth.data()[i * c + j]).abs();
            sum += d;
            max = max.max(d);
            n += 1;
        }
    }
    Ok(CorrError { avg_abs: sum / n as f64, max_abs: max })
}
