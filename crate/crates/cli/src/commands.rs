//! Pipeline stages. Each stage reads what earlier stages left in the run
//! directory and reports the files it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use midt_core::diffusion::{train, write_loss_trace, DiffusionModel, LossRecord};
use midt_core::downstream::{
    faithfulness, fold_mix_experiment, train_classifier, write_fold_mix_csv, DiffusionGenerator, FoldMixPlan,
    FoldMixTable, Generator,
};
use midt_core::metrics::{correlation_report, fidelity_report, outlier_flags, privacy_report, write_fidelity_csv};
use midt_core::signal::{make_oracle_dataset, read_dataset, record_to_csv, write_dataset, Dataset};
use midt_core::spectro::{log_mel_spectrogram, write_matrix_csv, SpectralResolution};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{stage, stage_seed, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::{write_csv, write_summary, Provenance};

pub const DATA: &str = "data";
pub const MODEL: &str = "model";
pub const SYNTH: &str = "synth";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Synth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Sample,
    Eval,
    Privacy,
    Downstream,
    Report,
    SpectroDump { record: usize, source: Source },
    ExportRecord { record: usize, source: Source },
}

/// One run directory and the configuration that names it.
pub struct Run {
    pub cfg: RunConfig,
    pub hash: String,
    pub dir: PathBuf,
}

impl Run {
    /// Creates the run directory and records the resolved configuration in it.
    pub fn open(cfg: RunConfig) -> CliResult<Self> {
        let hash = cfg.hash();
        let dir = cfg.run_dir();
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let path = dir.join("config.toml");
        fs::write(&path, cfg.to_toml()).map_err(CliError::io(&path))?;
        Ok(Self { cfg, hash, dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn provenance(&self) -> Provenance {
        Provenance::new(&self.hash, self.cfg.seed)
    }

    fn read(&self, base: &str) -> CliResult<Dataset> {
        let header = self.path(base).with_extension("toml");
        if !header.exists() {
            return Err(CliError::MissingFile(header));
        }
        Ok(read_dataset(&self.path(base))?)
    }

    pub fn real(&self) -> CliResult<Dataset> {
        self.read(DATA)
    }

    fn fresh_model(&self, n_leads: usize) -> CliResult<DiffusionModel> {
        let schedule = self.cfg.schedule.build()?;
        let seed = stage_seed(self.cfg.seed, stage::MODEL_INIT);
        Ok(DiffusionModel::new(self.cfg.net.clone(), schedule, self.cfg.conditioning, n_leads, seed)?)
    }

    pub fn model(&self) -> CliResult<DiffusionModel> {
        let mut model = self.fresh_model(self.cfg.data.n_leads)?;
        model.params = load_checkpoint(&self.path(MODEL), &model.params, &self.hash)?;
        Ok(model)
    }

    /// Test-fold records that condition the evaluation samples.
    fn templates(&self, real: &Dataset) -> Dataset {
        let mut t = real.in_folds(&self.cfg.splits.test);
        if self.cfg.eval.n_records > 0 {
            t.records.truncate(self.cfg.eval.n_records);
        }
        t
    }

    /// The evaluation samples, drawing and storing them if no earlier stage
    /// did. They are always read back from disk so that every consumer sees
    /// the same `f32`-rounded values.
    fn synth(&self, written: &mut Vec<PathBuf>) -> CliResult<Dataset> {
        if !self.path(SYNTH).with_extension("toml").exists() {
            written.extend(self.sample()?);
        }
        self.read(SYNTH)
    }

    pub fn execute(&self, cmd: &Command) -> CliResult<Vec<PathBuf>> {
        match cmd {
            Command::GenData => self.gen_data(),
            Command::Train => self.train(),
            Command::Sample => self.sample(),
            Command::Eval => self.eval(),
            Command::Privacy => self.privacy(),
            Command::Downstream => self.downstream(),
            Command::Report => self.report(),
            Command::SpectroDump { record, source } => self.spectro_dump(*record, *source),
            Command::ExportRecord { record, source } => self.export_record(*record, *source),
        }
    }

    fn gen_data(&self) -> CliResult<Vec<PathBuf>> {
        let ds = make_oracle_dataset(&self.cfg.data, stage_seed(self.cfg.seed, stage::DATA))?;
        write_dataset(&ds, &self.path(DATA))?;
        let mut class_counts = vec![0usize; self.cfg.downstream.n_classes];
        for r in &ds.records {
            if let Some(c) = r.meta.class().filter(|&c| c < class_counts.len()) {
                class_counts[c] += 1;
            }
        }
        let summary = GenDataSummary {
            records: ds.len(),
            patients: ds.patient_ids().len(),
            n_leads: self.cfg.data.n_leads,
            length: self.cfg.data.length,
            sample_rate_hz: self.cfg.data.sample_rate_hz,
            folds: ds.folds().into_iter().collect(),
            class_counts,
        };
        let report = self.path("gen_data.toml");
        write_summary(&report, &self.provenance(), &summary)?;
        Ok(vec![self.path("data.toml"), self.path("data.bin"), report])
    }

    fn train(&self) -> CliResult<Vec<PathBuf>> {
        let real = self.real()?;
        let data = real.in_folds(&self.cfg.splits.train);
        if data.is_empty() {
            return Err(CliError::Setting("training folds hold no records".into()));
        }
        let mut model = self.fresh_model(self.cfg.data.n_leads)?;
        let trace = train(&data, &mut model, &self.cfg.train_config())?;
        save_checkpoint(&model.params, &self.path(MODEL), &self.hash)?;
        let prov = self.provenance();
        let trace_path = self.path("loss_trace.csv");
        write_csv(&trace_path, &prov, |b| write_loss_trace(&trace, b))?;
        let summary = TrainSummary::new(&trace, data.len(), model.params.scalar_count());
        let report = self.path("train.toml");
        write_summary(&report, &prov, &summary)?;
        Ok(vec![self.path("model.toml"), self.path("model.bin"), trace_path, report])
    }

    fn sample(&self) -> CliResult<Vec<PathBuf>> {
        let real = self.real()?;
        let model = self.model()?;
        let templates = self.templates(&real);
        if templates.is_empty() {
            return Err(CliError::Setting("test folds hold no records to condition on".into()));
        }
        let synth =
            DiffusionGenerator { model: &model }.generate(&templates, stage_seed(self.cfg.seed, stage::SAMPLE))?;
        write_dataset(&synth, &self.path(SYNTH))?;
        Ok(vec![self.path("synth.toml"), self.path("synth.bin")])
    }

    fn eval(&self) -> CliResult<Vec<PathBuf>> {
        let mut written = Vec::new();
        let real = self.templates(&self.real()?).leadsets();
        let synth = self.synth(&mut written)?.leadsets();
        if real.len() != synth.len() {
            return Err(CliError::Setting(format!(
                "{} stored samples for {} templates; delete synth.* to resample",
                synth.len(),
                real.len()
            )));
        }
        let prov = self.provenance();
        let fid = fidelity_report(&real, &synth, &self.cfg.eval.ssim)?;
        let corr = correlation_report(&real, &synth)?;
        let rmses: Vec<f64> = fid.per_record.iter().map(|p| p.rmse).collect();
        let outliers = if rmses.len() >= 4 { outlier_flags(&rmses)?.flags.iter().filter(|&&f| f).count() } else { 0 };
        let files = [
            ("fidelity.csv", None),
            ("corr_real.csv", Some(&corr.real)),
            ("corr_synth.csv", Some(&corr.synth)),
            ("corr_diff.csv", Some(&corr.difference)),
        ];
        for (name, matrix) in files {
            let path = self.path(name);
            match matrix {
                None => write_csv(&path, &prov, |b| write_fidelity_csv(&fid, b))?,
                Some(m) => write_csv(&path, &prov, |b| write_matrix_csv(m, b))?,
            }
            written.push(path);
        }
        let m = &fid.mean;
        let summary = EvalSummary {
            records: real.len(),
            rmse: m.rmse,
            mse: m.mse,
            snr_db: m.snr_db,
            fourier: m.fourier,
            hausdorff: m.hausdorff,
            ssim: m.ssim,
            data_range: fid.data_range,
            rmse_outliers: outliers,
            corr_avg_abs: corr.error.avg_abs,
            corr_max_abs: corr.error.max_abs,
        };
        let report = self.path("eval.toml");
        write_summary(&report, &prov, &summary)?;
        written.push(report);
        Ok(written)
    }

    fn privacy(&self) -> CliResult<Vec<PathBuf>> {
        let real = self.real()?;
        let model = self.model()?;
        let splits = &self.cfg.splits;
        let mut members = real.in_folds(&splits.train);
        let held: Vec<u8> = splits.validation.iter().chain(&splits.test).copied().collect();
        let mut holdout = real.in_folds(&held);
        let n = self.cfg.privacy.n.min(members.len()).min(holdout.len());
        if n < 2 {
            return Err(CliError::Setting(format!("privacy needs >= 2 records per set, have {n}")));
        }
        members.records.truncate(n);
        holdout.records.truncate(n);
        // conditioned on the members' labels, the way a released model is used
        let synth =
            DiffusionGenerator { model: &model }.generate(&members, stage_seed(self.cfg.seed, stage::PRIVACY))?;
        let synth: Vec<_> = synth.leadsets().iter().map(|l| l.quantize_f32()).collect();
        let r = privacy_report(&members.leadsets(), &holdout.leadsets(), &synth)?;
        let summary = PrivacySummary {
            n,
            mir: r.mir,
            nnaa: r.nnaa,
            aa_train: r.aa_train,
            aa_holdout: r.aa_holdout,
            mean_train_to_synth: r.mean_train_to_synth,
            mean_holdout_to_synth: r.mean_holdout_to_synth,
        };
        let report = self.path("privacy.toml");
        write_summary(&report, &self.provenance(), &summary)?;
        Ok(vec![report])
    }

    fn downstream(&self) -> CliResult<Vec<PathBuf>> {
        let mut written = Vec::new();
        let real = self.real()?;
        let model = self.model()?;
        let synth = self.synth(&mut written)?;
        let clf_cfg = self.cfg.classifier_config();
        let prov = self.provenance();
        let d = &self.cfg.downstream;
        let splits = &self.cfg.splits;

        let clf = train_classifier(&real.in_folds(&splits.train), &clf_cfg)?;
        let faithful = faithfulness(&synth, &clf, d.faithfulness_threshold)?;

        let generator = DiffusionGenerator { model: &model };
        let generators: [(&str, &dyn Generator); 1] = [("midt", &generator)];
        let seed = stage_seed(self.cfg.seed, stage::DOWNSTREAM);
        let n = splits.train.len();
        let plan = |p: FoldMixPlan, steps: Vec<usize>| FoldMixPlan {
            base_folds: splits.train.clone(),
            test_fold: splits.test[0],
            steps,
            ..p
        };
        let mut plans = Vec::new();
        if d.augment {
            plans.push(("foldmix_augment.csv", plan(FoldMixPlan::augment(seed, d.repetitions), (1..=n).collect())));
        }
        if d.substitute {
            plans.push((
                "foldmix_substitute.csv",
                plan(FoldMixPlan::substitute(seed, d.repetitions), (0..=n).collect()),
            ));
        }
        let mut tables = Vec::new();
        for (name, plan) in &plans {
            let table = fold_mix_experiment(&real, &generators, plan, &clf_cfg)?;
            let path = self.path(name);
            write_csv(&path, &prov, |b| write_fold_mix_csv(&table, b))?;
            written.push(path);
            tables.push(table);
        }
        let summary = DownstreamSummary {
            faithfulness: faithful,
            classifier_final_loss: clf.final_loss.unwrap_or(f64::NAN),
            rows: tables.iter().flat_map(row_summaries).collect(),
        };
        let report = self.path("downstream.toml");
        write_summary(&report, &prov, &summary)?;
        written.push(report);
        Ok(written)
    }

    fn report(&self) -> CliResult<Vec<PathBuf>> {
        let mut combined = toml::Table::new();
        for stage in ["gen_data", "train", "eval", "privacy", "downstream"] {
            let path = self.path(&format!("{stage}.toml"));
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
            let mut table: toml::Table =
                text.parse().map_err(|e| CliError::Config { file: path.clone(), message: format!("{e}") })?;
            for key in ["config_hash", "seed", "metric_version"] {
                table.remove(key);
            }
            combined.insert(stage.to_string(), toml::Value::Table(table));
        }
        if combined.is_empty() {
            return Err(CliError::MissingFile(self.path("eval.toml")));
        }
        let path = self.path("report.toml");
        write_summary(&path, &self.provenance(), &combined)?;
        Ok(vec![path])
    }

    fn pick(&self, record: usize, source: Source) -> CliResult<midt_core::Record> {
        let ds = match source {
            Source::Real => self.real()?,
            Source::Synth => self.read(SYNTH)?,
        };
        let n = ds.len();
        ds.records
            .into_iter()
            .nth(record)
            .ok_or_else(|| CliError::Setting(format!("record {record} out of range, dataset has {n}")))
    }

    fn spectro_dump(&self, record: usize, source: Source) -> CliResult<Vec<PathBuf>> {
        let r = self.pick(record, source)?;
        let dir = self.path("spectro");
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let prov = self.provenance();
        let mut written = Vec::new();
        for &w in &self.cfg.train.midt_windows {
            let res = SpectralResolution::standard(r.leads.sample_rate_hz(), w)?;
            for c in 0..r.leads.n_leads() {
                let m = log_mel_spectrogram(&r.leads.lead(c), &res, self.cfg.train.log_floor)?;
                let path = dir.join(format!("{}_r{record}_w{w}_l{c}.csv", source_name(source)));
                write_csv(&path, &prov, |b| write_matrix_csv(&m, b))?;
                written.push(path);
            }
        }
        Ok(written)
    }

    fn export_record(&self, record: usize, source: Source) -> CliResult<Vec<PathBuf>> {
        let r = self.pick(record, source)?;
        let dir = self.path("records");
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let path = dir.join(format!("{}_r{record}.csv", source_name(source)));
        write_csv(&path, &self.provenance(), |b| record_to_csv(&r.leads, b))?;
        Ok(vec![path])
    }
}

fn source_name(s: Source) -> &'static str {
    match s {
        Source::Real => "real",
        Source::Synth => "synth",
    }
}

/// Loads the config at `path`, applies overrides, and runs `cmd`.
pub fn run(cmd: &Command, path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> CliResult<(Run, Vec<PathBuf>)> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = out {
        cfg.paths.out = out;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let run = Run::open(cfg)?;
    let written = run.execute(cmd)?;
    Ok((run, written))
}

#[derive(Serialize)]
struct GenDataSummary {
    records: usize,
    patients: usize,
    n_leads: usize,
    length: usize,
    sample_rate_hz: f64,
    folds: Vec<u8>,
    class_counts: Vec<usize>,
}

#[derive(Serialize)]
struct TrainSummary {
    records: usize,
    parameters: usize,
    steps: usize,
    first_total: f64,
    last_total: f64,
    /// Mean total loss over the first and last `window` steps.
    window: usize,
    mean_total_first: f64,
    mean_total_last: f64,
}

impl TrainSummary {
    fn new(trace: &[LossRecord], records: usize, parameters: usize) -> Self {
        let window = (trace.len() / 6).max(1).min(trace.len());
        let mean = |s: &[LossRecord]| s.iter().map(|r| r.total).sum::<f64>() / s.len().max(1) as f64;
        Self {
            records,
            parameters,
            steps: trace.len(),
            first_total: trace.first().map_or(f64::NAN, |r| r.total),
            last_total: trace.last().map_or(f64::NAN, |r| r.total),
            window,
            mean_total_first: mean(&trace[..window.min(trace.len())]),
            mean_total_last: mean(&trace[trace.len() - window.min(trace.len())..]),
        }
    }
}

#[derive(Serialize)]
struct EvalSummary {
    records: usize,
    rmse: f64,
    mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    snr_db: Option<f64>,
    fourier: f64,
    hausdorff: f64,
    ssim: f64,
    data_range: f64,
    rmse_outliers: usize,
    corr_avg_abs: f64,
    corr_max_abs: f64,
}

#[derive(Serialize)]
struct PrivacySummary {
    n: usize,
    mir: f64,
    nnaa: f64,
    aa_train: f64,
    aa_holdout: f64,
    mean_train_to_synth: f64,
    mean_holdout_to_synth: f64,
}

#[derive(Serialize)]
struct RowSummary {
    mode: String,
    label: String,
    k: Vec<usize>,
    mean_auroc: Vec<f64>,
    ci95: Vec<f64>,
}

#[derive(Serialize)]
struct DownstreamSummary {
    faithfulness: f64,
    classifier_final_loss: f64,
    rows: Vec<RowSummary>,
}

fn row_summaries(t: &FoldMixTable) -> Vec<RowSummary> {
    let mode = format!("{:?}", t.mode).to_lowercase();
    t.rows
        .iter()
        .map(|r| RowSummary {
            mode: mode.clone(),
            label: r.label.clone(),
            k: r.cells.iter().map(|c| c.k).collect(),
            mean_auroc: r.cells.iter().map(|c| c.mean).collect(),
            ci95: r.cells.iter().map(|c| c.ci95).collect(),
        })
        .collect()
}
