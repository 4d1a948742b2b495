//! Stage orchestration over a run directory.
//!
//! ```text
//! <run>/manifest.txt        key-value provenance and stage status
//! <run>/inputs/             ecg.csv, labs.csv (+ synth ground truth)
//! <run>/datasets/           tasks.csv and one <task_id>.csv per task
//! <run>/splits/             assignment.csv, retained.csv
//! <run>/models/             <task_id>.model, <task_id>.history.csv
//! <run>/reports/            eval.csv, table.txt, table.csv, subgroups/, explain/
//! ```
//!
//! Every stage records a key in the manifest: a digest of its configuration
//! and of the files it reads. A stage whose key is unchanged and whose
//! outputs exist is skipped, so an interrupted run resumes where it stopped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cohort::{
    build_cohort, enumerate_tasks, fold_class_counts, read_task_dataset, read_task_manifest, write_task_dataset,
    write_task_manifest, CohortConfig, CohortError, TaskDataset, TaskManifestEntry, TaskSpec, DEFAULT_HORIZON_S,
};
use crate::config::{ConfigError, KvConfig};
use crate::eval::{
    build_report_table, downsample_train_group, evaluate, macro_auroc, read_eval_reports, render_subgroup_table,
    subgroup_eval, write_eval_reports, write_subgroup_csv, BootstrapConfig, Category, EvalError, EvalReport, Group,
    ReportTable, SubgroupReport, DEFAULT_AUROC_FLOOR, DEFAULT_BOOTSTRAP_N,
};
use crate::explain::{
    sample_background, write_attributions, Explainer, ExplainError, GlobalImportance, DEFAULT_BACKGROUND_SIZE,
};
use crate::gbdt::{load_model, save_model, train, GbdtError, StumpEnsemble, TrainConfig};
use crate::ingest::{fmt_f64, load_ecg_table, load_lab_table, EcgSchema, IngestError, LabSchema};
use crate::split::{
    apply_assignment, read_assignment, stratified_group_split, write_assignment, Fold, FoldAssignment, SplitError,
    DEFAULT_RATIO,
};
use crate::synth::{generate, write_cohort, SynthConfig, SynthError, SynthFiles};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MIN_PER_CLASS: usize = 10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage input missing: {0}")]
    StageInputMissing(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Stable error name for machine-readable output.
    pub fn kind(&self) -> String {
        let inner = |s: &str| s.split([' ', '(', '{']).next().unwrap_or(s).to_string();
        match self {
            PipelineError::StageInputMissing(_) => "StageInputMissing".into(),
            PipelineError::ConfigInvalid(_) | PipelineError::Config(_) => "ConfigInvalid".into(),
            PipelineError::UnknownTask(_) => "UnknownTask".into(),
            PipelineError::Synth(SynthError::InvalidConfig(_)) => "ConfigInvalid".into(),
            PipelineError::Gbdt(GbdtError::InvalidConfig(_)) => "ConfigInvalid".into(),
            PipelineError::Ingest(e) => inner(&format!("{e:?}")),
            PipelineError::Cohort(e) => inner(&format!("{e:?}")),
            PipelineError::Split(e) => inner(&format!("{e:?}")),
            PipelineError::Gbdt(e) => inner(&format!("{e:?}")),
            PipelineError::Eval(e) => inner(&format!("{e:?}")),
            PipelineError::Explain(e) => inner(&format!("{e:?}")),
            PipelineError::Synth(e) => inner(&format!("{e:?}")),
            PipelineError::Io(_) => "Io".into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Settings shared by all stages.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub horizon_s: i64,
    pub inclusive_boundary: bool,
    /// Seeds the split, training, bootstrap and background sampling.
    pub seed: u64,
    pub min_per_class: usize,
    pub train: TrainConfig,
    pub bootstrap_n: usize,
    pub auroc_floor: f64,
    pub background_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            horizon_s: DEFAULT_HORIZON_S,
            inclusive_boundary: false,
            seed: 0,
            min_per_class: MIN_PER_CLASS,
            train: TrainConfig::default(),
            bootstrap_n: DEFAULT_BOOTSTRAP_N,
            auroc_floor: DEFAULT_AUROC_FLOOR,
            background_size: DEFAULT_BACKGROUND_SIZE,
        }
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 14] = [
        "horizon_s",
        "inclusive_boundary",
        "seed",
        "min_per_class",
        "rounds",
        "learning_rate",
        "lambda",
        "min_child_hessian",
        "early_stopping_rounds",
        "max_bins",
        "exact",
        "bootstrap_n",
        "auroc_floor",
        "background_size",
    ];

    /// Overlays the keys present in `kv`. Unknown keys are rejected.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.check_keys(&Self::KEYS)?;
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.get_parsed($key)? {
                    $field = v;
                }
            };
        }
        take!("horizon_s", self.horizon_s);
        take!("inclusive_boundary", self.inclusive_boundary);
        take!("seed", self.seed);
        take!("min_per_class", self.min_per_class);
        take!("rounds", self.train.num_rounds);
        take!("learning_rate", self.train.learning_rate);
        take!("lambda", self.train.lambda_l2);
        take!("min_child_hessian", self.train.min_child_hessian);
        take!("max_bins", self.train.max_bins);
        take!("exact", self.train.exact);
        take!("bootstrap_n", self.bootstrap_n);
        take!("auroc_floor", self.auroc_floor);
        take!("background_size", self.background_size);
        if let Some(v) = kv.get("early_stopping_rounds") {
            self.train.early_stopping_rounds = match v {
                "none" | "" => None,
                n => Some(n.parse().map_err(|_| ConfigError::BadValue {
                    key: "early_stopping_rounds".into(),
                    value: n.into(),
                })?),
            };
        }
        self.train.seed = self.seed;
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.push("horizon_s", self.horizon_s.to_string());
        kv.push("inclusive_boundary", self.inclusive_boundary.to_string());
        kv.push("seed", self.seed.to_string());
        kv.push("min_per_class", self.min_per_class.to_string());
        kv.push("rounds", self.train.num_rounds.to_string());
        kv.push("learning_rate", fmt_f64(self.train.learning_rate));
        kv.push("lambda", fmt_f64(self.train.lambda_l2));
        kv.push("min_child_hessian", fmt_f64(self.train.min_child_hessian));
        kv.push(
            "early_stopping_rounds",
            self.train.early_stopping_rounds.map_or("none".into(), |r| r.to_string()),
        );
        kv.push("max_bins", self.train.max_bins.to_string());
        kv.push("exact", self.train.exact.to_string());
        kv.push("bootstrap_n", self.bootstrap_n.to_string());
        kv.push("auroc_floor", fmt_f64(self.auroc_floor));
        kv.push("background_size", self.background_size.to_string());
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_s <= 0 {
            return Err(PipelineError::ConfigInvalid(format!("horizon_s {} must be positive", self.horizon_s)));
        }
        if self.bootstrap_n == 0 || self.background_size == 0 {
            return Err(PipelineError::ConfigInvalid("bootstrap_n and background_size must be positive".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            n_iter: self.bootstrap_n,
            seed: self.seed,
            ..BootstrapConfig::default()
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    match fs::read(path) {
        Ok(b) => Ok(sha256_hex(&b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(PipelineError::StageInputMissing(path.display().to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

fn stage_key(parts: &[&str]) -> String {
    sha256_hex(parts.join("\n").as_bytes())
}

/// Writes through a temporary file so a crash never leaves a partial output.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// A run directory and its manifest.
#[derive(Debug)]
pub struct Run {
    root: PathBuf,
    manifest: Mutex<KvConfig>,
}

impl Run {
    /// Opens (creating if needed) a run directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["inputs", "datasets", "splits", "models", "reports"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let path = root.join("manifest.txt");
        let manifest = if path.exists() {
            KvConfig::load(&path)?
        } else {
            let mut kv = KvConfig::default();
            kv.push("tool_version", TOOL_VERSION);
            kv
        };
        let run = Run {
            root,
            manifest: Mutex::new(manifest),
        };
        run.save()?;
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> KvConfig {
        self.manifest.lock().expect("manifest lock").clone()
    }

    fn update(&self, f: impl FnOnce(&mut KvConfig)) -> Result<()> {
        let mut m = self.manifest.lock().expect("manifest lock");
        f(&mut m);
        write_atomic(&self.root.join("manifest.txt"), m.render().as_bytes())
    }

    fn save(&self) -> Result<()> {
        self.update(|_| {})
    }

    /// Configuration snapshot stored in the manifest (defaults if none).
    pub fn config(&self) -> Result<RunConfig> {
        let m = self.manifest();
        let mut kv = KvConfig::default();
        for (k, v) in m.entries() {
            if let Some(key) = k.strip_prefix("config.") {
                kv.push(key, v.clone());
            }
        }
        let mut cfg = RunConfig::default();
        cfg.apply_kv(&kv)?;
        Ok(cfg)
    }

    pub fn set_config(&self, cfg: &RunConfig) -> Result<()> {
        cfg.validate()?;
        self.update(|m| {
            for (k, v) in cfg.to_kv().entries() {
                m.set(&format!("config.{k}"), v.clone());
            }
        })
    }

    fn stage_done(&self, stage: &str, key: &str, outputs: &[PathBuf]) -> bool {
        self.manifest().get(&format!("stage.{stage}")) == Some(key) && outputs.iter().all(|p| p.exists())
    }

    fn mark_done(&self, stage: &str, key: &str) -> Result<()> {
        self.update(|m| m.set(&format!("stage.{stage}"), key))
    }

    pub fn ecg_path(&self) -> PathBuf {
        self.root.join("inputs/ecg.csv")
    }
    pub fn labs_path(&self) -> PathBuf {
        self.root.join("inputs/labs.csv")
    }
    pub fn tasks_path(&self) -> PathBuf {
        self.root.join("datasets/tasks.csv")
    }
    pub fn dataset_path(&self, task_id: &str) -> PathBuf {
        self.root.join(format!("datasets/{task_id}.csv"))
    }
    pub fn assignment_path(&self) -> PathBuf {
        self.root.join("splits/assignment.csv")
    }
    pub fn retained_path(&self) -> PathBuf {
        self.root.join("splits/retained.csv")
    }
    pub fn model_path(&self, task_id: &str) -> PathBuf {
        self.root.join(format!("models/{task_id}.model"))
    }
    pub fn eval_path(&self) -> PathBuf {
        self.root.join("reports/eval.csv")
    }
    pub fn table_path(&self) -> PathBuf {
        self.root.join("reports/table.txt")
    }

    fn task_eval_path(&self, task_id: &str) -> PathBuf {
        self.root.join(format!("reports/eval/{task_id}.csv"))
    }

    /// Every task built by the cohort stage.
    pub fn tasks(&self) -> Result<Vec<TaskManifestEntry>> {
        let path = self.tasks_path();
        let f = fs::File::open(&path).map_err(|_| PipelineError::StageInputMissing(path.display().to_string()))?;
        Ok(read_task_manifest(f)?)
    }

    /// Tasks that passed the per-fold class filter, in task order.
    pub fn retained_tasks(&self) -> Result<Vec<TaskSpec>> {
        let path = self.retained_path();
        let text =
            fs::read_to_string(&path).map_err(|_| PipelineError::StageInputMissing(path.display().to_string()))?;
        let keep: Vec<&str> = text
            .lines()
            .skip(1)
            .filter_map(|l| l.split(',').next().zip(l.rsplit(',').next()))
            .filter(|(_, r)| *r == "true")
            .map(|(id, _)| id)
            .collect();
        Ok(self.tasks()?.into_iter().map(|e| e.task).filter(|t| keep.contains(&t.id().as_str())).collect())
    }

    pub fn task(&self, task_id: &str) -> Result<TaskSpec> {
        self.tasks()?
            .into_iter()
            .map(|e| e.task)
            .find(|t| t.id() == task_id)
            .ok_or_else(|| PipelineError::UnknownTask(task_id.to_string()))
    }

    pub fn dataset(&self, task: &TaskSpec) -> Result<TaskDataset> {
        let path = self.dataset_path(&task.id());
        let f = fs::File::open(&path).map_err(|_| PipelineError::StageInputMissing(path.display().to_string()))?;
        Ok(read_task_dataset(f, task.clone())?)
    }

    pub fn assignment(&self) -> Result<FoldAssignment> {
        let path = self.assignment_path();
        let f = fs::File::open(&path).map_err(|_| PipelineError::StageInputMissing(path.display().to_string()))?;
        Ok(read_assignment(f)?)
    }

    /// (train, validation, test) folds of one task.
    pub fn folds(&self, task: &TaskSpec) -> Result<[TaskDataset; 3]> {
        Ok(apply_assignment(&self.dataset(task)?, &self.assignment()?)?)
    }

    pub fn model(&self, task_id: &str) -> Result<StumpEnsemble> {
        let path = self.model_path(task_id);
        if !path.exists() {
            return Err(PipelineError::StageInputMissing(path.display().to_string()));
        }
        Ok(load_model(&path)?)
    }

    fn selected(&self, task: Option<&str>) -> Result<Vec<TaskSpec>> {
        let retained = self.retained_tasks()?;
        match task {
            None => Ok(retained),
            Some(id) => retained
                .into_iter()
                .find(|t| t.id() == id)
                .map(|t| vec![t])
                .ok_or_else(|| PipelineError::UnknownTask(id.to_string())),
        }
    }
}

/// Generates a synthetic cohort into the run's `inputs/`.
pub fn cmd_synth(run: &Run, config: &SynthConfig) -> Result<SynthFiles> {
    let cohort = generate(config)?;
    let files = write_cohort(&run.root.join("inputs"), &cohort)?;
    run.update(|m| {
        let mut n_analytes = 0;
        for (k, v) in config.to_kv().entries() {
            if k == "analyte" {
                m.set(&format!("synth.analyte.{n_analytes}"), v.clone());
                n_analytes += 1;
            } else {
                m.set(&format!("synth.{k}"), v.clone());
            }
        }
        m.set("synth.digest", sha256_hex(config.to_kv().render().as_bytes()));
    })?;
    Ok(files)
}

fn copy_input(src: Option<&Path>, dst: &Path) -> Result<()> {
    if let Some(src) = src {
        if !src.exists() {
            return Err(PipelineError::StageInputMissing(src.display().to_string()));
        }
        if fs::canonicalize(src)? != fs::canonicalize(dst).unwrap_or_default() {
            fs::copy(src, dst)?;
        }
    }
    Ok(())
}

/// Copies the input tables into the run (when given), pairs ECGs with labs
/// and writes one dataset per (analyte, direction).
pub fn cmd_build_cohort(run: &Run, ecg: Option<&Path>, labs: Option<&Path>) -> Result<Vec<TaskManifestEntry>> {
    copy_input(ecg, &run.ecg_path())?;
    copy_input(labs, &run.labs_path())?;
    let cfg = run.config()?;
    let ecg_digest = file_digest(&run.ecg_path())?;
    let labs_digest = file_digest(&run.labs_path())?;
    let key = stage_key(&[
        "cohort",
        &ecg_digest,
        &labs_digest,
        &cfg.horizon_s.to_string(),
        &cfg.inclusive_boundary.to_string(),
    ]);
    let run_id = key[..16].to_string();
    run.update(|m| {
        m.set("run_id", run_id.clone());
        m.set("input.ecg.sha256", ecg_digest.clone());
        m.set("input.labs.sha256", labs_digest.clone());
    })?;
    if run.stage_done("cohort", &key, &[run.tasks_path()]) {
        return run.tasks();
    }

    let ecgs = load_ecg_table(&run.ecg_path(), &EcgSchema::default())?;
    let labs = load_lab_table(&run.labs_path(), &LabSchema::default())?;
    let tasks = enumerate_tasks(&labs);
    let cohort_cfg = CohortConfig {
        horizon_s: cfg.horizon_s,
        inclusive_boundary: cfg.inclusive_boundary,
    };
    let datasets = build_cohort(&ecgs.records, &labs, &tasks, &cohort_cfg)?;
    let mut entries = Vec::new();
    for ds in &datasets {
        let mut buf = Vec::new();
        write_task_dataset(&mut buf, ds)?;
        write_atomic(&run.dataset_path(&ds.task.id()), &buf)?;
        entries.push(TaskManifestEntry {
            task: ds.task.clone(),
            n_samples: ds.len(),
            n_positive: ds.n_positive(),
        });
    }
    let mut buf = Vec::new();
    write_task_manifest(&mut buf, &entries)?;
    write_atomic(&run.tasks_path(), &buf)?;
    run.mark_done("cohort", &key)?;
    Ok(entries)
}

/// Per-task class counts after splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub subject_counts: [usize; 3],
    /// `(task_id, [(pos, neg); 3], retained)` in task order.
    pub tasks: Vec<(String, [(usize, usize); 3], bool)>,
}

impl SplitSummary {
    pub fn retained(&self) -> impl Iterator<Item = &str> {
        self.tasks.iter().filter(|t| t.2).map(|t| t.0.as_str())
    }
}

fn datasets_digest(run: &Run, entries: &[TaskManifestEntry]) -> Result<String> {
    let mut parts = vec![file_digest(&run.tasks_path())?];
    for e in entries {
        parts.push(file_digest(&run.dataset_path(&e.task.id()))?);
    }
    Ok(sha256_hex(parts.join(",").as_bytes()))
}

/// Assigns subjects to folds (or adopts `split_file`) and applies the
/// per-fold class minimum.
pub fn cmd_split(run: &Run, split_file: Option<&Path>) -> Result<SplitSummary> {
    let cfg = run.config()?;
    let entries = run.tasks()?;
    let data_digest = datasets_digest(run, &entries)?;
    let source = match split_file {
        Some(p) => format!("file:{}", file_digest(p)?),
        None => format!("seed:{}", cfg.seed),
    };
    let key = stage_key(&["split", &data_digest, &source, &cfg.min_per_class.to_string()]);

    let datasets: Vec<TaskDataset> = entries.iter().map(|e| run.dataset(&e.task)).collect::<Result<_>>()?;
    let assignment = if run.stage_done("split", &key, &[run.assignment_path(), run.retained_path()]) {
        run.assignment()?
    } else {
        let a = match split_file {
            Some(p) => read_assignment(fs::File::open(p)?)?,
            None => stratified_group_split(datasets.iter().flat_map(|d| &d.examples), cfg.seed, DEFAULT_RATIO)?,
        };
        let mut buf = Vec::new();
        write_assignment(&mut buf, &a)?;
        write_atomic(&run.assignment_path(), &buf)?;
        a
    };
    let mut summary = SplitSummary {
        subject_counts: assignment.subject_counts(),
        tasks: Vec::new(),
    };
    let mut text = String::from("task_id,train_pos,train_neg,validation_pos,validation_neg,test_pos,test_neg,retained\n");
    for ds in &datasets {
        for e in &ds.examples {
            if assignment.fold_of(&e.subject_id).is_none() {
                return Err(SplitError::UnknownSubject(e.subject_id.clone()).into());
            }
        }
        let counts = fold_class_counts(ds, &assignment);
        let keep = counts.iter().all(|&(p, n)| p >= cfg.min_per_class && n >= cfg.min_per_class);
        let _ = write!(text, "{}", ds.task.id());
        for (p, n) in counts {
            let _ = write!(text, ",{p},{n}");
        }
        let _ = writeln!(text, ",{keep}");
        summary.tasks.push((ds.task.id(), counts, keep));
    }
    write_atomic(&run.retained_path(), text.as_bytes())?;
    run.mark_done("split", &key)?;
    Ok(summary)
}

fn split_inputs_digest(run: &Run, task_id: &str) -> Result<String> {
    Ok(stage_key(&[
        &file_digest(&run.dataset_path(task_id))?,
        &file_digest(&run.assignment_path())?,
    ]))
}

/// Trains one model per retained task (or only `task`). Tasks train in
/// parallel; each is skipped if its inputs and config are unchanged.
pub fn cmd_train(run: &Run, task: Option<&str>) -> Result<Vec<(String, StumpEnsemble)>> {
    let cfg = run.config()?;
    let tasks = run.selected(task)?;
    let assignment = run.assignment()?;
    tasks
        .par_iter()
        .map(|t| {
            let id = t.id();
            let key = stage_key(&["train", &split_inputs_digest(run, &id)?, &cfg.train.canonical()]);
            let stage = format!("train.{id}");
            if run.stage_done(&stage, &key, &[run.model_path(&id)]) {
                return Ok((id.clone(), run.model(&id)?));
            }
            let [tr, va, _] = apply_assignment(&run.dataset(t)?, &assignment)?;
            let out = train(&tr, &va, &cfg.train)?;
            let mut hist = String::from("round,gain,train_log_loss,validation_auroc\n");
            for r in &out.history {
                let _ = writeln!(
                    hist,
                    "{},{},{},{}",
                    r.round,
                    fmt_f64(r.gain),
                    fmt_f64(r.train_log_loss),
                    fmt_f64(r.validation_auroc)
                );
            }
            write_atomic(&run.root.join(format!("models/{id}.history.csv")), hist.as_bytes())?;
            let tmp = run.model_path(&id).with_extension("model.tmp");
            save_model(&out.model, &tmp)?;
            fs::rename(&tmp, run.model_path(&id))?;
            run.mark_done(&stage, &key)?;
            Ok((id, out.model))
        })
        .collect()
}

/// Test-fold AUROC with bootstrap intervals for every trained task; the
/// combined log is `reports/eval.csv`.
pub fn cmd_eval(run: &Run, task: Option<&str>) -> Result<Vec<EvalReport>> {
    let cfg = run.config()?;
    let tasks = run.selected(task)?;
    let assignment = run.assignment()?;
    fs::create_dir_all(run.root.join("reports/eval"))?;
    let boot = cfg.bootstrap();
    let reports: Vec<EvalReport> = tasks
        .par_iter()
        .map(|t| {
            let id = t.id();
            let key = stage_key(&[
                "eval",
                &split_inputs_digest(run, &id)?,
                &file_digest(&run.model_path(&id))?,
                &format!("{boot:?}"),
            ]);
            let stage = format!("eval.{id}");
            let path = run.task_eval_path(&id);
            if run.stage_done(&stage, &key, std::slice::from_ref(&path)) {
                let r = read_eval_reports(fs::File::open(&path)?)?;
                return r.into_iter().next().ok_or_else(|| PipelineError::StageInputMissing(path.display().to_string()));
            }
            let [_, _, test] = apply_assignment(&run.dataset(t)?, &assignment)?;
            let report = evaluate(&run.model(&id)?, &test, &boot)?;
            let mut buf = Vec::new();
            write_eval_reports(&mut buf, std::slice::from_ref(&report))?;
            write_atomic(&path, &buf)?;
            run.mark_done(&stage, &key)?;
            Ok(report)
        })
        .collect::<Result<_>>()?;

    // The combined log always covers every retained task evaluated so far.
    let mut all = Vec::new();
    for t in run.retained_tasks()? {
        let path = run.task_eval_path(&t.id());
        if path.exists() {
            all.extend(read_eval_reports(fs::File::open(&path)?)?);
        }
    }
    let mut buf = Vec::new();
    write_eval_reports(&mut buf, &all)?;
    write_atomic(&run.eval_path(), &buf)?;
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub table: ReportTable,
    /// Over every evaluated task, including those under the floor.
    pub macro_auroc: Option<f64>,
    pub n_tasks: usize,
    pub text: String,
}

/// Formats `reports/eval.csv` as the per-task table (`reports/table.txt`,
/// `reports/table.csv`).
pub fn cmd_report(run: &Run) -> Result<ReportSummary> {
    let cfg = run.config()?;
    let path = run.eval_path();
    let f = fs::File::open(&path).map_err(|_| PipelineError::StageInputMissing(path.display().to_string()))?;
    let reports = read_eval_reports(f)?;
    let table = build_report_table(&reports, cfg.auroc_floor);
    let macro_auroc = macro_auroc(&reports).ok();
    let mut text = format!(
        "Laboratory values with AUROC > {} ({} of {} tasks)\n",
        fmt_f64(cfg.auroc_floor),
        table.rows.len(),
        reports.len()
    );
    text.push_str(&table.render());
    if let Some(m) = macro_auroc {
        let _ = writeln!(text, "Macro AUROC over {} tasks: {:.3}", reports.len(), m);
    }
    write_atomic(&run.table_path(), text.as_bytes())?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_atomic(&run.root.join("reports/table.csv"), &buf)?;
    Ok(ReportSummary {
        table,
        macro_auroc,
        n_tasks: reports.len(),
        text,
    })
}

/// Parses `source_category:source_group:target_category:target_group`, e.g.
/// `race:caucasian:race:asian`.
pub fn parse_downsample(spec: &str) -> Result<(Group, Group)> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 4 {
        return Err(PipelineError::ConfigInvalid(format!(
            "downsample `{spec}`: expected source_category:source:target_category:target"
        )));
    }
    let g = |a: &str, b: &str| format!("{a}:{b}").parse::<Group>().map_err(PipelineError::ConfigInvalid);
    Ok((g(parts[0], parts[1])?, g(parts[2], parts[3])?))
}

#[derive(Debug, Clone)]
pub struct SubgroupOutput {
    pub baseline: Vec<(Category, Vec<SubgroupReport>)>,
    /// Present when a downsampling experiment was requested.
    pub downsampled: Option<Vec<(Category, Vec<SubgroupReport>)>>,
    pub text: String,
}

/// Per-group AUROC on the test fold. With `downsample`, the source group of
/// the train fold is cut to the target group's size, the model is retrained
/// and the groups are evaluated again.
pub fn cmd_subgroups(
    run: &Run,
    task_id: &str,
    categories: &[Category],
    downsample: Option<(Group, Group)>,
) -> Result<SubgroupOutput> {
    let cfg = run.config()?;
    let task = run.task(task_id)?;
    let [tr, va, test] = run.folds(&task)?;
    let model = run.model(task_id)?;
    let boot = cfg.bootstrap();
    let dir = run.root.join("reports/subgroups");
    fs::create_dir_all(&dir)?;

    let eval_all = |m: &StumpEnsemble, tag: &str| -> Result<Vec<(Category, Vec<SubgroupReport>)>> {
        let mut out = Vec::new();
        for &c in categories {
            let reports = subgroup_eval(m, &test, c, &boot)?;
            let mut buf = Vec::new();
            write_subgroup_csv(&mut buf, c, &reports)?;
            write_atomic(&dir.join(format!("{task_id}{tag}_{}.csv", c.as_str())), &buf)?;
            out.push((c, reports));
        }
        Ok(out)
    };

    let baseline = eval_all(&model, "")?;
    let mut text = format!("{task_id}: test fold by demographic group\n");
    text.push_str(&render_subgroup_table(&baseline));
    let downsampled = match downsample {
        None => None,
        Some((source, target)) => {
            let reduced = downsample_train_group(&tr, source, target, cfg.seed)?;
            let retrained = train(&reduced, &va, &cfg.train)?.model;
            let res = eval_all(&retrained, "_downsampled")?;
            let _ = writeln!(
                text,
                "\n{task_id}: {} training rows cut to the size of {} ({} -> {} train rows)",
                source.label(),
                target.label(),
                tr.len(),
                reduced.len()
            );
            text.push_str(&render_subgroup_table(&res));
            Some(res)
        }
    };
    write_atomic(&dir.join(format!("{task_id}.txt")), text.as_bytes())?;
    Ok(SubgroupOutput {
        baseline,
        downsampled,
        text,
    })
}

#[derive(Debug, Clone)]
pub struct ExplainOutput {
    pub importance: GlobalImportance,
    pub text: String,
}

/// Shapley attributions for the test fold against a background sampled from
/// the train fold, plus global importance and value-quartile summaries of
/// the `top_k` most important features.
pub fn cmd_explain(run: &Run, task_id: &str, top_k: usize) -> Result<ExplainOutput> {
    let cfg = run.config()?;
    let task = run.task(task_id)?;
    let [tr, _, test] = run.folds(&task)?;
    let model = run.model(task_id)?;
    let background = sample_background(&tr, cfg.background_size, cfg.seed);
    let explainer = Explainer::new(&model, &background)?;
    let attributions = explainer.explain_dataset(&test)?;
    let importance = GlobalImportance::from_attributions(&model.feature_names, &attributions);
    let dir = run.root.join("reports/explain");
    fs::create_dir_all(&dir)?;

    let mut w = BufWriter::new(fs::File::create(dir.join(format!("{task_id}_attributions.csv")))?);
    write_attributions(&mut w, &model.feature_names, &attributions)?;
    drop(w);
    let mut buf = Vec::new();
    importance.write_csv(&mut buf)?;
    write_atomic(&dir.join(format!("{task_id}_importance.csv")), &buf)?;

    let mut text = format!("{task_id}: mean |contribution| on the test fold (log-odds)\n");
    for &i in &importance.ranking {
        let _ = writeln!(text, "  {:<16} {:.6}", importance.feature_names[i], importance.mean_abs[i]);
    }
    for &i in importance.ranking.iter().take(top_k) {
        if importance.mean_abs[i] == 0.0 {
            break;
        }
        let name = &importance.feature_names[i];
        match explainer.directionality_report(&test, name) {
            Ok(d) => {
                let trend = match d.trend() {
                    1 => "higher values push toward abnormal",
                    -1 => "lower values push toward abnormal",
                    _ => "no monotone trend",
                };
                let _ = writeln!(text, "\n{name}: {trend}");
                for b in &d.bins {
                    let _ = writeln!(
                        text,
                        "  [{:.1}, {:.1}]  n={:<6} mean contribution {:+.4}",
                        b.lower, b.upper, b.n, b.mean_contribution
                    );
                }
            }
            Err(e) => {
                let _ = writeln!(text, "\n{name}: {e}");
            }
        }
    }
    write_atomic(&dir.join(format!("{task_id}.txt")), text.as_bytes())?;
    Ok(ExplainOutput { importance, text })
}

/// Where `run_all` takes its tables from.
#[derive(Debug, Clone)]
pub enum Inputs {
    /// Use whatever is already in `inputs/`.
    Existing,
    Files { ecg: PathBuf, labs: PathBuf },
    Synth(SynthConfig),
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub tasks_built: usize,
    pub split: SplitSummary,
    pub reports: Vec<EvalReport>,
    pub report: ReportSummary,
}

/// Synth (optional), cohort, split, train, eval, subgroups, explain, report.
pub fn run_all(run: &Run, inputs: &Inputs, split_file: Option<&Path>) -> Result<RunSummary> {
    match inputs {
        Inputs::Existing => {}
        Inputs::Synth(c) => {
            let key = stage_key(&["synth", &c.to_kv().render()]);
            if !run.stage_done("synth", &key, &[run.ecg_path(), run.labs_path()]) {
                cmd_synth(run, c)?;
                run.mark_done("synth", &key)?;
            }
        }
        Inputs::Files { .. } => {}
    }
    let (ecg, labs) = match inputs {
        Inputs::Files { ecg, labs } => (Some(ecg.as_path()), Some(labs.as_path())),
        _ => (None, None),
    };
    let tasks = cmd_build_cohort(run, ecg, labs)?;
    let split = cmd_split(run, split_file)?;
    cmd_train(run, None)?;
    let reports = cmd_eval(run, None)?;
    let retained: Vec<String> = split.retained().map(String::from).collect();
    retained
        .par_iter()
        .map(|id| {
            cmd_subgroups(run, id, &[Category::Gender, Category::Race, Category::Age], None)?;
            cmd_explain(run, id, 3)?;
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    let report = cmd_report(run)?;
    Ok(RunSummary {
        tasks_built: tasks.len(),
        split,
        reports,
        report,
    })
}

/// Subject counts per fold as `train/validation/test`.
pub fn fold_summary(a: &FoldAssignment) -> String {
    let c = a.subject_counts();
    Fold::ALL
        .iter()
        .map(|f| format!("{}={}", f.as_str(), c[f.index()]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs `f` on a pool of `jobs` threads (all cores when `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(PipelineError::ConfigInvalid("--jobs must be positive".into()));
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
    Ok(pool.install(f))
}

/// Stage keys recorded so far, by stage name.
pub fn stage_status(run: &Run) -> BTreeMap<String, String> {
    run.manifest()
        .entries()
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("stage.").map(|s| (s.to_string(), v.clone())))
        .collect()
}
