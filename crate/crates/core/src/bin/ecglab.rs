use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ecglab::config::KvConfig;
use ecglab::eval::Category;
use ecglab::pipeline::{
    cmd_build_cohort, cmd_eval, cmd_explain, cmd_report, cmd_split, cmd_subgroups, cmd_synth, cmd_train,
    parse_downsample, run_all, with_jobs, Inputs, PipelineError, Result, Run,
};
use ecglab::synth::{generate, write_cohort, SynthConfig};

#[derive(Parser)]
#[command(name = "ecglab", version, about = "Estimate laboratory abnormalities from ECG features")]
struct Cli {
    /// Key-value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long, allow_negative_numbers = true)]
    horizon_s: Option<i64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    learning_rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long)]
    bootstrap_n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    auroc_floor: Option<f64>,
    /// Exact split finding instead of histogram bins.
    #[arg(long)]
    exact: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (into --out, or into the run's inputs/).
    Synth {
        #[arg(long, conflicts_with = "out")]
        run: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Pair ECGs with labs and write one dataset per task.
    BuildCohort {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        ecg: Option<PathBuf>,
        #[arg(long)]
        labs: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Assign subjects to folds and filter tasks by class counts.
    Split {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        split_file: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Train one model per retained task.
    Train {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Test-fold AUROC with bootstrap intervals.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Per-group AUROC, optionally after downsampling a training group.
    Subgroups {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        task: String,
        /// gender, race, age, or all.
        #[arg(long, default_value = "all")]
        category: String,
        /// e.g. race:caucasian:race:asian
        #[arg(long)]
        downsample: Option<String>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Shapley attributions and global importance.
    Explain {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 3)]
        top: usize,
        #[arg(long)]
        background: Option<usize>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Per-task table of tasks above the AUROC floor.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        o: Overrides,
    },
    /// Every stage in order. Without --ecg/--labs, a synthetic cohort is used
    /// unless the run already has inputs.
    RunAll {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, requires = "labs")]
        ecg: Option<PathBuf>,
        #[arg(long, requires = "ecg")]
        labs: Option<PathBuf>,
        #[arg(long)]
        split_file: Option<PathBuf>,
        /// Synthetic cohort config (key-value).
        #[arg(long)]
        synth_config: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
}

/// Manifest snapshot, then the config file, then flags.
fn configure(run: &Run, file: Option<&Path>, o: &Overrides, background: Option<usize>) -> Result<()> {
    let mut cfg = run.config()?;
    if let Some(p) = file {
        cfg.apply_kv(&KvConfig::load(p)?)?;
    }
    let mut kv = KvConfig::default();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            kv.push(k, v);
        }
    };
    put("horizon_s", o.horizon_s.map(|v| v.to_string()));
    put("seed", o.seed.map(|v| v.to_string()));
    put("rounds", o.rounds.map(|v| v.to_string()));
    put("learning_rate", o.learning_rate.map(|v| v.to_string()));
    put("lambda", o.lambda.map(|v| v.to_string()));
    put("bootstrap_n", o.bootstrap_n.map(|v| v.to_string()));
    put("auroc_floor", o.auroc_floor.map(|v| v.to_string()));
    put("background_size", background.map(|v| v.to_string()));
    if o.exact {
        put("exact", Some("true".into()));
    }
    cfg.apply_kv(&kv)?;
    run.set_config(&cfg)
}

fn synth_config(path: Option<&Path>) -> Result<SynthConfig> {
    match path {
        Some(p) => Ok(SynthConfig::from_kv(&KvConfig::load(p)?)?),
        None => Ok(SynthConfig::default()),
    }
}

fn categories(s: &str) -> Result<Vec<Category>> {
    if s == "all" {
        return Ok(vec![Category::Gender, Category::Race, Category::Age]);
    }
    s.split(',')
        .map(|c| c.parse().map_err(PipelineError::ConfigInvalid))
        .collect()
}

fn execute(cli: Cli) -> Result<()> {
    let cfg_file = cli.config.as_deref();
    match cli.command {
        Command::Synth { run, out, seed, subjects } => {
            let mut sc = synth_config(cfg_file)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            if let Some(n) = subjects {
                sc.n_subjects = n;
            }
            let files = match (run, out) {
                (Some(r), _) => cmd_synth(&Run::open(r)?, &sc)?,
                (None, Some(o)) => write_cohort(&o, &generate(&sc)?)?,
                (None, None) => {
                    return Err(PipelineError::ConfigInvalid("synth needs --run or --out".into()));
                }
            };
            println!("wrote {} and {}", files.ecg.display(), files.labs.display());
            println!("ground truth: {}", files.manifest.display());
        }
        Command::BuildCohort { run, ecg, labs, o } => {
            let run = Run::open(run)?;
            configure(&run, cfg_file, &o, None)?;
            for e in cmd_build_cohort(&run, ecg.as_deref(), labs.as_deref())? {
                println!("{:<40} n={:<7} positives={}", e.task.id(), e.n_samples, e.n_positive);
            }
        }
        Command::Split { run, split_file, o } => {
            let run = Run::open(run)?;
            configure(&run, cfg_file, &o, None)?;
            let s = cmd_split(&run, split_file.as_deref())?;
            let c = s.subject_counts;
            println!("subjects train={} validation={} test={}", c[0], c[1], c[2]);
            for (id, _, keep) in &s.tasks {
                println!("{:<40} {}", id, if *keep { "retained" } else { "dropped" });
            }
        }
        Command::Train { run, task, o } => {
            let run = Run::open(run)?;
            configure(&run, cfg_file, &o, None)?;
            for (id, m) in cmd_train(&run, task.as_deref())? {
                println!("{:<40} stumps={}", id, m.stumps.len());
            }
        }
        Command::Eval { run, task, o } => {
            let run = Run::open(run)?;
            configure(&run, cfg_file, &o, None)?;
            for r in cmd_eval(&run, task.as_deref())? {
                println!("{:<40} auroc={:.3} ({:.3}, {:.3})", r.task.id(), r.auroc, r.ci_low, r.ci_high);
            }
        }
        Command::Subgroups { run, task, category, downsample, o } => {
            let run = Run::open(run)?;
            configure(&run, cfg_file, &o, None)?;
            let ds = downsample.as_deref().map(parse_downsample).transpose()?;
            print!("{}", cmd_subgroups(&run, &task, &categories(&category)?, ds)?.text);
        }
        Command::Explain { run, task, top, background, o } => {
            let run = Run::open(run)?;
            configure(&run, cfg_file, &o, background)?;
            print!("{}", cmd_explain(&run, &task, top)?.text);
        }
        Command::Report { run, o } => {
            let run = Run::open(run)?;
            configure(&run, cfg_file, &o, None)?;
            print!("{}", cmd_report(&run)?.text);
        }
        Command::RunAll { run, ecg, labs, split_file, synth_config: sc_path, o } => {
            let run = Run::open(run)?;
            configure(&run, cfg_file, &o, None)?;
            let inputs = match (ecg, labs) {
                (Some(ecg), Some(labs)) => Inputs::Files { ecg, labs },
                _ if sc_path.is_none() && run.ecg_path().exists() && run.labs_path().exists() => Inputs::Existing,
                _ => Inputs::Synth(synth_config(sc_path.as_deref())?),
            };
            let summary = run_all(&run, &inputs, split_file.as_deref())?;
            print!("{}", summary.report.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", detail.trim_end());
            eprintln!("error: kind=Usage message={first:?}");
            return ExitCode::from(2);
        }
    };
    let jobs = cli.jobs;
    match with_jobs(jobs, || execute(cli)).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} message={:?}", e.kind(), msg);
            ExitCode::FAILURE
        }
    }
}
