// Every stage in a run directory: synthetic inputs, cohort, split, training,
// evaluation, subgroups, explanations and the final table. Rerunning skips
// finished stages.
//
// `cargo run --release --example full_pipeline -- [run_dir]`

use std::error::Error;
use std::path::PathBuf;

use ecglab::pipeline::{run_all, Inputs, Run};
use ecglab::synth::SynthConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    run_in(std::env::temp_dir().join("ecglab-examples/run"))
}

fn run_in(dir: PathBuf) -> Result<(), Box<dyn Error>> {
    let run = Run::open(&dir)?;
    let mut config = run.config()?;
    config.bootstrap_n = 500;
    run.set_config(&config)?;

    let summary = run_all(&run, &Inputs::Synth(SynthConfig::default()), None)?;
    println!("{} tasks built, {} evaluated", summary.tasks_built, summary.reports.len());
    print!("{}", summary.report.text);
    println!("run directory: {}", dir.display());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    match std::env::args().nth(1) {
        Some(dir) => run_in(PathBuf::from(dir)),
        None => run_example(),
    }
}
