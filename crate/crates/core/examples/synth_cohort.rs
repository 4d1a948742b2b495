// Generates a synthetic cohort and writes the ECG table, lab table and
// ground truth to a directory.
//
// `cargo run --example synth_cohort -- [out_dir]`

use std::error::Error;
use std::path::PathBuf;

use ecglab::synth::{generate, write_cohort, SynthConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    run_in(std::env::temp_dir().join("ecglab-examples/synth"))
}

fn run_in(out: PathBuf) -> Result<(), Box<dyn Error>> {
    let config = SynthConfig { n_subjects: 500, seed: 1, ..Default::default() };
    let cohort = generate(&config)?;
    let files = write_cohort(&out, &cohort)?;

    println!("{} ECGs, {} lab observations", cohort.ecgs.len(), cohort.labs.len());
    for t in &cohort.truth {
        println!(
            "{:<14} prevalence low {:.3} high {:.3}  best possible AUROC low {:.3} high {:.3}",
            t.spec.name, t.prevalence_low, t.prevalence_high, t.oracle_auroc_low, t.oracle_auroc_high
        );
    }
    println!("wrote {}", files.ecg.display());
    println!("wrote {}", files.labs.display());
    println!("wrote {}", files.manifest.display());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    match std::env::args().nth(1) {
        Some(dir) => run_in(PathBuf::from(dir)),
        None => run_example(),
    }
}
