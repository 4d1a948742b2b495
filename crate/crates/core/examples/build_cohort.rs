// Loads ECG and lab tables, resolves each analyte's thresholds and pairs
// every ECG with its nearest observation.

use std::error::Error;

use ecglab::cohort::{build_cohort, enumerate_tasks, CohortConfig};
use ecglab::ingest::{load_ecg_table, load_lab_table, EcgSchema, LabSchema};
use ecglab::synth::{generate, write_cohort, SynthConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = std::env::temp_dir().join("ecglab-examples/build_cohort");
    let files = write_cohort(&dir, &generate(&SynthConfig { n_subjects: 400, ..Default::default() })?)?;

    let ecgs = load_ecg_table(&files.ecg, &EcgSchema::default())?;
    let labs = load_lab_table(&files.labs, &LabSchema::default())?;
    println!("{} ECGs ({} rejected), {} observations", ecgs.records.len(), ecgs.rejected.len(), labs.observations.len());

    let tasks = enumerate_tasks(&labs);
    let config = CohortConfig { horizon_s: 3600, inclusive_boundary: false };
    for ds in build_cohort(&ecgs.records, &labs, &tasks, &config)? {
        let t = &ds.task;
        println!(
            "{:<22} {}{} {:<6} samples {:>5}  positives {:>4}",
            t.id(),
            t.direction.symbol(),
            t.threshold,
            t.unit,
            ds.len(),
            ds.n_positive()
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
