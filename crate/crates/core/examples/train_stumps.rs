// Trains a boosted-stump model on one task, then saves and reloads it.

use std::error::Error;

use ecglab::cohort::{build_cohort, enumerate_tasks, CohortConfig};
use ecglab::gbdt::{load_model, save_model, train, TrainConfig};
use ecglab::ingest::LabTable;
use ecglab::split::{apply_assignment, stratified_group_split, DEFAULT_RATIO};
use ecglab::synth::{generate, SynthConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let cohort = generate(&SynthConfig { n_subjects: 2000, ..Default::default() })?;
    let labs = LabTable::new(cohort.labs, Vec::new())?;
    let datasets = build_cohort(&cohort.ecgs, &labs, &enumerate_tasks(&labs), &CohortConfig::default())?;
    let folds = stratified_group_split(datasets.iter().flat_map(|d| d.examples.iter()), 0, DEFAULT_RATIO)?;
    let ds = datasets.iter().find(|d| d.task.id() == "urea_nitrogen_high").ok_or("task missing")?;
    let [tr, va, _] = apply_assignment(ds, &folds)?;

    let config = TrainConfig { num_rounds: 300, learning_rate: 0.1, ..Default::default() };
    let out = train(&tr, &va, &config)?;
    for r in out.history.iter().step_by(25) {
        println!("round {:>3}  train loss {:.4}  validation AUROC {:.4}", r.round, r.train_log_loss, r.validation_auroc);
    }
    println!("stopped: {:?}, kept {} stumps", out.stop_reason, out.best_round);

    let used: Vec<&str> = out.model.split_features().iter().map(|&f| out.model.feature_names[f].as_str()).collect();
    println!("features used: {}", used.join(", "));

    let path = std::env::temp_dir().join("ecglab-examples/urea_nitrogen_high.model");
    std::fs::create_dir_all(path.parent().unwrap())?;
    save_model(&out.model, &path)?;
    let back = load_model(&path)?;
    assert_eq!(back, out.model);
    println!("saved and reloaded {}", path.display());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
