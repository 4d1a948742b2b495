// Test-fold AUROC with bootstrap intervals for every retained task, printed
// as a per-task table.

use std::error::Error;

use ecglab::cohort::{build_cohort, enumerate_tasks, filter_tasks, CohortConfig};
use ecglab::eval::{build_report_table, evaluate, macro_auroc, BootstrapConfig};
use ecglab::gbdt::{train, TrainConfig};
use ecglab::ingest::LabTable;
use ecglab::split::{apply_assignment, stratified_group_split, DEFAULT_RATIO};
use ecglab::synth::{generate, SynthConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let cohort = generate(&SynthConfig { n_subjects: 2000, seed: 5, ..Default::default() })?;
    let labs = LabTable::new(cohort.labs, Vec::new())?;
    let datasets = build_cohort(&cohort.ecgs, &labs, &enumerate_tasks(&labs), &CohortConfig::default())?;
    let folds = stratified_group_split(datasets.iter().flat_map(|d| d.examples.iter()), 0, DEFAULT_RATIO)?;

    let bootstrap = BootstrapConfig { n_iter: 1000, seed: 0, ..Default::default() };
    let mut reports = Vec::new();
    for ds in filter_tasks(datasets, &folds, 10) {
        let [tr, va, te] = apply_assignment(&ds, &folds)?;
        let model = train(&tr, &va, &TrainConfig::default())?.model;
        reports.push(evaluate(&model, &te, &bootstrap)?);
    }

    print!("{}", build_report_table(&reports, 0.70).render());
    println!("macro AUROC over {} tasks: {:.3}", reports.len(), macro_auroc(&reports)?);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
