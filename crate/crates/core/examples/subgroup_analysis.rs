// Per-group AUROC by gender, race and age, then the same model retrained
// with the Caucasian training group cut down to the Asian group's size.

use std::error::Error;

use ecglab::cohort::{build_cohort, enumerate_tasks, CohortConfig};
use ecglab::eval::{downsample_train_group, render_subgroup_table, subgroup_eval, BootstrapConfig, Category, Group};
use ecglab::gbdt::{train, TrainConfig};
use ecglab::ingest::{LabTable, Race};
use ecglab::split::{apply_assignment, stratified_group_split, DEFAULT_RATIO};
use ecglab::synth::{generate, SynthConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let cohort = generate(&SynthConfig { n_subjects: 6000, seed: 2, ..Default::default() })?;
    let labs = LabTable::new(cohort.labs, Vec::new())?;
    let datasets = build_cohort(&cohort.ecgs, &labs, &enumerate_tasks(&labs), &CohortConfig::default())?;
    let folds = stratified_group_split(datasets.iter().flat_map(|d| d.examples.iter()), 0, DEFAULT_RATIO)?;
    let ds = datasets.iter().find(|d| d.task.id() == "urea_nitrogen_low").ok_or("task missing")?;
    let [tr, va, te] = apply_assignment(ds, &folds)?;
    let bootstrap = BootstrapConfig { n_iter: 500, ..Default::default() };

    let model = train(&tr, &va, &TrainConfig::default())?.model;
    let mut sections = Vec::new();
    for cat in [Category::Gender, Category::Race, Category::Age] {
        sections.push((cat, subgroup_eval(&model, &te, cat, &bootstrap)?));
    }
    print!("{}", render_subgroup_table(&sections));

    let (cau, asian) = (Group::Race(Race::Caucasian), Group::Race(Race::Asian));
    let smaller = downsample_train_group(&tr, cau, asian, 0)?;
    println!("\ntraining rows {} -> {} after downsampling", tr.len(), smaller.len());
    let retrained = train(&smaller, &va, &TrainConfig::default())?.model;
    let race = subgroup_eval(&retrained, &te, Category::Race, &bootstrap)?;
    print!("{}", render_subgroup_table(&[(Category::Race, race)]));
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
