// Assigns subjects to train/validation/test, stratified by gender and age,
// and keeps the tasks with enough cases of each class in every fold.

use std::error::Error;

use ecglab::cohort::{build_cohort, enumerate_tasks, filter_tasks, fold_class_counts, CohortConfig};
use ecglab::ingest::{Gender, LabTable};
use ecglab::split::{stratified_group_split, Fold, DEFAULT_RATIO};
use ecglab::synth::{generate, SynthConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let cohort = generate(&SynthConfig { n_subjects: 2000, ..Default::default() })?;
    let labs = LabTable::new(cohort.labs, Vec::new())?;
    let datasets = build_cohort(&cohort.ecgs, &labs, &enumerate_tasks(&labs), &CohortConfig::default())?;

    let all = datasets.iter().flat_map(|d| d.examples.iter());
    let folds = stratified_group_split(all, 7, DEFAULT_RATIO)?;
    let counts = folds.subject_counts();
    println!("subjects: train {} validation {} test {}", counts[0], counts[1], counts[2]);

    let first = &datasets[0];
    for fold in Fold::ALL {
        let rows: Vec<_> = first.examples.iter().filter(|e| folds.fold_of(&e.subject_id) == Some(fold)).collect();
        let male = rows.iter().filter(|e| e.gender() == Gender::Male).count();
        println!("{:<10} {:>5} rows of {}, {:.1}% male", fold.as_str(), rows.len(), first.task.id(), 100.0 * male as f64 / rows.len() as f64);
    }

    for ds in &datasets {
        println!("{:<22} (pos, neg) per fold {:?}", ds.task.id(), fold_class_counts(ds, &folds));
    }
    let kept = filter_tasks(datasets, &folds, 10);
    println!("{} tasks have at least 10 of each class in every fold", kept.len());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
