// Shapley attributions for a trained model: per-row efficiency, global
// ranking and how the top feature's contribution moves with its value.

use std::error::Error;

use ecglab::cohort::{build_cohort, enumerate_tasks, CohortConfig};
use ecglab::explain::{sample_background, Explainer};
use ecglab::gbdt::{train, TrainConfig};
use ecglab::ingest::LabTable;
use ecglab::split::{apply_assignment, stratified_group_split, DEFAULT_RATIO};
use ecglab::synth::{generate, SynthConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let cohort = generate(&SynthConfig { n_subjects: 2000, ..Default::default() })?;
    let labs = LabTable::new(cohort.labs, Vec::new())?;
    let datasets = build_cohort(&cohort.ecgs, &labs, &enumerate_tasks(&labs), &CohortConfig::default())?;
    let folds = stratified_group_split(datasets.iter().flat_map(|d| d.examples.iter()), 0, DEFAULT_RATIO)?;
    let ds = datasets.iter().find(|d| d.task.id() == "potassium_low").ok_or("task missing")?;
    let [tr, va, te] = apply_assignment(ds, &folds)?;
    let model = train(&tr, &va, &TrainConfig::default())?.model;

    let explainer = Explainer::new(&model, &sample_background(&tr, 512, 0))?;
    let row = &te.examples[0];
    let a = explainer.shap_values(&row.record_id, &row.features)?;
    let sum: f64 = a.contributions.iter().sum();
    println!("{}: base {:.4} + contributions {:.4} = margin {:.4}", a.record_id, a.base_value, sum, a.margin);

    let importance = explainer.global_importance(&te)?;
    for name in importance.ranked_names().iter().take(5) {
        println!("{:<14} mean |contribution| {:.4}", name, importance.of(name).unwrap_or(0.0));
    }

    let top = importance.ranked_names()[0].to_string();
    let d = explainer.directionality_report(&te, &top)?;
    for b in &d.bins {
        println!("{top} in [{:.1}, {:.1}]: mean contribution {:+.4} (n={})", b.lower, b.upper, b.mean_contribution, b.n);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
