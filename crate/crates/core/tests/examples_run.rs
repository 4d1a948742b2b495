//! Each example's `run_example` must succeed.

macro_rules! example_test {
    ($module:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $module() {
            $module::run_example().unwrap();
        }
    };
}

example_test!(synth_cohort, "synth_cohort.rs");
example_test!(build_cohort, "build_cohort.rs");
example_test!(split_cohort, "split_cohort.rs");
example_test!(train_stumps, "train_stumps.rs");
example_test!(evaluate_auroc, "evaluate_auroc.rs");
example_test!(explain_shap, "explain_shap.rs");
example_test!(subgroup_analysis, "subgroup_analysis.rs");
example_test!(full_pipeline, "full_pipeline.rs");
