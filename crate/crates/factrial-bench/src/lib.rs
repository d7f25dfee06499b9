//! Fixtures shared by the benchmark targets: a simulated trial sized like the
//! real one and the prepared inputs for the model-level benchmarks.

use factrial::data::TrialDataset;
use factrial::glm::DesignMatrix;
use factrial::missing::complete_case_filter;
use factrial::outcomes::derive_all;
use factrial::sim::{simulate_trial, SimulationConfig};
use factrial::standardize::build_design;
use factrial::{AnalysisConfig, BinaryOutcome, Factor};

/// Simulated dataset with the planned enrollment shape. Seed is fixed so
/// every benchmark run measures the same data.
pub fn trial_dataset(n: usize) -> TrialDataset {
    simulate_trial(&SimulationConfig::plan_defaults(n, 17)).expect("simulation succeeds")
}

/// Factorial design matrix and outcome vector for the primary drinking
/// analysis, ready for a logistic fit.
pub fn prepared_fit_inputs(n: usize) -> (DesignMatrix, Vec<f64>) {
    let dataset = trial_dataset(n);
    let config = AnalysisConfig::default();
    let outcomes = derive_all(&dataset, &config).expect("outcome derivation succeeds");
    let rows = complete_case_filter(&dataset, &outcomes, BinaryOutcome::NoHeavyDrinking);
    let x = build_design(&rows.records, Factor::Alcohol, true, false, &dataset.observed_sites())
        .expect("design construction succeeds");
    (x, rows.y)
}
