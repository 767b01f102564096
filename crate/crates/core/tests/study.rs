#![allow(clippy::needless_range_loop)]

mod common;

use stgeyer::inference::FitMethod;
use stgeyer::model::ScaleComponent;
use stgeyer::quadrature::GridSpec;
use stgeyer::simulate::{InitialState, McmcConfig};
use stgeyer::study::{self, StudyConfig, StudyReport};

fn config(n: usize, methods: Vec<FitMethod>) -> StudyConfig {
    StudyConfig {
        name: "test".into(),
        model: common::model_1(),
        n_replicates: n,
        mcmc: McmcConfig {
            n_steps: 20_000,
            burn_in: 20_000,
            seed: 0,
            initial: InitialState::Poisson { rate: 70.0 },
            thin: 100,
        },
        methods,
        master_seed: 77,
        grid: GridSpec::Auto,
        rho_factor: 4.0,
        fit: Default::default(),
    }
}

#[test]
fn single_replicate_is_reproducible() {
    let c = config(1, vec![FitMethod::Pseudo, FitMethod::Logistic]);
    let a = study::run_study(&c).unwrap();
    let b = study::run_study(&c).unwrap();
    assert_eq!(a.estimates.len(), 2);
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn thread_count_does_not_change_results() {
    let c = config(6, vec![FitMethod::Pseudo, FitMethod::Logistic]);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| study::run_study(&c).unwrap());
    let b = four.install(|| study::run_study(&c).unwrap());
    assert_eq!(a, b);
}

#[test]
fn rmse_matches_recomputation_from_csv() {
    let c = config(8, vec![FitMethod::Pseudo, FitMethod::Logistic]);
    let report = study::run_study(&c).unwrap();
    let table = study::rmse_table(&report).unwrap();
    let mut buf = Vec::new();
    study::write_estimates_csv(&report, &mut buf).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["replicate", "method", "n_points", "beta", "gamma_1", "gamma_2", "iterations"]);
    let truth = [70.0, 0.5, 1.5];
    for (i, m) in ["pseudo", "logistic"].iter().enumerate() {
        let mut sq = [0.0; 3];
        let mut n = 0.0;
        for rec in rd.records() {
            let rec = rec.unwrap();
            if &rec[1] != *m {
                continue;
            }
            n += 1.0;
            for j in 0..3 {
                let v: f64 = rec[3 + j].parse().unwrap();
                sq[j] += (v - truth[j]).powi(2);
            }
        }
        rd = csv::Reader::from_reader(buf.as_slice());
        for j in 0..3 {
            let r = (sq[j] / n).sqrt();
            assert!((r - table.rmse[i][j]).abs() <= 1e-12 * (1.0 + r));
        }
    }
}

#[test]
fn report_round_trips_exactly() {
    let report = study::run_study(&config(3, vec![FitMethod::Logistic])).unwrap();
    let text = serde_json::to_string_pretty(&report).unwrap();
    let back: StudyReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
    let t = study::rmse_table(&report).unwrap();
    assert_eq!(t.rmse.len(), 1);
    assert_eq!(t.best, vec![None, None, None]);
}

#[test]
fn failing_fits_are_logged_and_flagged() {
    // A zero saturation gives an all-zero statistic column, so every fit
    // is rank deficient.
    let mut c = config(3, vec![FitMethod::Pseudo]);
    c.model.scales.push(ScaleComponent { gamma: 1.0, r: 0.1, q: 0.1, s: 0.0 });
    let report = study::run_study(&c).unwrap();
    assert_eq!(report.failures.len(), 3);
    assert!(report.estimates.is_empty());
    assert!(!report.comparable);
    assert!(report.failures[0].message.contains("rank deficient"));
    assert!(study::rmse_table(&report).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(study::run_study(&config(0, vec![FitMethod::Pseudo])).is_err());
    assert!(study::run_study(&config(1, vec![])).is_err());
    assert!(study::run_study(&config(1, vec![FitMethod::Pseudo, FitMethod::Pseudo])).is_err());
}
