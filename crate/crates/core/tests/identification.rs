mod common;

use common::*;
use d2pc::datadriven::{build_predictor, identify, DataDrivenModel};
use d2pc::harness::{run_experiment, ExperimentSpec, Method};
use d2pc::numerics::{Vector, IDENTIFICATION_REL_TOL};
use d2pc::plant::{collect_episode, BenchmarkName, EpisodeData, ExcitationSpec, NoiseSpec};

fn episode(sys: &d2pc::plant::LtiSystem, nbar: usize, len: usize, seed: u64, noise: f64) -> EpisodeData {
    let noise = if noise > 0.0 {
        NoiseSpec::new(noise, seed).unwrap().with_stream(2)
    } else {
        NoiseSpec::none()
    };
    collect_episode(sys, len, nbar, &ExcitationSpec::new(1.0, seed).with_stream(1), &noise).unwrap()
}

/// Largest deviation between predicted and simulated outputs over `horizon`
/// steps, starting after `nbar` steps of history.
fn prediction_error(sys: &d2pc::plant::LtiSystem, model: &DataDrivenModel, seed: u64) -> f64 {
    let (m, nbar, horizon) = (sys.m(), model.nbar(), 20);
    let mut r = rng(seed);
    let inputs = random_matrix(&mut r, m, nbar + horizon);
    let x0 = random_vector(&mut r, sys.n());
    let y = lti_outputs(sys, &x0, &inputs);
    let chi = model
        .stacked_chi(&y.columns(0, nbar).into_owned(), &inputs.columns(0, nbar).into_owned())
        .unwrap();
    let future = Vector::from_iterator(m * horizon, inputs.columns(nbar, horizon).iter().copied());
    let predicted = build_predictor(model, horizon).unwrap().predict_outputs(&chi, &future);
    let actual = Vector::from_iterator(sys.p() * horizon, y.columns(nbar, horizon).iter().copied());
    (predicted - actual).amax()
}

#[test]
fn noise_free_identification_predicts_from_arbitrary_initial_state() {
    let mut r = rng(21);
    for k in 0..10u64 {
        let sys = random_system(&mut r, 3, 1, 2, 0.9);
        let nbar = 3 + (k as usize % 3);
        let ep = episode(&sys, nbar, 6 * nbar, 40 + k, 0.0);
        let model = identify(&[ep], nbar, IDENTIFICATION_REL_TOL).unwrap();
        assert!(prediction_error(&sys, &model, 70 + k) <= 1e-8, "system {k}");
    }
}

#[test]
fn averaging_noise_free_episodes_preserves_exactness() {
    let mut r = rng(22);
    let sys = random_system(&mut r, 2, 2, 1, 0.8);
    let nbar = 3;
    let episodes: Vec<_> = (0..5).map(|k| episode(&sys, nbar, 40, 100 + k, 0.0)).collect();
    let model = identify(&episodes, nbar, IDENTIFICATION_REL_TOL).unwrap();
    assert_eq!(model.episodes_averaged(), 5);
    assert!(prediction_error(&sys, &model, 9) <= 1e-8);
}

#[test]
fn averaging_reduces_noisy_prediction_error() {
    let mut r = rng(23);
    let sys = random_system(&mut r, 2, 1, 1, 0.7);
    let nbar = 2;
    let single = identify(&[episode(&sys, nbar, 60, 1, 1e-3)], nbar, IDENTIFICATION_REL_TOL).unwrap();
    let episodes: Vec<_> = (0..200).map(|k| episode(&sys, nbar, 60, 1 + k, 1e-3)).collect();
    let averaged = identify(&episodes, nbar, IDENTIFICATION_REL_TOL).unwrap();
    let e1 = prediction_error(&sys, &single, 5);
    let e200 = prediction_error(&sys, &averaged, 5);
    assert!(e200 < e1, "single {e1:e}, averaged {e200:e}");
}

#[test]
fn episode_and_model_text_round_trip() {
    let mut r = rng(24);
    let sys = random_system(&mut r, 2, 1, 2, 0.9);
    let ep = episode(&sys, 3, 30, 7, 1e-2);
    let mut buf = Vec::new();
    ep.write_csv(&mut buf).unwrap();
    let back = EpisodeData::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), ep.len());
    assert!((&back.inputs - &ep.inputs).amax() <= 1e-12 * (1.0 + ep.inputs.amax()));
    assert!((&back.outputs - &ep.outputs).amax() <= 1e-12 * (1.0 + ep.outputs.amax()));

    let model = identify(&[ep], 3, IDENTIFICATION_REL_TOL).unwrap();
    let mut text = Vec::new();
    model.write_text(&mut text).unwrap();
    let model_back = DataDrivenModel::read_text(text.as_slice()).unwrap();
    assert!((model_back.a_block_diag() - model.a_block_diag()).amax() <= 1e-12 * (1.0 + model.a_block_diag().amax()));
    assert!((model_back.b_stack() - model.b_stack()).amax() <= 1e-12 * (1.0 + model.b_stack().amax()));
}

#[test]
fn identify_rejects_inconsistent_episodes() {
    let mut r = rng(25);
    let a = random_system(&mut r, 2, 1, 1, 0.9);
    let b = random_system(&mut r, 2, 1, 2, 0.9);
    let eps = [episode(&a, 2, 20, 1, 0.0), episode(&b, 2, 20, 2, 0.0)];
    assert!(identify(&eps, 2, IDENTIFICATION_REL_TOL).is_err());
    assert!(identify(&[], 2, IDENTIFICATION_REL_TOL).is_err());
}

#[test]
fn experiments_are_reproducible_and_seed_dependent() {
    let mut spec = ExperimentSpec::new(BenchmarkName::FourTank, Method::D2pc);
    spec.noise = 1e-2;
    spec.trials = 3;
    spec.n_sim = 30;
    let a = run_experiment(&spec).unwrap();
    let b = run_experiment(&spec).unwrap();
    assert_eq!(a, b);
    spec.base_seed = 99;
    let c = run_experiment(&spec).unwrap();
    assert_ne!(a.cell.mean_mae, c.cell.mean_mae);
}

#[test]
fn noise_free_d2pc_tracks_mpc_on_every_benchmark() {
    for bench in [BenchmarkName::InvertedPendulum, BenchmarkName::TwoMass, BenchmarkName::FourTank] {
        let mut spec = ExperimentSpec::new(bench, Method::D2pc);
        spec.trials = 1;
        if bench == BenchmarkName::TwoMass {
            spec.nbar = 20;
        }
        let cell = run_experiment(&spec).unwrap().cell;
        assert_eq!(cell.failure_ratio, 0.0, "{bench:?}");
        assert!(cell.mean_mae.unwrap() < 1e-3, "{bench:?}: {:?}", cell.mean_mae);
    }
}
