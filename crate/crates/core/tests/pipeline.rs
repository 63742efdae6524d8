use fedlsa::covariance::{plugin_sigma_infinity, sigma_infinity, PluginVariant};
use fedlsa::engine::{
    BootstrapSpec, Consumer, DrawLog, FedLsa, NoiseStreamKey, ObservationModel, RunOptions, WeightDistribution,
};
use fedlsa::environments::{garnet_federation, synthetic_system, GarnetSpec, SyntheticSpec};
use fedlsa::inference::{eq_interval, pe_interval, random_projection};
use fedlsa::linalg::{spectral_norm, Vector};
use fedlsa::model::{noise_moments, MomentMode};
use fedlsa::schedule::Schedule;

#[test]
fn replicates_consume_exactly_the_base_draws() {
    let (sys, model) = synthetic_system(&SyntheticSpec::new(2, 3, 0.2, 0.2, 1.0, 6)).unwrap();
    let run = FedLsa {
        system: &sys,
        model: &model,
        schedule: Schedule::polynomial(0.2, 3, 0.6, 0.2).unwrap(),
        rounds: 40,
        theta0: Vector::zeros(2),
        seed: 12,
    };
    let opts = RunOptions {
        bootstrap: Some(BootstrapSpec {
            n_replicates: 5,
            weight_seed: 2,
            weights: WeightDistribution::NormalizedBeta,
        }),
        ..Default::default()
    };
    let mut log = DrawLog::default();
    run.simulate(&opts, &mut log).unwrap();
    let base: Vec<_> = log
        .records
        .iter()
        .filter(|r| r.consumer == Consumer::Base)
        .map(|r| (r.key, r.fingerprint))
        .collect();
    assert!(!base.is_empty());
    for b in 0..5 {
        let rep: Vec<_> = log
            .records
            .iter()
            .filter(|r| r.consumer == Consumer::Replicate(b))
            .map(|r| (r.key, r.fingerprint))
            .collect();
        assert_eq!(rep, base, "replicate {b}");
    }
}

#[test]
fn batched_replicate_steps_match_single_residuals() {
    let fed = garnet_federation(&GarnetSpec::default()).unwrap();
    let model = &fed.model;
    let d = model.dim();
    let n_b = 7;
    let alive = [0, 2, 3, 6];
    let steps = [0.1, 0.02, 0.3, 0.05];
    let start: Vec<f64> = (0..n_b * d).map(|i| (i as f64 * 0.37).sin()).collect();
    for c in 0..model.n_agents() {
        for k in 0..20 {
            let z = model.draw(c, &mut NoiseStreamKey::data(1, k + 1, 0, c).stream());
            let mut batched = start.clone();
            let mut scratch = vec![0.0; d];
            model.weighted_steps(c, &z, &mut batched, &alive, &steps, &mut scratch);
            let mut single = start.clone();
            for (&b, &s) in alive.iter().zip(&steps) {
                let th = &mut single[b * d..(b + 1) * d];
                model.residual(c, &z, th, &mut scratch);
                for i in 0..d {
                    th[i] -= s * scratch[i];
                }
            }
            assert_eq!(batched, single);
        }
    }
}

#[test]
fn plugin_estimate_approaches_the_true_covariance() {
    let fed = garnet_federation(&GarnetSpec::default()).unwrap();
    let mom = noise_moments(&fed.system, &fed.model, MomentMode::Exact).unwrap();
    let exact = sigma_infinity(&fed.system, &mom).unwrap();
    let run = FedLsa {
        system: &fed.system,
        model: &fed.model,
        schedule: Schedule::polynomial(0.075, 20, 0.6, 0.0).unwrap(),
        rounds: 4000,
        theta0: Vector::zeros(5),
        seed: 3,
    };
    let opts = RunOptions {
        plugin: true,
        ..Default::default()
    };
    let out = run.simulate(&opts, &mut fedlsa::engine::NoObserver).unwrap();
    let acc = out.plugin.unwrap();
    let est = plugin_sigma_infinity(&acc, PluginVariant::Observable).unwrap();
    let rel = spectral_norm(&(&est - &exact)) / spectral_norm(&exact);
    assert!(rel < 0.25, "relative error {rel}");
}

#[test]
fn pe_and_eq_intervals_agree_on_a_long_garnet_run() {
    let fed = garnet_federation(&GarnetSpec::default()).unwrap();
    let run = FedLsa {
        system: &fed.system,
        model: &fed.model,
        schedule: Schedule::polynomial(0.075, 20, 0.6, 0.0).unwrap(),
        rounds: 3000,
        theta0: Vector::zeros(5),
        seed: 8,
    };
    let opts = RunOptions {
        checkpoints: vec![3000],
        plugin: true,
        bootstrap: Some(BootstrapSpec {
            n_replicates: 200,
            weight_seed: 1,
            weights: WeightDistribution::NormalizedBeta,
        }),
        ..Default::default()
    };
    let out = run.simulate(&opts, &mut fedlsa::engine::NoObserver).unwrap();
    let cp = &out.checkpoints[0];
    let u = random_projection(0, 5);
    let sigma = plugin_sigma_infinity(cp.plugin.as_ref().unwrap(), PluginVariant::Observable).unwrap();
    let pe = pe_interval(&cp.theta, &sigma, cp.eta, &u, 0.95).unwrap();
    let eq = eq_interval(&cp.theta, &cp.finite_replicates(), cp.eta, &u, 0.95).unwrap();
    let ratio = eq.width() / pe.width();
    assert!((0.6..1.6).contains(&ratio), "EQ/PE width ratio {ratio}");
}
