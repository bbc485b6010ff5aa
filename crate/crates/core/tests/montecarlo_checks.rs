//! Statistical integration checks: the looser Monte Carlo contracts that
//! complement the exact acceptance criteria.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seqfuse::config::{builtin_config, parse_config, ProjectConfig};
use seqfuse::engine::{run_centralized, CentralizedConfig, TruthSampler, DEFAULT_STEP_CAP};
use seqfuse::models::{zero_one_loss, HypothesisSet};
use seqfuse::montecarlo::{
    compare, overall_error, run_experiment, Experiment, TestSpec, Variant,
};

fn ht(name: &str) -> (ProjectConfig, HypothesisSet) {
    let cfg = parse_config(builtin_config(name).expect("bundled")).expect("parses");
    let hs = cfg.hypothesis_set().expect("validates");
    (cfg, hs)
}

fn two_stage(cfg: &ProjectConfig, hs: &HypothesisSet, trials: u64, seed: u64) -> Experiment {
    let test = cfg.assemble_two_stage(hs).expect("assembles");
    run_experiment(&TestSpec::TwoStage { cfg: &test, variant: Variant::TwoStage }, hs, trials, seed)
        .expect("experiment runs")
}

#[test]
fn first_stage_is_short_and_usually_right() {
    let (cfg, hs) = ht("ht1");
    let exp = two_stage(&cfg, &hs, 2_000, 31);
    for state in &exp.summary.per_state {
        // The preliminary stage is a small fraction of the whole trial.
        assert!(
            state.mean_n0 < 0.6 * state.mean_n,
            "m={}: E[N0] = {} vs E[N] = {}",
            state.truth,
            state.mean_n0,
            state.mean_n
        );
    }
    // The preliminary decision errs at a rate of order u. The middle state
    // is the hard one (it guards both directions at the loose threshold and
    // sits near 17% when u = 0.1); the edge states stay in the few-percent
    // range. The second stage recovers either way.
    let bounds = [0.10, 2.0 * exp.summary.config["test"]["two_stage"]["u"].as_f64().unwrap(), 0.05];
    for truth in 0..3 {
        let wrong = exp
            .records
            .iter()
            .filter(|r| r.truth == truth && r.d0 != truth)
            .count() as f64;
        let total = exp.records.iter().filter(|r| r.truth == truth).count() as f64;
        assert!(
            wrong / total < bounds[truth],
            "m={truth}: preliminary error {}",
            wrong / total
        );
    }
}

#[test]
fn final_errors_scale_with_the_cost() {
    let (cfg, hs) = ht("ht1");
    for (i, cost) in [1e-2, 3.6e-3, 1e-3].into_iter().enumerate() {
        let mut c = cfg.clone();
        c.test.cost = Some(cost);
        let exp = two_stage(&c, &hs, 4_000, 40 + i as u64);
        let err = overall_error(&exp.summary);
        // Not a sharp constant, just a non-explosive ratio.
        assert!(err <= 2.0 * cost, "cost {cost}: overall error {err}");
    }
}

#[test]
fn two_sensor_test_beats_the_centralized_reference() {
    for name in ["ht1", "ht2"] {
        let (cfg, hs) = ht(name);
        let ccfg = cfg.centralized(&hs).expect("thresholds");
        let central = run_experiment(
            &TestSpec::Centralized { cfg: &ccfg, cost: cfg.cost() },
            &hs,
            3_000,
            52,
        )
        .expect("runs");

        let cfg2 = cfg.replicate_sensors(2).expect("replicates");
        let hs2 = cfg2.hypothesis_set().expect("validates");
        let two = two_stage(&cfg2, &hs2, 3_000, 53);

        for m in 0..3 {
            let a = &two.summary.per_state[m];
            let b = &central.summary.per_state[m];
            assert!(
                a.mean_n + 3.0 * (a.stderr_n + b.stderr_n) < b.mean_n,
                "{name} m={m}: two-sensor {} not below centralized {}",
                a.mean_n,
                b.mean_n
            );
        }
    }
}

#[test]
fn comparison_flags_a_genuine_separation() {
    let (cfg, hs) = ht("ht1");
    let ccfg = cfg.centralized(&hs).expect("thresholds");
    let central = run_experiment(
        &TestSpec::Centralized { cfg: &ccfg, cost: cfg.cost() },
        &hs,
        2_000,
        61,
    )
    .expect("runs");
    let two = two_stage(&cfg, &hs, 2_000, 62);
    let table = compare(&[&central.summary, &two.summary]).expect("compatible");
    // One sensor's quantized messages cost real information: every state's
    // mean sample size separates from the raw-data reference.
    for row in &table.rows {
        assert!(row[1].separated);
    }
}

#[test]
fn composite_grouping_decides_groups() {
    // Symmetric scenario with the outer states fused into one alternative.
    let (cfg, _) = ht("ht2");
    let mut grouped = cfg.clone();
    grouped.hypotheses.groups = Some(vec![vec![0, 2], vec![1]]);
    grouped.hypotheses.loss =
        seqfuse::config::LossConfig::Explicit(zero_one_loss(3, &[vec![0, 2], vec![1]]));
    let hs = grouped.hypothesis_set().expect("validates");
    assert_eq!(hs.num_groups(), 2);

    let test = grouped.assemble_two_stage(&hs).expect("assembles");
    let exp = run_experiment(
        &TestSpec::TwoStage { cfg: &test, variant: Variant::Composite },
        &hs,
        3_000,
        71,
    )
    .expect("runs");

    // Decisions are group indices, and the error under the middle state
    // stays within a small multiple of the step cost.
    let middle = &exp.summary.per_state[1];
    assert!(middle.err_rate < 2.0 * test.cost, "error {}", middle.err_rate);
    assert!(exp.records.iter().all(|r| r.d < 2));

    // When a state's nearest competitor joins its own group, only the far
    // competitor still matters and the trials shorten substantially.
    let mut fused = cfg.clone();
    fused.hypotheses.groups = Some(vec![vec![0, 1], vec![2]]);
    fused.hypotheses.loss =
        seqfuse::config::LossConfig::Explicit(zero_one_loss(3, &[vec![0, 1], vec![2]]));
    let hs_fused = fused.hypothesis_set().expect("validates");
    let test_fused = fused.assemble_two_stage(&hs_fused).expect("assembles");
    let fast = run_experiment(
        &TestSpec::TwoStage { cfg: &test_fused, variant: Variant::Composite },
        &hs_fused,
        3_000,
        72,
    )
    .expect("runs");
    let ungrouped = two_stage(&cfg, &ht("ht2").1, 3_000, 73);
    assert!(
        fast.summary.per_state[0].mean_n < 0.7 * ungrouped.summary.per_state[0].mean_n,
        "grouped {} vs ungrouped {}",
        fast.summary.per_state[0].mean_n,
        ungrouped.summary.per_state[0].mean_n
    );
}

#[test]
fn centralized_sample_size_grows_with_the_thresholds() {
    let (_, hs) = ht("ht1");
    let mean_n = |a: f64, seed: u64| {
        let cfg = CentralizedConfig { thresholds: vec![a; 3], step_cap: DEFAULT_STEP_CAP };
        let trials = 2_000;
        let mut total = 0u64;
        for truth in 0..3 {
            for i in 0..trials {
                let mut src = TruthSampler::new(
                    &hs,
                    truth,
                    ChaCha8Rng::seed_from_u64(seed ^ (truth as u64) << 32 ^ i),
                )
                .expect("sampler");
                total += run_centralized(&cfg, &hs, &mut src).expect("trial").0;
            }
        }
        total as f64 / (3 * trials) as f64
    };
    // Paired seeds: tightening every threshold lengthens the test.
    let loose = mean_n(0.99, 81);
    let tight = mean_n(0.999, 81);
    assert!(tight > loose, "tight {tight} vs loose {loose}");
}
