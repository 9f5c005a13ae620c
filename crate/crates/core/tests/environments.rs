use std::io::Write;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use promptsel::environments::{
    apply_drift, validate_replay, CategorySpec, DriftChange, DriftEntry, DriftEvent, Environment,
    EnvironmentSpec, ReplaySpec, SyntheticEnv, SyntheticEnvSpec, SyntheticMode,
};
use promptsel::estimator::{compute_ucb, ArmDataset};
use promptsel::kernels::KernelSpec;
use promptsel::policies::{build_policy, PolicyConfig, PolicyKind};
use promptsel::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn realizable_spec() -> SyntheticEnvSpec {
    let mut spec = SyntheticEnvSpec::category_expert(
        6,
        3,
        &[
            ("x", vec![0.4, -0.2, 0.0]),
            ("y", vec![-0.2, 0.4, 0.1]),
            ("z", vec![0.0, 0.1, 0.4]),
        ],
    );
    spec.mode = SyntheticMode::Realizable;
    spec.kernel = KernelSpec::rbf(1.0);
    spec.spread = 0.2;
    spec.seed = 4;
    spec
}

fn write_log(lines: &[&str]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    f
}

const HEADER: &str = r#"{"arm_names": ["a", "b", "c"], "d": 2, "k": 2}"#;
const ROWS: [&str; 3] = [
    r#"{"prompt_id": "p1", "embedding": [1.0, 0.0], "scores": {"a": [0.1, 0.3], "b": [0.5, 0.5], "c": [0.0, 0.0]}, "category": "u"}"#,
    r#"{"prompt_id": "p2", "embedding": [0.0, 2.0], "scores": {"a": [0.9, 0.7], "b": [0.1, 0.1], "c": [0.2, 0.2]}}"#,
    r#"{"prompt_id": "p3", "embedding": [3.0, 4.0], "scores": {"a": [0.0, 0.0], "b": [0.0, 0.0], "c": [0.6, 0.4]}, "category": "v"}"#,
];

fn replay_env(sequential: bool, drift: Vec<DriftEntry>) -> (tempfile::NamedTempFile, Environment) {
    let mut lines = vec![HEADER];
    lines.extend(ROWS);
    let f = write_log(&lines);
    let spec = EnvironmentSpec::Replay(ReplaySpec {
        path: f.path().to_path_buf(),
        sequential,
        drift,
    });
    let env = Environment::build(&spec, None).unwrap();
    (f, env)
}

#[test]
fn single_category_single_arm_is_always_best() {
    let mut env = Environment::Synthetic(
        SyntheticEnv::new(SyntheticEnvSpec::category_expert(
            4,
            1,
            &[("only", vec![0.3])],
        ))
        .unwrap(),
    );
    let mut r = rng(0);
    for _ in 0..20 {
        let d = env.next_prompt(&mut r).unwrap();
        assert_eq!(d.best_arm, Some(0));
        assert_eq!(d.means, Some(vec![0.3]));
    }
}

#[test]
fn prompts_are_unit_norm_and_best_arm_attains_the_max() {
    let mut env = Environment::Synthetic(SyntheticEnv::new(realizable_spec()).unwrap());
    let mut r = rng(1);
    for _ in 0..200 {
        let d = env.next_prompt(&mut r).unwrap();
        let norm: f64 = d.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let means = d.means.unwrap();
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(means[d.best_arm.unwrap()], best);
        assert!(means.iter().all(|m| m.abs() <= 1.0));
    }
}

#[test]
#[allow(clippy::needless_range_loop)]
fn realizable_means_match_independent_recomputation() {
    let env = SyntheticEnv::new(realizable_spec()).unwrap();
    let centers: Vec<Vec<f64>> = ["x", "y", "z"]
        .iter()
        .map(|c| env.category_center(c).unwrap().to_vec())
        .collect();
    // The coefficients interpolate the table at the centers.
    let table = [[0.4, -0.2, 0.0], [-0.2, 0.4, 0.1], [0.0, 0.1, 0.4]];
    for g in 0..3 {
        let w = env.coefficients(g).unwrap();
        for (c, center) in centers.iter().enumerate() {
            let value: f64 = centers
                .iter()
                .zip(w)
                .map(|(a, wj)| {
                    let sq: f64 = a.iter().zip(center).map(|(p, q)| (p - q) * (p - q)).sum();
                    wj * (-sq / 2.0).exp()
                })
                .sum();
            assert!((value - table[c][g]).abs() < 1e-10, "arm {g} category {c}");
        }
    }
    let mut env = Environment::Synthetic(env);
    let mut r = rng(2);
    for _ in 0..50 {
        let d = env.next_prompt(&mut r).unwrap();
        let Environment::Synthetic(inner) = &env else {
            unreachable!()
        };
        for g in 0..3 {
            let w = inner.coefficients(g).unwrap();
            let direct: f64 = centers
                .iter()
                .zip(w)
                .map(|(a, wj)| {
                    let sq: f64 = a
                        .iter()
                        .zip(&d.vector)
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum();
                    wj * (-sq / 2.0).exp()
                })
                .sum();
            assert!((direct - d.means.as_ref().unwrap()[g]).abs() < 1e-12);
        }
    }
}

#[test]
fn realizable_tables_with_large_norm_are_rejected() {
    let mut spec = realizable_spec();
    spec.categories[0].center = Some(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    spec.categories[1].center = Some(vec![0.999, 0.04, 0.0, 0.0, 0.0, 0.0]);
    spec.categories[0].means = vec![0.9, 0.0, 0.0];
    spec.categories[1].means = vec![-0.9, 0.0, 0.0];
    assert!(matches!(SyntheticEnv::new(spec), Err(Error::Config(_))));
}

#[test]
fn noiseless_scores_equal_the_mean() {
    let mut spec = realizable_spec();
    spec.noise_std = 0.0;
    let mut env = Environment::Synthetic(SyntheticEnv::new(spec).unwrap());
    let mut r = rng(3);
    for _ in 0..20 {
        let d = env.next_prompt(&mut r).unwrap();
        for g in 0..3 {
            assert_eq!(
                env.sample_score(&d.id, g, &mut r).unwrap(),
                d.means.as_ref().unwrap()[g]
            );
        }
    }
}

#[test]
fn noisy_scores_average_to_the_mean() {
    let mut spec = realizable_spec();
    spec.noise_std = 0.1;
    spec.score_clip = false;
    let mut env = Environment::Synthetic(SyntheticEnv::new(spec).unwrap());
    let mut r = rng(4);
    let d = env.next_prompt(&mut r).unwrap();
    let n = 10_000;
    let mean: f64 = (0..n)
        .map(|_| env.sample_score(&d.id, 1, &mut r).unwrap())
        .sum::<f64>()
        / n as f64;
    let se = 0.1 / (n as f64).sqrt();
    assert!((mean - d.means.unwrap()[1]).abs() <= 4.0 * se);
}

#[test]
fn clipped_scores_stay_in_range() {
    let mut spec = SyntheticEnvSpec::category_expert(3, 2, &[("a", vec![0.95, -0.95])]);
    spec.noise_std = 0.5;
    let mut env = Environment::Synthetic(SyntheticEnv::new(spec).unwrap());
    let mut r = rng(5);
    let d = env.next_prompt(&mut r).unwrap();
    for _ in 0..500 {
        for g in 0..2 {
            assert!(env.sample_score(&d.id, g, &mut r).unwrap().abs() <= 1.0);
        }
    }
}

#[test]
fn unknown_prompt_id_is_an_input_error() {
    let env = Environment::Synthetic(SyntheticEnv::new(realizable_spec()).unwrap());
    assert!(matches!(
        env.sample_score("nope", 0, &mut rng(0)),
        Err(Error::InvalidInput(_))
    ));
    let (_f, env) = replay_env(false, Vec::new());
    assert!(matches!(
        env.sample_score("p9", 0, &mut rng(0)),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn same_seed_gives_identical_streams() {
    let stream = |seed| {
        let mut env = Environment::Synthetic(SyntheticEnv::new(realizable_spec()).unwrap());
        let mut r = rng(seed);
        (0..30)
            .map(|_| {
                let d = env.next_prompt(&mut r).unwrap();
                (d.vector, env.sample_score(&d.id, 0, &mut r).unwrap())
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(stream(7), stream(7));
    assert_ne!(stream(7), stream(8));
}

#[test]
fn category_expert_reference_means_are_closed_form() {
    let mut spec =
        SyntheticEnvSpec::category_expert(4, 2, &[("a", vec![0.8, 0.4]), ("b", vec![0.4, 0.8])]);
    spec.categories[1].weight = 3.0;
    let env = Environment::Synthetic(SyntheticEnv::new(spec).unwrap());
    let r = env.reference_means();
    assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] - 0.7).abs() < 1e-12);
    assert_eq!(env.best_single_arm(), 1);
}

#[test]
fn realizable_mean_is_recovered_by_near_interpolating_regression() {
    let mut spec = realizable_spec();
    spec.noise_std = 0.0;
    let kernel = spec.kernel;
    let mut env = Environment::Synthetic(SyntheticEnv::new(spec).unwrap());
    let mut r = rng(6);
    let mut data = ArmDataset::new();
    let mut truth = Vec::new();
    for _ in 0..30 {
        let d = env.next_prompt(&mut r).unwrap();
        let s = env.sample_score(&d.id, 2, &mut r).unwrap();
        data.push(d.vector.clone(), s).unwrap();
        truth.push((d.vector, d.means.unwrap()[2]));
    }
    for (y, s) in &truth {
        let est = compute_ucb(&data, &kernel, 1e-6, y).unwrap();
        assert!((est.mean - s).abs() <= 1e-3, "{} vs {s}", est.mean);
    }
}

#[test]
fn replay_sequential_order_wraps() {
    let (_f, mut env) = replay_env(true, Vec::new());
    let mut r = rng(0);
    let ids: Vec<String> = (0..5)
        .map(|_| env.next_prompt(&mut r).unwrap().id)
        .collect();
    assert_eq!(ids, ["p1", "p2", "p3", "p1", "p2"]);
}

#[test]
fn replay_oracle_uses_sample_averages() {
    let (_f, mut env) = replay_env(true, Vec::new());
    let mut r = rng(0);
    let d = env.next_prompt(&mut r).unwrap();
    assert_eq!(d.means, Some(vec![0.2, 0.5, 0.0]));
    assert_eq!(d.best_arm, Some(1));
    assert_eq!(d.category.as_deref(), Some("u"));
    // Embeddings are normalized on load.
    let d3 = {
        env.next_prompt(&mut r).unwrap();
        env.next_prompt(&mut r).unwrap()
    };
    assert!((d3.vector[0] - 0.6).abs() < 1e-12 && (d3.vector[1] - 0.8).abs() < 1e-12);
    // A singleton sample set always replays the same value.
    for _ in 0..10 {
        assert_eq!(env.sample_score("p1", 1, &mut r).unwrap(), 0.5);
    }
    let refs = env.reference_means();
    assert!((refs[0] - (0.2 + 0.8 + 0.0) / 3.0).abs() < 1e-12);
}

#[test]
fn replay_uniform_sampling_covers_all_rows() {
    let (_f, mut env) = replay_env(false, Vec::new());
    let mut r = rng(11);
    let mut counts = std::collections::HashMap::new();
    for _ in 0..3000 {
        *counts
            .entry(env.next_prompt(&mut r).unwrap().id)
            .or_insert(0) += 1;
    }
    for id in ["p1", "p2", "p3"] {
        let c = counts[id] as f64;
        assert!((c - 1000.0).abs() < 5.0 * (3000.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt());
    }
}

#[test]
fn validate_accepts_a_well_formed_log() {
    let mut lines = vec![HEADER];
    lines.extend(ROWS);
    let f = write_log(&lines);
    let report = validate_replay(f.path()).unwrap();
    assert!(report.is_valid(), "{:?}", report.violations);
    assert_eq!(
        (
            report.rows,
            report.dim,
            report.num_arms,
            report.samples_per_arm
        ),
        (3, Some(2), Some(3), Some(2))
    );
}

#[test]
fn validate_reports_each_bad_line() {
    let missing = r#"{"prompt_id": "p4", "embedding": [1.0, 1.0], "scores": {"a": [0.1, 0.3], "b": [0.5, 0.5]}}"#;
    let wrong_dim = r#"{"prompt_id": "p5", "embedding": [1.0, 1.0, 1.0], "scores": {"a": [0.1, 0.3], "b": [0.5, 0.5], "c": [0.0, 0.0]}}"#;
    let dup = ROWS[0];
    let f = write_log(&[HEADER, ROWS[0], missing, wrong_dim, dup, "not json"]);
    let report = validate_replay(f.path()).unwrap();
    let lines: Vec<usize> = report.violations.iter().map(|v| v.line).collect();
    assert_eq!(lines, [3, 4, 5, 6], "{:?}", report.violations);
    assert!(report.violations[0].message.contains('c'));
    assert!(matches!(
        promptsel::environments::ReplayLog::load(f.path()),
        Err(Error::Parse { line: 3, .. })
    ));
}

#[test]
fn empty_replay_log_is_an_input_error() {
    let f = write_log(&[HEADER]);
    let spec = EnvironmentSpec::Replay(ReplaySpec {
        path: f.path().to_path_buf(),
        sequential: false,
        drift: Vec::new(),
    });
    assert!(matches!(
        Environment::build(&spec, None),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn replay_drift_withholds_arms_and_categories() {
    let drift = vec![
        DriftEntry {
            round: 3,
            event: DriftEvent::AddArm { name: "b".into() },
        },
        DriftEntry {
            round: 2,
            event: DriftEvent::AddCategory(CategorySpec {
                name: "v".into(),
                center: None,
                weight: 1.0,
                means: Vec::new(),
            }),
        },
    ];
    let (_f, mut env) = replay_env(true, drift);
    assert_eq!(env.arm_names(), ["a", "c"]);
    let mut r = rng(0);
    assert!(env.begin_round(1).is_empty());
    let ids: Vec<String> = (0..3)
        .map(|_| env.next_prompt(&mut r).unwrap().id)
        .collect();
    assert_eq!(ids, ["p1", "p2", "p1"]);
    assert_eq!(
        env.begin_round(2),
        vec![DriftChange::CategoryAdded { name: "v".into() }]
    );
    assert_eq!(
        env.begin_round(3),
        vec![DriftChange::ArmAdded {
            index: 2,
            name: "b".into()
        }]
    );
    let d = env.next_prompt(&mut r).unwrap();
    assert_eq!(d.id, "p2");
    assert_eq!(d.means, Some(vec![0.8, 0.2, 0.1]));
    assert_eq!(env.sample_score("p2", 2, &mut r).unwrap(), 0.1);
}

fn two_arm_spec() -> SyntheticEnvSpec {
    SyntheticEnvSpec::category_expert(5, 2, &[("a", vec![0.8, 0.4]), ("b", vec![0.4, 0.8])])
}

#[test]
fn added_arm_is_selected_on_its_first_round() {
    let mut spec = SyntheticEnvSpec::category_expert(
        5,
        2,
        &[("a", vec![0.8, 0.4, 0.5]), ("b", vec![0.4, 0.8, 0.9])],
    );
    spec.drift.push(DriftEntry {
        round: 60,
        event: DriftEvent::AddArm { name: "new".into() },
    });
    for kind in PolicyKind::ALL.into_iter().filter(|k| k.has_cold_start()) {
        let mut env = Environment::Synthetic(SyntheticEnv::new(spec.clone()).unwrap());
        let cfg = PolicyConfig::new(kind)
            .with_horizon(100)
            .with_rff_features(32);
        let mut policy = build_policy(&cfg, env.num_arms(), env.dim(), None).unwrap();
        let (mut pr, mut sr) = (rng(1), rng(2));
        for t in 1..=60 {
            for change in env.begin_round(t) {
                assert!(matches!(change, DriftChange::ArmAdded { index: 2, .. }));
                policy.add_arm().unwrap();
            }
            let d = env.next_prompt(&mut pr).unwrap();
            let sel = policy.select(&d.vector).unwrap();
            if t == 60 {
                assert_eq!(sel.arm, 2, "{kind}");
                assert_eq!(d.means.as_ref().unwrap().len(), 3);
            }
            let s = env.sample_score(&d.id, sel.arm, &mut sr).unwrap();
            policy.ingest(&d.vector, sel.arm, s, sel.stage).unwrap();
        }
    }
}

#[test]
fn category_count_grows_with_the_schedule() {
    let mut spec = SyntheticEnvSpec::category_expert(
        4,
        2,
        &[("person", vec![0.8, 0.4]), ("bicycle", vec![0.4, 0.8])],
    );
    spec.drift = ["airplane", "bus", "train", "truck"]
        .iter()
        .enumerate()
        .map(|(i, name)| DriftEntry {
            round: 1000 * (i + 1),
            event: DriftEvent::AddCategory(CategorySpec {
                name: name.to_string(),
                center: None,
                weight: 1.0,
                means: vec![0.6, 0.6],
            }),
        })
        .collect();
    let mut env = Environment::Synthetic(SyntheticEnv::new(spec).unwrap());
    let mut counts = Vec::new();
    for t in [1, 999, 1000, 2000, 3000, 4000, 5000] {
        env.begin_round(t);
        counts.push(env.category_count());
    }
    assert_eq!(counts, [2, 2, 3, 4, 5, 6, 6]);
}

#[test]
fn empty_schedule_leaves_the_environment_unchanged() {
    let base = Environment::Synthetic(SyntheticEnv::new(realizable_spec()).unwrap());
    let mut a = base.clone();
    let mut b = apply_drift(&base, &[]).unwrap();
    let (mut ra, mut rb) = (rng(3), rng(3));
    for t in 1..=20 {
        assert!(b.begin_round(t).is_empty());
        assert_eq!(
            a.next_prompt(&mut ra).unwrap(),
            b.next_prompt(&mut rb).unwrap()
        );
    }
}

#[test]
fn duplicate_arm_names_are_rejected() {
    let base = Environment::Synthetic(SyntheticEnv::new(two_arm_spec()).unwrap());
    let dup = [DriftEntry {
        round: 5,
        event: DriftEvent::AddArm {
            name: "arm1".into(),
        },
    }];
    assert!(matches!(
        apply_drift(&base, &dup),
        Err(Error::InvalidInput(_))
    ));
    let (_f, replay) = replay_env(false, Vec::new());
    let twice = [
        DriftEntry {
            round: 5,
            event: DriftEvent::AddArm { name: "b".into() },
        },
        DriftEntry {
            round: 6,
            event: DriftEvent::AddArm { name: "b".into() },
        },
    ];
    assert!(matches!(
        apply_drift(&replay, &twice),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn drift_table_must_cover_added_arms() {
    let mut spec = SyntheticEnvSpec::category_expert(4, 2, &[("a", vec![0.8, 0.4])]);
    spec.drift.push(DriftEntry {
        round: 3,
        event: DriftEvent::AddArm { name: "z".into() },
    });
    assert!(matches!(SyntheticEnv::new(spec), Err(Error::Config(_))));
}

#[test]
fn drift_parses_from_toml() {
    let text = r#"
        type = "synthetic"
        mode = "category_expert"
        dim = 3
        arms = ["a", "b"]
        [[categories]]
        name = "x"
        means = [0.1, 0.2, 0.3]
        [[drift]]
        round = 10
        event = "add_arm"
        name = "c"
    "#;
    let spec: EnvironmentSpec = toml::from_str(text).unwrap();
    assert_eq!(spec.drift().len(), 1);
    assert!(Environment::build(&spec, None).is_ok());
    let typo = text.replace("means = [0.1", "meens = [0.1");
    assert!(toml::from_str::<EnvironmentSpec>(&typo).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn oracle_consistency_holds_for_random_tables(
        table in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..4),
        seed in 0u64..1000,
    ) {
        let cats: Vec<(String, Vec<f64>)> = table
            .iter()
            .enumerate()
            .map(|(i, m)| (format!("c{i}"), m.clone()))
            .collect();
        let refs: Vec<(&str, Vec<f64>)> = cats.iter().map(|(n, m)| (n.as_str(), m.clone())).collect();
        let mut spec = SyntheticEnvSpec::category_expert(4, 3, &refs);
        spec.seed = seed;
        let mut env = Environment::Synthetic(SyntheticEnv::new(spec).unwrap());
        let mut r = rng(seed);
        for _ in 0..20 {
            let d = env.next_prompt(&mut r).unwrap();
            let means = d.means.unwrap();
            let best = d.best_arm.unwrap();
            prop_assert!(means.iter().all(|m| *m <= means[best]));
            prop_assert!(means[..best].iter().all(|m| *m < means[best]));
        }
    }
}
