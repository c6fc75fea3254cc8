use proptest::prelude::*;
use ugnn_core::data::{generate_shifted_pair, load_domain, save_domain, ShiftConfig};
use ugnn_core::graph::{build_operators, Graph};
use ugnn_core::models::{ElasticSolver, Propagator};
use ugnn_core::objectives::{check_cascade, EdgePenalty, LowerLevel};
use ugnn_core::tensor::DenseMatrix;

fn random_graph(n: usize, mask: &[bool]) -> Graph {
    let mut edges = Vec::new();
    let mut bits = mask.iter().cycle();
    for u in 0..n {
        for v in u + 1..n {
            if *bits.next().unwrap() {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

fn setup() -> impl Strategy<Value = (usize, Vec<bool>, Vec<f64>, bool)> {
    (3usize..12).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(prop::bool::weighted(0.3), 1..40),
            prop::collection::vec(-1.0f64..1.0, n * 2),
            any::<bool>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cascade_never_raises_objective((n, mask, x, loops) in setup(), alpha in 0.05f64..0.95, lambda in 0.5f64..5.0) {
        let ops = build_operators(&random_graph(n, &mask), loops).unwrap();
        let pre = DenseMatrix::from_vec(n, 2, x).unwrap();
        let cases = [
            (Propagator::Appnp { alpha, k: 10 }, LowerLevel::Gsd { alpha }),
            (
                Propagator::Elastic { solver: ElasticSolver::with_defaults(lambda, 0.3, EdgePenalty::RowL2), k: 10 },
                LowerLevel::Elastic { lambda1: lambda, lambda2: 0.3, penalty: EdgePenalty::RowL2 },
            ),
        ];
        for (prop, lower) in &cases {
            let report = check_cascade(&pre, &ops, prop, lower).unwrap();
            prop_assert!(report.holds, "f_cp {} > f_transfer {}", report.f_cp, report.f_transfer);
        }
    }

    #[test]
    fn appnp_iterates_descend((n, mask, x, loops) in setup(), alpha in 0.05f64..0.95) {
        let ops = build_operators(&random_graph(n, &mask), loops).unwrap();
        let pre = DenseMatrix::from_vec(n, 2, x).unwrap();
        let lower = LowerLevel::Gsd { alpha };
        let steps = Propagator::Appnp { alpha, k: 12 }.trajectory(&ops, &pre).unwrap();
        let values: Vec<f64> = steps.iter().map(|h| lower.value(h, &pre, &ops).unwrap()).collect();
        for w in values.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }
}

#[test]
fn synthetic_pair_round_trips_through_disk() {
    let cfg = ShiftConfig {
        nodes: 40,
        feature_dim: 5,
        offset: 2.0,
        inter_scale: 2.0,
        seed: 11,
        ..ShiftConfig::default()
    };
    let (source, target) = generate_shifted_pair(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for ds in [&source, &target] {
        let path = dir.path().join(&ds.name);
        save_domain(ds, &path).unwrap();
        let loaded = load_domain(&path).unwrap();
        assert_eq!(&loaded, ds);
    }
    source.check_compatible(&target).unwrap();
}

#[test]
fn generator_is_deterministic() {
    let cfg = ShiftConfig { nodes: 30, seed: 5, ..ShiftConfig::default() };
    assert_eq!(generate_shifted_pair(&cfg).unwrap(), generate_shifted_pair(&cfg).unwrap());
}
