mod common;

use common::*;
use dualtree::dataset::{load_bow, smooth, write_bow, BowFormat, DataMatrix, SmoothedMatrix};
use dualtree::divergence::{Divergence, DivergenceKind, DivergenceSpec};
use dualtree::partition::{
    coarsest_partition, finest_partition, refine_partition, validate_partition, BlockPartition,
};
use dualtree::propagation::{
    classify_one_vs_all, dense_transition_matrix, initial_labels, propagate_labels, PropagationConfig,
    TransitionModel,
};
use dualtree::tree::{build_cluster_tree, build_cluster_tree_with, grow_anchors, merge_cost, ClusterTree, TreeConfig};
use dualtree::variational::{block_divergence_sum, lower_bound, optimize_q};
use proptest::prelude::*;

const D: usize = 4;

fn kind_strategy() -> impl Strategy<Value = DivergenceKind> {
    prop::sample::select(DivergenceKind::ALL.to_vec())
}

fn spec_for(kind: DivergenceKind, d: usize) -> DivergenceSpec {
    let mut s = DivergenceSpec::new(kind, d);
    s.covariance_diag = (0..d).map(|j| 0.5 + j as f64).collect();
    s.sigma = 1.3;
    s
}

/// An interior point of the kind's domain.
fn point(kind: DivergenceKind, d: usize) -> BoxedStrategy<Vec<f64>> {
    match kind {
        DivergenceKind::SqEuclidean | DivergenceKind::Mahalanobis => prop::collection::vec(-5.0..5.0f64, d).boxed(),
        DivergenceKind::Gid | DivergenceKind::ItakuraSaito => prop::collection::vec(0.05..8.0f64, d).boxed(),
        DivergenceKind::Kl => prop::collection::vec(0.05..1.0f64, d)
            .prop_map(|v| {
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect()
            })
            .boxed(),
        DivergenceKind::Logistic => prop::collection::vec(0.02..0.98f64, d).boxed(),
    }
}

fn kind_and_points(k: usize) -> impl Strategy<Value = (DivergenceKind, Vec<Vec<f64>>)> {
    kind_strategy().prop_flat_map(move |kind| (Just(kind), prop::collection::vec(point(kind, D), k)))
}

fn counts_tree(seed: u64, n: usize, kind: DivergenceKind) -> (SmoothedMatrix, Divergence, ClusterTree) {
    let data = random_smoothed(seed, n, 5, 1.2, 0.5);
    let mut spec = spec_for(kind, 5).with_epsilon(0.5);
    if kind == DivergenceKind::SqEuclidean {
        spec.sigma = 2.0;
    }
    let div = spec.build().unwrap();
    let tree = build_cluster_tree(&data, &div).unwrap();
    (data, div, tree)
}

/// Kinds whose domain contains smoothed counts.
fn count_kind() -> impl Strategy<Value = DivergenceKind> {
    prop::sample::select(vec![
        DivergenceKind::SqEuclidean,
        DivergenceKind::Mahalanobis,
        DivergenceKind::Gid,
        DivergenceKind::ItakuraSaito,
    ])
}

fn refinement_chain(tree: &ClusterTree, picks: &[usize]) -> Vec<BlockPartition> {
    let mut chain = vec![coarsest_partition(tree).unwrap()];
    for &pick in picks {
        let cur = chain.last().unwrap();
        let splittable: Vec<_> = cur
            .blocks()
            .iter()
            .copied()
            .filter(|b| tree.size(b.a) > 1 || tree.size(b.b) > 1)
            .collect();
        if splittable.is_empty() {
            break;
        }
        let blk = splittable[pick % splittable.len()];
        chain.push(refine_partition(cur, blk, tree).unwrap());
    }
    chain
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergence_is_nonnegative_and_zero_on_diagonal((kind, pts) in kind_and_points(2)) {
        let div = spec_for(kind, D).build().unwrap();
        prop_assert!(div.divergence(&pts[0], &pts[1]).unwrap() >= -1e-12);
        prop_assert!(div.divergence(&pts[0], &pts[0]).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences((kind, pts) in kind_and_points(1)) {
        let div = spec_for(kind, D).build().unwrap();
        let x = &pts[0];
        let g = div.grad_phi(x).unwrap();
        for j in 0..D {
            // cube-root step balances truncation against cancellation in φ(up) − φ(dn)
            let h = f64::EPSILON.cbrt() * x[j].abs().max(1.0);
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[j] += h;
            dn[j] -= h;
            // KL's φ is the plain elementwise x log x, so off-simplex probes are fine
            let g_fd = (phi_unchecked(&div, &up) - phi_unchecked(&div, &dn)) / (2.0 * h);
            prop_assert!(rel_err(g_fd, g[j]) <= 1e-5 || (g_fd - g[j]).abs() <= 1e-7, "{kind} j={j}: {g_fd} vs {}", g[j]);
        }
    }

    #[test]
    fn gradient_inverse_round_trips((kind, pts) in kind_and_points(1)) {
        let div = spec_for(kind, D).build().unwrap();
        let back = div.grad_phi_inv(&div.grad_phi(&pts[0]).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&pts[0]) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn euclidean_is_scaled_squared_distance(x in prop::collection::vec(-9.0..9.0f64, D), y in prop::collection::vec(-9.0..9.0f64, D), sigma in 0.1..5.0f64) {
        let div = DivergenceSpec::sq_euclidean(D, sigma).build().unwrap();
        let want: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * sigma * sigma);
        prop_assert!(rel_err(div.divergence(&x, &y).unwrap(), want) <= 1e-12);
    }

    #[test]
    fn mean_minimizes_expected_divergence((kind, pts) in kind_and_points(8), seed in any::<u64>()) {
        let div = spec_for(kind, D).build().unwrap();
        let mean: Vec<f64> = (0..D).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64).collect();
        let total = |s: &[f64]| pts.iter().map(|x| div.divergence(x, s).unwrap()).sum::<f64>();
        let at_mean = total(&mean);
        let mut r = rng(seed);
        for _ in 0..100 {
            let mut s: Vec<f64> = mean.iter().map(|m| m * (1.0 + uniform_vec(&mut r, 1, -0.2, 0.2)[0]) + uniform_vec(&mut r, 1, -0.01, 0.01)[0]).collect();
            match kind {
                DivergenceKind::Kl => {
                    s.iter_mut().for_each(|v| *v = v.max(1e-3));
                    let t: f64 = s.iter().sum();
                    s.iter_mut().for_each(|v| *v /= t);
                }
                DivergenceKind::Logistic => s.iter_mut().for_each(|v| *v = v.clamp(0.005, 0.995)),
                DivergenceKind::Gid | DivergenceKind::ItakuraSaito => s.iter_mut().for_each(|v| *v = v.max(1e-3)),
                _ => {}
            }
            prop_assert!(at_mean <= total(&s) + 1e-9);
        }
    }

    #[test]
    fn bow_round_trip(seed in any::<u64>(), n in 1usize..20, d in 1usize..15) {
        let data = random_counts(seed, n, d, 0.8);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_bow(&data, f.path()).unwrap();
        prop_assert_eq!(load_bow(f.path(), BowFormat::UciBow).unwrap(), data);
    }

    #[test]
    fn smoothing_adds_epsilon(seed in any::<u64>(), eps in 0.0..2.0f64) {
        let raw = random_counts(seed, 6, 7, 1.0);
        let sm = smooth(raw.clone(), eps);
        for i in 0..6 {
            for (a, b) in sm.dense_row(i).iter().zip(raw.dense_row(i)) {
                prop_assert_eq!(*a, b + eps);
            }
        }
    }

    #[test]
    fn merge_cost_is_nonnegative((kind, pts) in kind_and_points(2), na in 1usize..50, nb in 1usize..50) {
        let c = merge_cost(&spec_for(kind, D), na, &pts[0], nb, &pts[1]).unwrap();
        prop_assert!(c >= -1e-12);
    }
}

fn phi_unchecked(div: &Divergence, x: &[f64]) -> f64 {
    (0..x.len()).map(|j| div.generator().phi(j, x[j])).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn anchors_form_voronoi_cells(seed in any::<u64>(), n in 2usize..60, m_frac in 0.0..1.0f64, kind in count_kind()) {
        let data = random_smoothed(seed, n, 5, 1.2, 0.5);
        let div = spec_for(kind, 5).with_epsilon(0.5).build().unwrap();
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let anchors = grow_anchors(&data, &div, m).unwrap();
        let rows = dense_rows(&data);
        let mut seen = vec![false; n];
        for (k, a) in anchors.iter().enumerate() {
            for i in a.rows() {
                prop_assert!(!seen[i]);
                seen[i] = true;
                let own = div.divergence_unchecked(&rows[i], &rows[a.pivot]);
                for (l, other) in anchors.iter().enumerate() {
                    let d = div.divergence_unchecked(&rows[i], &rows[other.pivot]);
                    let slack = 1e-12 * own.abs().max(1.0);
                    prop_assert!(own <= d + slack);
                    if l < k {
                        // an earlier anchor at the same distance keeps the point; only
                        // nonzero near-ties within rounding are tolerated
                        prop_assert!(d > own || (own > 0.0 && (d - own).abs() <= slack));
                    }
                }
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn pruning_does_not_change_the_tree(seed in any::<u64>(), n in 2usize..120, kind in count_kind()) {
        let data = random_smoothed(seed, n, 5, 1.2, 0.5);
        let div = spec_for(kind, 5).with_epsilon(0.5).build().unwrap();
        let on = build_cluster_tree_with(&data, &div, &TreeConfig { prune: true }).unwrap();
        let off = build_cluster_tree_with(&data, &div, &TreeConfig { prune: false }).unwrap();
        prop_assert_eq!(on, off);
    }

    #[test]
    fn node_stats_match_member_sums(seed in any::<u64>(), n in 1usize..40, kind in count_kind()) {
        let (data, div, tree) = counts_tree(seed, n, kind);
        let rows = dense_rows(&data);
        for v in 0..tree.len() {
            let s = tree.stats(v);
            let members = tree.members(v);
            let s1: f64 = members.iter().map(|&i| phi_unchecked(&div, &rows[i])).sum();
            let grads: Vec<Vec<f64>> = members.iter().map(|&i| div.grad_phi(&rows[i]).unwrap()).collect();
            let s2: f64 = members.iter().zip(&grads).map(|(&i, g)| rows[i].iter().zip(g).map(|(a, b)| a * b).sum::<f64>()).sum();
            prop_assert!(rel_err(s.s1, s1) <= 1e-10 || (s.s1 - s1).abs() <= 1e-10);
            prop_assert!(rel_err(s.s2, s2) <= 1e-10 || (s.s2 - s2).abs() <= 1e-10);
            let s3 = s.s3_dense(tree.basis());
            let s4 = s.s4_dense(tree.basis());
            for j in 0..5 {
                let want3: f64 = members.iter().map(|&i| rows[i][j]).sum();
                let want4: f64 = grads.iter().map(|g| g[j]).sum();
                prop_assert!(rel_err(s3[j], want3) <= 1e-10);
                prop_assert!(rel_err(s4[j], want4) <= 1e-10 || (s4[j] - want4).abs() <= 1e-10);
            }
            prop_assert_eq!(s.count, members.len());
        }
    }

    #[test]
    fn partitions_tile_the_off_diagonal(seed in any::<u64>(), n in 2usize..40, picks in prop::collection::vec(any::<usize>(), 0..12)) {
        let (_, _, tree) = counts_tree(seed, n, DivergenceKind::Gid);
        prop_assert_eq!(coarsest_partition(&tree).unwrap().len(), 2 * (n - 1));
        let finest = finest_partition(&tree, 4096).unwrap();
        prop_assert_eq!(finest.len(), n * (n - 1));
        prop_assert!(validate_partition(&finest, &tree).unwrap().is_valid());
        let chain = refinement_chain(&tree, &picks);
        for (k, p) in chain.iter().enumerate() {
            prop_assert_eq!(p.len(), 2 * (n - 1) + k);
            let v = validate_partition(p, &tree).unwrap();
            prop_assert!(v.is_valid(), "{:?}", v.issue);
        }
    }

    #[test]
    fn block_sums_match_brute_force(seed in any::<u64>(), n in 2usize..50, kind in count_kind(), picks in prop::collection::vec(any::<usize>(), 0..6)) {
        let (data, _, tree) = counts_tree(seed, n, kind);
        let rows = dense_rows(&data);
        let mut r = Ref::new(kind);
        r.sigma = 2.0;
        r.cov = spec_for(kind, 5).covariance_diag;
        let chain = refinement_chain(&tree, &picks);
        for blk in chain.last().unwrap().blocks() {
            let got = block_divergence_sum(tree.stats(blk.a), tree.stats(blk.b), tree.basis());
            let want = brute_block_sum(&r, &rows, tree.members(blk.a), tree.members(blk.b));
            prop_assert!(rel_err(got, want) <= 1e-8 || (got - want).abs() <= 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn optimized_bound_grows_under_refinement(seed in any::<u64>(), n in 2usize..40, kind in count_kind(), picks in prop::collection::vec(any::<usize>(), 1..10)) {
        let (_, _, tree) = counts_tree(seed, n, kind);
        let mut prev = f64::NEG_INFINITY;
        for p in refinement_chain(&tree, &picks) {
            let fit = optimize_q(&tree, &p).unwrap();
            let dense = expand_q(&tree, &p, &fit.params.values());
            prop_assert!(row_residual(&dense, n) <= 1e-9);
            let ell = lower_bound(&fit.params, &p, &tree).unwrap().ell;
            prop_assert!(ell >= prev - 1e-9 * prev.abs().max(1.0), "{ell} < {prev}");
            prev = ell;
        }
    }

    #[test]
    fn finest_blocked_propagation_matches_dense(seed in any::<u64>(), n in 3usize..40, kind in prop::sample::select(vec![DivergenceKind::SqEuclidean, DivergenceKind::Gid])) {
        let (data, div, tree) = counts_tree(seed, n, kind);
        let p = finest_partition(&tree, 4096).unwrap();
        let fit = optimize_q(&tree, &p).unwrap();
        let model = TransitionModel::new(tree, p, &fit.params).unwrap();
        let dense = dense_transition_matrix(&data, &div, 8192).unwrap();
        let labels: Vec<Option<usize>> = (0..n).map(|i| (i % 3 == 0).then_some(i % 2)).collect();
        let y0 = initial_labels(&labels, 2).unwrap();
        let cfg = PropagationConfig::default();
        let a = propagate_labels(&model, &y0, &cfg).unwrap();
        let b = propagate_labels(&dense, &y0, &cfg).unwrap();
        for (ca, cb) in a.iter().zip(&b) {
            for (x, y) in ca.iter().zip(cb) {
                prop_assert!((x - y).abs() <= 1e-8);
                prop_assert!((0.0..=1.0).contains(x));
            }
        }
        let again = propagate_labels(&model, &y0, &cfg).unwrap();
        prop_assert_eq!(classify_one_vs_all(&a).unwrap(), classify_one_vs_all(&again).unwrap());
    }
}

#[test]
fn two_point_bound_total() {
    // per-point value −ln(2π)/2 − 1/2, summed over both points
    let data = smooth(DataMatrix::from_dense(&[vec![0.0], vec![1.0]]).unwrap(), 0.0);
    let div = DivergenceSpec::sq_euclidean(1, 1.0).build().unwrap();
    let tree = build_cluster_tree(&data, &div).unwrap();
    let p = coarsest_partition(&tree).unwrap();
    let fit = optimize_q(&tree, &p).unwrap();
    let ell = lower_bound(&fit.params, &p, &tree).unwrap().ell;
    let per_point = -(2.0 * std::f64::consts::PI).ln() / 2.0 - 0.5;
    assert!((ell - 2.0 * per_point).abs() <= 1e-12);
}
