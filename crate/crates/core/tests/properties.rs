use proptest::collection::vec;
use proptest::prelude::*;

use npaft::aft::{transform_responses, ResponseTransform};
use npaft::cdp::{
    stick_weights, truncated_normal_lower, update_cluster_labels, update_cluster_locations, CdpState,
};
use npaft::data::{parse_dataset, EncodedDataset, Matrix};
use npaft::forest::{split_prob, ForestPrior, NodeKind, Tree, ROOT};
use npaft::grid::split_point_grid;
use npaft::hte::{
    differential_effect, effect_distribution, proportion_benefiting, span_grid, survival_draw, IteDraws,
};
use npaft::rng::seeded;
use npaft::sim::fold_assignment;

fn ite_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8, 2usize..12).prop_flat_map(|(d, n)| vec(vec(-3.0f64..3.0, n), d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stick_weights_sum_to_one_exactly(mut v in vec(0.0f64..1.0, 2..60)) {
        *v.last_mut().unwrap() = 1.0;
        let pi = stick_weights(&v);
        prop_assert!(pi.iter().all(|&p| p >= 0.0));
        let mut s = 0.0;
        for p in &pi {
            s += p;
        }
        prop_assert_eq!(s, 1.0);
    }

    #[test]
    fn recentered_mixture_has_mean_zero(
        raw in vec(0.01f64..1.0, 2..40),
        shift in -50.0f64..50.0,
        seed in any::<u64>(),
    ) {
        let h = raw.len();
        let mut v = raw.clone();
        v[h - 1] = 1.0;
        let pi = stick_weights(&v);
        let tau_star: Vec<f64> = raw.iter().map(|r| shift + 3.0 * r).collect();
        let mut state = CdpState::from_components(pi, tau_star, 0.4, 2.0, 5);
        prop_assert!(state.weighted_mean().abs() < 1e-10);
        let residuals = [0.3, -1.2, 0.8, 2.0, -0.1];
        let mut rng = seeded(seed);
        for _ in 0..5 {
            update_cluster_labels(&mut state, &residuals, &mut rng);
            update_cluster_locations(&mut state, &residuals, 1.0, &mut rng);
            prop_assert!(state.weighted_mean().abs() < 1e-10);
            prop_assert_eq!(state.weight_sum(), 1.0);
        }
    }

    #[test]
    fn truncated_draws_respect_the_bound(
        mean in -5.0f64..5.0,
        sd in 0.05f64..4.0,
        k in -4.0f64..12.0,
        seed in any::<u64>(),
    ) {
        let lower = mean + k * sd;
        let mut rng = seeded(seed);
        for _ in 0..50 {
            let x = truncated_normal_lower(mean, sd, lower, &mut rng);
            prop_assert!(x.is_finite() && x >= lower);
        }
    }

    #[test]
    fn d_star_is_folded_d(theta in ite_matrix()) {
        let ite = IteDraws::new(theta).unwrap();
        let dte = differential_effect(&ite);
        for (d, ds) in dte.d.iter().zip(&dte.d_star) {
            prop_assert!((0.0..=1.0).contains(d));
            prop_assert_eq!(*ds, (2.0 * d - 1.0).abs());
        }
    }

    #[test]
    fn shifting_every_effect_leaves_d_unchanged(theta in ite_matrix(), c in -2.0f64..2.0) {
        // dyadic values keep θ + c exact, so the comparisons are too
        let round = |x: f64| (x * 256.0).round() / 256.0;
        let theta: Vec<Vec<f64>> = theta.iter().map(|r| r.iter().map(|&x| round(x)).collect()).collect();
        let c = round(c);
        let shifted: Vec<Vec<f64>> = theta.iter().map(|r| r.iter().map(|x| x + c).collect()).collect();
        let a = IteDraws::new(theta).unwrap();
        let b = IteDraws::new(shifted).unwrap();
        prop_assert_eq!(differential_effect(&a).d, differential_effect(&b).d);
        let (ma, mb) = (a.posterior_mean(), b.posterior_mean());
        for (x, y) in ma.iter().zip(&mb) {
            prop_assert!((y - x - c).abs() < 1e-12);
        }
        let grid = span_grid(&a, 40, 0.5);
        let moved: Vec<f64> = grid.iter().map(|g| g + c).collect();
        let ea = effect_distribution(&a, &grid, Some(0.3)).unwrap();
        let eb = effect_distribution(&b, &moved, Some(0.3)).unwrap();
        for (x, y) in ea.cdf.iter().zip(&eb.cdf) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn q_mean_matches_mean_p_hat(theta in ite_matrix()) {
        let ite = IteDraws::new(theta).unwrap();
        let b = proportion_benefiting(&ite, &[0.0, 0.1, 0.25]);
        prop_assert_eq!(b.q.mean, b.mean_p_hat());
        prop_assert!(b.q_draws.iter().all(|q| (0.0..=1.0).contains(q)));
        let total: f64 = b.bands.iter().map(|band| band.percent).sum();
        prop_assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn effect_cdf_is_proper(theta in ite_matrix(), bw in 0.05f64..2.0) {
        let ite = IteDraws::new(theta).unwrap();
        let grid = span_grid(&ite, 60, 0.5);
        let e = effect_distribution(&ite, &grid, Some(bw)).unwrap();
        prop_assert!(e.cdf.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(e.cdf.iter().all(|c| (0.0..=1.0).contains(c)));
        prop_assert!(e.density.iter().all(|d| *d >= 0.0));
    }

    #[test]
    fn survival_draws_are_monotone(
        m in -3.0f64..3.0,
        sigma in 0.05f64..3.0,
        raw in vec((0.01f64..1.0, -2.0f64..2.0), 2..10),
    ) {
        let mut v: Vec<f64> = raw.iter().map(|r| r.0).collect();
        *v.last_mut().unwrap() = 1.0;
        let pi = stick_weights(&v);
        let tau: Vec<f64> = raw.iter().map(|r| r.1).collect();
        let times: Vec<f64> = (0..300).map(|k| (-15.0 + 0.1 * k as f64).exp()).collect();
        let s = survival_draw(&times, m, &pi, &tau, sigma);
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(s.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn every_cut_separates_observations(col in vec(-100i32..100, 1..300), max in 1usize..120) {
        let col: Vec<f64> = col.into_iter().map(|v| v as f64 / 4.0).collect();
        let cuts = split_point_grid(&col, max);
        prop_assert!(cuts.len() <= max);
        prop_assert!(cuts.windows(2).all(|w| w[1] > w[0]));
        for c in cuts {
            prop_assert!(col.iter().any(|&x| x <= c) && col.iter().any(|&x| x > c));
        }
    }

    #[test]
    fn transform_round_trips(y in vec(1e-3f64..1e3, 2..40), mu in -5.0f64..5.0) {
        let n = y.len();
        let data = EncodedDataset::from_continuous(
            y.clone(),
            vec![true; n],
            vec![false; n],
            Matrix::zeros(n, 1),
        )
        .unwrap();
        let t = ResponseTransform { mu_aft: mu, sigma_aft: 1.0 };
        let z = transform_responses(&data, &t).unwrap();
        for (a, b) in z.y.iter().zip(&y) {
            prop_assert!(((a * mu.exp()) / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_prob_decreases_with_depth(alpha in 0.01f64..0.99, beta in 0.01f64..10.0) {
        let prior = ForestPrior { alpha, beta, ..ForestPrior::default() };
        for d in 0..20 {
            prop_assert!(split_prob(d + 1, &prior) < split_prob(d, &prior));
        }
    }

    #[test]
    fn grow_then_prune_is_identity(splits in vec((0usize..3, 0usize..5), 0..6), var in 0usize..3, idx in 0usize..5) {
        let mut tree = Tree::stump(0.0, 4);
        for (v, i) in splits {
            let leaf = *tree.leaves().last().unwrap();
            tree.split_leaf(leaf, v, i, i as f64);
        }
        let before = format!("{:?}", structure(&tree));
        let leaf = tree.leaves()[0];
        tree.split_leaf(leaf, var, idx, idx as f64);
        tree.collapse(leaf, 0.0);
        prop_assert_eq!(before, format!("{:?}", structure(&tree)));
    }

    #[test]
    fn folds_are_balanced(n in 2usize..500, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let f = fold_assignment(n, k, seed);
        let mut counts = vec![0usize; k];
        for &i in &f {
            counts[i] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert_eq!(f, fold_assignment(n, k, seed));
    }

    #[test]
    fn csv_round_trip_is_exact(rows in vec((1e-4f64..1e4, any::<bool>(), any::<bool>(), -1e6f64..1e6), 2..30)) {
        let n = rows.len();
        let x = Matrix::new(n, 1, rows.iter().map(|r| r.3).collect());
        let data = EncodedDataset::from_continuous(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            x,
        )
        .unwrap();
        let back = parse_dataset(&data.to_csv_string(), &data.schema).unwrap();
        prop_assert_eq!(back, data);
    }
}

/// Rules in depth-first order, with leaves as `None`.
fn structure(tree: &Tree) -> Vec<Option<(usize, usize)>> {
    let mut out = Vec::new();
    let mut stack = vec![ROOT];
    while let Some(id) = stack.pop() {
        match tree.node(id).kind {
            NodeKind::Leaf { .. } => out.push(None),
            NodeKind::Internal { var, cut_idx, left, right, .. } => {
                out.push(Some((var, cut_idx)));
                stack.push(right);
                stack.push(left);
            }
        }
    }
    out
}
