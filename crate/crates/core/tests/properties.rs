use proptest::prelude::*;

use cvtmle::learners::{expand_basis, DesignKind, DesignSpec, Features};
use cvtmle::rng::derive_substream;
use cvtmle::simulation::{summarize, MethodId, RepResult};
use cvtmle::superlearner::{binomial_nll, make_folds, solve_meta_weights};
use cvtmle::tmle::{compute_ate, compute_ic, compute_se_ci, truncate_g, update_q, Fluctuation, G_BOUNDS, Z_95};
use cvtmle::{logit, Matrix, RngState};

fn prob() -> impl Strategy<Value = f64> {
    0.01f64..0.99
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_and_balance(n in 2usize..300, k in 2usize..12, seed in any::<u64>(), stratify in any::<bool>()) {
        prop_assume!(k <= n);
        let mut rng = RngState::from_seed(seed);
        let strata: Vec<f64> = (0..n).map(|_| f64::from(rng.sample_bernoulli(0.3).unwrap())).collect();
        let f = make_folds(n, k, stratify.then_some(&strata[..]), &mut rng).unwrap();
        prop_assert_eq!(f.fold.len(), n);
        prop_assert!(f.fold.iter().all(|&v| v < k));
        let sizes = f.sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for v in 0..k {
            let (train, valid) = f.split(v);
            prop_assert_eq!(train.len() + valid.len(), n);
            prop_assert!(valid.iter().all(|&i| f.fold[i] == v));
        }
        if stratify {
            for level in [0.0, 1.0] {
                let mut counts = vec![0usize; k];
                for i in 0..n {
                    if strata[i] == level {
                        counts[f.fold[i]] += 1;
                    }
                }
                prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 2);
            }
        }
    }

    #[test]
    fn meta_weights_on_simplex_and_beat_vertices(
        cols in 2usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = RngState::from_seed(seed);
        let n = 60;
        let z = Matrix::from_vec(n, cols, (0..n * cols).map(|_| 0.02 + 0.96 * rng.next_uniform()).collect()).unwrap();
        let mut y: Vec<f64> = (0..n).map(|i| f64::from(rng.sample_bernoulli(z.get(i, 0)).unwrap())).collect();
        y[0] = 0.0;
        y[1] = 1.0;
        let w = solve_meta_weights(&z, &y).unwrap();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let obj = binomial_nll(&z.mul_vec(&w), &y);
        for j in 0..cols {
            prop_assert!(obj <= binomial_nll(&z.column(j), &y) + 1e-12);
        }
    }

    #[test]
    fn targeted_estimate_and_interval_are_consistent(
        rows in prop::collection::vec((prob(), prob(), prob(), any::<bool>(), any::<bool>()), 5..80),
        e0 in -3.0f64..3.0,
        e1 in -3.0f64..3.0,
    ) {
        let g: Vec<f64> = truncate_g(&rows.iter().map(|r| r.0).collect::<Vec<_>>()).0;
        let q1: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let q0: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let a: Vec<f64> = rows.iter().map(|r| f64::from(r.3)).collect();
        let y: Vec<f64> = rows.iter().map(|r| f64::from(r.4)).collect();
        prop_assert!(g.iter().all(|&v| (G_BOUNDS.0..=G_BOUNDS.1).contains(&v)));
        let eps = Fluctuation { epsilon0: e0, epsilon1: e1, converged: true, iterations: 0 };
        let star = update_q(&a, &q1, &q0, &g, &eps);
        for i in 0..rows.len() {
            let interior = |p: f64| (1e-9..1.0 - 1e-9).contains(&p);
            if interior(star.q1_1w[i]) {
                let l1 = logit(star.q1_1w[i]) - logit(q1[i]);
                prop_assert!((l1 - e1 / g[i]).abs() < 1e-6 * (1.0 + l1.abs()));
            }
            if interior(star.q1_0w[i]) {
                let l0 = logit(star.q1_0w[i]) - logit(q0[i]);
                prop_assert!((l0 - e0 / (1.0 - g[i])).abs() < 1e-6 * (1.0 + l0.abs()));
            }
            prop_assert!((0.0..=1.0).contains(&star.q1_1w[i]) && (0.0..=1.0).contains(&star.q1_0w[i]));
            let expect = if a[i] == 1.0 { star.q1_1w[i] } else { star.q1_0w[i] };
            prop_assert_eq!(star.q1_aw[i], expect);
        }
        let ate = compute_ate(&star.q1_1w, &star.q1_0w);
        prop_assert!((-1.0..=1.0).contains(&ate));
        let ic = compute_ic(&a, &y, &g, &star, ate);
        if let Ok((se, ci)) = compute_se_ci(&ic, ate) {
            prop_assert!(se >= 0.0);
            prop_assert!(ci.0 <= ate && ate <= ci.1);
            prop_assert!(((ci.1 - ci.0) - 2.0 * Z_95 * se).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_fluctuation_is_identity(q in prop::collection::vec((prob(), prob(), prob()), 1..40)) {
        let g: Vec<f64> = q.iter().map(|r| r.0.clamp(G_BOUNDS.0, G_BOUNDS.1)).collect();
        let q1: Vec<f64> = q.iter().map(|r| r.1).collect();
        let q0: Vec<f64> = q.iter().map(|r| r.2).collect();
        let a = vec![1.0; q.len()];
        let eps = Fluctuation { epsilon0: 0.0, epsilon1: 0.0, converged: true, iterations: 0 };
        let star = update_q(&a, &q1, &q0, &g, &eps);
        for i in 0..q.len() {
            prop_assert!((star.q1_1w[i] - q1[i]).abs() < 1e-12);
            prop_assert!((star.q1_0w[i] - q0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_ignore_row_order(
        reps in prop::collection::vec((0.05f64..0.3, -0.2f64..0.5, 1e-4f64..0.02, any::<bool>()), 2..40),
        seed in any::<u64>(),
    ) {
        let rows: Vec<RepResult> = reps.iter().enumerate().map(|(i, &(theta, ate, var, failed))| {
            let half = Z_95 * var.sqrt();
            RepResult {
                scenario: "s".into(),
                method: MethodId::Tmle,
                rep: i,
                theta_i: theta,
                ate_hat: if failed { f64::NAN } else { ate },
                var_hat: if failed { f64::NAN } else { var },
                ci_low: ate - half,
                ci_high: ate + half,
                failed,
                reason: String::new(),
            }
        }).collect();
        let mut order: Vec<&RepResult> = rows.iter().collect();
        let base = summarize(&order);
        RngState::from_seed(seed).shuffle(&mut order);
        let shuffled = summarize(&order);
        prop_assert_eq!(&base, &shuffled);
        prop_assert_eq!(base.n_effective + base.n_failed, rows.len());
        if let Some(m) = base.metrics {
            prop_assert!((0.0..=1.0).contains(&m.coverage));
            prop_assert!(m.empse >= 0.0 && m.modse > 0.0);
        }
    }

    #[test]
    fn substreams_are_pure_and_uniforms_in_range(seed in any::<u64>(), rep in any::<u64>(), role in any::<u64>(), tag in any::<u64>()) {
        let mut s = derive_substream(seed, rep, role);
        let before = s.clone();
        let child = s.substream(tag);
        prop_assert_eq!(&s, &before);
        prop_assert_eq!(child.clone(), before.substream(tag));
        prop_assert_ne!(child, s.substream(tag.wrapping_add(1)));
        for _ in 0..100 {
            let u = s.next_uniform();
            prop_assert!((0.0..1.0).contains(&u));
        }
        let i = s.uniform_index(7);
        prop_assert!(i < 7);
        prop_assert_eq!(derive_substream(seed, rep, role), before);
    }

    #[test]
    fn basis_column_counts(binary in prop::collection::vec(any::<bool>(), 1..7), seed in any::<u64>()) {
        let n = 50;
        let p = binary.len();
        let mut rng = RngState::from_seed(seed);
        let mut x = Matrix::zeros(n, p);
        for i in 0..n {
            for (j, &b) in binary.iter().enumerate() {
                let v = if b { f64::from(i % 2 == 0) } else { rng.sample_gaussian() };
                x.set(i, j, v);
            }
        }
        let f = Features::with_types(x, binary.clone()).unwrap();
        let cont = binary.iter().filter(|b| !**b).count();
        let expect = [
            (DesignKind::MainTerms, 1 + p),
            (DesignKind::PolyInteractions, 1 + p + cont + p * (p - 1) / 2),
            (DesignKind::SplineGam, 1 + (p - cont) + 4 * cont),
        ];
        for (kind, cols) in expect {
            let spec = DesignSpec::learn(kind, &f);
            let m = expand_basis(&f.x, &spec).unwrap();
            prop_assert_eq!(m.cols() + spec.dropped.len(), cols);
            prop_assert_eq!(m.rows(), n);
        }
    }
}
