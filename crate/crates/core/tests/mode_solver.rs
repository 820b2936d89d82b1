mod common;

use common::*;
use krusco_core::*;

fn tiny_instance(seed: u64) -> (DenseTensor, Dictionary, ActivationSet) {
    let mut rng = rng(seed);
    let p = 2 + (seed % 2) as usize;
    let w = shape(&mut rng, p, 1, 2);
    let m = shape(&mut rng, p, 2, 3);
    let k = 1 + (seed % 2) as usize;
    let dict = dictionary(&mut rng, k, &w);
    let acts = ActivationSet::new((0..k).map(|_| kruskal(&mut rng, &m, 2, 0.8)).collect()).unwrap();
    let n: Vec<usize> = w.iter().zip(&m).map(|(w, m)| w + m - 1).collect();
    let y = tensor(&mut rng, &n);
    (y, dict, acts)
}

/// `‖Y − Σ_k D_k ⋆ [[Z_k]]‖²` from the nested-loop convolution.
fn naive_residual(y: &DenseTensor, dict: &Dictionary, acts: &ActivationSet) -> f64 {
    let mut r = y.clone();
    for (a, z) in dict.atoms().iter().zip(acts.entries()) {
        r.axpy(-1.0, &naive_conv(a, &brute_cp(z))).unwrap();
    }
    r.norm_sq()
}

#[test]
fn unfolding_identity_holds_for_every_mode() {
    for seed in 0..30 {
        let (y, dict, acts) = tiny_instance(seed);
        let oracle = naive_residual(&y, &dict, &acts);
        for mode in 0..y.order() {
            let (lhs, rhs) = mode_residual_identity_check(&y, &dict, &acts, mode).unwrap();
            assert!(
                (lhs - oracle).abs() <= 1e-10 * oracle.max(1.0),
                "seed {seed}"
            );
            assert!(
                (rhs - oracle).abs() <= 1e-10 * oracle.max(1.0),
                "seed {seed} mode {mode}"
            );
        }
    }
}

#[test]
fn matches_coordinate_descent_oracle() {
    for seed in 0..20 {
        let (y, dict, acts) = tiny_instance(100 + seed);
        let mode = (seed as usize) % y.order();
        let pen0 = Penalty::zeros(y.order());
        let amax = alpha_max(&build_mode_problem(&y, &dict, &acts, mode, &pen0).unwrap());
        let mut alpha = vec![0.0; y.order()];
        alpha[mode] = 0.2 * amax;
        let mut beta = vec![0.0; y.order()];
        beta[mode] = if seed % 3 == 0 { 0.1 } else { 0.0 };
        let pen = Penalty::new(alpha, beta).unwrap();
        let problem = build_mode_problem(&y, &dict, &acts, mode, &pen).unwrap();
        let oracle = cd_lasso(&problem);
        let sol = solve_mode(&problem, None, SolveBudget::default()).unwrap();
        let (got, want) = (problem.objective(&sol.z), problem.objective(&oracle));
        assert!((got - want).abs() <= 1e-6, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn zero_certificate_at_alpha_max() {
    for seed in 0..10 {
        let (y, dict, acts) = tiny_instance(200 + seed);
        for mode in 0..y.order() {
            let pen0 = Penalty::zeros(y.order());
            let amax = alpha_max(&build_mode_problem(&y, &dict, &acts, mode, &pen0).unwrap());
            let mut alpha = vec![0.0; y.order()];
            alpha[mode] = amax;
            let pen = Penalty::new(alpha, vec![0.0; y.order()]).unwrap();
            let problem = build_mode_problem(&y, &dict, &acts, mode, &pen).unwrap();
            let warm = problem.current_columns(&acts);
            let sol = solve_mode(&problem, Some(&warm), SolveBudget::default()).unwrap();
            assert!(sol.z.iter().all(|v| *v == 0.0));
            assert_eq!(sol.iterations, 0);
            // the oracle finds nothing better than zero
            let zero = vec![0.0; sol.z.len()];
            let oracle = problem.objective(&cd_lasso(&problem));
            assert!(oracle >= problem.objective(&zero) - 1e-12);
        }
    }
}

#[test]
fn support_shrinks_with_alpha() {
    let fracs = [0.02, 0.1, 0.3, 0.6, 0.9];
    let mut totals = vec![0usize; fracs.len()];
    for seed in 0..20 {
        let (y, dict, acts) = tiny_instance(300 + seed);
        let pen0 = Penalty::zeros(y.order());
        let amax = alpha_max(&build_mode_problem(&y, &dict, &acts, 0, &pen0).unwrap());
        for (i, f) in fracs.iter().enumerate() {
            let mut alpha = vec![0.0; y.order()];
            alpha[0] = f * amax;
            let pen = Penalty::new(alpha, vec![0.0; y.order()]).unwrap();
            let problem = build_mode_problem(&y, &dict, &acts, 0, &pen).unwrap();
            totals[i] += solve_mode(&problem, None, SolveBudget::default())
                .unwrap()
                .nnz();
        }
    }
    assert!(totals.windows(2).all(|w| w[1] <= w[0]), "{totals:?}");
    assert!(totals[0] > totals[fracs.len() - 1]);
}

#[test]
fn rejects_bad_mode() {
    let (y, dict, acts) = tiny_instance(1);
    let pen = Penalty::zeros(y.order());
    assert!(matches!(
        build_mode_problem(&y, &dict, &acts, 7, &pen),
        Err(Error::ModeOutOfRange { mode: 7, .. })
    ));
}
