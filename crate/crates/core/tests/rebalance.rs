mod common;

use common::*;
use krusco_core::*;
use proptest::prelude::*;

fn penalty(acts: &ActivationSet, pen: &Penalty) -> f64 {
    acts.entries()
        .iter()
        .flat_map(|e| e.factors().iter().enumerate())
        .map(|(l, f)| pen.alpha[l] * f.l1_norm() + pen.beta[l] * f.norm_sq())
        .sum()
}

fn dense_set(acts: &ActivationSet) -> Vec<DenseTensor> {
    acts.entries().iter().map(brute_cp).collect()
}

fn close(a: &[DenseTensor], b: &[DenseTensor]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| x.sub(y).unwrap().norm() <= 1e-12 * (1.0 + y.norm()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_norm_keeps_reconstruction(seed in 0u64..10_000) {
        let mut rng = rng(seed);
        let p = 1 + (seed % 4) as usize;
        let m = shape(&mut rng, p, 1, 5);
        let acts = ActivationSet::new(vec![kruskal(&mut rng, &m, 3, 0.6)]).unwrap();
        let out = rebalance(&acts);
        prop_assert!(close(&dense_set(&out), &dense_set(&acts)));
        for e in out.entries() {
            for r in 0..e.rank() {
                let dead = e.factors().iter().all(|f| f.column(r).iter().all(|v| *v == 0.0));
                for l in 1..p {
                    let n: f64 = e.factor(l).column(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    prop_assert!(dead || (n - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn balanced_keeps_reconstruction_and_lowers_penalty(
        seed in 0u64..10_000,
        a in prop::collection::vec(0.0f64..2.0, 3),
        b in prop::collection::vec(0.0f64..2.0, 3),
    ) {
        let mut rng = rng(seed);
        let acts = ActivationSet::new(vec![kruskal(&mut rng, &[4, 3, 5], 2, 0.7)]).unwrap();
        let pen = Penalty::new(a, b).unwrap();
        let out = rebalance_with(&acts, &pen, RebalanceRule::Balanced);
        prop_assert!(close(&dense_set(&out), &dense_set(&acts)));
        prop_assert!(penalty(&out, &pen) <= penalty(&acts, &pen) * (1.0 + 1e-12) + 1e-15);
    }
}

#[test]
fn dead_terms_are_cleared() {
    let u = FactorMatrix::from_columns(&[&[1.0, 2.0], &[3.0, 0.5]]).unwrap();
    let v = FactorMatrix::from_columns(&[&[0.0, 0.0, 0.0], &[1.0, -1.0, 2.0]]).unwrap();
    let acts = ActivationSet::new(vec![KruskalTensor::new(vec![u, v]).unwrap()]).unwrap();
    for rule in [RebalanceRule::UnitNorm, RebalanceRule::Balanced] {
        let out = rebalance_with(
            &acts,
            &Penalty::new(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap(),
            rule,
        );
        assert!(out.entry(0).factor(0).column(0).iter().all(|v| *v == 0.0));
        assert!(out.entry(0).factor(1).column(0).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn balanced_equalizes_weighted_l1() {
    // without ridge the optimum has α_l‖u_l‖_1 equal across modes
    let u = FactorMatrix::from_columns(&[&[4.0, -4.0]]).unwrap();
    let v = FactorMatrix::from_columns(&[&[0.25, 0.0, 0.25]]).unwrap();
    let acts = ActivationSet::new(vec![KruskalTensor::new(vec![u, v]).unwrap()]).unwrap();
    let pen = Penalty::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
    let out = rebalance_with(&acts, &pen, RebalanceRule::Balanced);
    let l0 = out.entry(0).factor(0).l1_norm();
    let l1 = 2.0 * out.entry(0).factor(1).l1_norm();
    assert!((l0 - l1).abs() < 1e-12, "{l0} vs {l1}");
    // weighted product is invariant: 8 · 0.5 · 2 = 8, so each side is √8
    assert!((l0 - 8f64.sqrt()).abs() < 1e-12);
}
