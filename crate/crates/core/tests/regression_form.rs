mod common;

use common::*;
use krusco_core::*;

#[test]
fn circulant_entries_follow_definition() {
    // Circ(D)(i, j) = D[i − j] when every offset is inside the atom, else 0
    let mut rng = rng(31);
    let atom = tensor(&mut rng, &[2, 3]);
    let n = [4, 5];
    let c = circulant(&atom, &n).unwrap();
    assert_eq!(c.act_shape(), vec![3, 3]);
    for i in indices(&n) {
        for j in indices(&c.act_shape()) {
            let off: Option<Vec<usize>> = i
                .iter()
                .zip(&j)
                .zip(atom.shape())
                .map(|((i, j), w)| (i >= j && i - j < *w).then(|| i - j))
                .collect();
            let want = off.map_or(0.0, |o| atom.get(&o));
            assert_eq!(c.get(&i, &j), want, "{i:?} {j:?}");
        }
    }
}

#[test]
fn regression_form_equals_synthesis() {
    let mut rng = rng(32);
    for case in 0..20 {
        let p = 1 + case % 3;
        let w = shape(&mut rng, p, 1, 3);
        let m = shape(&mut rng, p, 1, 4);
        let n: Vec<usize> = w.iter().zip(&m).map(|(w, m)| w + m - 1).collect();
        let k = 1 + case % 2;
        let dict = dictionary(&mut rng, k, &w);
        let acts =
            ActivationSet::new((0..k).map(|_| kruskal(&mut rng, &m, 2, 0.8)).collect()).unwrap();
        let circs: Vec<CirculantTensor> = dict
            .atoms()
            .iter()
            .map(|a| circulant(a, &n).unwrap())
            .collect();
        let lhs = apply_linear_map(&circs, &acts).unwrap();
        let rhs = synthesize(&dict, &acts, 0.0, 0).unwrap();
        assert!(
            lhs.sub(&rhs).unwrap().norm() <= 1e-12 * (1.0 + rhs.norm()),
            "case {case}"
        );
    }
}

#[test]
fn circulant_budget_enforced() {
    let atom = DenseTensor::zeros(&[4, 4]).unwrap();
    assert!(matches!(
        krusco_core::model::circulant_with_budget(&atom, &[40, 40], 1000),
        Err(Error::Capacity { .. })
    ));
}

#[test]
fn synthesis_noise_is_seeded() {
    let mut rng = rng(33);
    let dict = dictionary(&mut rng, 1, &[2, 2]);
    let acts = ActivationSet::new(vec![kruskal(&mut rng, &[3, 3], 1, 1.0)]).unwrap();
    let a = synthesize(&dict, &acts, 0.1, 5).unwrap();
    assert_eq!(a, synthesize(&dict, &acts, 0.1, 5).unwrap());
    assert_ne!(a, synthesize(&dict, &acts, 0.1, 6).unwrap());
    assert!(synthesize(&dict, &acts, -1.0, 5).is_err());
}
