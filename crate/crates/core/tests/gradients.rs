mod common;

use common::*;
use krusco_core::*;

fn residual(y: &DenseTensor, atoms: &[DenseTensor], acts: &ActivationSet) -> f64 {
    let dict = Dictionary::new(atoms.to_vec()).unwrap();
    objective(y, &dict, acts, &Penalty::zeros(y.order()))
        .unwrap()
        .residual
}

#[test]
fn dictionary_gradient_matches_central_differences() {
    let h = 1e-6;
    for seed in 0..20u64 {
        let mut rng = rng(400 + seed);
        let p = 1 + (seed % 3) as usize;
        let w = shape(&mut rng, p, 1, 3);
        let m = shape(&mut rng, p, 1, 3);
        let k = 1 + (seed % 2) as usize;
        let atoms: Vec<DenseTensor> = (0..k)
            .map(|_| {
                let mut a = project_unit_ball(&tensor(&mut rng, &w));
                a.scale(0.5);
                a
            })
            .collect();
        let acts =
            ActivationSet::new((0..k).map(|_| kruskal(&mut rng, &m, 2, 1.0)).collect()).unwrap();
        let n: Vec<usize> = w.iter().zip(&m).map(|(w, m)| w + m - 1).collect();
        let y = tensor(&mut rng, &n);
        let dict = Dictionary::new(atoms.clone()).unwrap();
        let grad = dict_gradient(&y, &dict, &acts).unwrap();
        let mut worst = 0.0f64;
        for kk in 0..k {
            for i in 0..atoms[kk].len() {
                let mut plus = atoms.clone();
                plus[kk].as_mut_slice()[i] += h;
                let mut minus = atoms.clone();
                minus[kk].as_mut_slice()[i] -= h;
                let fd = (residual(&y, &plus, &acts) - residual(&y, &minus, &acts)) / (2.0 * h);
                worst = worst.max((fd - grad[kk].as_slice()[i]).abs());
            }
        }
        assert!(worst <= 1e-4, "seed {seed}: {worst}");
    }
}

#[test]
fn dictionary_update_never_increases_objective() {
    for seed in 0..10u64 {
        let mut rng = rng(500 + seed);
        let dict = dictionary(&mut rng, 2, &[2, 3]);
        let acts = ActivationSet::new((0..2).map(|_| kruskal(&mut rng, &[4, 3], 2, 0.7)).collect())
            .unwrap();
        let y = tensor(&mut rng, &[5, 5]);
        let pen = Penalty::zeros(2);
        let before = objective(&y, &dict, &acts, &pen).unwrap().total;
        let d = update_dictionary(&y, &dict, &acts, SolveBudget::new(50, 1e-10)).unwrap();
        let after = objective(&y, &d, &acts, &pen).unwrap().total;
        assert!(after <= before + 1e-12, "seed {seed}: {before} -> {after}");
        assert!(d.atoms().iter().all(|a| a.norm() <= 1.0 + 1e-12));
    }
}
