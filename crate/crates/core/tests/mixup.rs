use mixf::mixup::{
    make_plan, mix_labels, mix_representations, sample_beta_symmetric, LambdaPolicy, MixPlan,
    MixupConfig,
};
use mixf::numerics::{cross_entropy_soft, Tensor};
use mixf::rng;
use rand::Rng;

fn random(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
}

fn distribution(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.random::<f64>()).collect()).unwrap();
    for i in 0..rows {
        let s: f64 = t.row(i).iter().sum();
        t.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    t
}

#[test]
fn beta_moments() {
    for (i, alpha) in [0.2, 1.0, 5.0].into_iter().enumerate() {
        let mut r = rng::stream(42, "beta", i as u64);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_beta_symmetric(alpha, &mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = 1.0 / (4.0 * (2.0 * alpha + 1.0));
        assert!((mean - 0.5).abs() < 0.01, "alpha {alpha}: mean {mean}");
        assert!((var - expected).abs() < 0.1 * expected, "alpha {alpha}: var {var} vs {expected}");
    }
}

#[test]
fn permutations_are_uniform() {
    let cfg = MixupConfig::default();
    let mut r = rng::stream(1, "perm", 0);
    let mut counts = std::collections::HashMap::new();
    let trials = 24_000;
    for _ in 0..trials {
        *counts.entry(make_plan(4, &cfg, &mut r).unwrap().perm).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 24);
    let expected = trials as f64 / 24.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 23 degrees of freedom, 0.1% critical value
    assert!(chi2 < 49.73, "chi-square {chi2}");
}

#[test]
fn endpoints_reproduce_unmixed_rows() {
    let mut r = rng::stream(2, "endpoints", 0);
    let h = random(&mut r, 5, 4);
    let y = distribution(&mut r, 5, 3);
    let perm = vec![3, 0, 4, 1, 2];
    let one = MixPlan::new(1.0, perm.clone()).unwrap();
    let zero = MixPlan::new(0.0, perm.clone()).unwrap();
    assert!(mix_representations(&h, &one).unwrap().output.bit_eq(&h));
    assert!(mix_labels(&y, &one).unwrap().bit_eq(&y));
    assert!(mix_representations(&h, &zero).unwrap().output.bit_eq(&h.select_rows(&perm)));
    assert!(mix_labels(&y, &zero).unwrap().bit_eq(&y.select_rows(&perm)));
    let g = random(&mut r, 5, 4);
    assert!(mix_representations(&h, &one).unwrap().backward(&g)[0].bit_eq(&g));
}

#[test]
fn soft_labels_stay_distributions() {
    let mut r = rng::stream(3, "labels", 0);
    let cfg = MixupConfig {
        lambda: LambdaPolicy::Beta { alpha: 0.4 },
        ..Default::default()
    };
    for _ in 0..1000 {
        let b = r.random_range(1..10);
        let mut y = Tensor::zeros(&[b, 3]);
        for i in 0..b {
            y.row_mut(i)[r.random_range(0..3)] = 1.0;
        }
        let plan = make_plan(b, &cfg, &mut r).unwrap();
        let mixed = mix_labels(&y, &plan).unwrap();
        for i in 0..b {
            assert!((mixed.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_entropy_is_linear_in_targets() {
    let mut r = rng::stream(4, "linearity", 0);
    for _ in 0..1000 {
        let (b, c) = (r.random_range(1..6), r.random_range(2..5));
        let z = random(&mut r, b, c);
        let (p, q) = (distribution(&mut r, b, c), distribution(&mut r, b, c));
        let lam: f64 = r.random();
        let mixed = p.zip_map(&q, |a, b| lam * a + (1.0 - lam) * b);
        let loss = |t: &Tensor| cross_entropy_soft(&z, t).unwrap().output.data()[0];
        let gap = loss(&mixed) - lam * loss(&p) - (1.0 - lam) * loss(&q);
        assert!(gap.abs() < 1e-12, "{gap}");
    }
}

#[test]
fn gradient_shares_follow_the_pairing() {
    let mut r = rng::stream(5, "routing", 0);
    for _ in 0..200 {
        let b = r.random_range(2..7);
        let d = 3;
        let h = random(&mut r, b, d);
        let mut perm: Vec<usize> = (0..b).collect();
        rng::shuffle(&mut perm, &mut r);
        let lam: f64 = r.random();
        let plan = MixPlan::new(lam, perm.clone()).unwrap();
        let g = random(&mut r, b, d);
        let got = &mix_representations(&h, &plan).unwrap().backward(&g)[0];

        // brute force: out[k] only depends on the pair (h[k], h[perm[k]]); the
        // partial of λa + (1−λ)b in a is λ and in b is 1−λ, accumulated per input row
        let mut want = vec![vec![0.0; d]; b];
        for k in 0..b {
            for c in 0..d {
                let (da, db) = (lam, 1.0 - lam);
                want[k][c] += da * g.at(k, c);
                want[perm[k]][c] += db * g.at(k, c);
            }
        }
        for i in 0..b {
            for c in 0..d {
                assert!((got.at(i, c) - want[i][c]).abs() < 1e-12);
            }
        }
    }
}
