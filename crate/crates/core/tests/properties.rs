use mixf::data::{
    build_vocab, encode_example, reduce_dataset, tokenize, Columns, Dataset, Example, InputArity,
    Label, LabelKind, Split, TaskSpec, CLS, PAD, SEP,
};
use mixf::metrics::{accuracy, matthews_corr, pearson_corr, spearman_corr};
use mixf::mixup::{is_active, mix_labels, mix_representations, sample_beta_symmetric, MixPlan, MixupConfig};
use mixf::numerics::Tensor;
use mixf::rng;
use proptest::prelude::*;

fn pair_task() -> TaskSpec {
    TaskSpec {
        name: "p".into(),
        input_arity: InputArity::Pair,
        label_kind: LabelKind::Classes { n: 3 },
        metric: mixf::metrics::Metric::Accuracy,
        columns: Columns {
            sentence1: 0,
            sentence2: Some(1),
            label: 2,
        },
    }
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut p, &mut rng::stream(seed, "prop", 0));
    p
}

fn labelled(n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (prop::collection::vec(0..2usize, n), prop::collection::vec(0..2usize, n))
}

proptest! {
    #[test]
    fn matthews_is_symmetric_and_order_free((pred, gold) in (1..40usize).prop_flat_map(labelled), seed in any::<u64>()) {
        let m = matthews_corr(&pred, &gold).unwrap();
        prop_assert_eq!(m.to_bits(), matthews_corr(&gold, &pred).unwrap().to_bits());
        prop_assert!((-1.0..=1.0).contains(&m));
        let p = permutation(pred.len(), seed);
        let pp: Vec<usize> = p.iter().map(|&i| pred[i]).collect();
        let gp: Vec<usize> = p.iter().map(|&i| gold[i]).collect();
        prop_assert!((matthews_corr(&pp, &gp).unwrap() - m).abs() < 1e-12);
        prop_assert!((accuracy(&pp, &gp).unwrap() - accuracy(&pred, &gold).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn spearman_ignores_monotone_maps(
        xy in (2..40usize).prop_flat_map(|n| (
            prop::collection::vec(-3i32..4, n),
            prop::collection::vec(-50.0f64..50.0, n),
        ))
    ) {
        let x: Vec<f64> = xy.0.iter().map(|&v| v as f64).collect();
        let y = xy.1;
        let s = spearman_corr(&x, &y).unwrap();
        let fx: Vec<f64> = x.iter().map(|v| v.powi(3) + 10.0).collect();
        let gy: Vec<f64> = y.iter().map(|v| (v / 10.0).exp()).collect();
        prop_assert!((spearman_corr(&fx, &gy).unwrap() - s).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(
        xy in (2..40usize).prop_flat_map(|n| (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let (x, y) = xy;
        let r = pearson_corr(&x, &y).unwrap();
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson_corr(&ax, &y).unwrap() - r).abs() < 1e-9);
    }

    #[test]
    fn mixing_is_convex(
        rows in 1..8usize,
        lambda in 0.0f64..=1.0,
        seed in any::<u64>(),
        vals in prop::collection::vec(-5.0f64..5.0, 8 * 3),
    ) {
        let h = Tensor::new(vec![rows, 3], vals[..rows * 3].to_vec()).unwrap();
        let plan = MixPlan::new(lambda, permutation(rows, seed)).unwrap();
        let out = mix_representations(&h, &plan).unwrap().output;
        for k in 0..rows {
            let p = plan.perm[k];
            for c in 0..3 {
                let (a, b) = (h.at(k, c), h.at(p, c));
                let v = out.at(k, c);
                prop_assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
            }
        }
        let mut y = Tensor::zeros(&[rows, 2]);
        for k in 0..rows {
            y.row_mut(k)[k % 2] = 1.0;
        }
        let mixed = mix_labels(&y, &plan).unwrap();
        for k in 0..rows {
            prop_assert!((mixed.row(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_draws_stay_in_unit_interval(alpha in 0.05f64..20.0, seed in any::<u64>()) {
        let mut r = rng::stream(seed, "beta-prop", 0);
        for _ in 0..50 {
            let x = sample_beta_symmetric(alpha, &mut r);
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn last_half_schedule_counts(total in 1..40usize) {
        let c = MixupConfig::default();
        let active: Vec<bool> = (1..=total).map(|e| is_active(e, total, &c).unwrap()).collect();
        prop_assert_eq!(active.iter().filter(|a| **a).count(), total - total / 2);
        // once on, stays on
        prop_assert!(active.windows(2).all(|w| !w[0] || w[1]));
    }

    #[test]
    fn encoded_rows_have_fixed_layout(
        s1 in "[a-e ]{0,30}",
        s2 in "[a-e ]{0,30}",
        max_len in 3..20usize,
    ) {
        let vocab = build_vocab(["a b c"], 1, 50).unwrap();
        let ex = encode_example(&vocab, &pair_task(), &s1, Some(&s2), Label::Class(1), max_len).unwrap();
        prop_assert_eq!(ex.token_ids.len(), max_len);
        prop_assert_eq!(ex.mask.len(), max_len);
        prop_assert_eq!(ex.token_ids[0], CLS);
        prop_assert_eq!(ex.token_ids.iter().filter(|&&t| t == SEP).count(), 2);
        let real = ex.mask.iter().filter(|&&m| m == 1).count();
        prop_assert!(ex.mask[..real].iter().all(|&m| m == 1));
        prop_assert!(ex.token_ids[real..].iter().all(|&t| t == PAD));
        prop_assert!(ex.token_ids[..real].iter().all(|&t| t != PAD));
        prop_assert_eq!(ex.token_ids[real - 1], SEP);
    }

    #[test]
    fn tokenize_is_idempotent(text in "\\PC{0,60}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once.clone());
        prop_assert!(once.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
    }

    #[test]
    fn vocabulary_is_dense_and_deterministic(words in prop::collection::vec("[a-f]{1,3}", 1..60), min_count in 1..3usize, max_size in 4..30usize) {
        let text = words.join(" ");
        let a = build_vocab([text.as_str()], min_count, max_size).unwrap();
        let b = build_vocab([text.as_str()], min_count, max_size).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.len() <= max_size);
        for id in 0..a.len() {
            prop_assert_eq!(a.id(a.token(id).unwrap()), id);
        }
        for w in &words {
            prop_assert!(a.id(w) < a.len());
        }
    }

    #[test]
    fn reduction_is_a_stratified_subset(
        labels in prop::collection::vec(0..3usize, 1..200),
        fraction in 0.01f64..=1.0,
        seed in any::<u64>(),
    ) {
        let task = TaskSpec { metric: mixf::metrics::Metric::Accuracy, ..pair_task() };
        let ds = Dataset {
            task,
            split: Split::Train,
            max_len: 1,
            examples: labels
                .iter()
                .enumerate()
                .map(|(i, &c)| Example { token_ids: vec![i], mask: vec![1], label: Label::Class(c) })
                .collect(),
        };
        let r = reduce_dataset(&ds, fraction, seed).unwrap();
        let kept: Vec<usize> = r.examples.iter().map(|e| e.token_ids[0]).collect();
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        for e in &r.examples {
            prop_assert_eq!(e, &ds.examples[e.token_ids[0]]);
        }
        for c in 0..3 {
            let n = labels.iter().filter(|&&l| l == c).count();
            let k = r.examples.iter().filter(|e| e.label == Label::Class(c)).count();
            if n == 0 {
                prop_assert_eq!(k, 0);
            } else {
                let target = (fraction * n as f64).round();
                prop_assert!((k as f64 - target).abs() <= 1.0, "class {c}: kept {k} of {n}");
                prop_assert!(k >= 1);
            }
        }
    }
}
