use proptest::prelude::*;
use softblob::diff::{stream_rng, Tensor};
use softblob::evaluation::{
    accuracy, auroc, average_ranks, fmax, macro_f1, mcc, sasa_gap, spatial_zscore, spearman, top_fraction_set,
};

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..20, any::<bool>()), 2..60)
        .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64 / 19.0, l)).unzip())
        .prop_filter("both classes", |(_, l): &(Vec<f64>, Vec<bool>)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
}

fn classes(k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    prop::collection::vec((0..k, 0..k), 1..50).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn auroc_flips_under_negation((s, l) in labelled_scores()) {
        let a = auroc(&s, &l).unwrap();
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((auroc(&neg, &l).unwrap() - (1.0 - a)).abs() < 1e-12);
        let shifted: Vec<f64> = s.iter().map(|x| 3.0 * x + 1.0).collect();
        prop_assert_eq!(auroc(&shifted, &l).unwrap(), a);
    }

    #[test]
    fn perfect_predictions_score_one((_, l) in classes(4)) {
        prop_assert_eq!(accuracy(&l, &l), 1.0);
        let present: std::collections::BTreeSet<_> = l.iter().collect();
        prop_assume!(present.len() > 1);
        prop_assert!((mcc(&l, &l, 4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scores_are_bounded((p, l) in classes(3)) {
        let f = macro_f1(&p, &l, 3);
        let m = mcc(&p, &l, 3);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&m));
        prop_assert!((mcc(&l, &p, 3) - m).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_sum_is_triangular(x in prop::collection::vec(0u8..5, 1..30)) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let n = x.len() as f64;
        prop_assert!((average_ranks(&x).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn spearman_is_rank_based(x in prop::collection::vec(-5.0f64..5.0, 3..20), y in prop::collection::vec(-5.0f64..5.0, 20)) {
        let y = &y[..x.len()];
        if let Ok(r) = spearman(&x, y) {
            let cubed: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
            let again = spearman(&cubed, y).unwrap();
            prop_assert!((r.rho - again.rho).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }

    #[test]
    fn top_fraction_has_ceiling_size(v in prop::collection::vec(-1.0f64..1.0, 1..50), f in 0.01f64..1.0) {
        let top = top_fraction_set(&v, f);
        prop_assert_eq!(top.len(), ((f * v.len() as f64).ceil() as usize).min(v.len()));
        let floor = top.iter().map(|&i| v[i]).fold(f64::INFINITY, f64::min);
        let outside = (0..v.len()).filter(|i| !top.contains(i)).map(|i| v[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(floor >= outside);
    }
}

#[test]
fn fmax_of_exact_scores_is_one() {
    let truth = vec![vec![0, 2], vec![1], vec![2]];
    let mut s = Tensor::zeros(3, 3);
    for (r, t) in truth.iter().enumerate() {
        for &c in t {
            s.set(r, c, 0.9);
        }
    }
    assert!((fmax(&s, &truth).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(fmax(&Tensor::zeros(3, 3), &truth).unwrap(), 0.0);
}

#[test]
fn exposed_importance_gives_positive_sasa_gap() {
    let rsa: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
    let gap = sasa_gap(&rsa, &rsa, 0.2).unwrap();
    assert!(gap > 0.4);
    let reversed: Vec<f64> = rsa.iter().map(|r| -r).collect();
    assert!((sasa_gap(&reversed, &rsa, 0.2).unwrap() + gap).abs() < 1e-12);
}

#[test]
fn scattered_set_is_not_compact() {
    let coords: Vec<[f64; 3]> = (0..40).map(|i| [i as f64, 0.0, 0.0]).collect();
    let mut rng = stream_rng(1, &[]);
    let ends = spatial_zscore(&coords, &[0, 1, 38, 39], 300, &mut rng).unwrap();
    assert!(ends.z > 1.0, "{ends:?}");
    let tight = spatial_zscore(&coords, &[20, 21, 22, 23], 300, &mut rng).unwrap();
    assert!(tight.z < -1.0, "{tight:?}");
}
