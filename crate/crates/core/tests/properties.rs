use portrait_core::feature::FeatureVec;
use portrait_core::metrics::{cos_deg, l1_l2};
use portrait_core::prior::{PriorKind, RunningMean, compute_prior, l1_distance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn vecs(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n)
}

proptest! {
    #[test]
    fn metric_axioms(v in vecs(3, 8)) {
        let (ab1, ab2) = l1_l2(&v[0], &v[1]).unwrap();
        let (ba1, ba2) = l1_l2(&v[1], &v[0]).unwrap();
        prop_assert_eq!((ab1, ab2), (ba1, ba2));
        let (ac1, ac2) = l1_l2(&v[0], &v[2]).unwrap();
        let (bc1, bc2) = l1_l2(&v[1], &v[2]).unwrap();
        prop_assert!(ac1 <= ab1 + bc1 + 1e-12);
        prop_assert!(ac2 <= ab2 + bc2 + 1e-12);
        prop_assert_eq!(l1_l2(&v[0], &v[0]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn cos_deg_is_scale_invariant(v in vecs(2, 6), k in 0.01f64..100.0) {
        prop_assume!(v.iter().all(|x| x.iter().any(|&e| e.abs() > 1e-3)));
        let c = cos_deg(&v[0], &v[1]).unwrap();
        let scaled: Vec<f64> = v[1].iter().map(|x| x * k).collect();
        prop_assert!((0.0..=180.0).contains(&c));
        prop_assert!((cos_deg(&v[0], &scaled).unwrap() - c).abs() < 1e-9);
    }

    #[test]
    fn prior_ignores_order(v in vecs(12, 5), seed in any::<u64>()) {
        let feats: Vec<FeatureVec> = v.into_iter().map(|x| FeatureVec::new(x).unwrap()).collect();
        let mut shuffled = feats.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = compute_prior(&feats, PriorKind::Neutral).unwrap();
        let b = compute_prior(&shuffled, PriorKind::Neutral).unwrap();
        for (x, y) in a.vec.data().iter().zip(b.vec.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn running_mean_matches_batch(v in vecs(40, 4)) {
        let feats: Vec<FeatureVec> = v.into_iter().map(|x| FeatureVec::new(x).unwrap()).collect();
        let mut rm = RunningMean::new();
        for f in &feats {
            rm.push(f.data()).unwrap();
        }
        let batch = compute_prior(&feats, PriorKind::Neutral).unwrap();
        for (x, y) in rm.mean().iter().zip(batch.vec.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn prior_error_shrinks_like_inverse_sqrt_n() {
    // the L1 error of a mean of n standard normals concentrates near d·sqrt(2/(πn))
    let d = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [10, 100, 1000] {
        let feats: Vec<FeatureVec> = (0..n)
            .map(|_| FeatureVec::new((0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap())
            .collect();
        let prior = compute_prior(&feats, PriorKind::Neutral).unwrap();
        let err = l1_distance(prior.vec.data(), &vec![0.0; d]);
        let want = d as f64 * (2.0 / (std::f64::consts::PI * n as f64)).sqrt();
        assert!((err / want - 1.0).abs() < 0.15, "n={n}: {err} vs {want}");
    }
}
