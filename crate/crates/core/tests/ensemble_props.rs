use crackmap::ensemble::*;
use crackmap::patch::ProbabilityMap;
use proptest::prelude::*;

fn maps_strategy() -> impl Strategy<Value = Vec<ProbabilityMap>> {
    (1usize..8, 1usize..6, 1usize..6).prop_flat_map(|(k, w, h)| {
        prop::collection::vec(prop::collection::vec(0.0f32..=1.0, w * h), k)
            .prop_map(move |v| v.into_iter().map(|p| ProbabilityMap::new(w, h, p).unwrap()).collect())
    })
}

proptest! {
    #[test]
    fn fused_values_stay_within_member_range(maps in maps_strategy()) {
        let fused = fuse_probabilities(&maps).unwrap();
        for i in 0..fused.probs().len() {
            let lo = maps.iter().map(|m| m.probs()[i]).fold(f32::INFINITY, f32::min);
            let hi = maps.iter().map(|m| m.probs()[i]).fold(f32::NEG_INFINITY, f32::max);
            let v = fused.probs()[i];
            prop_assert!(v >= lo && v <= hi, "{v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn thresholding_is_inclusive(maps in maps_strategy(), t in 0.0f64..=1.0) {
        let fused = fuse_probabilities(&maps).unwrap();
        let mask = threshold_map(&fused, t).unwrap();
        for (p, &m) in fused.probs().iter().zip(mask.data()) {
            prop_assert_eq!(m, *p >= t as f32);
        }
    }
}

#[test]
fn fusion_rejects_mismatched_maps() {
    let a = ProbabilityMap::new(2, 2, vec![0.0; 4]).unwrap();
    let b = ProbabilityMap::new(2, 1, vec![0.0; 2]).unwrap();
    assert!(fuse_probabilities(&[a.clone(), b]).is_err());
    assert!(fuse_probabilities(&[]).is_err());
    assert!(threshold_map(&a, 1.5).is_err());
}
