use proptest::prelude::*;
use spr_core::stream_gen::{
    corrupted_count, generate_episode, inject_asymmetric_noise, inject_symmetric_noise, synth_clusters,
};
use spr_core::{EpisodeSpec, NoiseKind};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn symmetric_noise_only_touches_labels(
        rate in 0.0f64..=1.0,
        classes in 2usize..6,
        per_class in 1usize..40,
        seed in any::<u64>(),
    ) {
        let clean = synth_clusters(classes, 3, 3.0, per_class, seed).unwrap();
        let noisy = inject_symmetric_noise(clean.clone(), rate, seed).unwrap();
        let n = clean.samples.len();
        let flipped = noisy.samples.iter().filter(|s| s.is_noisy() == Some(true)).count();
        prop_assert_eq!(flipped, corrupted_count(rate, n));
        for (a, b) in clean.samples.iter().zip(&noisy.samples) {
            prop_assert_eq!(&a.features, &b.features);
            prop_assert_eq!(a.true_label, b.true_label);
            prop_assert_eq!(a.id, b.id);
            prop_assert!(b.observed_label < classes);
        }
    }

    #[test]
    fn asymmetric_noise_maps_to_the_partner(rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let clean = synth_clusters(4, 3, 3.0, 25, seed).unwrap();
        let pairs = [(0, 2), (1, 3)];
        let noisy = inject_asymmetric_noise(clean, rate, &pairs, seed).unwrap();
        let partner = [2, 3, 0, 1];
        let mut flipped = 0;
        for s in &noisy.samples {
            let t = s.true_label.unwrap();
            if s.observed_label != t {
                prop_assert_eq!(s.observed_label, partner[t]);
                flipped += 1;
            }
        }
        prop_assert_eq!(flipped, corrupted_count(rate, 100));
    }

    #[test]
    fn every_observed_class_streams_in_one_segment(rate in 0.0f64..0.7, seed in any::<u64>()) {
        let spec = EpisodeSpec { samples_per_class: 20, num_tasks: 3, ..EpisodeSpec::reference(rate, seed) };
        let ep = generate_episode(&spec).unwrap();
        let mut closed = Vec::new();
        let mut current = None;
        for s in &ep.stream {
            if current != Some(s.task_id) {
                prop_assert!(!closed.contains(&s.task_id));
                if let Some(c) = current {
                    closed.push(c);
                }
                current = Some(s.task_id);
            }
            prop_assert!(ep.task_classes[s.task_id].contains(&s.observed_label));
        }
        for (i, s) in ep.stream.iter().enumerate() {
            prop_assert_eq!(s.id, i as u64);
        }
        prop_assert!(ep.test.iter().all(|s| s.is_noisy() == Some(false)));
        prop_assert_eq!(ep.test.len(), 6 * 5);
        prop_assert_eq!(generate_episode(&spec).unwrap(), ep);
    }
}

#[test]
fn asymmetric_episode_rejects_incomplete_pair_map() {
    let spec = EpisodeSpec {
        noise_kind: NoiseKind::Asymmetric,
        pair_map: vec![(0, 1), (2, 3)],
        ..EpisodeSpec::reference(0.4, 1)
    };
    assert!(generate_episode(&spec).is_err());
}
