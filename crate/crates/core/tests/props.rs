//! Property tests for the data generator, color conversion and metrics.

use proptest::prelude::*;

use drdg_core::evalkit::{auc, hter, ScoreSet, ThresholdPolicy};
use drdg_core::model::{
    classifier_forward, discriminator_forward, encoder_forward, frm_forward, modulate,
    srm_forward, ArchConfig, ModelState, IN_CHANNELS,
};
use drdg_core::rng::rng_from;
use drdg_core::syndata::{
    generate_domain_dataset, make_batch, rgb_pixel_to_hsv, DomainSpec, GenConfig,
};
use drdg_core::tensor::Tensor;
use rand::Rng;

/// Test-side reference inverse of the hexcone conversion.
fn hsv_to_rgb_reference(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let i = h6.floor() as i64 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

#[test]
fn hsv_round_trip_on_random_grid() {
    let mut rng = rng_from(4096);
    let mut checked = 0;
    while checked < 1000 {
        let (r, g, b) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let ((h, s, v), clamps) = rgb_pixel_to_hsv(r, g, b);
        assert_eq!(clamps, 0);
        if s <= 0.0 {
            continue; // hue undefined for achromatic pixels
        }
        let (r2, g2, b2) = hsv_to_rgb_reference(h, s, v);
        assert!(
            (r - r2).abs() < 1e-6 && (g - g2).abs() < 1e-6 && (b - b2).abs() < 1e-6,
            "({}, {}, {}) -> ({}, {}, {}) -> ({}, {}, {})",
            r, g, b, h, s, v, r2, g2, b2
        );
        checked += 1;
    }
}

fn domain_spec_strategy() -> impl Strategy<Value = DomainSpec> {
    (
        0usize..8,
        (0.2f64..=1.0, 0.2f64..=1.0, 0.2f64..=1.0),
        0.5f64..=1.6,
        0.5f64..=10.0,
        0.0f64..=0.08,
    )
        .prop_map(|(id, tint, exposure, texture_freq, noise_sigma)| DomainSpec {
            domain_id: id,
            tint,
            exposure,
            texture_freq,
            noise_sigma,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every generated sample satisfies the full sample contract for any
    /// valid domain spec, and generation is a pure function of its inputs.
    #[test]
    fn generated_samples_satisfy_invariants(spec in domain_spec_strategy(), seed in 0u64..1000) {
        let gen = GenConfig { image_hw: (12, 12), depth_hw: (6, 6), ..GenConfig::default() };
        let samples = generate_domain_dataset(&spec, &gen, 6, seed).unwrap();
        prop_assert_eq!(samples.len(), 6);
        prop_assert_eq!(samples.iter().filter(|s| s.live).count(), 3);
        for s in &samples {
            s.validate().unwrap();
        }
        let again = generate_domain_dataset(&spec, &gen, 6, seed).unwrap();
        for (a, b) in samples.iter().zip(&again) {
            prop_assert_eq!(&a.image, &b.image);
        }
    }

    /// Requested batch composition is delivered exactly.
    #[test]
    fn batch_composition_is_exact(seed in 0u64..500, n_dom in 1usize..4) {
        let n_dom = n_dom * 2;
        let gen = GenConfig { image_hw: (8, 8), depth_hw: (4, 4), ..GenConfig::default() };
        let spec = DomainSpec {
            domain_id: 0, tint: (1.0, 1.0, 1.0), exposure: 1.0,
            texture_freq: 2.0, noise_sigma: 0.01,
        };
        let datasets: Vec<_> = (0..3)
            .map(|d| {
                let mut s = spec.clone();
                s.domain_id = d;
                generate_domain_dataset(&s, &gen, 8, d as u64).unwrap()
            })
            .collect();
        let batch = make_batch(datasets, n_dom, seed).unwrap();
        prop_assert_eq!(batch.len(), 3 * n_dom);
        batch.validate().unwrap();
        let inputs = batch.to_model_inputs().unwrap();
        for (i, &d) in inputs.domains.iter().enumerate() {
            prop_assert_eq!(d, i / n_dom);
            // one-hot rows
            let row = &inputs.domain_onehot.data()[i * 3..(i + 1) * 3];
            prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
        }
    }

    /// AUC and EER-policy HTER are invariant under strictly increasing
    /// score transforms.
    #[test]
    fn metrics_monotone_invariance(
        raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 4..40),
        scale in 0.5f64..4.0,
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
        let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
        let Ok(set) = ScoreSet::new(scores.clone(), labels.clone()) else {
            return Ok(()); // single-class draw
        };
        let transformed = ScoreSet::new(
            scores.iter().map(|v| (v * scale).exp() + 1.0).collect(),
            labels,
        ).unwrap();
        prop_assert!((auc(&set).unwrap() - auc(&transformed).unwrap()).abs() < 1e-12);
        let h0 = hter(&set, &ThresholdPolicy::Eer).unwrap();
        let h1 = hter(&transformed, &ThresholdPolicy::Eer).unwrap();
        prop_assert_eq!(h0, h1);
    }

    /// HTER under the EER policy: always within [0,1], bounded by the ROC
    /// geometry (EER ≤ √(1−AUC) up to class-count discretization), zero for
    /// perfectly separable sets, and within 0.5 + 1/(2·min-class-count) for
    /// at-least-chance score sets. Worse-than-chance sets can legitimately
    /// reach HTER values up to 1 (anti-separated scores cross at error 1).
    #[test]
    fn hter_bound(raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 4..40)) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
        let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
        let Ok(set) = ScoreSet::new(scores, labels.clone()) else { return Ok(()); };
        let h = hter(&set, &ThresholdPolicy::Eer).unwrap();
        let a = auc(&set).unwrap();
        let live = labels.iter().filter(|&&l| l).count();
        let min_class = live.min(labels.len() - live);
        let slack = 1.0 / min_class as f64;
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!(h <= (1.0 - a).sqrt() + slack + 1e-12);
        if a >= 0.75 {
            prop_assert!(h <= 0.5 + 0.5 * slack + 1e-12);
        }
    }

    /// HTER is exactly zero iff the score set is perfectly separable.
    #[test]
    fn hter_zero_iff_separable(
        gap in 0.01f64..0.3,
        n_live in 2usize..8,
        n_spoof in 2usize..8,
    ) {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_live {
            scores.push(0.6 + gap + 0.01 * i as f64);
            labels.push(true);
        }
        for i in 0..n_spoof {
            scores.push(0.6 - gap - 0.01 * i as f64);
            labels.push(false);
        }
        let set = ScoreSet::new(scores, labels).unwrap();
        prop_assert_eq!(hter(&set, &ThresholdPolicy::Eer).unwrap(), 0.0);

        // breaking separability by one crossing pair forces HTER > 0
        let mut scores2 = vec![0.9, 0.6 - gap];
        let mut labels2 = vec![true, false];
        scores2.push(0.2); // a live sample below every spoof
        labels2.push(true);
        scores2.push(0.95);
        labels2.push(false);
        let set2 = ScoreSet::new(scores2, labels2).unwrap();
        prop_assert!(hter(&set2, &ThresholdPolicy::Eer).unwrap() > 0.0);
    }
}

/// Probability outputs stay normalized for random parameters and inputs.
#[test]
fn probability_outputs_normalized_1000_trials() {
    let arch = ArchConfig::tiny();
    let mut rng = rng_from(777);
    for trial in 0..1000u64 {
        // fresh random parameters every 50 trials, fresh inputs every trial
        let mut state = ModelState::new(arch.clone(), trial / 50).unwrap();
        for &set in drdg_core::model::ALL_SETS {
            for (_, t) in state.set_mut(set).arrays_mut() {
                for v in t.data_mut() {
                    *v += 0.5 * (rng.random::<f64>() - 0.5);
                }
            }
        }
        let n = 2;
        let mut images = Tensor::zeros(&[n, arch.image_hw.0, arch.image_hw.1, IN_CHANNELS]);
        for v in images.data_mut() {
            *v = rng.random();
        }
        let f = encoder_forward(&state, &images).unwrap();
        let a = frm_forward(&state, &f).unwrap();
        let c = arch.feature_channels();
        for r in 0..n {
            let sum: f64 = a.tensor().data()[r * c..(r + 1) * c].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        let f_frm = modulate(&a, &f).unwrap();
        let d = discriminator_forward(&state, &f_frm).unwrap();
        let m = arch.num_domains;
        for r in 0..n {
            let row = &d.data()[r * m..(r + 1) * m];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let p = classifier_forward(&state, &f_frm).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        let w = srm_forward(&state, &f_frm, &[1.0, 0.0]).unwrap();
        assert!(w.values().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
