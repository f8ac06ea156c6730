//! Synthetic multi-domain live/spoof data with controlled domain shift.
//!
//! Every domain renders the same scene family — a textured background plus a
//! centered face-like blob — through its own tint, exposure, background
//! texture frequency and sensor noise. Liveness is carried by cues that are
//! deliberately domain-independent: live blobs have a smooth radial shading
//! gradient (and a matching nonzero depth target), spoof blobs are rendered
//! flat at the same average brightness with a high-frequency moiré overlay
//! (and an all-zero depth target). Domain transforms apply identically to
//! both classes, so domain identity never doubles as a liveness shortcut.

mod ingest;

pub use ingest::{export_datasets, import_datasets, ingest_directory, IngestOptions, IngestReport};

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DrdgError, Result};
use crate::objectives::BatchData;
use crate::rng::rng_from;
use crate::tensor::Tensor;

/// Rendering parameters of one source or target domain.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainSpec {
    pub domain_id: usize,
    /// Multiplicative RGB tint, each component in [0,1].
    pub tint: (f64, f64, f64),
    /// Scalar gain in [0.25, 4].
    pub exposure: f64,
    /// Background pattern frequency in cycles per image, positive.
    pub texture_freq: f64,
    /// Additive Gaussian noise stddev in [0, 0.2].
    pub noise_sigma: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let (r, g, b) = self.tint;
        for v in [r, g, b] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DrdgError::Config(format!("tint component {} outside [0,1]", v)));
            }
        }
        if !(0.25..=4.0).contains(&self.exposure) {
            return Err(DrdgError::Config(format!(
                "exposure {} outside [0.25, 4]",
                self.exposure
            )));
        }
        if self.texture_freq <= 0.0 {
            return Err(DrdgError::Config("texture_freq must be positive".into()));
        }
        if !(0.0..=0.2).contains(&self.noise_sigma) {
            return Err(DrdgError::Config(format!(
                "noise_sigma {} outside [0, 0.2]",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Domain-independent generation knobs shared by a whole benchmark.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GenConfig {
    pub image_hw: (usize, usize),
    pub depth_hw: (usize, usize),
    /// Live/spoof separability in (0,1]: scales both the live shading
    /// gradient and the spoof moiré amplitude.
    pub cue_strength: f64,
    /// Blob radius in normalized image coordinates.
    pub blob_radius: f64,
    /// Uniform jitter applied to the blob center (normalized units).
    pub center_jitter: f64,
    /// Relative jitter applied to the blob radius.
    pub radius_jitter: f64,
    pub bg_level: f64,
    pub texture_amp: f64,
    /// Moiré frequency of the spoof overlay, cycles per image.
    pub moire_freq: f64,
    pub moire_amp: f64,
    pub skin_tone: (f64, f64, f64),
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            image_hw: (32, 32),
            depth_hw: (16, 16),
            cue_strength: 0.25,
            blob_radius: 0.32,
            center_jitter: 0.05,
            radius_jitter: 0.10,
            bg_level: 0.45,
            texture_amp: 0.10,
            moire_freq: 11.0,
            moire_amp: 0.5,
            skin_tone: (0.75, 0.62, 0.50),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_hw.0 < 8 || self.image_hw.1 < 8 {
            return Err(DrdgError::Config("image size must be ≥ 8×8".into()));
        }
        if self.depth_hw.0 < 4 || self.depth_hw.1 < 4 {
            return Err(DrdgError::Config("depth size must be ≥ 4×4".into()));
        }
        if !(0.0..=1.0).contains(&self.cue_strength) {
            return Err(DrdgError::Config("cue_strength must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Face-blob geometry in normalized [0,1]² coordinates.
#[derive(Debug, Clone, Copy)]
pub struct BlobGeometry {
    pub center: (f64, f64),
    pub radius: f64,
    pub live: bool,
}

impl BlobGeometry {
    pub fn centered(radius: f64, live: bool) -> Self {
        BlobGeometry {
            center: (0.5, 0.5),
            radius,
            live,
        }
    }
}

/// One labeled image: 6-channel pixels (RGB + HSV), liveness, source domain,
/// and a depth target (all zeros for spoof). The domain one-hot vector is
/// materialized per batch against the collection's domain count.
#[derive(Debug, Clone)]
pub struct Sample {
    /// H×W×6 in [0,1]; channels 0–2 RGB, 3–5 HSV.
    pub image: Tensor,
    pub live: bool,
    pub domain_id: usize,
    /// H_d×W_d in [0,1].
    pub depth_target: Tensor,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.image.ndim() != 3 || self.image.shape()[2] != 6 {
            return Err(DrdgError::Contract(format!(
                "sample image must be H×W×6, got {:?}",
                self.image.shape()
            )));
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DrdgError::Contract("sample pixels outside [0,1]".into()));
        }
        if self.depth_target.ndim() != 2 {
            return Err(DrdgError::Contract("depth target must be 2-d".into()));
        }
        if self
            .depth_target
            .data()
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(DrdgError::Contract("depth target outside [0,1]".into()));
        }
        if !self.live && self.depth_target.data().iter().any(|&v| v != 0.0) {
            return Err(DrdgError::Contract(
                "spoof sample must have an all-zero depth target".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Color conversion
// ---------------------------------------------------------------------------

/// Hexcone RGB→HSV for one pixel; all components in [0,1]
/// (hue is degrees/360). Inputs are clamped to [0,1] first; the second
/// return is 1 if anything was clamped.
pub fn rgb_pixel_to_hsv(r: f64, g: f64, b: f64) -> ((f64, f64, f64), u64) {
    let mut clamped = 0;
    let mut cl = |v: f64| {
        if (0.0..=1.0).contains(&v) {
            v
        } else {
            clamped = 1;
            v.clamp(0.0, 1.0)
        }
    };
    let (r, g, b) = (cl(r), cl(g), cl(b));
    let mx = r.max(g).max(b);
    let mn = r.min(g).min(b);
    let d = mx - mn;
    let v = mx;
    let s = if mx > 0.0 { d / mx } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if mx == r {
        let mut hp = (g - b) / d;
        if hp < 0.0 {
            hp += 6.0;
        }
        hp / 6.0
    } else if mx == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    ((h, s, v), clamped)
}

/// RGB→HSV over an H×W×3 tensor. Out-of-range inputs are clamped; the clamped
/// pixel count is returned for the caller's run log.
pub fn rgb_to_hsv(rgb: &Tensor) -> Result<(Tensor, u64)> {
    if rgb.ndim() != 3 || rgb.shape()[2] != 3 {
        return Err(DrdgError::Contract(format!(
            "rgb_to_hsv expects H×W×3, got {:?}",
            rgb.shape()
        )));
    }
    let mut out = Tensor::zeros(rgb.shape());
    let mut clamps = 0;
    let src = rgb.data();
    let dst = out.data_mut();
    for px in 0..src.len() / 3 {
        let ((h, s, v), c) = rgb_pixel_to_hsv(src[3 * px], src[3 * px + 1], src[3 * px + 2]);
        clamps += c;
        dst[3 * px] = h;
        dst[3 * px + 1] = s;
        dst[3 * px + 2] = v;
    }
    Ok((out, clamps))
}

// ---------------------------------------------------------------------------
// Depth targets
// ---------------------------------------------------------------------------

/// Smooth radial-falloff depth map for live geometry, all zeros for spoof.
/// The map peaks (≤ 1) at the blob center and is 0 wherever the blob does not
/// reach, including all borders for in-frame blobs.
pub fn make_pseudo_depth(geometry: &BlobGeometry, size: (usize, usize)) -> Result<Tensor> {
    if size.0 < 4 || size.1 < 4 {
        return Err(DrdgError::Config("depth size must be ≥ 4×4".into()));
    }
    let (h, w) = size;
    let mut out = Tensor::zeros(&[h, w]);
    if !geometry.live {
        return Ok(out);
    }
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let v = (y as f64 + 0.5) / h as f64;
            let t = ((u - geometry.center.0).powi(2) + (v - geometry.center.1).powi(2)).sqrt()
                / geometry.radius;
            data[y * w + x] = (1.0 - t * t).max(0.0);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Deterministically generate `n` samples (half live, half spoof) for one
/// domain. The same `(spec, gen, n, seed)` always produces bitwise-identical
/// output.
pub fn generate_domain_dataset(
    spec: &DomainSpec,
    gen: &GenConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    spec.validate()?;
    gen.validate()?;
    if n < 2 || n % 2 != 0 {
        return Err(DrdgError::Config(format!(
            "dataset size must be even and ≥ 2, got {}",
            n
        )));
    }
    let mut rng = rng_from(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (h, w) = gen.image_hw;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let live = i % 2 == 0;
        let cx = 0.5 + rng.random_range(-gen.center_jitter..=gen.center_jitter);
        let cy = 0.5 + rng.random_range(-gen.center_jitter..=gen.center_jitter);
        let radius =
            gen.blob_radius * (1.0 + rng.random_range(-gen.radius_jitter..=gen.radius_jitter));
        let tex_phase = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
        let moire_phase =
            (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
        let geometry = BlobGeometry {
            center: (cx, cy),
            radius,
            live,
        };

        let mut rgb = Tensor::zeros(&[h, w, 3]);
        {
            let data = rgb.data_mut();
            let skin = [gen.skin_tone.0, gen.skin_tone.1, gen.skin_tone.2];
            let tint = [spec.tint.0, spec.tint.1, spec.tint.2];
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 + 0.5) / w as f64;
                    let v = (y as f64 + 0.5) / h as f64;
                    let bg = gen.bg_level
                        + gen.texture_amp
                            * (2.0 * PI * spec.texture_freq * u + tex_phase.0).sin()
                            * (2.0 * PI * spec.texture_freq * v + tex_phase.1).sin();
                    let t = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt() / radius;
                    let edge = ((1.0 - t) / 0.15).clamp(0.0, 1.0);
                    // live: radial gradient; spoof: flat at the live disk mean
                    let shade = if live { (1.0 - t * t).max(0.0) } else { 0.5 };
                    let lum = 0.75 + 0.8 * gen.cue_strength * (shade - 0.5);
                    let moire = if live {
                        0.0
                    } else {
                        gen.cue_strength
                            * gen.moire_amp
                            * gen.texture_amp
                            * (2.0 * PI * gen.moire_freq * u + moire_phase.0).sin()
                            * (2.0 * PI * gen.moire_freq * v + moire_phase.1).sin()
                    };
                    for c in 0..3 {
                        let base = bg + edge * (skin[c] * lum - bg) + moire;
                        let shifted = base * tint[c] * spec.exposure
                            + spec.noise_sigma * normal.sample(&mut rng);
                        data[(y * w + x) * 3 + c] = shifted.clamp(0.0, 1.0);
                    }
                }
            }
        }
        let (hsv, _) = rgb_to_hsv(&rgb)?;
        let mut image = Tensor::zeros(&[h, w, 6]);
        {
            let dst = image.data_mut();
            let rs = rgb.data();
            let hs = hsv.data();
            for px in 0..h * w {
                dst[px * 6..px * 6 + 3].copy_from_slice(&rs[px * 3..px * 3 + 3]);
                dst[px * 6 + 3..px * 6 + 6].copy_from_slice(&hs[px * 3..px * 3 + 3]);
            }
        }
        let depth_target = make_pseudo_depth(&geometry, gen.depth_hw)?;
        samples.push(Sample {
            image,
            live,
            domain_id: spec.domain_id,
            depth_target,
        });
    }
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Domain-balanced, class-balanced minibatch. Samples are stored
/// domain-major: the first `n_dom` entries come from domain 0, and so on.
#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<Arc<Sample>>,
    pub n_dom: usize,
    pub num_domains: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn domain_of(&self, idx: usize) -> usize {
        idx / self.n_dom
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.n_dom * self.num_domains {
            return Err(DrdgError::Contract(format!(
                "batch has {} samples, expected {}×{}",
                self.samples.len(),
                self.num_domains,
                self.n_dom
            )));
        }
        for d in 0..self.num_domains {
            let live = self.samples[d * self.n_dom..(d + 1) * self.n_dom]
                .iter()
                .filter(|s| s.live)
                .count();
            if live * 2 != self.n_dom {
                return Err(DrdgError::Contract(format!(
                    "domain {} contributes {} live of {}, expected half",
                    d, live, self.n_dom
                )));
            }
        }
        Ok(())
    }

    /// Stack into model-ready tensors (images, labels, one-hot domains,
    /// depth targets).
    pub fn to_model_inputs(&self) -> Result<BatchData> {
        let n = self.samples.len();
        if n == 0 {
            return Err(DrdgError::Contract("empty batch".into()));
        }
        let ishape = self.samples[0].image.shape().to_vec();
        let dshape = self.samples[0].depth_target.shape().to_vec();
        let mut images = Tensor::zeros(&[n, ishape[0], ishape[1], ishape[2]]);
        let mut depth = Tensor::zeros(&[n, dshape[0], dshape[1]]);
        let mut labels = Vec::with_capacity(n);
        let mut domains = Vec::with_capacity(n);
        let mut onehot = Tensor::zeros(&[n, self.num_domains]);
        let img_len: usize = ishape.iter().product();
        let dep_len: usize = dshape.iter().product();
        for (i, s) in self.samples.iter().enumerate() {
            if s.image.shape() != ishape.as_slice() || s.depth_target.shape() != dshape.as_slice()
            {
                return Err(DrdgError::Contract("ragged sample shapes in batch".into()));
            }
            images.data_mut()[i * img_len..(i + 1) * img_len].copy_from_slice(s.image.data());
            depth.data_mut()[i * dep_len..(i + 1) * dep_len]
                .copy_from_slice(s.depth_target.data());
            labels.push(if s.live { 1.0 } else { 0.0 });
            let d = self.domain_of(i);
            domains.push(d);
            onehot.data_mut()[i * self.num_domains + d] = 1.0;
        }
        Ok(BatchData {
            images,
            labels,
            domains,
            domain_onehot: onehot,
            depth_targets: depth,
        })
    }
}

/// Draws domain- and class-balanced batches without replacement within an
/// epoch; each (domain, class) pool reshuffles independently when exhausted.
pub struct BatchSampler {
    datasets: Vec<Vec<Arc<Sample>>>,
    /// Per domain: [spoof, live] index stacks (drawn from the back).
    pools: Vec<[Vec<usize>; 2]>,
    rng: rand_chacha::ChaCha8Rng,
    n_dom: usize,
}

impl BatchSampler {
    pub fn new(datasets: Vec<Vec<Sample>>, n_dom: usize, seed: u64) -> Result<Self> {
        let shared = datasets
            .into_iter()
            .map(|ds| ds.into_iter().map(Arc::new).collect())
            .collect();
        Self::new_shared(shared, n_dom, seed)
    }

    /// Like [`BatchSampler::new`] but over already-shared samples, so several
    /// consumers can stream from the same material without copying pixels.
    pub fn new_shared(
        datasets: Vec<Vec<Arc<Sample>>>,
        n_dom: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_dom < 2 || n_dom % 2 != 0 {
            return Err(DrdgError::Config(format!(
                "n_dom must be even and ≥ 2, got {}",
                n_dom
            )));
        }
        if datasets.len() < 2 {
            return Err(DrdgError::Config("need at least 2 source domains".into()));
        }
        let need = n_dom / 2;
        for (d, ds) in datasets.iter().enumerate() {
            let live = ds.iter().filter(|s| s.live).count();
            let spoof = ds.len() - live;
            if live < need || spoof < need {
                return Err(DrdgError::Config(format!(
                    "domain {} has {} live / {} spoof samples, need ≥ {} each",
                    d, live, spoof, need
                )));
            }
        }
        let mut sampler = BatchSampler {
            pools: vec![[Vec::new(), Vec::new()]; datasets.len()],
            datasets,
            rng: rng_from(seed),
            n_dom,
        };
        for d in 0..sampler.datasets.len() {
            sampler.refill(d, 0);
            sampler.refill(d, 1);
        }
        Ok(sampler)
    }

    pub fn num_domains(&self) -> usize {
        self.datasets.len()
    }

    fn refill(&mut self, domain: usize, class: usize) {
        let want_live = class == 1;
        let mut idxs: Vec<usize> = self.datasets[domain]
            .iter()
            .enumerate()
            .filter(|(_, s)| s.live == want_live)
            .map(|(i, _)| i)
            .collect();
        // Fisher–Yates with the sampler's own stream
        for i in (1..idxs.len()).rev() {
            let j = self.rng.random_range(0..=i);
            idxs.swap(i, j);
        }
        self.pools[domain][class] = idxs;
    }

    fn draw(&mut self, domain: usize, class: usize) -> usize {
        if self.pools[domain][class].is_empty() {
            self.refill(domain, class);
        }
        self.pools[domain][class].pop().expect("non-empty after refill")
    }

    pub fn next_batch(&mut self) -> Batch {
        let need = self.n_dom / 2;
        let mut samples = Vec::with_capacity(self.n_dom * self.datasets.len());
        for d in 0..self.datasets.len() {
            for class in [1usize, 0usize] {
                for _ in 0..need {
                    let idx = self.draw(d, class);
                    samples.push(Arc::clone(&self.datasets[d][idx]));
                }
            }
        }
        Batch {
            samples,
            n_dom: self.n_dom,
            num_domains: self.datasets.len(),
        }
    }

    /// Indices drawn so far are not exposed; tests reconstruct epochs by
    /// sample identity (Arc pointer equality).
    pub fn dataset(&self, domain: usize) -> &[Arc<Sample>] {
        &self.datasets[domain]
    }

    /// Stream position of the sampler's generator, for checkpoint manifests.
    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

/// One-shot balanced batch (the first batch of a fresh sampler stream).
pub fn make_batch(datasets: Vec<Vec<Sample>>, n_dom: usize, seed: u64) -> Result<Batch> {
    let mut sampler = BatchSampler::new(datasets, n_dom, seed)?;
    Ok(sampler.next_batch())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(id: usize) -> DomainSpec {
        DomainSpec {
            domain_id: id,
            tint: (1.0, 1.0, 1.0),
            exposure: 1.0,
            texture_freq: 3.0,
            noise_sigma: 0.02,
        }
    }

    fn small_gen() -> GenConfig {
        GenConfig {
            image_hw: (16, 16),
            depth_hw: (8, 8),
            ..GenConfig::default()
        }
    }

    #[test]
    fn label_and_depth_contract() {
        let samples = generate_domain_dataset(&spec(0), &small_gen(), 4, 0).unwrap();
        assert_eq!(samples.len(), 4);
        let live: Vec<&Sample> = samples.iter().filter(|s| s.live).collect();
        let spoof: Vec<&Sample> = samples.iter().filter(|s| !s.live).collect();
        assert_eq!(live.len(), 2);
        assert_eq!(spoof.len(), 2);
        for s in &live {
            assert!(s.depth_target.data().iter().sum::<f64>() > 0.0);
        }
        for s in &spoof {
            assert!(s.depth_target.data().iter().all(|&v| v == 0.0));
        }
        for s in &samples {
            s.validate().unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_domain_dataset(&spec(0), &small_gen(), 6, 9).unwrap();
        let b = generate_domain_dataset(&spec(0), &small_gen(), 6, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.depth_target, y.depth_target);
        }
        let c = generate_domain_dataset(&spec(0), &small_gen(), 6, 10).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn odd_or_tiny_n_rejected() {
        assert!(generate_domain_dataset(&spec(0), &small_gen(), 5, 0).is_err());
        assert!(generate_domain_dataset(&spec(0), &small_gen(), 0, 0).is_err());
        let mut bad = small_gen();
        bad.image_hw = (4, 4);
        assert!(generate_domain_dataset(&spec(0), &bad, 4, 0).is_err());
    }

    #[test]
    fn tint_scales_channel_means() {
        let gen = small_gen();
        let n = 40;
        let s1 = spec(0);
        let mut s2 = spec(1);
        s2.tint = (0.8, 0.9, 1.0);
        let a = generate_domain_dataset(&s1, &gen, n, 3).unwrap();
        let b = generate_domain_dataset(&s2, &gen, n, 3).unwrap();
        let mean = |set: &[Sample], c: usize| -> f64 {
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for s in set {
                let (h, w) = (s.image.shape()[0], s.image.shape()[1]);
                for px in 0..h * w {
                    sum += s.image.data()[px * 6 + c];
                    cnt += 1;
                }
            }
            sum / cnt as f64
        };
        let (h, w) = gen.image_hw;
        let tol = 3.0 * s1.noise_sigma / ((h * w * n) as f64).sqrt();
        let tints = [0.8, 0.9, 1.0];
        for c in 0..3 {
            let ma = mean(&a, c);
            let mb = mean(&b, c);
            assert!(
                (mb - tints[c] * ma).abs() <= tol * (1.0 + tints[c]),
                "channel {}: {} vs {}·{} (tol {})",
                c,
                mb,
                tints[c],
                ma,
                tol
            );
        }
    }

    #[test]
    fn hsv_reference_pixels() {
        let ((h, s, v), _) = rgb_pixel_to_hsv(1.0, 0.0, 0.0);
        assert_eq!((h, s, v), (0.0, 1.0, 1.0));
        let ((h, s, v), _) = rgb_pixel_to_hsv(0.5, 0.5, 0.5);
        assert_eq!((h, s, v), (0.0, 0.0, 0.5));
        let ((h, s, v), _) = rgb_pixel_to_hsv(0.0, 1.0, 0.0);
        assert!((h - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!((s, v), (1.0, 1.0));
    }

    #[test]
    fn hsv_clamps_and_counts() {
        let t = Tensor::from_vec(&[1, 1, 3], vec![1.5, -0.25, 0.5]).unwrap();
        let (hsv, clamps) = rgb_to_hsv(&t).unwrap();
        assert_eq!(clamps, 1);
        assert!(hsv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pseudo_depth_contracts() {
        let live = BlobGeometry::centered(0.32, true);
        let d = make_pseudo_depth(&live, (9, 9)).unwrap();
        // centered blob peaks at the center pixel
        let center = d.data()[4 * 9 + 4];
        assert!(d.data().iter().all(|&v| v <= center));
        assert!(center <= 1.0);
        assert!(d.data().iter().sum::<f64>() > 0.0);
        assert!(d.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // borders untouched by an in-frame blob
        for x in 0..9 {
            assert_eq!(d.data()[x], 0.0);
            assert_eq!(d.data()[8 * 9 + x], 0.0);
        }
        let spoof = BlobGeometry::centered(0.32, false);
        let z = make_pseudo_depth(&spoof, (8, 8)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(make_pseudo_depth(&live, (2, 2)).is_err());
    }

    fn three_domains(n: usize) -> Vec<Vec<Sample>> {
        (0..3)
            .map(|d| generate_domain_dataset(&spec(d), &small_gen(), n, d as u64).unwrap())
            .collect()
    }

    #[test]
    fn batch_balance_contract() {
        let batch = make_batch(three_domains(8), 4, 0).unwrap();
        assert_eq!(batch.len(), 12);
        batch.validate().unwrap();
        for d in 0..3 {
            let chunk = &batch.samples[d * 4..(d + 1) * 4];
            assert_eq!(chunk.iter().filter(|s| s.live).count(), 2);
        }
    }

    #[test]
    fn batch_determinism() {
        let a = make_batch(three_domains(8), 4, 7).unwrap();
        let b = make_batch(three_domains(8), 4, 7).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn epoch_has_no_repeats_within_domain() {
        let datasets = three_domains(12); // 6 live + 6 spoof per domain
        let mut sampler = BatchSampler::new(datasets, 4, 1).unwrap();
        // one epoch = 3 batches consuming 2 live + 2 spoof per domain each
        let mut seen: Vec<HashSet<*const Sample>> = vec![HashSet::new(); 3];
        for _ in 0..3 {
            let batch = sampler.next_batch();
            for (i, s) in batch.samples.iter().enumerate() {
                let d = batch.domain_of(i);
                assert!(
                    seen[d].insert(Arc::as_ptr(s)),
                    "sample repeated within an epoch"
                );
            }
        }
    }

    #[test]
    fn insufficient_samples_rejected() {
        let datasets = three_domains(4); // 2 live per domain
        assert!(BatchSampler::new(datasets, 6, 0).is_err());
    }
}
