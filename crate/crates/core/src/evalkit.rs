//! Metrics (ROC, AUC, HTER), the reweighter-free inference path, and the
//! ablation harness.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DrdgError, Result};
use crate::graph::Graph;
use crate::model::forward as fwd;
use crate::model::{bind_params, ModelState};
use crate::rng::derive_seed_indexed;
use crate::syndata::Sample;
use crate::tensor::Tensor;
use crate::trainer::{prepare_data, train, ModuleToggles, RunConfig};

/// Liveness scores with ground-truth labels (`true` = live).
#[derive(Debug, Clone)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(DrdgError::Contract("score/label length mismatch".into()));
        }
        if scores.len() < 2 {
            return Err(DrdgError::Contract("need at least 2 scores".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(DrdgError::Contract("scores must be finite".into()));
        }
        let live = labels.iter().filter(|&&l| l).count();
        if live == 0 || live == labels.len() {
            return Err(DrdgError::Contract(
                "score set must contain both classes".into(),
            ));
        }
        Ok(ScoreSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    /// Fraction of spoof scored at or above the threshold.
    pub far: f64,
    /// Fraction of live scored below the threshold.
    pub frr: f64,
}

/// Sweep every distinct score plus ±∞ sentinels, ascending. FAR is
/// non-increasing along the returned list.
pub fn roc_curve(s: &ScoreSet) -> Result<Vec<RocPoint>> {
    let n_live = s.labels.iter().filter(|&&l| l).count();
    let n_spoof = s.len() - n_live;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));

    let mut thresholds = vec![f64::NEG_INFINITY];
    for &i in &order {
        if *thresholds.last().unwrap() != s.scores[i] {
            thresholds.push(s.scores[i]);
        }
    }
    thresholds.push(f64::INFINITY);

    let mut points = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let mut spoof_ge = 0usize;
        let mut live_lt = 0usize;
        for i in 0..s.len() {
            if s.labels[i] {
                if s.scores[i] < t {
                    live_lt += 1;
                }
            } else if s.scores[i] >= t {
                spoof_ge += 1;
            }
        }
        points.push(RocPoint {
            threshold: t,
            far: spoof_ge as f64 / n_spoof as f64,
            frr: live_lt as f64 / n_live as f64,
        });
    }
    Ok(points)
}

/// Probability that a random live sample outranks a random spoof sample,
/// ties counted half (Mann–Whitney).
pub fn auc(s: &ScoreSet) -> Result<f64> {
    let n = s.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));

    // midranks over tie groups (1-based ranks)
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && s.scores[order[j + 1]] == s.scores[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = mid;
        }
        i = j + 1;
    }
    let n_live = s.labels.iter().filter(|&&l| l).count() as f64;
    let n_spoof = n as f64 - n_live;
    let rank_sum: f64 = (0..n).filter(|&i| s.labels[i]).map(|i| ranks[i]).sum();
    let u = rank_sum - n_live * (n_live + 1.0) / 2.0;
    Ok(u / (n_live * n_spoof))
}

/// Trapezoidal area under (FAR, 1−FRR); the independent cross-check route
/// for [`auc`].
pub fn roc_auc_trapezoid(points: &[RocPoint]) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = (w[0].far, 1.0 - w[0].frr);
        let (x1, y1) = (w[1].far, 1.0 - w[1].frr);
        area += (x0 - x1) * (y0 + y1) / 2.0;
    }
    area
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    /// Threshold minimizing |FAR−FRR| on the evaluated set
    /// (lowest such threshold on ties).
    Eer,
    /// Caller-chosen operating point, e.g. from a held-out dev split.
    Fixed(f64),
}

/// `(FAR + FRR) / 2` at the policy's threshold.
pub fn hter(s: &ScoreSet, policy: &ThresholdPolicy) -> Result<f64> {
    match policy {
        ThresholdPolicy::Eer => {
            let points = roc_curve(s)?;
            let mut best = &points[0];
            for p in &points[1..] {
                if (p.far - p.frr).abs() < (best.far - best.frr).abs() {
                    best = p;
                }
            }
            Ok((best.far + best.frr) / 2.0)
        }
        ThresholdPolicy::Fixed(t) => {
            let n_live = s.labels.iter().filter(|&&l| l).count();
            let n_spoof = s.len() - n_live;
            let mut spoof_ge = 0usize;
            let mut live_lt = 0usize;
            for i in 0..s.len() {
                if s.labels[i] {
                    if s.scores[i] < *t {
                        live_lt += 1;
                    }
                } else if s.scores[i] >= *t {
                    spoof_ge += 1;
                }
            }
            Ok((spoof_ge as f64 / n_spoof as f64 + live_lt as f64 / n_live as f64) / 2.0)
        }
    }
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Liveness probability of one H×W×6 image: encoder → feature reweighter →
/// classifier. The sample reweighters and the domain discriminator are never
/// evaluated. `frm_enabled` must match how the model was trained.
pub fn infer(state: &ModelState, image: &Tensor, frm_enabled: bool) -> Result<f64> {
    let scores = infer_batch(state, std::slice::from_ref(image), frm_enabled)?;
    Ok(scores[0])
}

/// Batched inference over H×W×6 images.
pub fn infer_batch(
    state: &ModelState,
    images: &[Tensor],
    frm_enabled: bool,
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(DrdgError::Contract("no images to score".into()));
    }
    let shape = images[0].shape().to_vec();
    let mut stacked = Tensor::zeros(&[images.len(), shape[0], shape[1], shape[2]]);
    let len: usize = shape.iter().product();
    for (i, img) in images.iter().enumerate() {
        if img.shape() != shape.as_slice() {
            return Err(DrdgError::Contract("ragged image shapes".into()));
        }
        stacked.data_mut()[i * len..(i + 1) * len].copy_from_slice(img.data());
    }
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, &[]);
    let x = g.constant(stacked);
    let pipe = fwd::pipeline(&mut g, &bound, &state.arch, x, frm_enabled)?;
    let p = fwd::classifier(&mut g, &bound, pipe.f_frm)?;
    Ok(g.value(p).data().to_vec())
}

/// Score a labeled sample list into a `ScoreSet`.
pub fn score_samples(
    state: &ModelState,
    samples: &[Sample],
    frm_enabled: bool,
) -> Result<ScoreSet> {
    let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
    let scores = infer_batch(state, &images, frm_enabled)?;
    let labels = samples.iter().map(|s| s.live).collect();
    ScoreSet::new(scores, labels)
}

pub fn write_scores_csv(s: &ScoreSet, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| DrdgError::io(dir, e))?;
    }
    let mut out = String::from("score,label\n");
    for i in 0..s.len() {
        out.push_str(&format!(
            "{},{}\n",
            s.scores[i],
            if s.labels[i] { "live" } else { "spoof" }
        ));
    }
    fs::write(path, out).map_err(|e| DrdgError::io(path, e))
}

// ---------------------------------------------------------------------------
// Ablation harness
// ---------------------------------------------------------------------------

/// The six harness configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    Baseline,
    BaselineFrm,
    BaselineFrmReverse,
    BaselineSrm,
    BaselineSrmReverse,
    Drdg,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::Baseline,
        AblationVariant::BaselineFrm,
        AblationVariant::BaselineFrmReverse,
        AblationVariant::BaselineSrm,
        AblationVariant::BaselineSrmReverse,
        AblationVariant::Drdg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Baseline => "Baseline",
            AblationVariant::BaselineFrm => "Baseline_FRM",
            AblationVariant::BaselineFrmReverse => "Baseline_FRM_reverse",
            AblationVariant::BaselineSrm => "Baseline_SRM",
            AblationVariant::BaselineSrmReverse => "Baseline_SRM_reverse",
            AblationVariant::Drdg => "DRDG",
        }
    }

    pub fn parse(s: &str) -> Option<AblationVariant> {
        Self::ALL.iter().copied().find(|v| v.name() == s)
    }

    pub fn toggles(&self) -> ModuleToggles {
        match self {
            AblationVariant::Baseline => ModuleToggles {
                srm: false,
                frm: false,
                srm_reverse: false,
                frm_reverse: false,
            },
            AblationVariant::BaselineFrm => ModuleToggles {
                srm: false,
                frm: true,
                srm_reverse: false,
                frm_reverse: false,
            },
            AblationVariant::BaselineFrmReverse => ModuleToggles {
                srm: false,
                frm: true,
                srm_reverse: false,
                frm_reverse: true,
            },
            AblationVariant::BaselineSrm => ModuleToggles {
                srm: true,
                frm: false,
                srm_reverse: false,
                frm_reverse: false,
            },
            AblationVariant::BaselineSrmReverse => ModuleToggles {
                srm: true,
                frm: false,
                srm_reverse: true,
                frm_reverse: false,
            },
            AblationVariant::Drdg => ModuleToggles::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    /// Median HTER over seeds, percent.
    pub hter: f64,
    /// Median AUC over seeds, percent.
    pub auc: f64,
    pub hter_values: Vec<f64>,
    pub auc_values: Vec<f64>,
    /// max − min over seeds, percent.
    pub hter_spread: f64,
    pub auc_spread: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Train and evaluate one variant on one seed; returns (HTER%, AUC%) on the
/// held-out domain.
pub fn run_variant_once(
    variant: AblationVariant,
    base: &RunConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut cfg = base.clone();
    cfg.train.seed = seed;
    cfg.train.toggles = variant.toggles();
    if cfg.data.holdout_spec.is_none() {
        return Err(DrdgError::Config(
            "ablation needs a held-out domain spec".into(),
        ));
    }
    let data = prepare_data(&cfg)?;
    let (state, _log) = train(&cfg, &data, None)?;
    let holdout = data.holdout.as_ref().expect("validated above");
    let scores = score_samples(&state, holdout, cfg.train.toggles.frm)?;
    let h = hter(&scores, &ThresholdPolicy::Eer)? * 100.0;
    let a = auc(&scores)? * 100.0;
    Ok((h, a))
}

/// Aggregate one variant over the derived seed list (median + spread).
pub fn run_ablation(
    variant: AblationVariant,
    base: &RunConfig,
    n_seeds: usize,
) -> Result<AblationRow> {
    let seeds = ablation_seeds(base, n_seeds);
    let results: Vec<(f64, f64)> = seeds
        .iter()
        .map(|&s| run_variant_once(variant, base, s))
        .collect::<Result<_>>()?;
    Ok(row_from(variant, &results))
}

fn row_from(variant: AblationVariant, results: &[(f64, f64)]) -> AblationRow {
    let hter_values: Vec<f64> = results.iter().map(|r| r.0).collect();
    let auc_values: Vec<f64> = results.iter().map(|r| r.1).collect();
    let spread = |v: &[f64]| {
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    AblationRow {
        method: variant.name().to_string(),
        hter: median(&hter_values),
        auc: median(&auc_values),
        hter_spread: spread(&hter_values),
        auc_spread: spread(&auc_values),
        hter_values,
        auc_values,
    }
}

/// Seeds shared by every variant, so per-seed comparisons are paired.
pub fn ablation_seeds(base: &RunConfig, n_seeds: usize) -> Vec<u64> {
    (0..n_seeds)
        .map(|i| derive_seed_indexed(base.train.seed, "ablation-run", i as u64))
        .collect()
}

/// Run each requested variant across the seed list; variant/seed pairs run
/// in parallel, each with fully isolated state.
pub fn run_ablation_table(
    base: &RunConfig,
    variants: &[AblationVariant],
    n_seeds: usize,
) -> Result<Vec<AblationRow>> {
    let seeds = ablation_seeds(base, n_seeds);
    let jobs: Vec<(AblationVariant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let outcomes: Vec<(AblationVariant, (f64, f64))> = jobs
        .par_iter()
        .map(|&(v, s)| run_variant_once(v, base, s).map(|r| (v, r)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let results: Vec<(f64, f64)> = outcomes
            .iter()
            .filter(|(ov, _)| *ov == v)
            .map(|(_, r)| *r)
            .collect();
        rows.push(row_from(v, &results));
    }
    Ok(rows)
}

/// CSV mirroring the ablation table layout: `Method,HTER,AUC`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("Method,HTER,AUC\n");
    for r in rows {
        out.push_str(&format!("{},{:.2},{:.2}\n", r.method, r.hter, r.auc));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(scores: &[f64], labels: &[bool]) -> ScoreSet {
        ScoreSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    /// live {0.9, 0.8}, spoof {0.85, 0.1}
    fn hand_set() -> ScoreSet {
        set(&[0.9, 0.8, 0.85, 0.1], &[true, true, false, false])
    }

    #[test]
    fn roc_hand_enumerated() {
        let points = roc_curve(&hand_set()).unwrap();
        let at = |t: f64| points.iter().find(|p| p.threshold == t).unwrap();
        let p = at(0.85);
        assert_eq!((p.far, p.frr), (0.5, 0.5));
        let ninf = at(f64::NEG_INFINITY);
        assert_eq!((ninf.far, ninf.frr), (1.0, 0.0));
        let pinf = at(f64::INFINITY);
        assert_eq!((pinf.far, pinf.frr), (0.0, 1.0));
        for w in points.windows(2) {
            assert!(w[1].far <= w[0].far, "FAR must be non-increasing");
        }
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(ScoreSet::new(vec![0.1, 0.2], vec![true, true]).is_err());
    }

    #[test]
    fn auc_reference_values() {
        let perfect = set(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        assert_eq!(auc(&perfect).unwrap(), 1.0);
        let reversed = set(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]);
        assert_eq!(auc(&reversed).unwrap(), 0.0);
        let ties = set(&[0.5, 0.5, 0.5, 0.5], &[true, true, false, false]);
        assert_eq!(auc(&ties).unwrap(), 0.5);
        assert!((auc(&hand_set()).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_equals_trapezoid() {
        let s = hand_set();
        let t = roc_auc_trapezoid(&roc_curve(&s).unwrap());
        assert!((auc(&s).unwrap() - t).abs() < 1e-12);
    }

    #[test]
    fn hter_reference_values() {
        let perfect = set(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        assert_eq!(hter(&perfect, &ThresholdPolicy::Eer).unwrap(), 0.0);
        let ties = set(&[0.4, 0.4, 0.4, 0.4], &[true, true, false, false]);
        assert_eq!(hter(&ties, &ThresholdPolicy::Eer).unwrap(), 0.5);
        assert_eq!(hter(&hand_set(), &ThresholdPolicy::Eer).unwrap(), 0.5);
    }

    #[test]
    fn hter_fixed_policy() {
        let s = hand_set();
        // threshold 0.85: FAR 0.5, FRR 0.5
        assert_eq!(hter(&s, &ThresholdPolicy::Fixed(0.85)).unwrap(), 0.5);
        // threshold 0.5: all live pass (FRR 0), spoof 0.85 passes (FAR 0.5)
        assert_eq!(hter(&s, &ThresholdPolicy::Fixed(0.5)).unwrap(), 0.25);
    }

    #[test]
    fn monotone_transform_invariance() {
        let s = set(
            &[0.9, 0.8, 0.85, 0.1, 0.3, 0.7],
            &[true, true, false, false, false, true],
        );
        let transformed = ScoreSet::new(
            s.scores().iter().map(|v| (v * 3.0).exp()).collect(),
            s.labels().to_vec(),
        )
        .unwrap();
        assert!((auc(&s).unwrap() - auc(&transformed).unwrap()).abs() < 1e-12);
        let h0 = hter(&s, &ThresholdPolicy::Eer).unwrap();
        let h1 = hter(&transformed, &ThresholdPolicy::Eer).unwrap();
        assert_eq!(h0, h1);
    }

    #[test]
    fn fresh_model_scores_exactly_half() {
        use crate::model::{ArchConfig, ModelState};
        let state = ModelState::new(ArchConfig::tiny(), 12).unwrap();
        let mut image = Tensor::zeros(&[8, 8, 6]);
        for (i, v) in image.data_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 101) as f64 / 101.0;
        }
        let p = infer(&state, &image, true).unwrap();
        assert_eq!(p, 0.5);
        // duplicated image → identical score through the batched path
        let scores = infer_batch(&state, &[image.clone(), image], true).unwrap();
        assert_eq!(scores[0], scores[1]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in AblationVariant::ALL {
            assert_eq!(AblationVariant::parse(v.name()), Some(v));
        }
        assert_eq!(AblationVariant::parse("nope"), None);
        let b = AblationVariant::Baseline.toggles();
        assert!(!b.srm && !b.frm);
        let d = AblationVariant::Drdg.toggles();
        assert!(d.srm && d.frm && !d.srm_reverse && !d.frm_reverse);
    }
}
