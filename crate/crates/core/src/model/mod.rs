//! The seven trainable components and their shape-contracted forwards.
//!
//! Components: feature encoder (Enc), feature reweighter (FRM), the two
//! sample reweighters (SRM_real / SRM_fake), binary liveness classifier (BC),
//! depth estimator (Dep) and domain discriminator (D). Each owns a disjoint
//! named parameter set; every forward here is a pure function of
//! `(state, input)`.

mod checkpoint;
pub mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, strip_sets_from_checkpoint, LoadReport};
pub use forward::{bind_params, BoundParams, Pipeline};
pub use params::{ParamSet, SetName, ALL_SETS};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{DrdgError, Result};
use crate::graph::Graph;
use crate::optim::AdamSetState;
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// Input images always carry RGB plus HSV.
pub const IN_CHANNELS: usize = 6;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ArchConfig {
    /// Input image height/width.
    pub image_hw: (usize, usize),
    /// Output channels of each stride-2 encoder block; the last entry is the
    /// feature channel count C.
    pub enc_channels: Vec<usize>,
    /// Hidden width of the BC / D / SRM heads.
    pub head_hidden: usize,
    /// Hidden width of the FRM channel-logit net.
    pub frm_hidden: usize,
    /// Hidden width of the depth decoder.
    pub dep_hidden: usize,
    /// Depth target height/width.
    pub depth_hw: (usize, usize),
    /// Number of source domains M.
    pub num_domains: usize,
    /// Multiply channel weights by C so a uniform FRM is an identity
    /// (off by default: raw softmax rows).
    pub frm_rescale: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_hw: (32, 32),
            enc_channels: vec![16, 24, 32],
            head_hidden: 16,
            frm_hidden: 16,
            dep_hidden: 48,
            depth_hw: (16, 16),
            num_domains: 3,
            frm_rescale: false,
        }
    }
}

impl ArchConfig {
    /// A deliberately tiny model for gradient checks: 8×8 inputs, C=4.
    pub fn tiny() -> Self {
        ArchConfig {
            image_hw: (8, 8),
            enc_channels: vec![4, 4, 4],
            head_hidden: 4,
            frm_hidden: 4,
            dep_hidden: 6,
            depth_hw: (4, 4),
            num_domains: 3,
            frm_rescale: false,
        }
    }

    pub fn feature_channels(&self) -> usize {
        *self.enc_channels.last().expect("validated non-empty")
    }

    /// Spatial size after the stride-2 stack (each block halves, rounding up).
    pub fn feature_hw(&self) -> (usize, usize) {
        let (mut h, mut w) = self.image_hw;
        for _ in &self.enc_channels {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        (h, w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_channels.is_empty() {
            return Err(DrdgError::Config("enc_channels must be non-empty".into()));
        }
        if self.feature_channels() < 2 {
            return Err(DrdgError::Config("feature channels C must be ≥ 2".into()));
        }
        if self.num_domains < 2 {
            return Err(DrdgError::Config("num_domains must be ≥ 2".into()));
        }
        if self.image_hw.0 < 8 || self.image_hw.1 < 8 {
            return Err(DrdgError::Config("image size must be ≥ 8×8".into()));
        }
        if self.depth_hw.0 < 4 || self.depth_hw.1 < 4 {
            return Err(DrdgError::Config("depth size must be ≥ 4×4".into()));
        }
        let (fh, fw) = self.feature_hw();
        if fh < 1 || fw < 1 {
            return Err(DrdgError::Config("encoder collapses features to zero".into()));
        }
        if self.head_hidden < 1 || self.frm_hidden < 1 || self.dep_hidden < 1 {
            return Err(DrdgError::Config("hidden widths must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// All parameter sets plus per-set Adam state. Snapshots are plain clones and
/// restore bit-identical forwards.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub arch: ArchConfig,
    sets: BTreeMap<SetName, ParamSet>,
    opt: BTreeMap<SetName, AdamSetState>,
    /// Completed training steps.
    pub step: u64,
}

impl ModelState {
    /// Fresh model. Hidden layers get seeded He-normal weights; every head's
    /// final layer starts at zero, so an untrained model emits 0.5
    /// probabilities and uniform softmax rows.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut sets = BTreeMap::new();
        let mut opt = BTreeMap::new();
        for &name in ALL_SETS {
            let set = params::init_set(&arch, name, derive_seed(seed, name.as_str()));
            opt.insert(name, AdamSetState::for_set(&set));
            sets.insert(name, set);
        }
        Ok(ModelState {
            arch,
            sets,
            opt,
            step: 0,
        })
    }

    pub fn set(&self, name: SetName) -> &ParamSet {
        &self.sets[&name]
    }

    pub fn set_mut(&mut self, name: SetName) -> &mut ParamSet {
        self.sets.get_mut(&name).expect("all sets present")
    }

    pub fn opt(&self, name: SetName) -> &AdamSetState {
        &self.opt[&name]
    }

    pub fn params_and_opt_mut(&mut self, name: SetName) -> (&mut ParamSet, &mut AdamSetState) {
        let set = self.sets.get_mut(&name).expect("set");
        let opt = self.opt.get_mut(&name).expect("opt");
        (set, opt)
    }

    pub(crate) fn insert_loaded(
        &mut self,
        name: SetName,
        set: ParamSet,
        opt: AdamSetState,
    ) {
        self.sets.insert(name, set);
        self.opt.insert(name, opt);
    }

    /// Order-stable 64-bit digest of one parameter set's exact bits.
    pub fn param_hash(&self, name: SetName) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (arr_name, t) in self.sets[&name].arrays() {
            for b in arr_name.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            for v in t.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        }
        h
    }

    /// Digests for every set, for parameter-isolation checks.
    pub fn all_hashes(&self) -> BTreeMap<SetName, u64> {
        ALL_SETS.iter().map(|&s| (s, self.param_hash(s))).collect()
    }

    /// Sum of L2 norms per set, for diagnostics.
    pub fn param_norms(&self) -> BTreeMap<SetName, f64> {
        ALL_SETS
            .iter()
            .map(|&s| {
                let sq: f64 = self.sets[&s]
                    .arrays()
                    .map(|(_, t)| t.data().iter().map(|v| v * v).sum::<f64>())
                    .sum();
                (s, sq.sqrt())
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Typed forward outputs
// ---------------------------------------------------------------------------

/// N×H'×W'×C encoder features.
#[derive(Debug, Clone)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.ndim() != 4 {
            return Err(DrdgError::Contract(format!(
                "feature map must be 4-d, got {:?}",
                t.shape()
            )));
        }
        if t.shape()[3] < 2 {
            return Err(DrdgError::Contract("feature map needs C ≥ 2".into()));
        }
        if !t.is_finite() {
            return Err(DrdgError::Contract("feature map has non-finite values".into()));
        }
        Ok(FeatureMap(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[3]
    }
}

/// N×C per-sample channel weights; rows are softmax outputs.
#[derive(Debug, Clone)]
pub struct ChannelWeights(Tensor);

impl ChannelWeights {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.ndim() != 2 {
            return Err(DrdgError::Contract(format!(
                "channel weights must be 2-d, got {:?}",
                t.shape()
            )));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        for r in 0..n {
            let row = &t.data()[r * c..(r + 1) * c];
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(DrdgError::Contract(format!(
                    "channel weight row {} sums to {}, expected 1",
                    r, sum
                )));
            }
            if row.iter().any(|&v| v <= 0.0) {
                return Err(DrdgError::Contract(format!(
                    "channel weight row {} has a non-positive entry",
                    r
                )));
            }
        }
        Ok(ChannelWeights(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Per-sample scalar weights W.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights(Vec<f64>);

impl SampleWeights {
    /// The initialization state: every weight exactly 1.
    pub fn ones(n: usize) -> Self {
        SampleWeights(vec![1.0; n])
    }

    /// Weights produced by the sample reweighter; must lie strictly in (0,1).
    pub fn from_srm(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&w| !(w > 0.0 && w < 1.0)) {
            return Err(DrdgError::Contract(
                "SRM weights must lie strictly in (0,1)".into(),
            ));
        }
        Ok(SampleWeights(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn stats(&self) -> (f64, f64, f64) {
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &w in &self.0 {
            mn = mn.min(w);
            mx = mx.max(w);
            sum += w;
        }
        (mn, sum / self.0.len() as f64, mx)
    }
}

// ---------------------------------------------------------------------------
// Eager single-shot forwards (the library-level API; training uses the graph
// builders in `forward` directly)
// ---------------------------------------------------------------------------

pub fn encoder_forward(state: &ModelState, images: &Tensor) -> Result<FeatureMap> {
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, &[]);
    let x = g.constant(images.clone());
    let f = forward::encoder(&mut g, &bound, &state.arch, x)?;
    FeatureMap::new(g.value(f).clone())
}

pub fn frm_forward(state: &ModelState, features: &FeatureMap) -> Result<ChannelWeights> {
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, &[]);
    let f = g.constant(features.tensor().clone());
    let a = forward::frm_weights(&mut g, &bound, f)?;
    ChannelWeights::new(g.value(a).clone())
}

/// `F_FRM[n,h,w,c] = A[n,c] · F[n,h,w,c]`.
pub fn modulate(weights: &ChannelWeights, features: &FeatureMap) -> Result<FeatureMap> {
    modulate_scaled(weights, features, 1.0)
}

pub fn modulate_scaled(
    weights: &ChannelWeights,
    features: &FeatureMap,
    scale: f64,
) -> Result<FeatureMap> {
    let mut g = Graph::new();
    let f = g.constant(features.tensor().clone());
    let a = g.constant(weights.tensor().clone());
    let m = g.modulate(f, a, scale)?;
    FeatureMap::new(g.value(m).clone())
}

/// Routed per-sample weights: live samples through SRM_real, spoof through
/// SRM_fake. `labels[i]` is 1.0 for live, 0.0 for spoof.
pub fn srm_forward(
    state: &ModelState,
    f_frm: &FeatureMap,
    labels: &[f64],
) -> Result<SampleWeights> {
    if labels.len() != f_frm.batch() {
        return Err(DrdgError::Contract(format!(
            "label count {} vs batch {}",
            labels.len(),
            f_frm.batch()
        )));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(DrdgError::Contract("labels must be binary".into()));
    }
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, &[]);
    let f = g.constant(f_frm.tensor().clone());
    let w = forward::srm(&mut g, &bound, f, labels)?;
    SampleWeights::from_srm(g.value(w).data().to_vec())
}

/// N×M rows of domain probabilities.
pub fn discriminator_forward(state: &ModelState, f_frm: &FeatureMap) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, &[]);
    let f = g.constant(f_frm.tensor().clone());
    let d = forward::discriminator(&mut g, &bound, f)?;
    Ok(g.value(d).clone())
}

/// Per-sample live probability in (0,1).
pub fn classifier_forward(state: &ModelState, f_frm: &FeatureMap) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, &[]);
    let f = g.constant(f_frm.tensor().clone());
    let p = forward::classifier(&mut g, &bound, f)?;
    Ok(g.value(p).data().to_vec())
}

/// N×H_d×W_d depth maps in [0,1].
pub fn depth_forward(state: &ModelState, f_frm: &FeatureMap) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, &[]);
    let f = g.constant(f_frm.tensor().clone());
    let d = forward::depth(&mut g, &bound, &state.arch, f)?;
    Ok(g.value(d).clone())
}
