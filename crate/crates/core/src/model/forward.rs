//! Graph builders for the model components.
//!
//! A training sub-step binds every parameter set into a fresh graph, marking
//! only the sets it will update as tracked; backward then prunes all other
//! branches automatically.

use std::collections::BTreeMap;

use crate::error::{DrdgError, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

use super::{ArchConfig, ModelState, SetName, ALL_SETS, IN_CHANNELS};

/// Node ids of every bound parameter array, aligned with `ParamSet` order.
pub struct BoundParams {
    ids: BTreeMap<SetName, Vec<NodeId>>,
    arch: ArchConfig,
}

impl BoundParams {
    pub fn ids(&self, set: SetName) -> &[NodeId] {
        &self.ids[&set]
    }

    fn id(&self, set: SetName, idx: usize) -> NodeId {
        self.ids[&set][idx]
    }
}

/// Bind all parameter sets into `g`. Sets listed in `tracked` become
/// gradient-tracked leaves; everything else is constant.
pub fn bind_params(g: &mut Graph, state: &ModelState, tracked: &[SetName]) -> BoundParams {
    let mut ids = BTreeMap::new();
    for &name in ALL_SETS {
        let track = tracked.contains(&name);
        let node_ids: Vec<NodeId> = state
            .set(name)
            .arrays()
            .map(|(_, t)| g.leaf(t.clone(), track))
            .collect();
        ids.insert(name, node_ids);
    }
    BoundParams {
        ids,
        arch: state.arch.clone(),
    }
}

/// Encoder: stride-2 conv blocks with relu, N×H×W×6 → N×H'×W'×C.
pub fn encoder(
    g: &mut Graph,
    bound: &BoundParams,
    arch: &ArchConfig,
    images: NodeId,
) -> Result<NodeId> {
    let shape = g.value(images).shape().to_vec();
    if shape.len() != 4
        || shape[1] != arch.image_hw.0
        || shape[2] != arch.image_hw.1
        || shape[3] != IN_CHANNELS
    {
        return Err(DrdgError::Contract(format!(
            "encoder input {:?} does not match configured {}×{}×{}",
            shape, arch.image_hw.0, arch.image_hw.1, IN_CHANNELS
        )));
    }
    let mut x = images;
    for block in 0..arch.enc_channels.len() {
        let w = bound.id(SetName::Enc, 2 * block);
        let b = bound.id(SetName::Enc, 2 * block + 1);
        let c = g.conv2d(x, w, b, 2, 1)?;
        x = g.relu(c);
    }
    Ok(x)
}

fn two_layer(
    g: &mut Graph,
    bound: &BoundParams,
    set: SetName,
    input: NodeId,
) -> Result<NodeId> {
    let h = g.dense(input, bound.id(set, 0), bound.id(set, 1))?;
    let h = g.relu(h);
    g.dense(h, bound.id(set, 2), bound.id(set, 3))
}

/// Channel weights A: pooled features → 2-layer net → softmax rows (N×C).
/// Pooled inputs are L2-normalized per sample so head dynamics do not depend
/// on the raw feature scale (which shrinks by ~1/C once modulation is live).
pub fn frm_weights(g: &mut Graph, bound: &BoundParams, features: NodeId) -> Result<NodeId> {
    let pooled = g.global_avg_pool(features)?;
    let unit = g.normalize_rows(pooled)?;
    let logits = two_layer(g, bound, SetName::Frm, unit)?;
    g.softmax_rows(logits)
}

/// Encoder features, optional FRM weights, and the modulated features.
pub struct Pipeline {
    pub features: NodeId,
    pub channel_weights: Option<NodeId>,
    pub f_frm: NodeId,
}

/// Enc → (FRM → modulate) with the FRM branch optional; when disabled the
/// encoder output passes through untouched.
pub fn pipeline(
    g: &mut Graph,
    bound: &BoundParams,
    arch: &ArchConfig,
    images: NodeId,
    frm_enabled: bool,
) -> Result<Pipeline> {
    let features = encoder(g, bound, arch, images)?;
    if !frm_enabled {
        return Ok(Pipeline {
            features,
            channel_weights: None,
            f_frm: features,
        });
    }
    let a = frm_weights(g, bound, features)?;
    let scale = if arch.frm_rescale {
        arch.feature_channels() as f64
    } else {
        1.0
    };
    let f_frm = g.modulate(features, a, scale)?;
    Ok(Pipeline {
        features,
        channel_weights: Some(a),
        f_frm,
    })
}

fn scalar_head(
    g: &mut Graph,
    bound: &BoundParams,
    set: SetName,
    f_frm: NodeId,
) -> Result<NodeId> {
    let pooled = g.global_avg_pool(f_frm)?;
    let unit = g.normalize_rows(pooled)?;
    let logit = two_layer(g, bound, set, unit)?;
    let n = g.value(logit).shape()[0];
    let s = g.sigmoid(logit);
    g.reshape(s, &[n])
}

fn scalar_head_spatial(
    g: &mut Graph,
    bound: &BoundParams,
    set: SetName,
    f_frm: NodeId,
) -> Result<NodeId> {
    let flat = g.flatten(f_frm)?;
    let logit = two_layer(g, bound, set, flat)?;
    let n = g.value(logit).shape()[0];
    let s = g.sigmoid(logit);
    g.reshape(s, &[n])
}

/// Routed sample weights W (length N, each in (0,1)):
/// live → SRM_real, spoof → SRM_fake.
pub fn srm(
    g: &mut Graph,
    bound: &BoundParams,
    f_frm: NodeId,
    labels: &[f64],
) -> Result<NodeId> {
    let n = g.value(f_frm).shape()[0];
    if labels.len() != n {
        return Err(DrdgError::Contract(format!(
            "srm got {} labels for batch {}",
            labels.len(),
            n
        )));
    }
    let w_real = scalar_head(g, bound, SetName::SrmReal, f_frm)?;
    let w_fake = scalar_head(g, bound, SetName::SrmFake, f_frm)?;
    let live_mask = g.constant(Tensor::from_vec(&[n], labels.to_vec())?);
    let spoof_mask = g.constant(Tensor::from_vec(
        &[n],
        labels.iter().map(|&y| 1.0 - y).collect(),
    )?);
    let wr = g.mul_elem(w_real, live_mask)?;
    let wf = g.mul_elem(w_fake, spoof_mask)?;
    g.add(wr, wf)
}

/// Liveness probability per sample (length N). Unlike the reweighting heads
/// the classifier sees the full spatial map.
pub fn classifier(g: &mut Graph, bound: &BoundParams, f_frm: NodeId) -> Result<NodeId> {
    scalar_head_spatial(g, bound, SetName::Bc, f_frm)
}

/// Domain probabilities, N×M softmax rows.
pub fn discriminator(g: &mut Graph, bound: &BoundParams, f_frm: NodeId) -> Result<NodeId> {
    let pooled = g.global_avg_pool(f_frm)?;
    let unit = g.normalize_rows(pooled)?;
    let logits = two_layer(g, bound, SetName::Disc, unit)?;
    g.softmax_rows(logits)
}

/// Depth maps, N×H_d×W_d in [0,1].
pub fn depth(
    g: &mut Graph,
    bound: &BoundParams,
    arch: &ArchConfig,
    f_frm: NodeId,
) -> Result<NodeId> {
    let flat = g.flatten(f_frm)?;
    let out = two_layer(g, bound, SetName::Dep, flat)?;
    let n = g.value(out).shape()[0];
    let s = g.sigmoid(out);
    g.reshape(s, &[n, arch.depth_hw.0, arch.depth_hw.1])
}

/// Map a `Grads` result back onto per-set tensors (zeros where unreached).
pub fn collect_set_grads(
    grads: &crate::graph::Grads,
    bound: &BoundParams,
    state: &ModelState,
    set: SetName,
) -> Vec<Tensor> {
    bound
        .ids(set)
        .iter()
        .zip(state.set(set).arrays())
        .map(|(&id, (_, t))| grads.get_or_zeros(id, t.shape()))
        .collect()
}

impl BoundParams {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }
}
