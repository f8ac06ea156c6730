//! The six scalar training losses, with explicit per-sample terms.
//!
//! Two routes are provided for every loss: a plain scalar function over
//! forward outputs (used for logging and available as the library-level API)
//! and a graph builder that constructs the same quantity inside an autodiff
//! tape for training. Sign conventions:
//!
//! - `dis ≥ 0`: mean NLL of the true domain under the discriminator.
//! - `srm ≤ 0`: mean of `W_i · log p_true,i` — no leading minus; minimizing
//!   it pushes sample weights up fastest where the discriminator is least
//!   sure.
//! - `frm ≤ 0`: mean of `(1−W_i) · log p_true,i` on modulated features.
//! - `wdep ≥ 0`: `W_i` times the summed squared pixel residual per sample.
//! - `wcls ≥ 0`: weighted two-class cross-entropy.
//! - `enc = wcls + λ1·wdep − λ2·mean(W_i · nll_i)`: the subtracted term makes
//!   the encoder raise discriminator NLL on high-weight samples.

use crate::error::{DrdgError, Result};
use crate::graph::{Graph, NodeId, LOG_EPS};
use crate::model::forward as fwd;
use crate::model::{bind_params, ArchConfig, ModelState, SetName};
use crate::tensor::Tensor;

/// One computed loss: scalar, pre-averaging per-sample terms, and how many
/// log arguments were clamped at `LOG_EPS`.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub value: f64,
    pub per_sample: Vec<f64>,
    pub clamps: u64,
}

impl LossTerm {
    fn from_per_sample(per_sample: Vec<f64>, clamps: u64) -> Self {
        let value = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        LossTerm {
            value,
            per_sample,
            clamps,
        }
    }
}

/// All six losses evaluated on one batch.
#[derive(Debug, Clone)]
pub struct LossBundle {
    pub dis: LossTerm,
    pub srm: LossTerm,
    pub frm: LossTerm,
    pub wdep: LossTerm,
    pub wcls: LossTerm,
    pub enc: LossTerm,
}

/// Model-ready tensors for one batch.
#[derive(Debug, Clone)]
pub struct BatchData {
    /// N×H×W×6.
    pub images: Tensor,
    /// 1.0 live / 0.0 spoof, length N.
    pub labels: Vec<f64>,
    /// Domain index per sample, length N.
    pub domains: Vec<usize>,
    /// N×M one-hot rows.
    pub domain_onehot: Tensor,
    /// N×H_d×W_d.
    pub depth_targets: Tensor,
}

impl BatchData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn clamped_ln(p: f64, clamps: &mut u64) -> f64 {
    if p < LOG_EPS {
        *clamps += 1;
        LOG_EPS.ln()
    } else {
        p.ln()
    }
}

fn check_prob_rows(probs: &Tensor, domains: &[usize]) -> Result<usize> {
    if probs.ndim() != 2 {
        return Err(DrdgError::Contract(format!(
            "domain probabilities must be N×M, got {:?}",
            probs.shape()
        )));
    }
    let (n, m) = (probs.shape()[0], probs.shape()[1]);
    if domains.len() != n {
        return Err(DrdgError::Contract(format!(
            "{} domain labels for batch {}",
            domains.len(),
            n
        )));
    }
    if domains.iter().any(|&d| d >= m) {
        return Err(DrdgError::Contract("domain index out of range".into()));
    }
    Ok(n)
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(DrdgError::Contract(format!(
            "{} sample weights for batch {}",
            w.len(),
            n
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pure scalar route
// ---------------------------------------------------------------------------

/// Mean true-domain NLL: `1/N Σ −log p_true,i`.
pub fn loss_dis(probs: &Tensor, domains: &[usize]) -> Result<LossTerm> {
    let n = check_prob_rows(probs, domains)?;
    let m = probs.shape()[1];
    let mut clamps = 0;
    let per: Vec<f64> = (0..n)
        .map(|i| -clamped_ln(probs.data()[i * m + domains[i]], &mut clamps))
        .collect();
    Ok(LossTerm::from_per_sample(per, clamps))
}

/// `1/N Σ W_i log p_true,i` (≤ 0). Minimizing raises W on samples the
/// discriminator handles worst.
pub fn loss_srm(w: &[f64], probs: &Tensor, domains: &[usize]) -> Result<LossTerm> {
    let n = check_prob_rows(probs, domains)?;
    check_weights(w, n)?;
    let m = probs.shape()[1];
    let mut clamps = 0;
    let per: Vec<f64> = (0..n)
        .map(|i| w[i] * clamped_ln(probs.data()[i * m + domains[i]], &mut clamps))
        .collect();
    Ok(LossTerm::from_per_sample(per, clamps))
}

/// `1/N Σ (1−W_i) log p_true,i` (≤ 0) on modulated-feature probabilities.
pub fn loss_frm(w: &[f64], probs_mod: &Tensor, domains: &[usize]) -> Result<LossTerm> {
    let n = check_prob_rows(probs_mod, domains)?;
    check_weights(w, n)?;
    let m = probs_mod.shape()[1];
    let mut clamps = 0;
    let per: Vec<f64> = (0..n)
        .map(|i| (1.0 - w[i]) * clamped_ln(probs_mod.data()[i * m + domains[i]], &mut clamps))
        .collect();
    Ok(LossTerm::from_per_sample(per, clamps))
}

/// `1/N Σ W_i ‖pred_i − target_i‖²₂` — squared residual summed over pixels.
pub fn loss_wdep(w: &[f64], pred: &Tensor, target: &Tensor) -> Result<LossTerm> {
    if pred.shape() != target.shape() || pred.ndim() != 3 {
        return Err(DrdgError::Contract(format!(
            "depth shapes {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.shape()[0];
    check_weights(w, n)?;
    let px = pred.numel() / n;
    let per: Vec<f64> = (0..n)
        .map(|i| {
            let sum: f64 = (0..px)
                .map(|j| {
                    let r = pred.data()[i * px + j] - target.data()[i * px + j];
                    r * r
                })
                .sum();
            w[i] * sum
        })
        .collect();
    Ok(LossTerm::from_per_sample(per, 0))
}

/// Weighted two-class cross-entropy:
/// `1/N Σ −W_i [y_i log p_i + (1−y_i) log(1−p_i)]`.
pub fn loss_wcls(w: &[f64], probs: &[f64], labels: &[f64]) -> Result<LossTerm> {
    let n = probs.len();
    check_weights(w, n)?;
    if labels.len() != n {
        return Err(DrdgError::Contract("label/probability length mismatch".into()));
    }
    let mut clamps = 0;
    let per: Vec<f64> = (0..n)
        .map(|i| {
            let lp = clamped_ln(probs[i], &mut clamps);
            let lq = clamped_ln(1.0 - probs[i], &mut clamps);
            -w[i] * (labels[i] * lp + (1.0 - labels[i]) * lq)
        })
        .collect();
    Ok(LossTerm::from_per_sample(per, clamps))
}

/// `wcls + λ1·wdep − λ2·mean(W_i · dis_i)` with per-sample structure kept.
pub fn loss_enc(
    wcls: &LossTerm,
    wdep: &LossTerm,
    w: &[f64],
    dis_per_sample: &[f64],
    lambda1: f64,
    lambda2: f64,
) -> Result<LossTerm> {
    let n = dis_per_sample.len();
    check_weights(w, n)?;
    if wcls.per_sample.len() != n || wdep.per_sample.len() != n {
        return Err(DrdgError::Contract("loss term length mismatch".into()));
    }
    let per: Vec<f64> = (0..n)
        .map(|i| {
            wcls.per_sample[i] + lambda1 * wdep.per_sample[i]
                - lambda2 * w[i] * dis_per_sample[i]
        })
        .collect();
    Ok(LossTerm::from_per_sample(per, 0))
}

// ---------------------------------------------------------------------------
// Graph route
// ---------------------------------------------------------------------------

/// A loss assembled in a graph, with the forward intermediates needed for
/// logging and contract checks.
pub struct BuiltLoss {
    pub loss: NodeId,
    pub per_sample: NodeId,
    pub pipeline: fwd::Pipeline,
    /// Live sample weights (SRM output), present only for the SRM loss.
    pub live_w: Option<NodeId>,
}

/// Per-sample `log p_true` under the discriminator, given one-hot rows.
fn true_domain_logp(
    g: &mut Graph,
    d_out: NodeId,
    onehot: &Tensor,
) -> Result<NodeId> {
    let oh = g.constant(onehot.clone());
    let picked = g.mul_elem(d_out, oh)?;
    let p = g.sum_per_sample(picked);
    Ok(g.log_clamped(p))
}

fn const_vec(g: &mut Graph, values: &[f64]) -> NodeId {
    g.constant(Tensor::from_vec(&[values.len()], values.to_vec()).expect("1-d"))
}

/// L_Dis on a full fresh forward.
pub fn build_dis_loss(
    g: &mut Graph,
    bound: &fwd::BoundParams,
    arch: &ArchConfig,
    batch: &BatchData,
    frm_enabled: bool,
) -> Result<BuiltLoss> {
    let images = g.constant(batch.images.clone());
    let pipe = fwd::pipeline(g, bound, arch, images, frm_enabled)?;
    let d_out = fwd::discriminator(g, bound, pipe.f_frm)?;
    let logp = true_domain_logp(g, d_out, &batch.domain_onehot)?;
    let per = g.scale(logp, -1.0);
    let loss = g.mean(per);
    Ok(BuiltLoss {
        loss,
        per_sample: per,
        pipeline: pipe,
        live_w: None,
    })
}

/// L_SRM with live sample weights.
pub fn build_srm_loss(
    g: &mut Graph,
    bound: &fwd::BoundParams,
    arch: &ArchConfig,
    batch: &BatchData,
    frm_enabled: bool,
) -> Result<BuiltLoss> {
    let images = g.constant(batch.images.clone());
    let pipe = fwd::pipeline(g, bound, arch, images, frm_enabled)?;
    let w = fwd::srm(g, bound, pipe.f_frm, &batch.labels)?;
    let d_out = fwd::discriminator(g, bound, pipe.f_frm)?;
    let logp = true_domain_logp(g, d_out, &batch.domain_onehot)?;
    let per = g.mul_elem(w, logp)?;
    let loss = g.mean(per);
    Ok(BuiltLoss {
        loss,
        per_sample: per,
        pipeline: pipe,
        live_w: Some(w),
    })
}

/// L_FRM with carried (detached) weights. `reverse` flips to the ablation
/// objective `−1/N Σ W_i log p_true,i`, which drives domains apart instead.
pub fn build_frm_loss(
    g: &mut Graph,
    bound: &fwd::BoundParams,
    arch: &ArchConfig,
    batch: &BatchData,
    w: &[f64],
    reverse: bool,
) -> Result<BuiltLoss> {
    check_weights(w, batch.len())?;
    let images = g.constant(batch.images.clone());
    let pipe = fwd::pipeline(g, bound, arch, images, true)?;
    let d_out = fwd::discriminator(g, bound, pipe.f_frm)?;
    let logp = true_domain_logp(g, d_out, &batch.domain_onehot)?;
    let coeff: Vec<f64> = if reverse {
        w.to_vec()
    } else {
        w.iter().map(|&wi| 1.0 - wi).collect()
    };
    let cw = const_vec(g, &coeff);
    let weighted = g.mul_elem(cw, logp)?;
    let per = if reverse {
        g.scale(weighted, -1.0)
    } else {
        weighted
    };
    let loss = g.mean(per);
    Ok(BuiltLoss {
        loss,
        per_sample: per,
        pipeline: pipe,
        live_w: None,
    })
}

/// L_WDep with detached weights.
pub fn build_wdep_loss(
    g: &mut Graph,
    bound: &fwd::BoundParams,
    arch: &ArchConfig,
    batch: &BatchData,
    w: &[f64],
    frm_enabled: bool,
) -> Result<BuiltLoss> {
    check_weights(w, batch.len())?;
    let images = g.constant(batch.images.clone());
    let pipe = fwd::pipeline(g, bound, arch, images, frm_enabled)?;
    let pred = fwd::depth(g, bound, arch, pipe.f_frm)?;
    let target = g.constant(batch.depth_targets.clone());
    let resid = g.sub(pred, target)?;
    let sq = g.square(resid);
    let per_px = g.sum_per_sample(sq);
    let wc = const_vec(g, w);
    let per = g.mul_elem(wc, per_px)?;
    let loss = g.mean(per);
    Ok(BuiltLoss {
        loss,
        per_sample: per,
        pipeline: pipe,
        live_w: None,
    })
}

/// L_WCls with detached weights.
pub fn build_wcls_loss(
    g: &mut Graph,
    bound: &fwd::BoundParams,
    arch: &ArchConfig,
    batch: &BatchData,
    w: &[f64],
    frm_enabled: bool,
) -> Result<BuiltLoss> {
    check_weights(w, batch.len())?;
    let images = g.constant(batch.images.clone());
    let pipe = fwd::pipeline(g, bound, arch, images, frm_enabled)?;
    let p = fwd::classifier(g, bound, pipe.f_frm)?;
    let per = wcls_per_sample(g, p, w, &batch.labels)?;
    let loss = g.mean(per);
    Ok(BuiltLoss {
        loss,
        per_sample: per,
        pipeline: pipe,
        live_w: None,
    })
}

fn wcls_per_sample(
    g: &mut Graph,
    probs: NodeId,
    w: &[f64],
    labels: &[f64],
) -> Result<NodeId> {
    let logp = g.log_clamped(probs);
    let one_m = g.one_minus(probs);
    let logq = g.log_clamped(one_m);
    let y = const_vec(g, labels);
    let y_inv: Vec<f64> = labels.iter().map(|&v| 1.0 - v).collect();
    let yi = const_vec(g, &y_inv);
    let t1 = g.mul_elem(y, logp)?;
    let t2 = g.mul_elem(yi, logq)?;
    let s = g.add(t1, t2)?;
    let wc = const_vec(g, w);
    let ws = g.mul_elem(wc, s)?;
    Ok(g.scale(ws, -1.0))
}

/// L_Enc on one fresh forward: classifier, depth and discriminator heads all
/// evaluated, combined as `wcls + λ1·wdep − λ2·mean(W ⊙ nll)`.
pub fn build_enc_loss(
    g: &mut Graph,
    bound: &fwd::BoundParams,
    arch: &ArchConfig,
    batch: &BatchData,
    w: &[f64],
    lambda1: f64,
    lambda2: f64,
    frm_enabled: bool,
) -> Result<BuiltLoss> {
    check_weights(w, batch.len())?;
    let images = g.constant(batch.images.clone());
    let pipe = fwd::pipeline(g, bound, arch, images, frm_enabled)?;

    let p = fwd::classifier(g, bound, pipe.f_frm)?;
    let wcls_per = wcls_per_sample(g, p, w, &batch.labels)?;

    let pred = fwd::depth(g, bound, arch, pipe.f_frm)?;
    let target = g.constant(batch.depth_targets.clone());
    let resid = g.sub(pred, target)?;
    let sq = g.square(resid);
    let per_px = g.sum_per_sample(sq);
    let wc = const_vec(g, w);
    let wdep_per = g.mul_elem(wc, per_px)?;
    let wdep_scaled = g.scale(wdep_per, lambda1);

    let d_out = fwd::discriminator(g, bound, pipe.f_frm)?;
    let logp = true_domain_logp(g, d_out, &batch.domain_onehot)?;
    let nll = g.scale(logp, -1.0);
    let wc2 = const_vec(g, w);
    let wnll = g.mul_elem(wc2, nll)?;
    let adv = g.scale(wnll, -lambda2);

    let a = g.add(wcls_per, wdep_scaled)?;
    let per = g.add(a, adv)?;
    let loss = g.mean(per);
    Ok(BuiltLoss {
        loss,
        per_sample: per,
        pipeline: pipe,
        live_w: None,
    })
}

// ---------------------------------------------------------------------------
// Full-bundle evaluation (observability; one fresh forward)
// ---------------------------------------------------------------------------

/// Evaluate all six losses on a batch. `w_detached` feeds the weighted main
/// losses; `srm` uses the live reweighter output when SRM is enabled, else
/// the detached weights.
pub fn compute_bundle(
    state: &ModelState,
    batch: &BatchData,
    w_detached: &[f64],
    lambda1: f64,
    lambda2: f64,
    frm_enabled: bool,
    srm_enabled: bool,
) -> Result<LossBundle> {
    let arch = state.arch.clone();
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, &[]);
    let images = g.constant(batch.images.clone());
    let pipe = fwd::pipeline(&mut g, &bound, &arch, images, frm_enabled)?;
    let d_node = fwd::discriminator(&mut g, &bound, pipe.f_frm)?;
    let d_out = g.value(d_node).clone();
    let cls_node = fwd::classifier(&mut g, &bound, pipe.f_frm)?;
    let cls = g.value(cls_node).data().to_vec();
    let depth_node = fwd::depth(&mut g, &bound, &arch, pipe.f_frm)?;
    let depth_pred = g.value(depth_node).clone();
    let live_w: Vec<f64> = if srm_enabled {
        let w_node = fwd::srm(&mut g, &bound, pipe.f_frm, &batch.labels)?;
        g.value(w_node).data().to_vec()
    } else {
        w_detached.to_vec()
    };

    let dis = loss_dis(&d_out, &batch.domains)?;
    let srm = loss_srm(&live_w, &d_out, &batch.domains)?;
    let frm = loss_frm(w_detached, &d_out, &batch.domains)?;
    let wdep = loss_wdep(w_detached, &depth_pred, &batch.depth_targets)?;
    let wcls = loss_wcls(w_detached, &cls, &batch.labels)?;
    let enc = loss_enc(&wcls, &wdep, w_detached, &dis.per_sample, lambda1, lambda2)?;
    Ok(LossBundle {
        dis,
        srm,
        frm,
        wdep,
        wcls,
        enc,
    })
}

/// Fresh-forward live sample weights, detached (plain values).
pub fn compute_live_w(
    state: &ModelState,
    batch: &BatchData,
    frm_enabled: bool,
) -> Result<Vec<f64>> {
    let arch = state.arch.clone();
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, &[]);
    let images = g.constant(batch.images.clone());
    let pipe = fwd::pipeline(&mut g, &bound, &arch, images, frm_enabled)?;
    let w = fwd::srm(&mut g, &bound, pipe.f_frm, &batch.labels)?;
    Ok(g.value(w).data().to_vec())
}

/// Grad of each loss with respect to the requested sets, via one fresh graph.
pub struct LossEval {
    pub value: f64,
    pub per_sample: Vec<f64>,
    pub grads: Vec<(SetName, Vec<Tensor>)>,
    pub log_clamps: u64,
    /// Max |row sum − 1| over this forward's channel-weight rows, when the
    /// feature reweighter ran.
    pub a_row_sum_err: Option<f64>,
}

/// Which loss to build, with everything it needs.
pub enum LossSelect<'a> {
    Dis,
    Srm,
    Frm { w: &'a [f64], reverse: bool },
    WDep { w: &'a [f64] },
    WCls { w: &'a [f64] },
    Enc {
        w: &'a [f64],
        lambda1: f64,
        lambda2: f64,
    },
}

/// Build the selected loss on a fresh graph, tracking `tracked` sets, and
/// return value plus per-set gradients. This is the exact path training uses.
pub fn eval_loss(
    state: &ModelState,
    batch: &BatchData,
    select: &LossSelect,
    tracked: &[SetName],
    frm_enabled: bool,
) -> Result<LossEval> {
    let arch = state.arch.clone();
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, tracked);
    let built = match select {
        LossSelect::Dis => build_dis_loss(&mut g, &bound, &arch, batch, frm_enabled)?,
        LossSelect::Srm => build_srm_loss(&mut g, &bound, &arch, batch, frm_enabled)?,
        LossSelect::Frm { w, reverse } => {
            build_frm_loss(&mut g, &bound, &arch, batch, w, *reverse)?
        }
        LossSelect::WDep { w } => build_wdep_loss(&mut g, &bound, &arch, batch, w, frm_enabled)?,
        LossSelect::WCls { w } => build_wcls_loss(&mut g, &bound, &arch, batch, w, frm_enabled)?,
        LossSelect::Enc {
            w,
            lambda1,
            lambda2,
        } => build_enc_loss(
            &mut g,
            &bound,
            &arch,
            batch,
            w,
            *lambda1,
            *lambda2,
            frm_enabled,
        )?,
    };
    let grads = g.backward(built.loss);
    let set_grads = tracked
        .iter()
        .map(|&s| (s, fwd::collect_set_grads(&grads, &bound, state, s)))
        .collect();
    let a_row_sum_err = built.pipeline.channel_weights.map(|a_id| {
        let a = g.value(a_id);
        let (n, c) = (a.shape()[0], a.shape()[1]);
        (0..n)
            .map(|r| (a.data()[r * c..(r + 1) * c].iter().sum::<f64>() - 1.0).abs())
            .fold(0.0f64, f64::max)
    });
    Ok(LossEval {
        value: g.value(built.loss).item(),
        per_sample: g.value(built.per_sample).data().to_vec(),
        grads: set_grads,
        log_clamps: g.log_clamps,
        a_row_sum_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn probs(rows: &[&[f64]]) -> Tensor {
        let n = rows.len();
        let m = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(&[n, m], data).unwrap()
    }

    #[test]
    fn dis_examples() {
        // perfect prediction → 0
        let t = loss_dis(&probs(&[&[1.0, 0.0], &[0.0, 1.0]]), &[0, 1]).unwrap();
        assert_eq!(t.value, 0.0);
        // single sample at 0.5 → ln 2
        let t = loss_dis(&probs(&[&[0.5, 0.5]]), &[0]).unwrap();
        assert!((t.value - LN2).abs() < 1e-12);
        assert!((t.value - 0.693147).abs() < 1e-6);
        // two samples at 0.5, 0.25
        let t = loss_dis(&probs(&[&[0.5, 0.5], &[0.25, 0.75]]), &[0, 0]).unwrap();
        assert!((t.value - 1.039721).abs() < 1e-6);
        assert!((t.value - (LN2 + 2.0 * LN2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn srm_examples() {
        let t = loss_srm(&[0.7, 0.3], &probs(&[&[1.0, 0.0], &[0.0, 1.0]]), &[0, 1]).unwrap();
        assert_eq!(t.value, 0.0);
        let t = loss_srm(&[0.0, 0.0], &probs(&[&[0.2, 0.8], &[0.9, 0.1]]), &[0, 1]).unwrap();
        assert_eq!(t.value, 0.0);
        let t = loss_srm(&[1.0, 1.0], &probs(&[&[0.5, 0.5], &[0.5, 0.5]]), &[0, 1]).unwrap();
        assert!((t.value + LN2).abs() < 1e-12);
        assert!(t.value <= 0.0);
    }

    #[test]
    fn frm_examples() {
        let t = loss_frm(&[1.0, 1.0], &probs(&[&[0.3, 0.7], &[0.6, 0.4]]), &[0, 1]).unwrap();
        assert_eq!(t.value, 0.0); // reverse weights vanish
        let t = loss_frm(&[0.0], &probs(&[&[0.25, 0.75]]), &[0]).unwrap();
        assert!((t.value + 1.386294).abs() < 1e-6);
        let t = loss_frm(&[0.2], &probs(&[&[1.0, 0.0]]), &[0]).unwrap();
        assert_eq!(t.value, 0.0);
    }

    #[test]
    fn wdep_examples() {
        let pred = Tensor::filled(&[1, 2, 2], 0.6);
        let target = Tensor::filled(&[1, 2, 2], 0.5);
        let t = loss_wdep(&[0.5], &pred, &target).unwrap();
        assert!((t.value - 0.02).abs() < 1e-12);
        let t0 = loss_wdep(&[0.0], &pred, &target).unwrap();
        assert_eq!(t0.value, 0.0);
        let teq = loss_wdep(&[0.9], &target, &target).unwrap();
        assert_eq!(teq.value, 0.0);
    }

    #[test]
    fn wcls_examples() {
        let t = loss_wcls(&[1.0], &[0.5], &[1.0]).unwrap();
        assert!((t.value - LN2).abs() < 1e-12);
        let t = loss_wcls(&[1.0, 0.0], &[0.5, 0.9], &[1.0, 0.0]).unwrap();
        assert!((t.value - 0.346574).abs() < 1e-6);
        let t = loss_wcls(&[1.0, 1.0], &[1.0 - 1e-15, 1e-15], &[1.0, 0.0]).unwrap();
        assert!(t.value.abs() < 1e-12);
    }

    #[test]
    fn enc_example_matches_hand_arithmetic() {
        // frozen inputs from the loss definitions: wcls=0.3466, wdep=0.02,
        // weighted dis term 0.6931 with W=1, λ1=10, λ2=0.1 → 0.477247
        let wcls = LossTerm {
            value: 0.3466,
            per_sample: vec![0.3466],
            clamps: 0,
        };
        let wdep = LossTerm {
            value: 0.02,
            per_sample: vec![0.02],
            clamps: 0,
        };
        let t = loss_enc(&wcls, &wdep, &[1.0], &[0.6931], 10.0, 0.1).unwrap();
        assert!((t.value - 0.47729).abs() < 1e-4);
        assert!((t.value - (0.3466 + 0.2 - 0.06931)).abs() < 1e-12);

        // λ2 = 0 removes the adversarial term exactly
        let t0 = loss_enc(&wcls, &wdep, &[1.0], &[0.6931], 10.0, 0.0).unwrap();
        assert!((t0.value - (0.3466 + 0.2)).abs() < 1e-12);

        // all components zero → zero
        let z = LossTerm {
            value: 0.0,
            per_sample: vec![0.0],
            clamps: 0,
        };
        let tz = loss_enc(&z, &z, &[1.0], &[0.0], 10.0, 0.1).unwrap();
        assert_eq!(tz.value, 0.0);
    }

    #[test]
    fn scalar_equals_mean_of_per_sample() {
        let t = loss_dis(&probs(&[&[0.3, 0.7], &[0.6, 0.4], &[0.1, 0.9]]), &[1, 0, 0]).unwrap();
        let mean = t.per_sample.iter().sum::<f64>() / 3.0;
        assert!((t.value - mean).abs() < 1e-9);
    }

    #[test]
    fn zero_probability_is_clamped_and_counted() {
        let t = loss_dis(&probs(&[&[0.0, 1.0]]), &[0]).unwrap();
        assert_eq!(t.clamps, 1);
        assert!((t.value - (-LOG_EPS.ln())).abs() < 1e-9);
        assert!(t.value.is_finite());
    }

    #[test]
    fn all_live_batch_gives_srm_fake_zero_gradient() {
        use crate::model::{ArchConfig, ModelState, SetName};
        let mut state = ModelState::new(ArchConfig::tiny(), 3).unwrap();
        // randomize heads so gradients would flow if the routing allowed it
        let mut rng = crate::rng::rng_from(4);
        for &set in crate::model::ALL_SETS {
            for (_, t) in state.set_mut(set).arrays_mut() {
                for v in t.data_mut() {
                    *v += 0.3 * (rand::Rng::random::<f64>(&mut rng) - 0.5);
                }
            }
        }
        let arch = state.arch.clone();
        let n = 3;
        let mut images = Tensor::zeros(&[n, arch.image_hw.0, arch.image_hw.1, 6]);
        for (i, v) in images.data_mut().iter_mut().enumerate() {
            *v = ((i * 131) % 509) as f64 / 509.0;
        }
        let mut onehot = Tensor::zeros(&[n, arch.num_domains]);
        for i in 0..n {
            onehot.data_mut()[i * arch.num_domains + i % arch.num_domains] = 1.0;
        }
        let batch = BatchData {
            images,
            labels: vec![1.0; n], // all live
            domains: (0..n).map(|i| i % arch.num_domains).collect(),
            domain_onehot: onehot,
            depth_targets: Tensor::zeros(&[n, arch.depth_hw.0, arch.depth_hw.1]),
        };
        let eval = eval_loss(
            &state,
            &batch,
            &LossSelect::Srm,
            &[SetName::SrmReal, SetName::SrmFake],
            true,
        )
        .unwrap();
        let real = &eval.grads[0];
        let fake = &eval.grads[1];
        assert!(real.1.iter().any(|g| g.data().iter().any(|&v| v != 0.0)));
        for g in &fake.1 {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn srm_gradient_structure_wrt_weights() {
        // ∂L_SRM/∂W_i = log(p_i)/N: non-positive, magnitude growing as p falls.
        let ps = [0.9, 0.5, 0.2, 0.05];
        let n = ps.len() as f64;
        let grads: Vec<f64> = ps.iter().map(|p: &f64| p.ln() / n).collect();
        for g in &grads {
            assert!(*g <= 0.0);
        }
        for pair in grads.windows(2) {
            assert!(pair[0].abs() < pair[1].abs());
        }
    }
}
