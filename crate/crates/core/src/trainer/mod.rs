//! The iterative adversarial training schedule.
//!
//! Step dispatch for step `t ≥ 1` with FRM period `K`:
//! `t % K == 0 → FRM`, otherwise odd `t → DIS`, even `t → SRM_MAIN`.
//!
//! - DIS: update the domain discriminator on the discrimination loss.
//! - SRM_MAIN: update both sample reweighters on the SRM loss, recompute and
//!   detach the sample weights, then update depth estimator, classifier, and
//!   finally encoder+FRM on the weighted main losses.
//! - FRM: update the feature reweighter alone on the reverse-weighted
//!   discrimination loss, using the batch and weights carried from the most
//!   recent SRM_MAIN step.

mod runlog;

pub use runlog::{EvalSnapshot, RunLog, RunLogWriter, RunSummary, StepRecord, StepType};

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DrdgError, Result};
use crate::evalkit;
use crate::model::{save_checkpoint, ArchConfig, ModelState, SetName};
use crate::objectives::{compute_live_w, eval_loss, BatchData, LossEval, LossSelect};
use crate::optim::adam_step;
use crate::rng::{derive_seed, derive_seed_indexed};
use crate::syndata::{generate_domain_dataset, Batch, BatchSampler, DomainSpec, GenConfig, Sample};

/// Which framework components are active; the full method enables both
/// reweighters with their forward weight directions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct ModuleToggles {
    pub srm: bool,
    pub frm: bool,
    /// Feed `1−W` instead of `W` to the weighted main losses
    /// (emphasizes large domain-biased samples first).
    pub srm_reverse: bool,
    /// Flip the FRM objective so it pushes domains apart instead.
    pub frm_reverse: bool,
}

impl Default for ModuleToggles {
    fn default() -> Self {
        ModuleToggles {
            srm: true,
            frm: true,
            srm_reverse: false,
            frm_reverse: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    /// Total dispatched steps N.
    pub steps: u64,
    /// FRM period K (≥ 2).
    pub k: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// α: encoder, classifier, depth estimator, discriminator.
    pub lr_main: f64,
    /// β: the two reweighting heads (SRM, FRM).
    pub lr_aux: f64,
    /// Samples per domain per batch (even).
    pub n_dom: usize,
    pub seed: u64,
    /// Held-out evaluation cadence in steps (0 → final step only).
    pub eval_every: u64,
    /// Checkpoint cadence in steps (0 → final checkpoint only).
    pub checkpoint_every: u64,
    /// Record the full weight vector in every step record.
    pub log_weights: bool,
    pub arch: ArchConfig,
    pub toggles: ModuleToggles,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 600,
            k: 5,
            lambda1: 10.0,
            lambda2: 0.1,
            lr_main: 1e-3,
            lr_aux: 1e-4,
            n_dom: 10,
            seed: 0,
            eval_every: 100,
            checkpoint_every: 0,
            log_weights: true,
            arch: ArchConfig::default(),
            toggles: ModuleToggles::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(DrdgError::Config("K must be ≥ 2".into()));
        }
        if self.steps == 0 {
            return Err(DrdgError::Config("steps must be ≥ 1".into()));
        }
        if self.lr_main <= 0.0 || self.lr_aux <= 0.0 {
            return Err(DrdgError::Config("learning rates must be positive".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(DrdgError::Config("lambda coefficients must be ≥ 0".into()));
        }
        if self.n_dom < 2 || self.n_dom % 2 != 0 {
            return Err(DrdgError::Config("n_dom must be even and ≥ 2".into()));
        }
        self.arch.validate()
    }
}

/// Synthetic benchmark description: M source domains plus one held-out
/// domain rendered with the shared generation config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DataConfig {
    pub gen: GenConfig,
    pub source_specs: Vec<DomainSpec>,
    pub holdout_spec: Option<DomainSpec>,
    pub n_per_domain: usize,
    pub n_holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            gen: GenConfig::default(),
            source_specs: vec![
                DomainSpec {
                    domain_id: 0,
                    tint: (1.0, 0.88, 0.80),
                    exposure: 1.0,
                    texture_freq: 2.0,
                    noise_sigma: 0.02,
                },
                DomainSpec {
                    domain_id: 1,
                    tint: (0.82, 1.0, 0.88),
                    exposure: 1.25,
                    texture_freq: 4.5,
                    noise_sigma: 0.03,
                },
                DomainSpec {
                    domain_id: 2,
                    tint: (0.88, 0.80, 1.0),
                    exposure: 0.85,
                    texture_freq: 6.5,
                    noise_sigma: 0.025,
                },
            ],
            holdout_spec: Some(DomainSpec {
                domain_id: 3,
                tint: (1.0, 1.0, 0.68),
                exposure: 0.65,
                texture_freq: 10.4,
                noise_sigma: 0.055,
            }),
            n_per_domain: 120,
            n_holdout: 120,
        }
    }
}

/// One experiment: schedule plus benchmark.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.gen.validate()?;
        if self.data.source_specs.len() != self.train.arch.num_domains {
            return Err(DrdgError::Config(format!(
                "{} source domains but arch.num_domains = {}",
                self.data.source_specs.len(),
                self.train.arch.num_domains
            )));
        }
        if self.data.gen.image_hw != self.train.arch.image_hw {
            return Err(DrdgError::Config(
                "data image size and architecture image size differ".into(),
            ));
        }
        if self.data.gen.depth_hw != self.train.arch.depth_hw {
            return Err(DrdgError::Config(
                "data depth size and architecture depth size differ".into(),
            ));
        }
        for spec in &self.data.source_specs {
            spec.validate()?;
        }
        if let Some(h) = &self.data.holdout_spec {
            h.validate()?;
        }
        let mut ids: Vec<usize> = self.data.source_specs.iter().map(|s| s.domain_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.data.source_specs.len() {
            return Err(DrdgError::Config("duplicate domain_id among sources".into()));
        }
        if self.data.n_per_domain < self.train.n_dom || self.data.n_per_domain % 2 != 0 {
            return Err(DrdgError::Config(
                "n_per_domain must be even and ≥ n_dom".into(),
            ));
        }
        Ok(())
    }
}

/// Step dispatch of the iterative schedule.
pub fn dispatch(t: u64, k: u64) -> StepType {
    debug_assert!(t >= 1 && k >= 2);
    if t % k == 0 {
        StepType::Frm
    } else if t % 2 != 0 {
        StepType::Dis
    } else {
        StepType::SrmMain
    }
}

/// Generated (or ingested) training material.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub sources: Vec<Vec<Sample>>,
    pub holdout: Option<Vec<Sample>>,
    pub warnings: Vec<String>,
}

/// Deterministically generate the benchmark datasets for a config.
pub fn prepare_data(cfg: &RunConfig) -> Result<TrainData> {
    cfg.validate()?;
    let data_seed = derive_seed(cfg.train.seed, "data");
    let sources = cfg
        .data
        .source_specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            generate_domain_dataset(
                spec,
                &cfg.data.gen,
                cfg.data.n_per_domain,
                derive_seed_indexed(data_seed, "source", i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let holdout = cfg
        .data
        .holdout_spec
        .as_ref()
        .map(|spec| {
            generate_domain_dataset(
                spec,
                &cfg.data.gen,
                cfg.data.n_holdout,
                derive_seed(data_seed, "holdout"),
            )
        })
        .transpose()?;
    Ok(TrainData {
        sources,
        holdout,
        warnings: Vec::new(),
    })
}

struct CarryState {
    batch: Batch,
    w: Vec<f64>,
}

/// Executes single dispatched steps while holding the weight carry between
/// SRM_MAIN and FRM steps.
pub struct Trainer {
    cfg: TrainConfig,
    carry: Option<CarryState>,
    last_batch: Option<Batch>,
    pub log_clamps: u64,
}

/// Apply one loss's gradients to several sets, each with its own rate.
fn update_sets(
    state: &mut ModelState,
    batch: &BatchData,
    select: &LossSelect,
    targets: &[(SetName, f64)],
    frm_enabled: bool,
) -> Result<LossEval> {
    let tracked: Vec<SetName> = targets.iter().map(|&(s, _)| s).collect();
    let eval = eval_loss(state, batch, select, &tracked, frm_enabled)?;
    for ((set, lr), (gset, grads)) in targets.iter().zip(&eval.grads) {
        debug_assert_eq!(set, gset);
        let (params, opt) = state.params_and_opt_mut(*set);
        adam_step(params, opt, grads, *lr);
    }
    Ok(eval)
}

/// One optimizer step on exactly the named parameter set, driven by the
/// selected loss. Any other set is untouched bit-for-bit.
pub fn single_update(
    state: &mut ModelState,
    batch: &BatchData,
    select: &LossSelect,
    set: SetName,
    lr: f64,
    frm_enabled: bool,
) -> Result<f64> {
    let eval = update_sets(state, batch, select, &[(set, lr)], frm_enabled)?;
    Ok(eval.value)
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Self {
        Trainer {
            cfg,
            carry: None,
            last_batch: None,
            log_clamps: 0,
        }
    }

    /// The weights a step at this moment would use: the carry from the most
    /// recent SRM_MAIN step, or the all-ones initialization.
    pub fn effective_w(&self, n: usize) -> Vec<f64> {
        match &self.carry {
            Some(c) => c.w.clone(),
            None => vec![1.0; n],
        }
    }

    pub fn carried_w(&self) -> Option<&[f64]> {
        self.carry.as_ref().map(|c| c.w.as_slice())
    }

    fn non_finite(&self, state: &ModelState, t: u64, stype: StepType, what: &str) -> DrdgError {
        let norms = state.param_norms();
        let diag = serde_json::json!({
            "loss": what,
            "carry_w": self.carry.as_ref().map(|c| c.w.clone()),
            "param_norms": norms.iter().map(|(k, v)| (k.to_string(), v)).collect::<Vec<_>>(),
        });
        DrdgError::NonFinite {
            step: t,
            step_type: stype.to_string(),
            diagnostic: diag.to_string(),
        }
    }

    fn check(
        &self,
        state: &ModelState,
        t: u64,
        stype: StepType,
        what: &str,
        eval: &LossEval,
    ) -> Result<()> {
        if !eval.value.is_finite() {
            return Err(self.non_finite(state, t, stype, what));
        }
        Ok(())
    }

    /// Execute the dispatched step for `t`. `fresh` must be `Some` for DIS
    /// and SRM_MAIN steps (they consume the batch stream) and is ignored by
    /// FRM steps, which reuse the carried batch.
    pub fn step(
        &mut self,
        state: &mut ModelState,
        fresh: Option<Batch>,
        t: u64,
    ) -> Result<StepRecord> {
        let start = Instant::now();
        let stype = dispatch(t, self.cfg.k);
        let toggles = self.cfg.toggles;
        let frm_on = toggles.frm;
        let mut record = StepRecord {
            t,
            step_type: stype,
            dis: None,
            srm: None,
            frm: None,
            wdep: None,
            wcls: None,
            enc: None,
            w_min: 0.0,
            w_mean: 0.0,
            w_max: 0.0,
            w_values: None,
            a_row_sum_err: None,
            skipped: false,
            eval: None,
            wall_ms: 0.0,
        };

        match stype {
            StepType::Dis => {
                let batch = fresh.ok_or_else(|| {
                    DrdgError::Contract("DIS step needs a fresh batch".into())
                })?;
                let data = batch.to_model_inputs()?;
                let eval = update_sets(
                    state,
                    &data,
                    &LossSelect::Dis,
                    &[(SetName::Disc, self.cfg.lr_main)],
                    frm_on,
                )?;
                self.check(state, t, stype, "dis", &eval)?;
                self.log_clamps += eval.log_clamps;
                record.dis = Some(eval.value);
                record.a_row_sum_err = eval.a_row_sum_err;
                self.fill_w_stats(&mut record, data.len());
                self.last_batch = Some(batch);
            }
            StepType::SrmMain => {
                let batch = fresh.ok_or_else(|| {
                    DrdgError::Contract("SRM_MAIN step needs a fresh batch".into())
                })?;
                let data = batch.to_model_inputs()?;
                let n = data.len();

                let w_raw: Vec<f64> = if toggles.srm {
                    let eval = update_sets(
                        state,
                        &data,
                        &LossSelect::Srm,
                        &[
                            (SetName::SrmReal, self.cfg.lr_aux),
                            (SetName::SrmFake, self.cfg.lr_aux),
                        ],
                        frm_on,
                    )?;
                    self.check(state, t, stype, "srm", &eval)?;
                    self.log_clamps += eval.log_clamps;
                    record.srm = Some(eval.value);
                    // freshest weights: recompute after the SRM update, detach
                    compute_live_w(state, &data, frm_on)?
                } else {
                    vec![1.0; n]
                };
                let w_down: Vec<f64> = if toggles.srm && toggles.srm_reverse {
                    w_raw.iter().map(|w| 1.0 - w).collect()
                } else {
                    w_raw.clone()
                };

                let eval = update_sets(
                    state,
                    &data,
                    &LossSelect::WDep { w: &w_down },
                    &[(SetName::Dep, self.cfg.lr_main)],
                    frm_on,
                )?;
                self.check(state, t, stype, "wdep", &eval)?;
                record.wdep = Some(eval.value);

                let eval = update_sets(
                    state,
                    &data,
                    &LossSelect::WCls { w: &w_down },
                    &[(SetName::Bc, self.cfg.lr_main)],
                    frm_on,
                )?;
                self.check(state, t, stype, "wcls", &eval)?;
                self.log_clamps += eval.log_clamps;
                record.wcls = Some(eval.value);

                let mut targets = vec![(SetName::Enc, self.cfg.lr_main)];
                if frm_on {
                    targets.push((SetName::Frm, self.cfg.lr_aux));
                }
                let eval = update_sets(
                    state,
                    &data,
                    &LossSelect::Enc {
                        w: &w_down,
                        lambda1: self.cfg.lambda1,
                        lambda2: self.cfg.lambda2,
                    },
                    &targets,
                    frm_on,
                )?;
                self.check(state, t, stype, "enc", &eval)?;
                self.log_clamps += eval.log_clamps;
                record.enc = Some(eval.value);
                record.a_row_sum_err = eval.a_row_sum_err;

                if toggles.srm {
                    self.carry = Some(CarryState {
                        batch: batch.clone(),
                        w: w_raw.clone(),
                    });
                }
                stats_into(&mut record, &w_raw, self.cfg.log_weights);
                self.last_batch = Some(batch);
            }
            StepType::Frm => {
                if !frm_on {
                    record.skipped = true;
                    let n = self
                        .carry
                        .as_ref()
                        .map(|c| c.w.len())
                        .or_else(|| self.last_batch.as_ref().map(|b| b.len()))
                        .unwrap_or(0);
                    self.fill_w_stats(&mut record, n);
                } else {
                    let (frm_batch, w_eff): (Batch, Vec<f64>) = match (&self.carry, toggles.srm)
                    {
                        (Some(c), true) => (c.batch.clone(), c.w.clone()),
                        _ => {
                            let b = self
                                .last_batch
                                .clone()
                                .or(fresh)
                                .ok_or_else(|| {
                                    DrdgError::Contract(
                                        "FRM step before any batch exists".into(),
                                    )
                                })?;
                            let n = b.len();
                            // without SRM, every sample participates fully in
                            // the distillation objective
                            let w = if toggles.srm {
                                vec![1.0; n] // initial W = 1 → zero reverse weights
                            } else if toggles.frm_reverse {
                                vec![1.0; n]
                            } else {
                                vec![0.0; n]
                            };
                            (b, w)
                        }
                    };
                    let data = frm_batch.to_model_inputs()?;
                    let eval = update_sets(
                        state,
                        &data,
                        &LossSelect::Frm {
                            w: &w_eff,
                            reverse: toggles.frm_reverse,
                        },
                        &[(SetName::Frm, self.cfg.lr_aux)],
                        true,
                    )?;
                    self.check(state, t, stype, "frm", &eval)?;
                    self.log_clamps += eval.log_clamps;
                    record.frm = Some(eval.value);
                    record.a_row_sum_err = eval.a_row_sum_err;
                    stats_into(&mut record, &w_eff, self.cfg.log_weights);
                }
            }
        }
        record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(record)
    }

    fn fill_w_stats(&self, record: &mut StepRecord, n: usize) {
        let w = self.effective_w(n.max(1));
        stats_into(record, &w, self.cfg.log_weights);
    }
}

fn stats_into(record: &mut StepRecord, w: &[f64], log_values: bool) {
    let mut mn = f64::INFINITY;
    let mut mx = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in w {
        mn = mn.min(v);
        mx = mx.max(v);
        sum += v;
    }
    record.w_min = mn;
    record.w_mean = sum / w.len() as f64;
    record.w_max = mx;
    if log_values {
        record.w_values = Some(w.to_vec());
    }
}

/// Run the full schedule over shuffled domain-balanced batches.
///
/// With a run directory, the step log streams to `runlog.jsonl`, evaluation
/// score dumps land under `metrics/`, checkpoints under `checkpoints/`, and a
/// `summary.json` is written at the end (also on abort).
pub fn train(
    cfg: &RunConfig,
    data: &TrainData,
    run_dir: Option<&Path>,
) -> Result<(ModelState, RunLog)> {
    cfg.validate()?;
    let t0 = Instant::now();
    let seed = cfg.train.seed;
    let mut state = ModelState::new(cfg.train.arch.clone(), derive_seed(seed, "model-init"))?;

    let shared: Vec<Vec<Arc<Sample>>> = data
        .sources
        .iter()
        .map(|ds| ds.iter().cloned().map(Arc::new).collect())
        .collect();
    let mut sampler =
        BatchSampler::new_shared(shared.clone(), cfg.train.n_dom, derive_seed(seed, "batches"))?;
    let mut probe_sampler =
        BatchSampler::new_shared(shared, cfg.train.n_dom, derive_seed(seed, "probe"))?;

    let mut trainer = Trainer::new(cfg.train.clone());
    let mut writer = match run_dir {
        Some(dir) => Some(RunLogWriter::create(dir)?),
        None => None,
    };
    let mut log = RunLog::default();
    log.summary.warnings = data.warnings.clone();

    let mut abort: Option<DrdgError> = None;
    for t in 1..=cfg.train.steps {
        let stype = dispatch(t, cfg.train.k);
        let fresh = match stype {
            StepType::Frm => None,
            _ => Some(sampler.next_batch()),
        };
        let mut record = match trainer.step(&mut state, fresh, t) {
            Ok(r) => r,
            Err(e) => {
                abort = Some(e);
                break;
            }
        };
        state.step = t;

        let eval_due = (cfg.train.eval_every > 0 && t % cfg.train.eval_every == 0)
            || t == cfg.train.steps;
        if eval_due {
            record.eval = Some(eval_snapshot(
                cfg,
                &state,
                data,
                &mut probe_sampler,
                t,
                run_dir,
            )?);
        }
        if let Some(dir) = run_dir {
            if cfg.train.checkpoint_every > 0 && t % cfg.train.checkpoint_every == 0 {
                let stem = dir.join("checkpoints").join(format!("step_{:06}", t));
                save_checkpoint(&state, &stem, checkpoint_extra(cfg, t, sampler.rng_word_pos()))?;
            }
            if let Some(w) = writer.as_mut() {
                w.append(&record)?;
            }
        }
        log.records.push(record);
    }

    log.summary.seed = seed;
    log.summary.steps = state.step;
    log.summary.aborted = abort.is_some();
    log.summary.log_clamps = trainer.log_clamps;
    log.summary.final_eval = log.records.last().and_then(|r| r.eval.clone());
    log.summary.wall_s = t0.elapsed().as_secs_f64();

    if let Some(dir) = run_dir {
        let stem = dir.join("checkpoints").join(if abort.is_some() {
            "abort"
        } else {
            "final"
        });
        save_checkpoint(
            &state,
            &stem,
            checkpoint_extra(cfg, state.step, sampler.rng_word_pos()),
        )?;
        if let Some(w) = writer.take() {
            w.finish(&log.summary, dir)?;
        }
    }
    match abort {
        Some(e) => Err(e),
        None => Ok((state, log)),
    }
}

fn checkpoint_extra(cfg: &RunConfig, step: u64, batch_rng_pos: u128) -> serde_json::Value {
    serde_json::json!({
        "step": step,
        "seed": cfg.train.seed,
        "toggles": cfg.train.toggles,
        "frm_enabled": cfg.train.toggles.frm,
        "rng": {
            "base_seed": cfg.train.seed,
            "batch_stream_word_pos": batch_rng_pos.to_string(),
        },
    })
}

fn eval_snapshot(
    cfg: &RunConfig,
    state: &ModelState,
    data: &TrainData,
    probe: &mut BatchSampler,
    t: u64,
    run_dir: Option<&Path>,
) -> Result<EvalSnapshot> {
    let mut snap = EvalSnapshot {
        holdout_auc: None,
        holdout_hter: None,
        source_dis_nll: None,
        scores_file: None,
    };
    // discriminator health on a probe batch from the sources
    let probe_batch = probe.next_batch().to_model_inputs()?;
    let bundle = crate::objectives::compute_bundle(
        state,
        &probe_batch,
        &vec![1.0; probe_batch.len()],
        cfg.train.lambda1,
        cfg.train.lambda2,
        cfg.train.toggles.frm,
        cfg.train.toggles.srm,
    )?;
    snap.source_dis_nll = Some(bundle.dis.value);

    if let Some(holdout) = &data.holdout {
        let scores = evalkit::score_samples(state, holdout, cfg.train.toggles.frm)?;
        snap.holdout_auc = Some(evalkit::auc(&scores)?);
        snap.holdout_hter =
            Some(evalkit::hter(&scores, &evalkit::ThresholdPolicy::Eer)?);
        if let Some(dir) = run_dir {
            let rel = format!("metrics/scores_step{:06}.csv", t);
            let path = dir.join(&rel);
            evalkit::write_scores_csv(&scores, &path)?;
            snap.scores_file = Some(rel);
        }
    }
    Ok(snap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch_matches_schedule_k5() {
        let trace: Vec<StepType> = (1..=10).map(|t| dispatch(t, 5)).collect();
        use StepType::*;
        assert_eq!(
            trace,
            vec![Dis, SrmMain, Dis, SrmMain, Frm, SrmMain, Dis, SrmMain, Dis, Frm]
        );
    }

    #[test]
    fn dispatch_k2_never_fires_srm_main() {
        let trace: Vec<StepType> = (1..=10).map(|t| dispatch(t, 2)).collect();
        assert!(trace.iter().all(|s| *s != StepType::SrmMain));
        for (i, s) in trace.iter().enumerate() {
            let t = i as u64 + 1;
            if t % 2 == 0 {
                assert_eq!(*s, StepType::Frm);
            } else {
                assert_eq!(*s, StepType::Dis);
            }
        }
    }

    #[test]
    fn first_step_is_discriminator() {
        for k in 2..10 {
            assert_eq!(dispatch(1, k), StepType::Dis);
        }
    }
}
