//! `drdg`: train, evaluate, ablate and plot on the synthetic multi-domain
//! liveness benchmark. All commands are thin shells over the library; every
//! effect is reproducible from the echoed config.

mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use drdg_core::evalkit::{
    ablation_csv, auc, hter, roc_curve, run_ablation_table, score_samples, write_scores_csv,
    AblationVariant, ThresholdPolicy,
};
use drdg_core::model::load_checkpoint;
use drdg_core::plot::{render_plots, PlotKind};
use drdg_core::syndata::{ingest_directory, IngestOptions};
use drdg_core::trainer::{prepare_data, train, TrainData};

use config::{merge_config, resolve_out, write_echo, MergedConfig, Overrides};

#[derive(Parser)]
#[command(name = "drdg", version, about = "Dual-reweighting domain-generalization trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Experiment config, JSON or TOML (defaults apply for absent fields).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// FRM period.
    #[arg(long = "K")]
    k: Option<u64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Output directory (default: $DRDG_RUN_ROOT/<command>-seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn merged(&self) -> Result<MergedConfig> {
        merge_config(
            self.config.as_deref(),
            &Overrides {
                seed: self.seed,
                steps: self.steps,
                k: self.k,
                lambda1: self.lambda1,
                lambda2: self.lambda2,
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full training schedule and write a run directory.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Ingest real images from root/<domain>/<live|spoof>/ instead of
        /// generating the synthetic benchmark.
        #[arg(long)]
        ingest: Option<PathBuf>,
    },
    /// Score a checkpoint on the benchmark's held-out domain.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint stem (the path without .bin/.json).
        #[arg(long)]
        checkpoint: PathBuf,
        /// `eer` (default) or `fixed:<threshold>`.
        #[arg(long, default_value = "eer")]
        policy: String,
    },
    /// Train and evaluate ablation variants, aggregated over seeds.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated variant names (default: all six).
        #[arg(long)]
        variants: Option<String>,
        /// Number of paired seeds per variant.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Emit SVG plots from a completed run directory.
    Plot {
        /// The run directory (must hold config.json).
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated kinds: roc,weight_hist,feature_scatter,channel_attn.
        #[arg(long)]
        kinds: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, ingest } => cmd_train(common, ingest),
        Command::Eval {
            common,
            checkpoint,
            policy,
        } => cmd_eval(common, checkpoint, &policy),
        Command::Ablate {
            common,
            variants,
            seeds,
        } => cmd_ablate(common, variants, seeds),
        Command::Plot { run, kinds } => cmd_plot(run, kinds),
    }
}

fn cmd_train(common: CommonArgs, ingest: Option<PathBuf>) -> Result<()> {
    let merged = common.merged()?;
    let cfg = &merged.config;
    let dir = resolve_out(common.out, "train", cfg.train.seed);
    fs::create_dir_all(&dir)?;
    write_echo(&dir, &merged)?;

    let data = match &ingest {
        Some(root) => {
            let options = IngestOptions {
                image_hw: cfg.train.arch.image_hw,
                depth_hw: cfg.train.arch.depth_hw,
                ..IngestOptions::default()
            };
            let (sources, report) = ingest_directory(root, &options)?;
            if sources.len() != cfg.train.arch.num_domains {
                bail!(
                    "ingested {} domains but arch.num_domains = {}",
                    sources.len(),
                    cfg.train.arch.num_domains
                );
            }
            for w in &report.warnings {
                eprintln!("warning: {}", w);
            }
            TrainData {
                sources,
                holdout: None,
                warnings: report.warnings,
            }
        }
        None => prepare_data(cfg)?,
    };

    let (_state, log) = train(cfg, &data, Some(&dir))?;
    println!(
        "completed {} steps; run directory: {}",
        log.summary.steps,
        dir.display()
    );
    if let Some(eval) = &log.summary.final_eval {
        if let (Some(a), Some(h)) = (eval.holdout_auc, eval.holdout_hter) {
            println!("held-out AUC {:.4}  HTER {:.4}", a, h);
        }
    }
    Ok(())
}

fn parse_policy(s: &str) -> Result<ThresholdPolicy> {
    if s == "eer" {
        return Ok(ThresholdPolicy::Eer);
    }
    if let Some(t) = s.strip_prefix("fixed:") {
        return Ok(ThresholdPolicy::Fixed(t.parse().context("fixed threshold")?));
    }
    bail!("unknown threshold policy {:?} (use eer or fixed:<t>)", s)
}

fn cmd_eval(common: CommonArgs, checkpoint: PathBuf, policy: &str) -> Result<()> {
    let merged = common.merged()?;
    let cfg = &merged.config;
    let policy = parse_policy(policy)?;
    let dir = resolve_out(common.out, "eval", cfg.train.seed);
    fs::create_dir_all(&dir)?;
    write_echo(&dir, &merged)?;

    let (state, report) = load_checkpoint(&checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    for w in &report.warnings {
        eprintln!("warning: {}", w);
    }
    if state.arch != cfg.train.arch {
        bail!(
            "checkpoint architecture {:?} does not match configured {:?}",
            state.arch,
            cfg.train.arch
        );
    }
    let frm_enabled = checkpoint_frm_enabled(&checkpoint).unwrap_or(cfg.train.toggles.frm);

    let data = prepare_data(cfg)?;
    let holdout = data
        .holdout
        .as_ref()
        .context("config has no held-out domain spec to evaluate on")?;
    let scores = score_samples(&state, holdout, frm_enabled)?;
    let auc_v = auc(&scores)?;
    let hter_v = hter(&scores, &policy)?;
    let points = roc_curve(&scores)?;

    write_scores_csv(&scores, &dir.join("scores.csv"))?;
    let mut roc_csv = String::from("threshold,far,frr\n");
    for p in &points {
        roc_csv.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
    }
    fs::write(dir.join("roc.csv"), roc_csv)?;
    fs::write(
        dir.join("metrics.csv"),
        format!("metric,value\nauc,{}\nhter,{}\n", auc_v, hter_v),
    )?;
    let metrics = serde_json::json!({
        "auc": auc_v,
        "hter": hter_v,
        "policy": format!("{:?}", policy),
        "seed": cfg.train.seed,
        "checkpoint": checkpoint.display().to_string(),
    });
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    println!("AUC {:.4}  HTER {:.4}  ({})", auc_v, hter_v, dir.display());
    Ok(())
}

fn checkpoint_frm_enabled(stem: &std::path::Path) -> Option<bool> {
    let text = fs::read_to_string(stem.with_extension("json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v["meta"]["extra"]["frm_enabled"].as_bool()
}

fn cmd_ablate(common: CommonArgs, variants: Option<String>, seeds: usize) -> Result<()> {
    let merged = common.merged()?;
    let cfg = &merged.config;
    let dir = resolve_out(common.out, "ablate", cfg.train.seed);
    fs::create_dir_all(&dir)?;
    write_echo(&dir, &merged)?;

    let variant_list: Vec<AblationVariant> = match &variants {
        None => AblationVariant::ALL.to_vec(),
        Some(names) => names
            .split(',')
            .map(|n| {
                AblationVariant::parse(n.trim()).ok_or_else(|| {
                    anyhow::anyhow!(
                        "unknown variant {:?}; valid names: {}",
                        n.trim(),
                        AblationVariant::ALL
                            .iter()
                            .map(|v| v.name())
                            .collect::<Vec<_>>()
                            .join(", ")
                    )
                })
            })
            .collect::<Result<_>>()?,
    };

    let rows = run_ablation_table(cfg, &variant_list, seeds)?;
    let csv = ablation_csv(&rows);
    fs::write(dir.join("ablation.csv"), &csv)?;
    fs::write(
        dir.join("ablation.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "seed": cfg.train.seed,
            "seeds_per_variant": seeds,
            "rows": rows,
        }))?,
    )?;
    print!("{}", csv);
    println!("written to {}", dir.display());
    Ok(())
}

fn cmd_plot(run: PathBuf, kinds: Option<String>) -> Result<()> {
    let cfg = config::load_echo(&run)?;
    let kind_list: Vec<PlotKind> = match &kinds {
        None => PlotKind::ALL.to_vec(),
        Some(names) => names
            .split(',')
            .map(|n| {
                PlotKind::parse(n.trim()).ok_or_else(|| {
                    anyhow::anyhow!(
                        "unknown plot kind {:?}; valid kinds: {}",
                        n.trim(),
                        PlotKind::ALL
                            .iter()
                            .map(|k| k.name())
                            .collect::<Vec<_>>()
                            .join(", ")
                    )
                })
            })
            .collect::<Result<_>>()?,
    };
    let report = render_plots(&run, &kind_list, &cfg)?;
    for (kind, reason) in &report.skipped {
        eprintln!("warning: skipped {}: {}", kind, reason);
    }
    for path in &report.written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
