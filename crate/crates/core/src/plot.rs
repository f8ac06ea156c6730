//! SVG plot emission for completed runs: ROC curves per evaluation snapshot,
//! sample-weight histograms per step bucket, a 2-D projection of pooled
//! modulated features, and spatial energy maps of the strongest/weakest
//! channels by channel weight.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{DrdgError, Result};
use crate::evalkit::{roc_curve, ScoreSet};
use crate::graph::Graph;
use crate::model::forward as fwd;
use crate::model::{bind_params, load_checkpoint, ModelState};
use crate::syndata::Sample;
use crate::tensor::Tensor;
use crate::trainer::{prepare_data, RunConfig, RunLog, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Roc,
    WeightHist,
    FeatureScatter,
    ChannelAttn,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::Roc,
        PlotKind::WeightHist,
        PlotKind::FeatureScatter,
        PlotKind::ChannelAttn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PlotKind::Roc => "roc",
            PlotKind::WeightHist => "weight_hist",
            PlotKind::FeatureScatter => "feature_scatter",
            PlotKind::ChannelAttn => "channel_attn",
        }
    }

    pub fn parse(s: &str) -> Option<PlotKind> {
        Self::ALL.iter().copied().find(|k| k.name() == s)
    }
}

#[derive(Debug, Default)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<(String, String)>,
}

/// Render the requested plot kinds from a completed run directory. Kinds
/// whose inputs are missing are skipped with a note; everything else is
/// still produced.
pub fn render_plots(run_dir: &Path, kinds: &[PlotKind], cfg: &RunConfig) -> Result<PlotReport> {
    let out_dir = run_dir.join("plots");
    fs::create_dir_all(&out_dir).map_err(|e| DrdgError::io(&out_dir, e))?;
    let mut report = PlotReport::default();
    for &kind in kinds {
        let result = match kind {
            PlotKind::Roc => plot_roc(run_dir, &out_dir, &mut report),
            PlotKind::WeightHist => plot_weight_hist(run_dir, &out_dir, &mut report),
            PlotKind::FeatureScatter => plot_feature_scatter(run_dir, &out_dir, cfg, &mut report),
            PlotKind::ChannelAttn => plot_channel_attn(run_dir, &out_dir, cfg, &mut report),
        };
        if let Err(e) = result {
            report.skipped.push((kind.name().to_string(), e.to_string()));
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Minimal SVG builder
// ---------------------------------------------------------------------------

struct Svg {
    body: String,
    w: f64,
    h: f64,
}

impl Svg {
    fn new(w: f64, h: f64) -> Self {
        Svg {
            body: String::new(),
            w,
            h,
        }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            x, y, w, h, fill
        );
    }

    fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{}" fill-opacity="0.75"/>"#,
            cx, cy, r, fill
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let mut s = String::new();
        for (x, y) in pts {
            let _ = write!(s, "{:.2},{:.2} ", x, y);
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            s.trim_end(),
            stroke
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="{:.1}" font-family="sans-serif">{}</text>"#,
            x, y, size, content
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="1"/>"#,
            x1, y1, x2, y2, stroke
        );
    }

    fn save(self, path: &Path) -> Result<()> {
        let doc = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{body}</svg>\n",
            w = self.w,
            h = self.h,
            body = self.body
        );
        fs::write(path, doc).map_err(|e| DrdgError::io(path, e))
    }
}

const DOMAIN_COLORS: &[&str] = &["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

// ---------------------------------------------------------------------------
// ROC per evaluation snapshot
// ---------------------------------------------------------------------------

fn read_scores_csv(path: &Path) -> Result<ScoreSet> {
    let text = fs::read_to_string(path).map_err(|e| DrdgError::io(path, e))?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for line in text.lines().skip(1) {
        let mut parts = line.split(',');
        let (Some(s), Some(l)) = (parts.next(), parts.next()) else {
            continue;
        };
        scores.push(s.parse::<f64>().map_err(|e| {
            DrdgError::Contract(format!("bad score in {}: {}", path.display(), e))
        })?);
        labels.push(l.trim() == "live");
    }
    ScoreSet::new(scores, labels)
}

fn plot_roc(run_dir: &Path, out_dir: &Path, report: &mut PlotReport) -> Result<()> {
    let metrics_dir = run_dir.join("metrics");
    let mut files: Vec<PathBuf> = fs::read_dir(&metrics_dir)
        .map_err(|e| DrdgError::io(&metrics_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("scores_step") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DrdgError::Config("no evaluation score dumps found".into()));
    }
    for file in files {
        let scores = read_scores_csv(&file)?;
        let points = roc_curve(&scores)?;
        let (w, h, m) = (320.0, 320.0, 40.0);
        let mut svg = Svg::new(w, h);
        svg.line(m, h - m, w - 10.0, h - m, "#333");
        svg.line(m, h - m, m, 10.0, "#333");
        svg.text(w / 2.0 - 20.0, h - 8.0, 11.0, "FAR");
        svg.text(4.0, h / 2.0, 11.0, "1-FRR");
        // chance diagonal
        svg.line(m, h - m, w - 10.0, 10.0, "#bbb");
        let px = |far: f64| m + far * (w - m - 10.0);
        let py = |tpr: f64| (h - m) - tpr * (h - m - 10.0);
        let pts: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (px(p.far), py(1.0 - p.frr)))
            .collect();
        svg.polyline(&pts, "#d62728");
        let stem = file.file_stem().unwrap().to_string_lossy().to_string();
        svg.text(m + 6.0, 18.0, 11.0, &stem);
        let out = out_dir.join(format!("roc_{}.svg", stem.trim_start_matches("scores_")));
        svg.save(&out)?;
        report.written.push(out);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sample-weight histograms per step bucket
// ---------------------------------------------------------------------------

fn plot_weight_hist(run_dir: &Path, out_dir: &Path, report: &mut PlotReport) -> Result<()> {
    let records = RunLog::load_jsonl(&run_dir.join("runlog.jsonl"))?;
    let with_w: Vec<&StepRecord> = records.iter().filter(|r| r.w_values.is_some()).collect();
    if with_w.is_empty() {
        return Err(DrdgError::Config(
            "run log carries no weight vectors (log_weights off?)".into(),
        ));
    }
    let buckets = 4usize.min(with_w.len());
    let per = with_w.len().div_ceil(buckets);
    let bins = 20usize;
    let (pw, ph, m) = (300.0, 120.0, 34.0);
    let mut svg = Svg::new(pw, (ph + 18.0) * buckets as f64 + m);
    for b in 0..buckets {
        let chunk = &with_w[b * per..((b + 1) * per).min(with_w.len())];
        if chunk.is_empty() {
            continue;
        }
        let mut counts = vec![0usize; bins];
        let mut total = 0usize;
        for r in chunk {
            for &w in r.w_values.as_ref().unwrap() {
                let idx = ((w * bins as f64) as usize).min(bins - 1);
                counts[idx] += 1;
                total += 1;
            }
        }
        let peak = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
        let y0 = 14.0 + (ph + 18.0) * b as f64;
        svg.text(
            6.0,
            y0,
            10.0,
            &format!(
                "steps {}..{} ({} weights)",
                chunk.first().unwrap().t,
                chunk.last().unwrap().t,
                total
            ),
        );
        let bw = (pw - 2.0 * m) / bins as f64;
        for (i, &c) in counts.iter().enumerate() {
            let bh = (c as f64 / peak) * (ph - 24.0);
            svg.rect(
                m + i as f64 * bw,
                y0 + (ph - 20.0) - bh,
                bw - 1.0,
                bh,
                "#1f77b4",
            );
        }
        svg.line(m, y0 + ph - 20.0, pw - m, y0 + ph - 20.0, "#333");
        svg.text(m - 4.0, y0 + ph - 6.0, 9.0, "0");
        svg.text(pw - m - 4.0, y0 + ph - 6.0, 9.0, "1");
    }
    let out = out_dir.join("weight_hist.svg");
    svg.save(&out)?;
    report.written.push(out);
    Ok(())
}

// ---------------------------------------------------------------------------
// 2-D feature projection (PCA of pooled modulated features)
// ---------------------------------------------------------------------------

/// Deterministic top-2 principal directions via power iteration with
/// deflation.
fn pca_2d(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j] / n;
            }
        }
    }
    let power = |cov: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[0] = 1.0;
        for _ in 0..200 {
            let mut next = vec![0.0; d];
            for i in 0..d {
                for j in 0..d {
                    next[i] += cov[i * d + j] * v[j];
                }
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return v;
            }
            for x in next.iter_mut() {
                *x /= norm;
            }
            v = next;
        }
        v
    };
    let v1 = power(&cov);
    // deflate
    let lambda1: f64 = {
        let mut av = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                av[i] += cov[i * d + j] * v1[j];
            }
        }
        av.iter().zip(&v1).map(|(a, b)| a * b).sum()
    };
    let mut cov2 = cov.clone();
    for i in 0..d {
        for j in 0..d {
            cov2[i * d + j] -= lambda1 * v1[i] * v1[j];
        }
    }
    let v2 = power(&cov2);
    (v1, v2)
}

struct LoadedRun {
    state: ModelState,
    frm_enabled: bool,
}

fn load_final_state(run_dir: &Path) -> Result<LoadedRun> {
    let stem = run_dir.join("checkpoints").join("final");
    let (state, _report) = load_checkpoint(&stem)?;
    let meta: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(stem.with_extension("json"))
            .map_err(|e| DrdgError::io(stem.with_extension("json"), e))?,
    )?;
    let frm_enabled = meta["meta"]["extra"]["frm_enabled"].as_bool().unwrap_or(true);
    Ok(LoadedRun { state, frm_enabled })
}

/// Pooled modulated features, channel weights and sample weights for a
/// balanced slice of the sources.
fn forward_features(
    state: &ModelState,
    samples: &[(usize, &Sample)],
    frm_enabled: bool,
) -> Result<(Vec<Vec<f64>>, Tensor, Vec<f64>, Tensor)> {
    let n = samples.len();
    let (h, w) = state.arch.image_hw;
    let mut images = Tensor::zeros(&[n, h, w, 6]);
    let len = h * w * 6;
    for (i, (_, s)) in samples.iter().enumerate() {
        images.data_mut()[i * len..(i + 1) * len].copy_from_slice(s.image.data());
    }
    let labels: Vec<f64> = samples
        .iter()
        .map(|(_, s)| if s.live { 1.0 } else { 0.0 })
        .collect();
    let mut g = Graph::new();
    let bound = bind_params(&mut g, state, &[]);
    let x = g.constant(images);
    let pipe = fwd::pipeline(&mut g, &bound, &state.arch, x, frm_enabled)?;
    let pooled_id = g.global_avg_pool(pipe.f_frm)?;
    let pooled = g.value(pooled_id).clone();
    let a = match pipe.channel_weights {
        Some(id) => g.value(id).clone(),
        None => {
            let c = state.arch.feature_channels();
            Tensor::filled(&[n, c], 1.0 / c as f64)
        }
    };
    let w_id = fwd::srm(&mut g, &bound, pipe.f_frm, &labels)?;
    let weights = g.value(w_id).data().to_vec();
    let c = state.arch.feature_channels();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| pooled.data()[i * c..(i + 1) * c].to_vec())
        .collect();
    let f_frm = g.value(pipe.f_frm).clone();
    Ok((rows, a, weights, f_frm))
}

fn gather_samples(cfg: &RunConfig, cap_per_domain: usize) -> Result<Vec<(usize, Sample)>> {
    let data = prepare_data(cfg)?;
    let mut out = Vec::new();
    for (d, ds) in data.sources.iter().enumerate() {
        for s in ds.iter().take(cap_per_domain) {
            out.push((d, s.clone()));
        }
    }
    Ok(out)
}

fn plot_feature_scatter(
    run_dir: &Path,
    out_dir: &Path,
    cfg: &RunConfig,
    report: &mut PlotReport,
) -> Result<()> {
    let run = load_final_state(run_dir)?;
    let samples = gather_samples(cfg, 30)?;
    let refs: Vec<(usize, &Sample)> = samples.iter().map(|(d, s)| (*d, s)).collect();
    let (rows, _a, weights, _f) = forward_features(&run.state, &refs, run.frm_enabled)?;
    let (v1, v2) = pca_2d(&rows);
    let proj: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            (
                r.iter().zip(&v1).map(|(a, b)| a * b).sum(),
                r.iter().zip(&v2).map(|(a, b)| a * b).sum(),
            )
        })
        .collect();
    let (min_x, max_x) = proj
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
    let (min_y, max_y) = proj
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    let (w, h, m) = (360.0, 360.0, 30.0);
    let sx = |x: f64| m + (x - min_x) / (max_x - min_x + 1e-12) * (w - 2.0 * m);
    let sy = |y: f64| m + (y - min_y) / (max_y - min_y + 1e-12) * (h - 2.0 * m);
    let mut svg = Svg::new(w, h);
    svg.text(m, 16.0, 11.0, "pooled features, 2-D projection (size = W)");
    for (i, p) in proj.iter().enumerate() {
        let color = DOMAIN_COLORS[refs[i].0 % DOMAIN_COLORS.len()];
        let r = 2.0 + 6.0 * weights[i];
        svg.circle(sx(p.0), sy(p.1), r, color);
    }
    let out = out_dir.join("feature_scatter.svg");
    svg.save(&out)?;
    report.written.push(out);
    Ok(())
}

// ---------------------------------------------------------------------------
// Channel attention maps
// ---------------------------------------------------------------------------

fn plot_channel_attn(
    run_dir: &Path,
    out_dir: &Path,
    cfg: &RunConfig,
    report: &mut PlotReport,
) -> Result<()> {
    let run = load_final_state(run_dir)?;
    let samples = gather_samples(cfg, 2)?;
    let refs: Vec<(usize, &Sample)> = samples.iter().take(3).map(|(d, s)| (*d, s)).collect();
    if refs.is_empty() {
        return Err(DrdgError::Config("no samples for channel maps".into()));
    }
    let (_rows, a, _w, f_frm) = forward_features(&run.state, &refs, run.frm_enabled)?;
    let c = run.state.arch.feature_channels();
    let (fh, fw) = run.state.arch.feature_hw();
    let k = 3.min(c / 2);

    // rank channels by mean weight across the plotted samples
    let mut mean_a: Vec<(usize, f64)> = (0..c)
        .map(|ch| {
            let mean = (0..refs.len()).map(|i| a.data()[i * c + ch]).sum::<f64>()
                / refs.len() as f64;
            (ch, mean)
        })
        .collect();
    mean_a.sort_by(|x, y| y.1.total_cmp(&x.1));
    let top: Vec<usize> = mean_a[..k].iter().map(|(ch, _)| *ch).collect();
    let bottom: Vec<usize> = mean_a[c - k..].iter().map(|(ch, _)| *ch).collect();
    assert!(mean_a[0].1 >= mean_a[c - 1].1);

    let cell = 14.0;
    let map_w = fw as f64 * cell;
    let map_h = fh as f64 * cell;
    let cols = 2 * k;
    let (w, h) = (
        40.0 + cols as f64 * (map_w + 10.0),
        40.0 + refs.len() as f64 * (map_h + 26.0),
    );
    let mut svg = Svg::new(w, h);
    svg.text(10.0, 16.0, 11.0, &format!("top-{k} / bottom-{k} channels by weight"));
    for (row, _) in refs.iter().enumerate() {
        for (col, &ch) in top.iter().chain(bottom.iter()).enumerate() {
            let x0 = 30.0 + col as f64 * (map_w + 10.0);
            let y0 = 30.0 + row as f64 * (map_h + 26.0);
            // spatial energy of this channel for this sample
            let mut vals = Vec::with_capacity(fh * fw);
            for hh in 0..fh {
                for ww in 0..fw {
                    vals.push(f_frm.at4(row, hh, ww, ch).abs());
                }
            }
            let peak = vals.iter().copied().fold(0.0f64, f64::max).max(1e-12);
            for hh in 0..fh {
                for ww in 0..fw {
                    let v = vals[hh * fw + ww] / peak;
                    let shade = (255.0 * (1.0 - v)) as u8;
                    svg.rect(
                        x0 + ww as f64 * cell,
                        y0 + hh as f64 * cell,
                        cell,
                        cell,
                        &format!("rgb({0},{0},255)", shade),
                    );
                }
            }
            svg.text(
                x0,
                y0 + map_h + 12.0,
                9.0,
                &format!(
                    "ch{} A={:.3}{}",
                    ch,
                    a.data()[row * c + ch],
                    if col < k { " (top)" } else { " (low)" }
                ),
            );
        }
    }
    let out = out_dir.join("channel_attn.svg");
    svg.save(&out)?;
    report.written.push(out);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_projects_onto_dominant_direction() {
        // points along (1,1,0): first component must align with it
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 - 10.0;
                vec![t, t, 0.01 * t.sin()]
            })
            .collect();
        let (v1, v2) = pca_2d(&rows);
        assert!((v1[0].abs() - v1[1].abs()).abs() < 1e-6);
        assert!(v1[2].abs() < 0.05);
        let dot: f64 = v1.iter().zip(&v2).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-3, "components should be near-orthogonal");
    }

    #[test]
    fn kind_names_round_trip() {
        for k in PlotKind::ALL {
            assert_eq!(PlotKind::parse(k.name()), Some(k));
        }
        assert_eq!(PlotKind::parse("nope"), None);
    }
}
