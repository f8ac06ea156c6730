//! Real-image ingestion from a `root/<domain>/<live|spoof>/*` layout, plus
//! dataset export/import through the array container.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use crate::container::ArrayContainer;
use crate::error::{DrdgError, Result};
use crate::tensor::Tensor;

use super::{make_pseudo_depth, rgb_to_hsv, BlobGeometry, DomainSpec, GenConfig, Sample};

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub image_hw: (usize, usize),
    pub depth_hw: (usize, usize),
    /// Explicit domain subdirectory order; defaults to sorted directory names.
    pub domains: Option<Vec<String>>,
    /// Blob radius assumed when synthesizing a live depth prior.
    pub prior_radius: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            image_hw: (32, 32),
            depth_hw: (16, 16),
            domains: None,
            prior_radius: 0.32,
        }
    }
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub warnings: Vec<String>,
    /// Files skipped because they could not be decoded.
    pub skipped: usize,
    /// Samples whose depth target had to be synthesized.
    pub synthesized_depth: usize,
}

const IMAGE_EXTS: &[&str] = &["png", "jpg", "jpeg"];
const DEPTH_SUFFIX: &str = ".depth.png";

fn is_depth_file(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.ends_with(DEPTH_SUFFIX))
        .unwrap_or(false)
}

fn depth_path_for(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("x");
    path.with_file_name(format!("{}{}", stem, DEPTH_SUFFIX))
}

fn load_rgb(path: &Path, hw: (usize, usize)) -> std::result::Result<Tensor, String> {
    let img = image::open(path).map_err(|e| format!("{}: {}", path.display(), e))?;
    let resized = img.resize_exact(hw.1 as u32, hw.0 as u32, FilterType::Triangle);
    let rgb = resized.to_rgb8();
    let mut out = Tensor::zeros(&[hw.0, hw.1, 3]);
    let data = out.data_mut();
    for (i, px) in rgb.pixels().enumerate() {
        data[i * 3] = px.0[0] as f64 / 255.0;
        data[i * 3 + 1] = px.0[1] as f64 / 255.0;
        data[i * 3 + 2] = px.0[2] as f64 / 255.0;
    }
    Ok(out)
}

fn load_depth(path: &Path, hw: (usize, usize)) -> std::result::Result<Tensor, String> {
    let img = image::open(path).map_err(|e| format!("{}: {}", path.display(), e))?;
    let resized = img.resize_exact(hw.1 as u32, hw.0 as u32, FilterType::Triangle);
    let gray = resized.to_luma8();
    let mut out = Tensor::zeros(&[hw.0, hw.1]);
    for (i, px) in gray.pixels().enumerate() {
        out.data_mut()[i] = px.0[0] as f64 / 255.0;
    }
    Ok(out)
}

fn sorted_dirs(root: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| DrdgError::io(root, e))? {
        let entry = entry.map_err(|e| DrdgError::io(root, e))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().to_string());
        }
    }
    names.sort();
    Ok(names)
}

/// Read `root/<domain>/<live|spoof>/*.{png,jpg,jpeg}` into per-domain sample
/// lists. Images resize to the configured size; HSV channels are appended
/// from the resized RGB. A sibling `<stem>.depth.png` supplies the depth
/// target; otherwise it is synthesized (radial prior for live, zeros for
/// spoof) with a warning. Undecodable files are skipped with a warning; an
/// empty class directory is a configuration error.
pub fn ingest_directory(
    root: &Path,
    options: &IngestOptions,
) -> Result<(Vec<Vec<Sample>>, IngestReport)> {
    let domains = match &options.domains {
        Some(d) => d.clone(),
        None => sorted_dirs(root)?,
    };
    if domains.len() < 2 {
        return Err(DrdgError::Config(format!(
            "need at least 2 domain directories under {}, found {}",
            root.display(),
            domains.len()
        )));
    }
    let mut report = IngestReport::default();
    let mut datasets = Vec::with_capacity(domains.len());
    for (domain_id, domain) in domains.iter().enumerate() {
        let mut samples = Vec::new();
        for (class, live) in [("live", true), ("spoof", false)] {
            let dir = root.join(domain).join(class);
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| DrdgError::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
                        .unwrap_or(false)
                        && !is_depth_file(p)
                })
                .collect();
            files.sort();
            let mut class_count = 0usize;
            for file in files {
                let rgb = match load_rgb(&file, options.image_hw) {
                    Ok(t) => t,
                    Err(msg) => {
                        report.warnings.push(format!("skipped unreadable {}", msg));
                        report.skipped += 1;
                        continue;
                    }
                };
                let (hsv, clamps) = rgb_to_hsv(&rgb)?;
                if clamps > 0 {
                    report
                        .warnings
                        .push(format!("{}: {} pixels clamped", file.display(), clamps));
                }
                let (h, w) = options.image_hw;
                let mut image = Tensor::zeros(&[h, w, 6]);
                for px in 0..h * w {
                    image.data_mut()[px * 6..px * 6 + 3]
                        .copy_from_slice(&rgb.data()[px * 3..px * 3 + 3]);
                    image.data_mut()[px * 6 + 3..px * 6 + 6]
                        .copy_from_slice(&hsv.data()[px * 3..px * 3 + 3]);
                }
                let depth_file = depth_path_for(&file);
                let depth_target = if live && depth_file.exists() {
                    match load_depth(&depth_file, options.depth_hw) {
                        Ok(t) => t,
                        Err(msg) => {
                            report
                                .warnings
                                .push(format!("bad depth map, synthesized instead: {}", msg));
                            report.synthesized_depth += 1;
                            synth_depth(options, live)?
                        }
                    }
                } else {
                    if live {
                        report.warnings.push(format!(
                            "{}: no depth map, synthesized radial prior",
                            file.display()
                        ));
                    }
                    report.synthesized_depth += 1;
                    synth_depth(options, live)?
                };
                samples.push(Sample {
                    image,
                    live,
                    domain_id,
                    depth_target,
                });
                class_count += 1;
            }
            if class_count == 0 {
                return Err(DrdgError::Config(format!(
                    "no usable {} images under {}",
                    class,
                    dir.display()
                )));
            }
        }
        datasets.push(samples);
    }
    Ok((datasets, report))
}

fn synth_depth(options: &IngestOptions, live: bool) -> Result<Tensor> {
    make_pseudo_depth(
        &BlobGeometry::centered(options.prior_radius, live),
        options.depth_hw,
    )
}

// ---------------------------------------------------------------------------
// Dataset export / import
// ---------------------------------------------------------------------------

/// Write per-domain sample lists as one array container plus a manifest
/// carrying specs, seed and generation config.
pub fn export_datasets(
    stem: &Path,
    datasets: &[Vec<Sample>],
    specs: &[DomainSpec],
    gen: &GenConfig,
    seed: u64,
) -> Result<()> {
    let mut c = ArrayContainer::new();
    for (d, samples) in datasets.iter().enumerate() {
        let n = samples.len();
        if n == 0 {
            return Err(DrdgError::Config(format!("domain {} is empty", d)));
        }
        let ishape = samples[0].image.shape().to_vec();
        let dshape = samples[0].depth_target.shape().to_vec();
        let mut images = Tensor::zeros(&[n, ishape[0], ishape[1], ishape[2]]);
        let mut depth = Tensor::zeros(&[n, dshape[0], dshape[1]]);
        let mut labels = Tensor::zeros(&[n]);
        let img_len: usize = ishape.iter().product();
        let dep_len: usize = dshape.iter().product();
        for (i, s) in samples.iter().enumerate() {
            images.data_mut()[i * img_len..(i + 1) * img_len].copy_from_slice(s.image.data());
            depth.data_mut()[i * dep_len..(i + 1) * dep_len]
                .copy_from_slice(s.depth_target.data());
            labels.data_mut()[i] = if s.live { 1.0 } else { 0.0 };
        }
        c.insert(&format!("domain{}/images", d), images);
        c.insert(&format!("domain{}/labels", d), labels);
        c.insert(&format!("domain{}/depth", d), depth);
    }
    let meta = serde_json::json!({
        "kind": "drdg-dataset",
        "specs": specs,
        "gen": gen,
        "seed": seed,
        "num_domains": datasets.len(),
    });
    c.save(stem, meta)
}

/// Read a container written by [`export_datasets`].
pub fn import_datasets(stem: &Path) -> Result<Vec<Vec<Sample>>> {
    let (c, manifest) = ArrayContainer::load(stem)?;
    let num_domains = manifest.meta["num_domains"]
        .as_u64()
        .ok_or_else(|| DrdgError::Checkpoint("manifest missing num_domains".into()))?
        as usize;
    let mut datasets = Vec::with_capacity(num_domains);
    for d in 0..num_domains {
        let images = c
            .get(&format!("domain{}/images", d))
            .ok_or_else(|| DrdgError::Checkpoint(format!("missing domain{}/images", d)))?;
        let labels = c
            .get(&format!("domain{}/labels", d))
            .ok_or_else(|| DrdgError::Checkpoint(format!("missing domain{}/labels", d)))?;
        let depth = c
            .get(&format!("domain{}/depth", d))
            .ok_or_else(|| DrdgError::Checkpoint(format!("missing domain{}/depth", d)))?;
        let n = images.shape()[0];
        let img_len: usize = images.shape()[1..].iter().product();
        let dep_len: usize = depth.shape()[1..].iter().product();
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let image = Tensor::from_vec(
                &images.shape()[1..],
                images.data()[i * img_len..(i + 1) * img_len].to_vec(),
            )?;
            let depth_target = Tensor::from_vec(
                &depth.shape()[1..],
                depth.data()[i * dep_len..(i + 1) * dep_len].to_vec(),
            )?;
            samples.push(Sample {
                image,
                live: labels.data()[i] != 0.0,
                domain_id: d,
                depth_target,
            });
        }
        datasets.push(samples);
    }
    Ok(datasets)
}
