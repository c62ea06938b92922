//! RGB-D ingestion: manifests, normalization, LR simulation, patch cropping,
//! and the synthetic scene generator for dataset-free runs.

pub mod image_io;
mod synth;

pub use synth::synth_dataset;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{bicubic_resize, Shape, Tensor};

/// Min/max depth values backing a sample's [0, 1] normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthAnchors {
    pub min: f32,
    pub max: f32,
}

impl DepthAnchors {
    pub fn range(&self) -> f32 {
        self.max - self.min
    }
}

/// One (RGB guidance, LR depth, HR depth) triple, depths normalized to [0, 1].
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub rgb: Tensor<f32>,
    pub lr_depth: Tensor<f32>,
    pub hr_depth: Tensor<f32>,
    pub anchors: DepthAnchors,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One manifest line: id, RGB file, HR depth file, optional real LR depth.
#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub id: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub lr_depth: Option<PathBuf>,
}

/// Parsed dataset manifest; entries are sorted by id.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    pub scale: usize,
}

impl DatasetManifest {
    /// Reads a tab-separated manifest: `<id>\t<rgb>\t<depth>[\t<lr_depth>]`
    /// per line, paths relative to the manifest's directory.
    pub fn load(path: &Path, split: Split, scale: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 || fields.len() > 4 {
                return Err(Error::data(
                    path,
                    format!("line {}: expected 3 or 4 tab-separated fields", lineno + 1),
                ));
            }
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                rgb: root.join(fields[1]),
                depth: root.join(fields[2]),
                lr_depth: fields.get(3).map(|f| root.join(f)),
            });
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(DatasetManifest { root, entries, split, scale })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Writes manifest lines with paths relative to `dir`.
pub fn write_manifest(dir: &Path, entries: &[(String, String, String)]) -> Result<PathBuf> {
    let path = dir.join("manifest.tsv");
    let mut text = String::new();
    for (id, rgb, depth) in entries {
        text.push_str(&format!("{id}\t{rgb}\t{depth}\n"));
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn normalize_depth(raw: &[u16], w: usize, h: usize, anchors: DepthAnchors) -> Tensor<f32> {
    let range = anchors.range();
    let data = raw
        .iter()
        .map(|&v| (((v as f32) - anchors.min) / range).clamp(0.0, 1.0))
        .collect();
    Tensor::new(Shape::new(1, 1, h, w), data).expect("raster length checked by the decoder")
}

/// Loads one manifest entry: RGB scaled to [0, 1], depth min-max normalized
/// with the anchors retained, and the LR depth simulated by bicubic
/// downsampling unless the entry carries a real LR file (which is then
/// normalized with the HR anchors so both live in one depth scale).
pub fn load_sample(entry: &ManifestEntry, scale: usize) -> Result<Sample> {
    let rgb = image_io::load_rgb(&entry.rgb)?;
    let (dw, dh, raw) = image_io::load_depth_u16(&entry.depth)?;
    let rs = rgb.shape();
    if rs.h != dh || rs.w != dw {
        return Err(Error::data(
            &entry.depth,
            format!("depth is {dw}x{dh} but RGB is {}x{}", rs.w, rs.h),
        ));
    }
    let (min, max) = raw.iter().fold((u16::MAX, u16::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if min == max {
        return Err(Error::data(&entry.depth, format!("zero depth range (constant {min})")));
    }
    let anchors = DepthAnchors { min: min as f32, max: max as f32 };
    let hr_depth = normalize_depth(&raw, dw, dh, anchors);
    let lr_depth = match &entry.lr_depth {
        Some(lr_path) => {
            let (lw, lh, lr_raw) = image_io::load_depth_u16(lr_path)?;
            normalize_depth(&lr_raw, lw, lh, anchors)
        }
        None => simulate_lr(&hr_depth, scale)?,
    };
    Ok(Sample { id: entry.id.clone(), rgb, lr_depth, hr_depth, anchors })
}

/// Bicubic downsampling of an HR depth map by integer factor `s`.
pub fn simulate_lr(hr_depth: &Tensor<f32>, s: usize) -> Result<Tensor<f32>> {
    let shape = hr_depth.shape();
    if s == 0 || shape.h % s != 0 || shape.w % s != 0 {
        return Err(Error::invalid(
            "simulate_lr",
            format!("spatial extent {}x{} not divisible by scale {s}", shape.h, shape.w),
        ));
    }
    bicubic_resize(hr_depth, shape.h / s, shape.w / s)
}

/// Crops an aligned (RGB, HR, LR) patch. HR-space offsets are drawn uniformly
/// on multiples of `scale` so the LR window stays grid-aligned.
pub fn random_crop(
    sample: &Sample,
    patch: usize,
    scale: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let s = sample.hr_depth.shape();
    if patch > s.h || patch > s.w {
        return Err(Error::invalid(
            "random_crop",
            format!("patch {patch} exceeds image extent {}x{}", s.h, s.w),
        ));
    }
    if patch == 0 || patch % scale != 0 {
        return Err(Error::invalid(
            "random_crop",
            format!("patch {patch} not divisible by scale {scale}"),
        ));
    }
    let positions_y = (s.h - patch) / scale + 1;
    let positions_x = (s.w - patch) / scale + 1;
    let off_y = scale * rng.gen_range(0..positions_y);
    let off_x = scale * rng.gen_range(0..positions_x);

    let crop = |t: &Tensor<f32>, oy: usize, ox: usize, size: usize| {
        Tensor::from_fn(Shape::new(1, t.shape().c, size, size), |_, c, h, w| {
            t.at(0, c, oy + h, ox + w)
        })
    };
    Ok(Sample {
        id: sample.id.clone(),
        rgb: crop(&sample.rgb, off_y, off_x, patch),
        hr_depth: crop(&sample.hr_depth, off_y, off_x, patch),
        lr_depth: crop(&sample.lr_depth, off_y / scale, off_x / scale, patch / scale),
        anchors: sample.anchors,
    })
}

/// Affine inverse of the loader's min-max normalization.
pub fn denormalize(depth: &Tensor<f32>, anchors: DepthAnchors) -> Tensor<f32> {
    let range = anchors.range();
    depth.map(|v| v * range + anchors.min)
}

/// Denormalized depth as quantized 16-bit values, clamped to the u16 range.
pub fn to_u16_raster(depth: &Tensor<f32>, anchors: DepthAnchors) -> Vec<u16> {
    denormalize(depth, anchors)
        .data()
        .iter()
        .map(|&v| v.clamp(0.0, 65535.0).round() as u16)
        .collect()
}
