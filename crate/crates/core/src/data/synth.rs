//! Synthetic RGB-D scene generator.
//!
//! Scenes are overlapping rectangles and ellipses at distinct constant
//! depths over a far background, so every depth map is piecewise constant.
//! Object outlines appear in both RGB and depth; the striped texture painted
//! inside each object exists in RGB only and must not leak into a predicted
//! depth map. Output is byte-exact for a given seed.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{image_io, write_manifest, DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum ShapeKind {
    Rect,
    Ellipse,
}

struct Object {
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    depth: u16,
    color: [u8; 3],
    stripe_color: [u8; 3],
    stripe_period: usize,
    stripe_axis: u8, // 0 horizontal, 1 vertical, 2 diagonal
}

impl Object {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 - self.cy;
        let dx = x as f64 - self.cx;
        match self.kind {
            ShapeKind::Rect => dy.abs() <= self.ry && dx.abs() <= self.rx,
            ShapeKind::Ellipse => (dy / self.ry).powi(2) + (dx / self.rx).powi(2) <= 1.0,
        }
    }

    fn color_at(&self, y: usize, x: usize) -> [u8; 3] {
        let phase = match self.stripe_axis {
            0 => y,
            1 => x,
            _ => y + x,
        };
        if (phase / self.stripe_period) % 2 == 0 {
            self.color
        } else {
            self.stripe_color
        }
    }
}

fn pick_depth(rng: &mut ChaCha8Rng, taken: &[u16]) -> u16 {
    // Levels stay >= 1000 apart so quantization can never merge them.
    loop {
        let d = rng.gen_range(5..=40) as u16 * 1000;
        if taken.iter().all(|&t| t.abs_diff(d) >= 1000) {
            return d;
        }
    }
}

/// Generates `count` scenes of `size` x `size` pixels under `out_dir` and
/// writes a manifest referencing them. Depth goes to 16-bit PGM, RGB to PPM.
pub fn synth_dataset(count: usize, size: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::invalid("synth_dataset", format!("size {size} must be a positive multiple of 16")));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest_lines = Vec::with_capacity(count);
    let mut entries = Vec::with_capacity(count);

    for scene in 0..count {
        let background_depth = rng.gen_range(45..=60) as u16 * 1000;
        let background_color = [
            rng.gen_range(150..=210) as u8,
            rng.gen_range(150..=210) as u8,
            rng.gen_range(150..=210) as u8,
        ];
        let n_objects = rng.gen_range(3..=6);
        let mut depths = vec![background_depth];
        let mut objects: Vec<Object> = (0..n_objects)
            .map(|_| {
                let depth = pick_depth(&mut rng, &depths);
                depths.push(depth);
                let margin = 3.0;
                let span = size as f64;
                let base = [
                    rng.gen_range(30..=220) as u8,
                    rng.gen_range(30..=220) as u8,
                    rng.gen_range(30..=220) as u8,
                ];
                // Stripes modulate the base color; still an RGB-only edge.
                let stripe = base.map(|c| ((c as f64) * 0.55) as u8);
                Object {
                    kind: if rng.gen_bool(0.5) { ShapeKind::Rect } else { ShapeKind::Ellipse },
                    cy: rng.gen_range(margin..span - margin),
                    cx: rng.gen_range(margin..span - margin),
                    ry: rng.gen_range(span / 8.0..span / 3.0),
                    rx: rng.gen_range(span / 8.0..span / 3.0),
                    depth,
                    color: base,
                    stripe_color: stripe,
                    stripe_period: rng.gen_range(3..=8),
                    stripe_axis: rng.gen_range(0..3),
                }
            })
            .collect();
        // Painter's order: far objects first, so nearer ones occlude.
        objects.sort_by(|a, b| b.depth.cmp(&a.depth));

        let mut depth = vec![background_depth; size * size];
        let mut rgb = vec![0u8; size * size * 3];
        for y in 0..size {
            for x in 0..size {
                let mut d = background_depth;
                let mut c = background_color;
                // A 2-pixel border strip stays background, guaranteeing at
                // least two depth levels per scene.
                let in_border = y < 2 || x < 2 || y >= size - 2 || x >= size - 2;
                if !in_border {
                    for obj in &objects {
                        if obj.contains(y, x) {
                            d = obj.depth;
                            c = obj.color_at(y, x);
                        }
                    }
                }
                depth[y * size + x] = d;
                rgb[(y * size + x) * 3..(y * size + x) * 3 + 3].copy_from_slice(&c);
            }
        }

        let id = format!("scene_{scene:03}");
        let rgb_name = format!("{id}.ppm");
        let depth_name = format!("{id}.pgm");
        let rgb_path = out_dir.join(&rgb_name);
        let depth_path = out_dir.join(&depth_name);
        write_ppm_raw(&rgb_path, size, size, &rgb)?;
        image_io::save_depth_u16(&depth_path, size, size, &depth)?;
        manifest_lines.push((id.clone(), rgb_name, depth_name));
        entries.push(ManifestEntry { id, rgb: rgb_path, depth: depth_path, lr_depth: None });
    }

    let root = write_manifest(out_dir, &manifest_lines)?;
    Ok(DatasetManifest {
        root: root.parent().unwrap().to_path_buf(),
        entries,
        split: Split::Train,
        scale: 1,
    })
}

fn write_ppm_raw(path: &Path, w: usize, h: usize, interleaved: &[u8]) -> Result<()> {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(interleaved);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
