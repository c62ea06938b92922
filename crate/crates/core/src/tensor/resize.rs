//! Bicubic resampling with the Catmull-Rom kernel (a = -0.5).
//!
//! Half-pixel-center coordinate mapping and edge-clamped taps, for both up-
//! and down-scaling. Weights are evaluated in f64 regardless of the tensor
//! dtype so that constant inputs reproduce bit-exactly in f32. This routine
//! is intentionally outside the autodiff graph: it prepares inputs and
//! targets, it is never part of the learned function.

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Catmull-Rom tap weights for fractional offset `t` in [0, 1), covering
/// source samples at relative positions -1, 0, 1, 2.
fn catmull_rom_weights(t: f64) -> [f64; 4] {
    [
        ((-0.5 * t + 1.0) * t - 0.5) * t,
        (1.5 * t - 2.5) * t * t + 1.0,
        ((-1.5 * t + 2.0) * t + 0.5) * t,
        (0.5 * t - 0.5) * t * t,
    ]
}

/// Per-output-index tap positions (edge-clamped) and weights for one axis.
fn axis_plan(in_size: usize, out_size: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = in_size as f64 / out_size as f64;
    (0..out_size)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            let clamp = |i: isize| i.clamp(0, in_size as isize - 1) as usize;
            (
                [clamp(base - 1), clamp(base), clamp(base + 1), clamp(base + 2)],
                catmull_rom_weights(t),
            )
        })
        .collect()
}

pub fn bicubic_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bicubic_resize", "output extent must be >= 1"));
    }
    let s = input.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::invalid("bicubic_resize", "input has empty spatial extent"));
    }
    let w_plan = axis_plan(s.w, out_w);
    let h_plan = axis_plan(s.h, out_h);
    let planes = s.n * s.c;
    let src = input.data();

    // Horizontal pass in f64, then vertical.
    let mut mid = vec![0.0f64; planes * s.h * out_w];
    for p in 0..planes {
        for row in 0..s.h {
            let src_row = &src[(p * s.h + row) * s.w..(p * s.h + row + 1) * s.w];
            let dst_row = &mut mid[(p * s.h + row) * out_w..(p * s.h + row + 1) * out_w];
            for (o, (taps, wts)) in w_plan.iter().enumerate() {
                let mut acc = 0.0;
                for (tap, wt) in taps.iter().zip(wts) {
                    acc += src_row[*tap].as_f64() * wt;
                }
                dst_row[o] = acc;
            }
        }
    }
    let mut out = vec![T::zero(); planes * out_h * out_w];
    for p in 0..planes {
        let plane = &mid[p * s.h * out_w..(p + 1) * s.h * out_w];
        for (o, (taps, wts)) in h_plan.iter().enumerate() {
            let dst_row = &mut out[(p * out_h + o) * out_w..(p * out_h + o + 1) * out_w];
            for (col, dst) in dst_row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (tap, wt) in taps.iter().zip(wts) {
                    acc += plane[tap * out_w + col] * wt;
                }
                *dst = T::from_f64(acc);
            }
        }
    }
    Tensor::new(Shape::new(s.n, s.c, out_h, out_w), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_weights_sum_to_one() {
        for i in 0..=20 {
            let t = i as f64 / 20.0 * 0.999;
            let w = catmull_rom_weights(t);
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "t={t} sum={sum}");
        }
        assert_eq!(catmull_rom_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_image_is_exact_in_f32() {
        let img = Tensor::<f32>::full(Shape::new(1, 2, 7, 5), 0.3127);
        for (oh, ow) in [(14, 10), (3, 2), (7, 5), (29, 17)] {
            let out = bicubic_resize(&img, oh, ow).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.3127), "{oh}x{ow}");
        }
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = Tensor::<f64>::from_fn(Shape::new(1, 1, 6, 6), |_, _, h, w| {
            (h as f64 * 0.37 + w as f64 * 0.11).sin()
        });
        let out = bicubic_resize(&img, 6, 6).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_ramp_reproduced_at_interior() {
        // Horizontal ramp, x2 upsample: interior columns follow the ramp.
        let w_in = 16;
        let img = Tensor::<f64>::from_fn(Shape::new(1, 1, 4, w_in), |_, _, _, w| {
            0.25 * w as f64 + 1.0
        });
        let out = bicubic_resize(&img, 4, w_in * 2).unwrap();
        for col in 4..w_in * 2 - 4 {
            let src = (col as f64 + 0.5) * 0.5 - 0.5;
            let expect = 0.25 * src + 1.0;
            let got = out.at(0, 0, 2, col);
            assert!((got - expect).abs() < 1e-5, "col {col}: {got} vs {expect}");
        }
    }

    #[test]
    fn smooth_roundtrip_beats_nearest_neighbor() {
        let size = 32;
        let img = Tensor::<f64>::from_fn(Shape::new(1, 1, size, size), |_, _, h, w| {
            let x = w as f64 / size as f64;
            let y = h as f64 / size as f64;
            (2.0 * std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).cos()
        });
        let down = bicubic_resize(&img, size / 4, size / 4).unwrap();
        let up = bicubic_resize(&down, size, size).unwrap();

        // Nearest-neighbor round trip of the same image.
        let nn_down = Tensor::<f64>::from_fn(Shape::new(1, 1, size / 4, size / 4), |_, _, h, w| {
            img.at(0, 0, h * 4, w * 4)
        });
        let nn_up = Tensor::<f64>::from_fn(Shape::new(1, 1, size, size), |_, _, h, w| {
            nn_down.at(0, 0, h / 4, w / 4)
        });
        let rmse = |a: &Tensor<f64>, b: &Tensor<f64>| {
            let s: f64 =
                a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            (s / a.numel() as f64).sqrt()
        };
        assert!(rmse(&up, &img) < rmse(&nn_up, &img));
    }
}
