//! Deterministic synthetic digit corpus.
//!
//! Digits are rendered from stroke skeletons (polylines and elliptical arcs
//! in a unit box) under per-image random affine jitter, stroke width,
//! intensity, and point wobble, then quantized to the same 8-bit grid an IDX
//! file carries. The generator is a hermetic stand-in for handwritten-digit
//! data when no IDX files are available: same 28x28 geometry, `[0,1]` pixel
//! range, and 10 balanced classes, with enough shape variation that a small
//! CNN lands near (but below) ceiling on clean data.

use rayon::prelude::*;

use crate::dataset::{ImageSet, Provenance, IMG_HW, IMG_PIXELS};
use crate::dataset::NoiseSpec;
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Scalar, Tensor};
use crate::Result;

type Point = (f64, f64);

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64, n: usize) -> Vec<Point> {
    (0..=n)
        .map(|i| {
            let t = a0 + (a1 - a0) * i as f64 / n as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

const TAU: f64 = std::f64::consts::TAU;

/// Stroke skeletons per digit, in unit coordinates (x right, y down).
fn skeleton(digit: u8) -> Vec<Vec<Point>> {
    match digit {
        0 => vec![arc(0.50, 0.50, 0.27, 0.38, 0.0, TAU, 28)],
        1 => vec![vec![(0.34, 0.26), (0.54, 0.10), (0.54, 0.90)]],
        2 => vec![
            vec![
                (0.25, 0.31),
                (0.29, 0.17),
                (0.43, 0.10),
                (0.59, 0.10),
                (0.72, 0.18),
                (0.75, 0.32),
                (0.68, 0.47),
                (0.50, 0.62),
                (0.33, 0.75),
                (0.25, 0.88),
            ],
            vec![(0.25, 0.88), (0.76, 0.88)],
        ],
        3 => vec![
            vec![
                (0.27, 0.19),
                (0.40, 0.10),
                (0.58, 0.10),
                (0.71, 0.21),
                (0.71, 0.34),
                (0.57, 0.46),
                (0.45, 0.49),
            ],
            vec![
                (0.45, 0.49),
                (0.61, 0.52),
                (0.73, 0.63),
                (0.73, 0.77),
                (0.59, 0.89),
                (0.41, 0.91),
                (0.27, 0.82),
            ],
        ],
        4 => vec![
            vec![(0.62, 0.10), (0.24, 0.60), (0.80, 0.60)],
            vec![(0.62, 0.10), (0.62, 0.92)],
        ],
        5 => vec![
            vec![(0.73, 0.10), (0.31, 0.10), (0.28, 0.44)],
            vec![
                (0.28, 0.44),
                (0.44, 0.37),
                (0.59, 0.39),
                (0.72, 0.51),
                (0.73, 0.68),
                (0.61, 0.84),
                (0.43, 0.90),
                (0.27, 0.81),
            ],
        ],
        6 => vec![
            vec![(0.67, 0.11), (0.48, 0.23), (0.35, 0.43), (0.29, 0.63)],
            arc(0.50, 0.68, 0.21, 0.21, 0.0, TAU, 22),
        ],
        7 => vec![vec![(0.23, 0.12), (0.77, 0.12), (0.46, 0.90)]],
        8 => vec![
            arc(0.50, 0.29, 0.19, 0.19, 0.0, TAU, 22),
            arc(0.50, 0.70, 0.23, 0.21, 0.0, TAU, 22),
        ],
        9 => vec![
            arc(0.50, 0.32, 0.21, 0.22, 0.0, TAU, 22),
            vec![(0.71, 0.36), (0.69, 0.62), (0.58, 0.90)],
        ],
        _ => unreachable!("digit out of range"),
    }
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { ((px - ax) * dx + (py - ay) * dy) / len2 } else { 0.0 };
    let t = t.clamp(0.0, 1.0);
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    let (ex, ey) = (px - cx, py - cy);
    (ex * ex + ey * ey).sqrt()
}

/// Render one digit into a 28x28 byte raster.
fn render_digit(digit: u8, rng: &mut Rng, out: &mut [u8]) {
    debug_assert_eq!(out.len(), IMG_PIXELS);

    // Per-image style: affine jitter, stroke width, peak intensity, wobble.
    let rot = rng.uniform(-0.20, 0.20);
    let shear = rng.uniform(-0.18, 0.18);
    let sx = rng.uniform(0.80, 1.10);
    let sy = rng.uniform(0.80, 1.10);
    let tx = rng.uniform(-2.2, 2.2);
    let ty = rng.uniform(-2.2, 2.2);
    let width = rng.uniform(1.1, 2.3);
    let peak = rng.uniform(0.55, 1.0);
    let wobble = 0.014;

    let (cosr, sinr) = (rot.cos(), rot.sin());
    let scale = 19.0; // glyph box in pixels
    let center = IMG_HW as f64 / 2.0;

    // Transform skeleton points into pixel coordinates.
    let mut segments: Vec<(Point, Point)> = Vec::new();
    for stroke in skeleton(digit) {
        let pts: Vec<Point> = stroke
            .iter()
            .map(|&(x, y)| {
                let (ux, uy) = (
                    x - 0.5 + rng.uniform(-wobble, wobble),
                    y - 0.5 + rng.uniform(-wobble, wobble),
                );
                let (hx, hy) = (ux + shear * uy, uy);
                let (rx, ry) = (cosr * hx - sinr * hy, sinr * hx + cosr * hy);
                (center + scale * sx * rx + tx, center + scale * sy * ry + ty)
            })
            .collect();
        for pair in pts.windows(2) {
            segments.push((pair[0], pair[1]));
        }
    }

    let half = width / 2.0;
    for py in 0..IMG_HW {
        for px in 0..IMG_HW {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let mut d = f64::INFINITY;
            for &(a, b) in &segments {
                let s = dist_to_segment(p, a, b);
                if s < d {
                    d = s;
                }
            }
            // 1px antialias band around the stroke core.
            let v = ((half + 0.5 - d).clamp(0.0, 1.0)) * peak;
            out[py * IMG_HW + px] = (v * 255.0).round() as u8;
        }
    }
}

/// Raw byte raster form, ready to write as IDX.
pub fn synth_digit_bytes(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut pixels = vec![0u8; n * IMG_PIXELS];
    let labels: Vec<u8> = (0..n)
        .map(|i| (Rng::new(derive_seed(seed, i as u64)).next_below(10)) as u8)
        .collect();
    pixels
        .par_chunks_mut(IMG_PIXELS)
        .enumerate()
        .for_each(|(i, chunk)| {
            let mut rng = Rng::new(derive_seed(seed, i as u64));
            let label = rng.next_below(10) as u8;
            render_digit(label, &mut rng, chunk);
        });
    (pixels, labels)
}

/// Deterministic synthetic digit set: `n` images for the given seed.
pub fn synth_digits<T: Scalar>(n: usize, seed: u64) -> Result<ImageSet<T>> {
    let (pixels, labels) = synth_digit_bytes(n, seed);
    let data: Vec<T> = pixels.iter().map(|&b| T::from_f64(b as f64 / 255.0)).collect();
    let images = Tensor::new(vec![n, 1, IMG_HW, IMG_HW], data)?;
    ImageSet::new(images, labels, Provenance::new("synthetic-v1", NoiseSpec::Clean, seed))
}
