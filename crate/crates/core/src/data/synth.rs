//! Seeded synthetic fingerprints for pipeline tests without licensed data.
//!
//! Live samples are elliptic ridge patterns with a smooth warp and mild
//! sensor noise. Spoof samples share the ridge pattern of the same seed and
//! add 2–5 straight scar strokes and heavy noise (σ 10–20 grey levels), then
//! a Gaussian blur (σ 1.5–2.5) that removes most high-frequency energy.

use std::f64::consts::PI;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Label, SampleRecord, Source, Split};

const CORRUPTION_STREAM: u64 = 1;
const LIVE_NOISE_STREAM: u64 = 2;

struct Ridges {
    wavelength: f64,
    amplitude: f64,
    centre: (f64, f64),
    aspect: f64,
    phase: f64,
    warp: [(f64, f64, f64); 2],
}

impl Ridges {
    fn draw(rng: &mut ChaCha8Rng, size: f64) -> Self {
        let mut warp = || (rng.random_range(0.6..1.4), rng.random_range(0.8..2.0) * PI / size, rng.random_range(0.0..2.0 * PI));
        let warp = [warp(), warp()];
        Ridges {
            wavelength: rng.random_range(8.0..12.0),
            amplitude: rng.random_range(70.0..100.0),
            centre: (rng.random_range(0.3..0.7) * size, rng.random_range(0.3..0.7) * size),
            aspect: rng.random_range(0.85..1.15),
            phase: rng.random_range(0.0..2.0 * PI),
            warp,
        }
    }

    fn render(&self, size: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 - self.centre.0;
                let dy = (y as f64 - self.centre.1) * self.aspect;
                let r = (dx * dx + dy * dy).sqrt();
                let [(a1, f1, p1), (a2, f2, p2)] = self.warp;
                let warp = a1 * (f1 * x as f64 + p1).sin() + a2 * (f2 * y as f64 + p2).cos();
                let theta = 2.0 * PI * r / self.wavelength + warp + self.phase;
                out.push(128.0 + self.amplitude * theta.cos());
            }
        }
        out
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with clamped borders.
fn blur(img: &[f64], size: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let at = |i: isize| i.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..size {
        for x in 0..size {
            tmp[y * size + x] = k.iter().enumerate().map(|(j, &w)| w * img[y * size + at(x as isize + j as isize - r)]).sum();
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = k.iter().enumerate().map(|(j, &w)| w * tmp[at(y as isize + j as isize - r) * size + x]).sum();
        }
    }
    out
}

fn draw_scar(img: &mut [f64], size: usize, rng: &mut ChaCha8Rng) {
    let s = size as f64;
    let (x0, y0) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
    let angle = rng.random_range(0.0..PI);
    let length = rng.random_range(0.3..0.8) * s;
    let half_width = rng.random_range(0.6..1.6) * (s / 256.0).max(1.0);
    let value = if rng.random_bool(0.5) { rng.random_range(10.0..50.0) } else { rng.random_range(205.0..245.0) };
    let (dx, dy) = (angle.cos(), angle.sin());
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 - x0, y as f64 - y0);
            let along = px * dx + py * dy;
            let across = (-px * dy + py * dx).abs();
            if (0.0..=length).contains(&along) && across <= half_width {
                img[y * size + x] = value;
            }
        }
    }
}

fn add_noise(img: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    img.iter_mut().for_each(|v| *v += n.sample(rng));
}

fn quantize(img: &[f64], size: usize) -> GrayImage {
    let px = img.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    GrayImage::from_raw(size as u32, size as u32, px).expect("square buffer")
}

/// A `size × size` synthetic fingerprint fully determined by `(seed, label)`.
pub fn synth_fingerprint(seed: u64, label: Label, size: usize) -> SampleRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ridges = Ridges::draw(&mut rng, size as f64);
    let mut img = ridges.render(size);
    match label {
        Label::Live => {
            let mut noise = ChaCha8Rng::seed_from_u64(seed);
            noise.set_stream(LIVE_NOISE_STREAM);
            let sigma = noise.random_range(3.0..6.0);
            add_noise(&mut img, sigma, &mut noise);
        }
        Label::Spoof => {
            let mut c = ChaCha8Rng::seed_from_u64(seed);
            c.set_stream(CORRUPTION_STREAM);
            for _ in 0..c.random_range(2..=5) {
                draw_scar(&mut img, size, &mut c);
            }
            let noise = c.random_range(10.0..20.0);
            add_noise(&mut img, noise, &mut c);
            let sigma = c.random_range(1.5..2.5);
            img = blur(&img, size, sigma);
        }
    }
    SampleRecord {
        id: format!("{}_{seed:016x}", label.dir_name()),
        label,
        source: Source::Synthetic { seed },
        image: quantize(&img, size),
    }
}

/// Mean absolute 4-neighbour Laplacian over interior pixels.
pub fn laplacian_energy(image: &GrayImage) -> f64 {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let p = |x: usize, y: usize| image.as_raw()[y * w + x] as f64;
    let mut total = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            total += (p(x - 1, y) + p(x + 1, y) + p(x, y - 1) + p(x, y + 1) - 4.0 * p(x, y)).abs();
        }
    }
    total / ((w - 2) * (h - 2)) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_live: usize,
    pub n_spoof: usize,
    pub seed: u64,
    pub size: usize,
}

fn split_base(seed: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) & !((1 << 41) - 1)
}

/// Offset separating test sample seeds from train sample seeds.
const TEST_OFFSET: u64 = 1 << 40;

fn train_count(n: usize) -> usize {
    (8 * n + 5) / 10
}

/// Deterministic 80/20 split per class. Sample `i` of either class uses seed
/// `base + i` (train) or `base + 2^40 + i` (test), so live and spoof samples
/// with the same index share a ridge pattern and the two seed ranges are disjoint.
pub fn make_synthetic_split(spec: SyntheticSpec) -> (Dataset, Dataset) {
    let base = split_base(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, n) in [(Label::Live, spec.n_live), (Label::Spoof, spec.n_spoof)] {
        let n_train = train_count(n);
        for i in 0..n {
            let (seed, bucket, split) = if i < n_train {
                (base + i as u64, &mut train, "train")
            } else {
                (base + TEST_OFFSET + (i - n_train) as u64, &mut test, "test")
            };
            let mut rec = synth_fingerprint(seed, label, spec.size);
            rec.id = format!("{split}/{}_{i:04}", label.dir_name());
            bucket.push(rec);
        }
    }
    (
        Dataset::new(Split::Train, train).expect("unique ids"),
        Dataset::new(Split::Test, test).expect("unique ids"),
    )
}
