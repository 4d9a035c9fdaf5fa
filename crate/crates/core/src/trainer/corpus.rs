use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image_io;
use crate::tensor::Tensor;

/// Clean images of a common channel count, each `(1, c, h, w)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub names: Vec<String>,
    pub images: Vec<Tensor<f32>>,
}

impl Corpus {
    pub fn new(names: Vec<String>, images: Vec<Tensor<f32>>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if names.len() != images.len() {
            return Err(Error::invalid("corpus names and images differ in length"));
        }
        let c = images[0].shape().c;
        for (name, img) in names.iter().zip(&images) {
            let s = img.shape();
            if s.n != 1 || s.c != c {
                return Err(Error::invalid(format!("corpus image {name} has shape {s}, expected (1, {c}, h, w)")));
            }
        }
        Ok(Self { names, images })
    }

    /// Every PNG/PGM directly inside `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let paths = image_io::list_images(dir)?;
        if paths.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut names = Vec::with_capacity(paths.len());
        let mut images = Vec::with_capacity(paths.len());
        for p in &paths {
            names.push(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
            images.push(image_io::load_image(p)?);
        }
        Self::new(names, images)
    }

    /// Procedural images: smooth gradients, sinusoidal texture and a few
    /// flat-shaded rectangles and discs.
    pub fn synthetic(count: usize, channels: usize, h: usize, w: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(count);
        let mut images = Vec::with_capacity(count);
        for i in 0..count {
            names.push(format!("synthetic_{i:03}"));
            images.push(procedural(channels, h, w, &mut rng));
        }
        Self::new(names, images)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images[0].shape().c
    }

    /// Smallest height and width over the corpus.
    pub fn min_size(&self) -> (usize, usize) {
        self.images
            .iter()
            .fold((usize::MAX, usize::MAX), |(h, w), img| (h.min(img.shape().h), w.min(img.shape().w)))
    }

    /// FNV-1a over names, shapes and pixel bits; identifies the corpus in reports.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, img) in self.names.iter().zip(&self.images) {
            eat(name.as_bytes());
            for d in img.shape().dims() {
                eat(&(d as u64).to_le_bytes());
            }
            for v in img.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        hash
    }
}

fn procedural<R: Rng + ?Sized>(c: usize, h: usize, w: usize, rng: &mut R) -> Tensor<f32> {
    let colour = |rng: &mut R| (0..c).map(|_| rng.random_range(0.15..0.85)).collect::<Vec<f64>>();
    let base = colour(rng);
    let tilt = colour(rng);
    let (gy, gx) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let (fy, fx, phase) = (
        rng.random_range(0.5..4.0),
        rng.random_range(0.5..4.0),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let amp = rng.random_range(0.02..0.12);
    let mut img = Tensor::<f64>::from_fn([1, c, h, w], |_, ch, y, x| {
        let (u, v) = (y as f64 / h as f64, x as f64 / w as f64);
        let ramp = (gy * (u - 0.5) + gx * (v - 0.5)) * tilt[ch];
        let wave = amp * (std::f64::consts::TAU * (fy * u + fx * v) + phase).sin();
        base[ch] + ramp + wave
    });
    for _ in 0..rng.random_range(2..6) {
        let fill = colour(rng);
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let r = rng.random_range(0.1..0.35) * h.min(w) as f64;
        let disc = rng.random_bool(0.5);
        img = Tensor::from_fn([1, c, h, w], |_, ch, y, x| {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let inside = if disc {
                dy * dy + dx * dx <= r * r
            } else {
                dy.abs() <= r && dx.abs() <= 0.7 * r
            };
            if inside {
                fill[ch]
            } else {
                img.at(0, ch, y, x)
            }
        });
    }
    img.map(|v| v.clamp(0.0, 1.0)).cast()
}
