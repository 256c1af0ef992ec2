//! Image data: synthetic textures, PNG ingestion, and the batch producer.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use image::imageops::FilterType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DataSource, ExperimentConfig, MaskMode};
use crate::error::{Error, Result};
use crate::masks::{self, CoverageInterval, MaskKind, MaskSpec, RegionMask};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    GradientFields,
    GaussianBlobs,
    StripeTextures,
    /// Cycles through the three kinds by image index.
    Mixed,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 4] = [
        SyntheticKind::GradientFields,
        SyntheticKind::GaussianBlobs,
        SyntheticKind::StripeTextures,
        SyntheticKind::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::GradientFields => "gradient-fields",
            SyntheticKind::GaussianBlobs => "gaussian-blobs",
            SyntheticKind::StripeTextures => "stripe-textures",
            SyntheticKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        SyntheticKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown synthetic generator `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticDatasetSpec {
    pub count: usize,
    pub size: usize,
    pub kind: SyntheticKind,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    /// Same `key=value` format as experiment configs, with the keys
    /// `count`, `size`, `generator` and `seed`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SyntheticDatasetSpec {
            count: 100,
            size: 64,
            kind: SyntheticKind::Mixed,
            seed: 0,
        };
        for line in text.lines().map(|l| l.split('#').next().unwrap_or("").trim()) {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "count" => spec.count = crate::inpaintnet::parse_value(k, v)?,
                "size" => spec.size = crate::inpaintnet::parse_value(k, v)?,
                "generator" => spec.kind = v.parse()?,
                "seed" => spec.seed = crate::inpaintnet::parse_value(k, v)?,
                _ => return Err(Error::Config(format!("unknown synthetic key `{k}`"))),
            }
        }
        if spec.size == 0 || spec.count == 0 {
            return Err(Error::Config("synthetic count and size must be positive".into()));
        }
        Ok(spec)
    }

    /// Image `index`, independent of every other index.
    pub fn image(&self, index: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let kind = match self.kind {
            SyntheticKind::Mixed => SyntheticKind::ALL[index % 3],
            k => k,
        };
        synthesize(kind, self.size, &mut rng)
    }

    pub fn name(&self, index: usize) -> String {
        format!("synth_{index:05}.png")
    }

    pub fn build(&self) -> Dataset {
        Dataset {
            names: (0..self.count).map(|i| self.name(i)).collect(),
            images: (0..self.count).map(|i| self.image(i)).collect(),
        }
    }
}

/// Renders a `1 x 3 x size x size` image quantized to 8 bits, so a PNG
/// round trip reproduces it exactly.
pub fn synthesize<R: Rng + ?Sized>(kind: SyntheticKind, size: usize, rng: &mut R) -> Tensor<f32> {
    let s = size as f64;
    let plane = size * size;
    let mut data = vec![0.0f64; 3 * plane];
    match kind {
        SyntheticKind::GradientFields | SyntheticKind::Mixed => {
            for c in 0..3 {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let (a, b) = (rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0));
                let curve = rng.gen_range(-0.5..0.5);
                for (i, v) in data[c * plane..(c + 1) * plane].iter_mut().enumerate() {
                    let (y, x) = ((i / size) as f64 / s, (i % size) as f64 / s);
                    let t = x * theta.cos() + y * theta.sin();
                    *v = a + b * t + curve * t * t;
                }
            }
        }
        SyntheticKind::GaussianBlobs => {
            let background: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            for c in 0..3 {
                data[c * plane..(c + 1) * plane].fill(background[c]);
            }
            for _ in 0..rng.gen_range(3..=8) {
                let (cy, cx) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
                let sigma = rng.gen_range(s / 16.0..s / 4.0);
                let colour: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                for i in 0..plane {
                    let (y, x) = ((i / size) as f64, (i % size) as f64);
                    let w = (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp();
                    for c in 0..3 {
                        data[c * plane + i] += colour[c] * w;
                    }
                }
            }
        }
        SyntheticKind::StripeTextures => {
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let freq = rng.gen_range(2.0..8.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let lo: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let hi: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            for i in 0..plane {
                let (y, x) = ((i / size) as f64 / s, (i % size) as f64 / s);
                let t = 0.5 + 0.5 * (std::f64::consts::TAU * freq * (x * theta.cos() + y * theta.sin()) + phase).sin();
                for c in 0..3 {
                    data[c * plane + i] = lo[c] + (hi[c] - lo[c]) * t;
                }
            }
        }
    }
    let data = data
        .into_iter()
        .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32)
        .collect();
    Tensor::from_vec(Shape::new(1, 3, size, size), data).expect("synthetic image size")
}

/// Named images, each `1 x 3 x H x W` in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<Tensor<f32>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Splits off the last `count` images.
    pub fn split_tail(mut self, count: usize) -> (Dataset, Dataset) {
        let at = self.len().saturating_sub(count);
        let tail = Dataset {
            names: self.names.split_off(at),
            images: self.images.split_off(at),
        };
        (self, tail)
    }
}

pub fn load(source: &DataSource, size: usize) -> Result<Dataset> {
    match source {
        DataSource::Directory(dir) => ingest_dataset(dir, size),
        DataSource::Synthetic(spec) => Ok(spec.build()),
    }
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads every image in `dir` (sorted by file name), center-crops to a
/// square and resizes bilinearly to `size`. Files that do not decode as
/// images are skipped with a warning.
pub fn ingest_dataset(dir: &Path, size: usize) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    let mut out = Dataset::default();
    let mut skipped = 0;
    for p in paths {
        match load_image(&p, size) {
            Ok(img) => {
                out.names.push(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
                out.images.push(img);
            }
            Err(Error::Image { .. }) => {
                log::warn!("skipping {}: not a readable image", p.display());
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    log::info!("ingested {} images from {} ({skipped} skipped)", out.len(), dir.display());
    Ok(out)
}

/// One RGB image as `1 x 3 x size x size`; gray inputs are replicated.
pub fn load_image(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(&img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    let resized = if side as usize == size {
        cropped
    } else {
        image::imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle)
    };
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, size, size), data)
}

/// Writes sample `n` of an RGB tensor in `[0, 1]` as an 8-bit PNG.
pub fn save_rgb_png(t: &Tensor<f32>, n: usize, path: &Path) -> Result<()> {
    let s = t.shape();
    let plane = s.plane();
    let mut buf = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3.min(s.c) {
            buf.push(to_u8(t.plane(n, c)[i]));
        }
    }
    image::RgbImage::from_raw(s.w as u32, s.h as u32, buf)
        .expect("buffer size")
        .save(path)
        .map_err(|e| image_err(path, e))
}

/// Writes a single-channel map in `[0, 1]` as an 8-bit gray PNG.
pub fn save_gray_png(values: &[f32], height: usize, width: usize, path: &Path) -> Result<()> {
    let buf = values.iter().map(|&v| to_u8(v)).collect();
    image::GrayImage::from_raw(width as u32, height as u32, buf)
        .expect("buffer size")
        .save(path)
        .map_err(|e| image_err(path, e))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a mask PNG and resizes it (nearest neighbour) when needed.
pub fn load_mask_sized(path: &Path, size: usize) -> Result<RegionMask> {
    let m = RegionMask::load_png(path)?;
    if m.height() == size && m.width() == size {
        return Ok(m);
    }
    let bits = (0..size * size)
        .map(|i| {
            let (y, x) = (i / size, i % size);
            m.get(y * m.height() / size, x * m.width() / size)
        })
        .collect();
    RegionMask::from_bits(size, size, bits)
}

/// Sorted PNG masks of a directory.
pub fn load_mask_dir(dir: &Path, size: usize) -> Result<Vec<RegionMask>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no PNG masks in {}", dir.display())));
    }
    paths.iter().map(|p| load_mask_sized(p, size)).collect()
}

/// Deterministic mask source shared by training and evaluation.
#[derive(Clone, Debug)]
pub struct MaskSource {
    mode: MaskMode,
    size: usize,
    intervals: Vec<CoverageInterval>,
    seed: u64,
    external: Arc<Vec<RegionMask>>,
}

impl MaskSource {
    pub fn new(mode: MaskMode, size: usize, intervals: Vec<CoverageInterval>, seed: u64, mask_dir: Option<&Path>) -> Result<Self> {
        let external = match (mode, mask_dir) {
            (MaskMode::External, Some(d)) => load_mask_dir(d, size)?,
            (MaskMode::External, None) => return Err(Error::Config("external masks need a directory".into())),
            _ => Vec::new(),
        };
        Ok(MaskSource {
            mode,
            size,
            intervals,
            seed,
            external: Arc::new(external),
        })
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Self::new(
            cfg.mask_mode,
            cfg.image_size(),
            cfg.mask_intervals.clone(),
            cfg.mask_seed,
            cfg.mask_dir.as_deref(),
        )
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn intervals(&self) -> &[CoverageInterval] {
        &self.intervals
    }

    /// Mask number `index` drawn from `interval` (irregular mode only).
    pub fn in_interval(&self, interval: CoverageInterval, index: u64, stream_seed: u64) -> Result<RegionMask> {
        let spec = MaskSpec {
            kind: MaskKind::Irregular,
            coverage: interval,
            seed: stream_seed,
        };
        masks::generate(self.size, self.size, &spec, index)
    }

    /// Training mask `index`: intervals are used round robin.
    pub fn training(&self, index: u64) -> Result<RegionMask> {
        match self.mode {
            MaskMode::Regular => masks::regular_square_mask(self.size, self.size),
            MaskMode::Irregular => {
                let interval = self.intervals[(index % self.intervals.len() as u64) as usize];
                self.in_interval(interval, index, self.seed)
            }
            MaskMode::External => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(index);
                Ok(self.external[rng.gen_range(0..self.external.len())].clone())
            }
        }
    }

    /// Evaluation masks for image `image`: one per interval in irregular
    /// mode, labelled with the interval. Drawn from a stream disjoint from
    /// training masks.
    pub fn evaluation(&self, image: usize) -> Result<Vec<(String, RegionMask)>> {
        let eval_seed = self.seed ^ 0x5eed_e7a1;
        match self.mode {
            MaskMode::Regular => Ok(vec![("regular".into(), masks::regular_square_mask(self.size, self.size)?)]),
            MaskMode::Irregular => self
                .intervals
                .iter()
                .enumerate()
                .map(|(k, &iv)| {
                    let index = (image * self.intervals.len() + k) as u64;
                    Ok((iv.to_string(), self.in_interval(iv, index, eval_seed)?))
                })
                .collect(),
            MaskMode::External => {
                let m = &self.external[image % self.external.len()];
                Ok(vec![("external".into(), m.clone())])
            }
        }
    }
}

/// One training batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub iteration: u64,
    pub images: Tensor<f32>,
    pub masks: Vec<RegionMask>,
}

/// Background producer of training batches over a bounded queue. Batch
/// contents depend only on the seed, never on timing.
pub struct Prefetcher {
    rx: Receiver<Result<Batch>>,
    handle: Option<JoinHandle<()>>,
}

impl Prefetcher {
    pub fn spawn(
        images: Arc<Vec<Tensor<f32>>>,
        masks: MaskSource,
        batch_size: usize,
        iterations: u64,
        seed: u64,
        depth: usize,
    ) -> Self {
        let (tx, rx) = sync_channel(depth);
        let handle = std::thread::spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::from_le_bytes(*b"batches\0"));
            for iteration in 0..iterations {
                let batch = (|| {
                    let mut picked = Vec::with_capacity(batch_size);
                    let mut ms = Vec::with_capacity(batch_size);
                    for b in 0..batch_size {
                        picked.push(images[rng.gen_range(0..images.len())].clone());
                        ms.push(masks.training(iteration * batch_size as u64 + b as u64)?);
                    }
                    Ok(Batch {
                        iteration,
                        images: Tensor::stack(&picked)?,
                        masks: ms,
                    })
                })();
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    return;
                }
            }
        });
        Prefetcher { rx, handle: Some(handle) }
    }

    pub fn next_batch(&self) -> Option<Result<Batch>> {
        self.rx.recv().ok()
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        // Unblock a producer waiting on a full queue before joining it.
        let (_, rx) = sync_channel(0);
        drop(std::mem::replace(&mut self.rx, rx));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
