//! Flat `key=value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::data::{SyntheticDatasetSpec, SyntheticKind};
use crate::error::{Error, Result};
use crate::inpaintnet::{parse_value, Architecture, GeneratorConfig, LossBundle};
use crate::masks::CoverageInterval;
use crate::tensor::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    Regular,
    Irregular,
    /// PNG masks read from `mask_dir`.
    External,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regular" => Ok(MaskMode::Regular),
            "irregular" => Ok(MaskMode::Irregular),
            "external" | "external_dir" => Ok(MaskMode::External),
            _ => Err(Error::Config(format!("unknown mask mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::Regular => "regular",
            MaskMode::Irregular => "irregular",
            MaskMode::External => "external",
        })
    }
}

/// Where images come from: a PNG directory or an in-memory synthetic set.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Directory(PathBuf),
    Synthetic(SyntheticDatasetSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Images held out from the end of the (sorted) dataset for evaluation.
    pub eval_count: usize,
    pub mask_mode: MaskMode,
    pub mask_dir: Option<PathBuf>,
    pub mask_intervals: Vec<CoverageInterval>,
    pub mask_seed: u64,
    pub architecture: Architecture,
    pub generator: GeneratorConfig,
    pub optimizer: AdamConfig,
    pub losses: LossBundle,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Iterations between training-curve evaluations; 0 evaluates only at
    /// the end.
    pub eval_every: u64,
    /// Iterations between intermediate checkpoints; 0 keeps only the final.
    pub checkpoint_every: u64,
    /// Bounded queue depth of the batch prefetch thread.
    pub prefetch: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let architecture = Architecture::Arch5;
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticDatasetSpec {
                count: 200,
                size: GeneratorConfig::DESK_IMAGE_SIZE,
                kind: SyntheticKind::Mixed,
                seed: 0,
            }),
            eval_count: 20,
            mask_mode: MaskMode::Irregular,
            mask_dir: None,
            mask_intervals: CoverageInterval::deciles()[1..].to_vec(),
            mask_seed: 0,
            architecture,
            generator: architecture.config(),
            optimizer: AdamConfig::default(),
            losses: LossBundle::default(),
            iterations: 1000,
            batch_size: 1,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            eval_every: 0,
            checkpoint_every: 0,
            prefetch: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn image_size(&self) -> usize {
        self.generator.image_size
    }

    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn synthetic_mut(&mut self) -> &mut SyntheticDatasetSpec {
        if !matches!(self.data, DataSource::Synthetic(_)) {
            self.data = DataSource::Synthetic(SyntheticDatasetSpec {
                count: 200,
                size: self.generator.image_size,
                kind: SyntheticKind::Mixed,
                seed: 0,
            });
        }
        match &mut self.data {
            DataSource::Synthetic(s) => s,
            DataSource::Directory(_) => unreachable!(),
        }
    }

    /// Sets one key. `architecture` resets the three stage norms, so put
    /// per-stage overrides after it.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset_dir" => self.data = DataSource::Directory(PathBuf::from(value)),
            "synthetic_count" => self.synthetic_mut().count = parse_value(key, value)?,
            "synthetic_generator" => self.synthetic_mut().kind = value.parse()?,
            "synthetic_seed" => self.synthetic_mut().seed = parse_value(key, value)?,
            "eval_count" => self.eval_count = parse_value(key, value)?,
            "mask_mode" => self.mask_mode = value.parse()?,
            "mask_dir" => self.mask_dir = Some(PathBuf::from(value)),
            "mask_intervals" => {
                self.mask_intervals = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "mask_seed" => self.mask_seed = parse_value(key, value)?,
            "architecture" => {
                self.architecture = value.parse()?;
                let [e, r, d] = self.architecture.norms();
                self.generator.norm_encoder = e;
                self.generator.norm_resblocks = r;
                self.generator.norm_decoder = d;
            }
            "paper_scale" => {
                if parse_value::<bool>(key, value)? {
                    self.generator = self.generator.clone().paper_scale();
                }
            }
            "lr" => self.optimizer.lr = parse_value(key, value)?,
            "beta1" => self.optimizer.beta1 = parse_value(key, value)?,
            "beta2" => self.optimizer.beta2 = parse_value(key, value)?,
            "l1_weight" => self.losses.l1_weight = parse_value(key, value)?,
            "adv_weight" => self.losses.adv_weight = parse_value(key, value)?,
            "adv_kind" => self.losses.adv_kind = value.parse()?,
            "iterations" => self.iterations = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "prefetch" => self.prefetch = parse_value(key, value)?,
            _ => self.generator.set(key, value)?,
        }
        if key == "image_size" {
            if let DataSource::Synthetic(s) = &mut self.data {
                s.size = self.generator.image_size;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.losses.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.prefetch == 0 {
            return Err(Error::Config("prefetch must be positive".into()));
        }
        if self.mask_intervals.is_empty() && self.mask_mode == MaskMode::Irregular {
            return Err(Error::Config("irregular masks need at least one interval".into()));
        }
        if self.mask_mode == MaskMode::External && self.mask_dir.is_none() {
            return Err(Error::Config("mask_mode=external needs mask_dir".into()));
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.count <= self.eval_count {
                return Err(Error::Config(format!(
                    "synthetic_count {} leaves no training images after eval_count {}",
                    s.count, self.eval_count
                )));
            }
            if s.size != self.generator.image_size {
                return Err(Error::Config("synthetic size differs from image_size".into()));
            }
        }
        Ok(())
    }

    /// Fails with an IO error when an input path is missing.
    pub fn check_paths(&self) -> Result<()> {
        let mut paths: Vec<&Path> = Vec::new();
        if let DataSource::Directory(d) = &self.data {
            paths.push(d);
        }
        if let (MaskMode::External, Some(d)) = (self.mask_mode, &self.mask_dir) {
            paths.push(d);
        }
        for p in paths {
            if !p.is_dir() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
                ));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.data {
            DataSource::Directory(d) => writeln!(s, "dataset_dir={}", d.display()).unwrap(),
            DataSource::Synthetic(spec) => {
                writeln!(s, "synthetic_count={}", spec.count).unwrap();
                writeln!(s, "synthetic_generator={}", spec.kind).unwrap();
                writeln!(s, "synthetic_seed={}", spec.seed).unwrap();
            }
        }
        writeln!(s, "eval_count={}", self.eval_count).unwrap();
        writeln!(s, "mask_mode={}", self.mask_mode).unwrap();
        if let Some(d) = &self.mask_dir {
            writeln!(s, "mask_dir={}", d.display()).unwrap();
        }
        let intervals: Vec<String> = self.mask_intervals.iter().map(|i| i.to_string()).collect();
        writeln!(s, "mask_intervals={}", intervals.join(",")).unwrap();
        writeln!(s, "mask_seed={}", self.mask_seed).unwrap();
        writeln!(s, "architecture={}", self.architecture).unwrap();
        s.push_str(&self.generator.to_text());
        let AdamConfig { lr, beta1, beta2, .. } = self.optimizer;
        writeln!(s, "lr={lr}\nbeta1={beta1}\nbeta2={beta2}").unwrap();
        let LossBundle { l1_weight, adv_weight, adv_kind } = self.losses;
        writeln!(s, "l1_weight={l1_weight}\nadv_weight={adv_weight}\nadv_kind={adv_kind}").unwrap();
        writeln!(s, "iterations={}", self.iterations).unwrap();
        writeln!(s, "batch_size={}", self.batch_size).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "output_dir={}", self.output_dir.display()).unwrap();
        writeln!(s, "eval_every={}", self.eval_every).unwrap();
        writeln!(s, "checkpoint_every={}", self.checkpoint_every).unwrap();
        writeln!(s, "prefetch={}", self.prefetch).unwrap();
        s
    }
}
