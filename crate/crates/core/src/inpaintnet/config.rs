//! Generator configuration and the named architectures of the ablation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::norm::{NormKind, DEFAULT_THRESHOLD};

/// Which normalization fills each stage of the generator, plus its size.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub norm_encoder: NormKind,
    pub norm_resblocks: NormKind,
    pub norm_decoder: NormKind,
    pub base_channels: usize,
    pub image_size: usize,
    pub resblock_count: usize,
    pub rnl_threshold: f64,
    /// RN-L layers train on single-region statistics when set.
    pub rnl_soft_train: bool,
}

impl GeneratorConfig {
    pub const DESK_IMAGE_SIZE: usize = 64;
    pub const DESK_BASE_CHANNELS: usize = 32;
    pub const DESK_RESBLOCKS: usize = 4;

    /// Desk-scale sizes with the given stage norms.
    pub fn with_norms(encoder: NormKind, resblocks: NormKind, decoder: NormKind) -> Self {
        GeneratorConfig {
            norm_encoder: encoder,
            norm_resblocks: resblocks,
            norm_decoder: decoder,
            base_channels: Self::DESK_BASE_CHANNELS,
            image_size: Self::DESK_IMAGE_SIZE,
            resblock_count: Self::DESK_RESBLOCKS,
            rnl_threshold: DEFAULT_THRESHOLD,
            rnl_soft_train: false,
        }
    }

    /// 256px input, 64 base channels, 8 residual blocks.
    pub fn paper_scale(mut self) -> Self {
        self.image_size = 256;
        self.base_channels = 64;
        self.resblock_count = 8;
        self
    }

    pub fn norms(&self) -> [NormKind; 3] {
        [self.norm_encoder, self.norm_resblocks, self.norm_decoder]
    }

    pub fn validate(&self) -> Result<()> {
        if self.resblock_count == 0 {
            return Err(Error::Config("resblock_count must be at least 1".into()));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "image_size {} is not a positive multiple of 4",
                self.image_size
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if !(self.rnl_threshold > 0.0 && self.rnl_threshold < 1.0) {
            return Err(Error::Config(format!(
                "rnl_threshold must lie in (0, 1), got {}",
                self.rnl_threshold
            )));
        }
        Ok(())
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        format!(
            "norm_encoder={}\nnorm_resblocks={}\nnorm_decoder={}\nbase_channels={}\nimage_size={}\nresblock_count={}\nrnl_threshold={}\nrnl_soft_train={}\n",
            self.norm_encoder,
            self.norm_resblocks,
            self.norm_decoder,
            self.base_channels,
            self.image_size,
            self.resblock_count,
            self.rnl_threshold,
            self.rnl_soft_train
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = GeneratorConfig::with_norms(NormKind::In, NormKind::In, NormKind::In);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from text; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "norm_encoder" => self.norm_encoder = value.parse()?,
            "norm_resblocks" => self.norm_resblocks = value.parse()?,
            "norm_decoder" => self.norm_decoder = value.parse()?,
            "base_channels" => self.base_channels = parse_value(key, value)?,
            "image_size" => self.image_size = parse_value(key, value)?,
            "resblock_count" => self.resblock_count = parse_value(key, value)?,
            "rnl_threshold" => self.rnl_threshold = parse_value(key, value)?,
            "rnl_soft_train" => self.rnl_soft_train = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown generator key `{key}`"))),
        }
        Ok(())
    }
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

/// Named stage assignments. The first seven are the plug-location study;
/// `Bn` and `None` complete the normalization comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Baseline,
    Arch1,
    Arch2,
    Arch3,
    Arch4,
    Arch5,
    Arch6,
    Bn,
    None,
}

impl Architecture {
    pub const PLUG_STUDY: [Architecture; 7] = [
        Architecture::Baseline,
        Architecture::Arch1,
        Architecture::Arch2,
        Architecture::Arch3,
        Architecture::Arch4,
        Architecture::Arch5,
        Architecture::Arch6,
    ];

    pub const ALL: [Architecture; 9] = [
        Architecture::Baseline,
        Architecture::Arch1,
        Architecture::Arch2,
        Architecture::Arch3,
        Architecture::Arch4,
        Architecture::Arch5,
        Architecture::Arch6,
        Architecture::Bn,
        Architecture::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Baseline => "baseline",
            Architecture::Arch1 => "arch1",
            Architecture::Arch2 => "arch2",
            Architecture::Arch3 => "arch3",
            Architecture::Arch4 => "arch4",
            Architecture::Arch5 => "arch5",
            Architecture::Arch6 => "arch6",
            Architecture::Bn => "bn",
            Architecture::None => "none",
        }
    }

    /// Encoder, residual blocks, decoder.
    pub fn norms(self) -> [NormKind; 3] {
        use NormKind::{Bn, In, None, RnB, RnL};
        match self {
            Architecture::Baseline => [In, In, In],
            Architecture::Arch1 => [RnB, In, In],
            Architecture::Arch2 => [RnB, RnB, In],
            Architecture::Arch3 => [RnB, RnB, RnB],
            Architecture::Arch4 => [RnB, RnL, In],
            Architecture::Arch5 => [RnB, RnL, RnL],
            Architecture::Arch6 => [RnL, RnL, RnL],
            Architecture::Bn => [Bn, Bn, Bn],
            Architecture::None => [None, None, None],
        }
    }

    pub fn config(self) -> GeneratorConfig {
        let [e, r, d] = self.norms();
        GeneratorConfig::with_norms(e, r, d)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

/// Desk-scale config for a named architecture.
pub fn build_architecture(name: &str) -> Result<GeneratorConfig> {
    Ok(name.parse::<Architecture>()?.config())
}

#[cfg(test)]
mod tests {
    use super::*;
    use NormKind::*;

    #[test]
    fn named_rows() {
        assert_eq!(build_architecture("arch5").unwrap().norms(), [RnB, RnL, RnL]);
        assert_eq!(build_architecture("baseline").unwrap().norms(), [In, In, In]);
        assert_eq!(build_architecture("none").unwrap().norms(), [None, None, None]);
        assert_eq!(build_architecture("ARCH6").unwrap().norms(), [RnL, RnL, RnL]);
        assert!(build_architecture("arch7").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = build_architecture("arch4").unwrap().paper_scale();
        cfg.rnl_threshold = 0.65;
        cfg.rnl_soft_train = true;
        assert_eq!(GeneratorConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        let mut cfg = build_architecture("baseline").unwrap();
        cfg.image_size = 30;
        assert!(cfg.validate().is_err());
        cfg.image_size = 32;
        cfg.resblock_count = 0;
        assert!(cfg.validate().is_err());
        assert!(GeneratorConfig::from_text("colour=blue").is_err());
    }
}
