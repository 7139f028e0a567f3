//! Model and policy hyperparameters, plus the flat `key = value` config
//! file format shared by the CLI.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CoreError, Result};

/// Which fusion path runs on top of the feature pyramid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Progressive top-down then bottom-up fusion.
    Mpfm,
    /// Resize all levels to the middle grid, concatenate, 1x1 conv.
    Conf,
    /// Resize, project per level, elementwise sum.
    Addf,
}

impl FusionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mpfm => "mpfm",
            Self::Conf => "conf",
            Self::Addf => "addf",
        }
    }

    pub fn code(&self) -> u32 {
        match self {
            Self::Mpfm => 0,
            Self::Conf => 1,
            Self::Addf => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Self::Mpfm),
            1 => Ok(Self::Conf),
            2 => Ok(Self::Addf),
            other => Err(CoreError::malformed("fusion code", format!("{other}"))),
        }
    }
}

impl FromStr for FusionMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mpfm" => Ok(Self::Mpfm),
            "conf" => Ok(Self::Conf),
            "addf" => Ok(Self::Addf),
            other => Err(CoreError::malformed("fusion mode", format!("{other:?} (want mpfm|conf|addf)"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every architectural and policy hyperparameter, with full-scale defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub nbins: u32,
    pub template_size: usize,
    pub search_size: usize,
    pub patch: usize,
    pub enc_layers: usize,
    pub embed_dim: usize,
    pub enc_heads: usize,
    pub mlp_ratio: usize,
    pub dec_layers: usize,
    pub dec_hidden: usize,
    pub dec_heads: usize,
    pub fusion: FusionMode,
    /// Template-update score threshold.
    pub lambda: f64,
    /// Minimum frames between template updates.
    pub zu: u32,
    /// Template crop side = factor * sqrt(w*h); 2.0 doubles the box area x4.
    pub template_side_factor: f64,
    /// Search crop side = factor * sqrt(w*h).
    pub search_side_factor: f64,
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            nbins: 4000,
            template_size: 128,
            search_size: 288,
            patch: 16,
            enc_layers: 12,
            embed_dim: 768,
            enc_heads: 12,
            mlp_ratio: 4,
            dec_layers: 2,
            dec_hidden: 256,
            dec_heads: 8,
            fusion: FusionMode::Mpfm,
            lambda: 0.6,
            zu: 25,
            template_side_factor: 2.0,
            search_side_factor: 4.5,
            lr_encoder: 1e-5,
            lr_other: 1e-4,
            weight_decay: 1e-4,
            epochs: 120,
            samples_per_epoch: 30_000,
            batch_size: 16,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Desk-scale preset: 2 encoder layers at width 64, 64px search crops,
    /// 100 bins, decoder hidden 64. Learning rates are raised to suit the
    /// small widths; the full-scale values are far too timid here.
    pub fn toy() -> Self {
        Self {
            nbins: 100,
            template_size: 32,
            search_size: 64,
            enc_layers: 2,
            embed_dim: 64,
            enc_heads: 4,
            dec_hidden: 64,
            lr_encoder: 3e-4,
            lr_other: 1e-3,
            epochs: 14,
            samples_per_epoch: 256,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(CoreError::contract("ModelConfig::validate", detail));
        if self.nbins == 0 {
            return fail("nbins must be positive".into());
        }
        if self.patch == 0 || self.template_size % self.patch != 0 || self.search_size % self.patch != 0 {
            return fail(format!(
                "template {} and search {} must divide by patch {}",
                self.template_size, self.search_size, self.patch
            ));
        }
        if self.embed_dim == 0 || self.embed_dim % self.enc_heads != 0 {
            return fail(format!("embed_dim {} must divide by heads {}", self.embed_dim, self.enc_heads));
        }
        if self.embed_dim % 2 != 0 || self.dec_hidden % 2 != 0 {
            return fail("widths must be even for sinusoidal tables".into());
        }
        if self.dec_hidden == 0 || self.dec_hidden % self.dec_heads != 0 {
            return fail(format!(
                "dec_hidden {} must divide by dec_heads {}",
                self.dec_hidden, self.dec_heads
            ));
        }
        let grid = self.search_grid();
        if grid % 2 != 0 {
            return fail(format!("search grid {grid} must be even for the pyramid pooling level"));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return fail("layer counts must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} outside [0,1]", self.lambda));
        }
        if self.template_side_factor <= 0.0 || self.search_side_factor <= 0.0 {
            return fail("crop factors must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        Ok(())
    }

    /// Search-region tokens per side.
    pub fn search_grid(&self) -> usize {
        self.search_size / self.patch
    }

    /// Template tokens per side.
    pub fn template_grid(&self) -> usize {
        self.template_size / self.patch
    }

    pub fn template_tokens(&self) -> usize {
        self.template_grid() * self.template_grid()
    }

    pub fn search_tokens(&self) -> usize {
        self.search_grid() * self.search_grid()
    }

    // ── key = value file format ─────────────────────────────────────

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("nbins", self.nbins.to_string());
        kv("template_size", self.template_size.to_string());
        kv("search_size", self.search_size.to_string());
        kv("patch", self.patch.to_string());
        kv("enc_layers", self.enc_layers.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("enc_heads", self.enc_heads.to_string());
        kv("mlp_ratio", self.mlp_ratio.to_string());
        kv("dec_layers", self.dec_layers.to_string());
        kv("dec_hidden", self.dec_hidden.to_string());
        kv("dec_heads", self.dec_heads.to_string());
        kv("fusion", self.fusion.to_string());
        kv("lambda", format!("{}", self.lambda));
        kv("zu", self.zu.to_string());
        kv("template_side_factor", format!("{}", self.template_side_factor));
        kv("search_side_factor", format!("{}", self.search_side_factor));
        kv("lr_encoder", format!("{:e}", self.lr_encoder));
        kv("lr_other", format!("{:e}", self.lr_other));
        kv("weight_decay", format!("{:e}", self.weight_decay));
        kv("epochs", self.epochs.to_string());
        kv("samples_per_epoch", self.samples_per_epoch.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("init_std", format!("{}", self.init_std));
        kv("seed", self.seed.to_string());
        s
    }

    pub fn from_config_str(text: &str, what: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv_lines(text, what)? {
            cfg.apply(&k, &v, what)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_config_str(&text, &format!("config file {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config_string()).map_err(|e| CoreError::io(path, e))
    }

    fn apply(&mut self, key: &str, value: &str, what: &str) -> Result<()> {
        fn num<T: FromStr>(what: &str, key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| CoreError::malformed(what, format!("bad value for {key}: {value:?}")))
        }
        match key {
            "nbins" => self.nbins = num(what, key, value)?,
            "template_size" => self.template_size = num(what, key, value)?,
            "search_size" => self.search_size = num(what, key, value)?,
            "patch" => self.patch = num(what, key, value)?,
            "enc_layers" => self.enc_layers = num(what, key, value)?,
            "embed_dim" => self.embed_dim = num(what, key, value)?,
            "enc_heads" => self.enc_heads = num(what, key, value)?,
            "mlp_ratio" => self.mlp_ratio = num(what, key, value)?,
            "dec_layers" => self.dec_layers = num(what, key, value)?,
            "dec_hidden" => self.dec_hidden = num(what, key, value)?,
            "dec_heads" => self.dec_heads = num(what, key, value)?,
            "fusion" => self.fusion = value.parse()?,
            "lambda" => self.lambda = num(what, key, value)?,
            "zu" => self.zu = num(what, key, value)?,
            "template_side_factor" => self.template_side_factor = num(what, key, value)?,
            "search_side_factor" => self.search_side_factor = num(what, key, value)?,
            "lr_encoder" => self.lr_encoder = num(what, key, value)?,
            "lr_other" => self.lr_other = num(what, key, value)?,
            "weight_decay" => self.weight_decay = num(what, key, value)?,
            "epochs" => self.epochs = num(what, key, value)?,
            "samples_per_epoch" => self.samples_per_epoch = num(what, key, value)?,
            "batch_size" => self.batch_size = num(what, key, value)?,
            "init_std" => self.init_std = num(what, key, value)?,
            "seed" => self.seed = num(what, key, value)?,
            other => {
                return Err(CoreError::malformed(what, format!("unknown key {other:?}")));
            }
        }
        Ok(())
    }
}

/// Shared `key = value` line parser: `#` comments, blank lines allowed,
/// repeated keys preserved in order.
pub fn parse_kv_lines(text: &str, what: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CoreError::malformed(
                what,
                format!("line {}: expected `key = value`, got {raw:?}", lineno + 1),
            ));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
