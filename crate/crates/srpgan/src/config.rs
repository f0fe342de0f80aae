//! Run configuration: defaults, the desk-scale preset, a flat
//! `key = value` file format, and CLI-flag overrides.
//!
//! Precedence, lowest to highest: built-in defaults, `--desk` preset,
//! config file, explicit CLI flags. The resolved configuration is echoed
//! into the run directory and re-parses to an equal value.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::loss::{ContentKind, LossWeights};
use crate::model::{DiscriminatorPlan, GeneratorPlan};
use crate::optim::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Super-resolution factor (2, 4, or 8).
    pub scale: usize,
    /// Side length of square HR training patches.
    pub patch_size: usize,
    /// Patches per training batch.
    pub batch: usize,
    /// Patches drawn per sampling round.
    pub patches_per_epoch: usize,
    /// Total training iterations.
    pub iters: u64,
    pub seed: u64,
    /// Generator: number of halving (and mirrored doubling) stages.
    pub g_n_half: usize,
    /// Generator: channel count of the first encoder stage.
    pub g_base_channels: usize,
    /// Discriminator: number of stride-2 stages.
    pub d_layers: usize,
    /// Discriminator: channel count of the first stage.
    pub d_base_channels: usize,
    /// Whether the discriminator sees the bicubic input alongside the
    /// candidate (6 input channels instead of 3).
    pub d_conditional: bool,
    pub lambda_d: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub content: ContentKind,
    pub charbonnier_eps: f64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub lr_switch: u64,
    /// Save a checkpoint every this many iterations (the final state is
    /// always saved).
    pub checkpoint_every: u64,
    /// Training manifest, inference input image, or evaluation directory,
    /// depending on the command.
    pub data: Option<PathBuf>,
    /// Run/output directory.
    pub out: PathBuf,
    /// Checkpoint path; the literal `bicubic` selects the no-model baseline
    /// in eval.
    pub checkpoint: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            scale: 4,
            patch_size: 128,
            batch: 64,
            patches_per_epoch: 1024,
            iters: 1_000_000,
            seed: 1,
            g_n_half: 5,
            g_base_channels: 64,
            d_layers: 5,
            d_base_channels: 64,
            d_conditional: true,
            lambda_d: 0.01,
            lambda1: 1.0,
            lambda2: 1.0,
            content: ContentKind::Charbonnier,
            charbonnier_eps: 1e-3,
            lr_initial: 1e-4,
            lr_final: 1e-5,
            lr_switch: 1_000_000,
            checkpoint_every: 1000,
            data: None,
            out: PathBuf::from("srpgan-run"),
            checkpoint: None,
        }
    }
}

/// CLI flags that override file values. `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scale: Option<usize>,
    pub seed: Option<u64>,
    pub iters: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<String>,
}

impl Config {
    /// The desk-scale preset: a model and schedule sized so training runs
    /// and the full verification suite complete in minutes on one CPU core.
    pub fn desk() -> Self {
        Config {
            patch_size: 64,
            batch: 8,
            patches_per_epoch: 64,
            iters: 500,
            g_n_half: 3,
            g_base_channels: 16,
            d_layers: 3,
            d_base_channels: 16,
            lr_initial: 3e-4,
            lr_switch: 5000,
            checkpoint_every: 250,
            ..Config::default()
        }
    }

    /// Apply precedence: defaults (or desk preset), then the config file,
    /// then explicit flags.
    pub fn resolve(file: Option<&Path>, desk: bool, flags: &Overrides) -> Result<Config> {
        let mut cfg = if desk { Config::desk() } else { Config::default() };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        if let Some(v) = flags.scale {
            cfg.scale = v;
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = flags.iters {
            cfg.iters = v;
        }
        if let Some(v) = &flags.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &flags.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &flags.checkpoint {
            cfg.checkpoint = Some(v.clone());
        }
        Ok(cfg)
    }

    /// Parse `key = value` lines into this config. Blank lines and `#`
    /// comments are ignored; unknown keys and malformed values are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            self.apply_kv(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
        }
        match key {
            "scale" => self.scale = num(key, value)?,
            "patch_size" => self.patch_size = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "patches_per_epoch" => self.patches_per_epoch = num(key, value)?,
            "iters" => self.iters = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "g_n_half" => self.g_n_half = num(key, value)?,
            "g_base_channels" => self.g_base_channels = num(key, value)?,
            "d_layers" => self.d_layers = num(key, value)?,
            "d_base_channels" => self.d_base_channels = num(key, value)?,
            "d_conditional" => {
                self.d_conditional = match value {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(Error::Config(format!(
                            "invalid boolean '{value}' for {key}"
                        )))
                    }
                }
            }
            "lambda_d" => self.lambda_d = num(key, value)?,
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "content" => self.content = ContentKind::parse(value)?,
            "charbonnier_eps" => self.charbonnier_eps = num(key, value)?,
            "lr_initial" => self.lr_initial = num(key, value)?,
            "lr_final" => self.lr_final = num(key, value)?,
            "lr_switch" => self.lr_switch = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "checkpoint" => self.checkpoint = Some(value.to_string()),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Serialize in the file format. `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("scale", self.scale.to_string());
        kv("patch_size", self.patch_size.to_string());
        kv("batch", self.batch.to_string());
        kv("patches_per_epoch", self.patches_per_epoch.to_string());
        kv("iters", self.iters.to_string());
        kv("seed", self.seed.to_string());
        kv("g_n_half", self.g_n_half.to_string());
        kv("g_base_channels", self.g_base_channels.to_string());
        kv("d_layers", self.d_layers.to_string());
        kv("d_base_channels", self.d_base_channels.to_string());
        kv("d_conditional", self.d_conditional.to_string());
        kv("lambda_d", self.lambda_d.to_string());
        kv("lambda1", self.lambda1.to_string());
        kv("lambda2", self.lambda2.to_string());
        kv("content", self.content.name().to_string());
        kv("charbonnier_eps", self.charbonnier_eps.to_string());
        kv("lr_initial", self.lr_initial.to_string());
        kv("lr_final", self.lr_final.to_string());
        kv("lr_switch", self.lr_switch.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        if let Some(d) = &self.data {
            kv("data", d.display().to_string());
        }
        kv("out", self.out.display().to_string());
        if let Some(c) = &self.checkpoint {
            kv("checkpoint", c.clone());
        }
        s
    }

    /// Validate geometry and hyperparameters before any data is touched.
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 2 | 4 | 8) {
            return Err(Error::Config(format!(
                "scale must be 2, 4, or 8, got {}",
                self.scale
            )));
        }
        let div = 1usize << self.g_n_half;
        if self.patch_size == 0 || self.patch_size % div != 0 {
            return Err(Error::Config(format!(
                "patch_size {} is not divisible by 2^g_n_half = {div}",
                self.patch_size
            )));
        }
        if self.patch_size % self.scale != 0 {
            return Err(Error::Config(format!(
                "patch_size {} is not divisible by scale {}",
                self.patch_size, self.scale
            )));
        }
        if self.batch == 0 || self.iters == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config(
                "batch, iters, and checkpoint_every must be >= 1".into(),
            ));
        }
        if self.patches_per_epoch < self.batch {
            return Err(Error::Config(format!(
                "patches_per_epoch {} must be >= batch {}",
                self.patches_per_epoch, self.batch
            )));
        }
        self.generator_plan().validate()?;
        self.discriminator_plan().validate()?;
        self.loss_weights().validate()?;
        self.schedule().validate()?;
        Ok(())
    }

    pub fn generator_plan(&self) -> GeneratorPlan {
        GeneratorPlan {
            n_half: self.g_n_half,
            base_channels: self.g_base_channels,
            ..GeneratorPlan::full()
        }
    }

    pub fn discriminator_plan(&self) -> DiscriminatorPlan {
        DiscriminatorPlan {
            layers: self.d_layers,
            base_channels: self.d_base_channels,
            conditional: self.d_conditional,
            ..DiscriminatorPlan::full()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_d: self.lambda_d,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            content_kind: self.content,
            charbonnier_eps: self.charbonnier_eps,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            lr_initial: self.lr_initial,
            lr_final: self.lr_final,
            switch_iteration: self.lr_switch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Serialize-then-parse is the identity, including path fields and
    /// non-default floats.
    #[test]
    fn echo_round_trips() {
        let mut cfg = Config::desk();
        cfg.data = Some(PathBuf::from("/tmp/list.txt"));
        cfg.checkpoint = Some("bicubic".to_string());
        cfg.lambda_d = 0.025;
        cfg.content = ContentKind::L1;
        let text = cfg.serialize();
        let mut back = Config::default();
        back.apply_text(&text).unwrap();
        assert_eq!(cfg, back);
        // And the echo of the echo is identical text.
        assert_eq!(text, back.serialize());
    }

    /// Defaults validate at both full and desk scale.
    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
        Config::desk().validate().unwrap();
    }

    /// The divisibility guard fires before training: 65 is not divisible by
    /// the generator's downsampling factor.
    #[test]
    fn indivisible_patch_rejected() {
        let cfg = Config {
            patch_size: 65,
            ..Config::desk()
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 1, "config errors map to exit 1");
        // Scale outside {2,4,8}: rejected.
        let cfg = Config {
            patch_size: 24,
            scale: 0,
            ..Config::desk()
        };
        assert!(cfg.validate().is_err());
        // Divisible by 2^n_half but not by scale: also rejected.
        let cfg = Config {
            scale: 8,
            patch_size: 36,
            g_n_half: 2,
            ..Config::desk()
        };
        assert!(cfg.validate().is_err());
    }

    /// Unknown keys and malformed values are errors with line context.
    #[test]
    fn parse_rejects_unknown_and_malformed() {
        let mut cfg = Config::default();
        let err = cfg.apply_text("scale = 4\nbogus_key = 1\n").unwrap_err();
        assert!(format!("{err}").contains("line 2"));
        assert!(cfg.apply_text("scale = quattro\n").is_err());
        assert!(cfg.apply_text("just words\n").is_err());
        assert!(cfg.apply_text("d_conditional = yes\n").is_err());
        cfg.apply_text("# comment\n\nscale = 2\n").unwrap();
        assert_eq!(cfg.scale, 2);
    }

    /// Precedence: desk preset, then file, then flags.
    #[test]
    fn resolve_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "iters = 900\nseed = 7\n").unwrap();
        let flags = Overrides {
            seed: Some(11),
            out: Some(PathBuf::from("elsewhere")),
            ..Overrides::default()
        };
        let cfg = Config::resolve(Some(&path), true, &flags).unwrap();
        assert_eq!(cfg.patch_size, 64, "desk preset");
        assert_eq!(cfg.iters, 900, "file overrides preset");
        assert_eq!(cfg.seed, 11, "flag overrides file");
        assert_eq!(cfg.out, PathBuf::from("elsewhere"));
        let missing = Config::resolve(Some(&dir.path().join("nope.txt")), false, &flags);
        assert!(missing.is_err());
    }
}
