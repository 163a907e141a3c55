//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{AugmentPolicy, CifarVariant, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::EmbeddingSpace;
use crate::losses::{ObjectiveConfig, ObjectiveKind};
use crate::relations::Temperature;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Vds { train: PathBuf, test: PathBuf },
    Cifar {
        variant: CifarVariant,
        train: PathBuf,
        test: PathBuf,
        coarse_map: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub objective: ObjectiveConfig,
    pub encoder_hidden: Vec<usize>,
    pub feat_dim: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Apply weight decay to bias vectors too.
    pub decay_bias: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub bank_size: usize,
    /// EMA momentum of the key encoder.
    pub ema: f64,
    pub data: DataSource,
    pub augment: AugmentPolicy,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub eval_every: usize,
    pub eval_space: EmbeddingSpace,
    pub ks: Vec<usize>,
    /// Relation temperature of the per-epoch masked d_z diagnostic.
    pub dz_tau: Temperature,
    /// Write real elapsed time into the metrics; off keeps metrics files
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveConfig::new(ObjectiveKind::MaskCon),
            encoder_hidden: vec![256],
            feat_dim: 128,
            proj_hidden: 512,
            proj_dim: 128,
            base_lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_bias: true,
            epochs: 60,
            batch_size: 64,
            bank_size: 1024,
            ema: 0.99,
            data: DataSource::Synthetic(SyntheticConfig::default()),
            augment: AugmentPolicy::default(),
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            eval_every: 5,
            eval_space: EmbeddingSpace::Features,
            ks: vec![1, 2, 5, 10],
            dz_tau: Temperature::Finite(0.05),
            record_wall_time: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::BadConfig(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::BadConfig(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    fn synthetic_mut(&mut self) -> &mut SyntheticConfig {
        if !matches!(self.data, DataSource::Synthetic(_)) {
            self.data = DataSource::Synthetic(SyntheticConfig::default());
        }
        match &mut self.data {
            DataSource::Synthetic(s) => s,
            _ => unreachable!(),
        }
    }

    fn set_path(&mut self, key: &str, value: &str) -> Result<()> {
        let p = PathBuf::from(value);
        match (&mut self.data, key) {
            (DataSource::Vds { train, .. } | DataSource::Cifar { train, .. }, "train_path") => *train = p,
            (DataSource::Vds { test, .. } | DataSource::Cifar { test, .. }, "test_path") => *test = p,
            (DataSource::Cifar { coarse_map, .. }, "coarse_map") => *coarse_map = Some(p),
            _ => {
                return Err(Error::BadConfig(format!(
                    "{key} needs `data` set to vds, cifar10 or cifar100 first"
                )))
            }
        }
        Ok(())
    }

    /// Applies one setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "objective" => self.objective.kind = parse(key, v)?,
            "w" => self.objective.w = parse(key, v)?,
            "tau" => self.objective.tau = v.parse()?,
            "tau0" => self.objective.tau0 = parse(key, v)?,
            "adaptive_w" => self.objective.adaptive_w = parse_bool(key, v)?,
            "encoder_hidden" => self.encoder_hidden = parse_list(key, v)?,
            "feat_dim" => self.feat_dim = parse(key, v)?,
            "proj_hidden" => self.proj_hidden = parse(key, v)?,
            "proj_dim" => self.proj_dim = parse(key, v)?,
            "lr" | "base_lr" => self.base_lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "decay_bias" => self.decay_bias = parse_bool(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "bank_size" => self.bank_size = parse(key, v)?,
            "ema" => self.ema = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out_dir = PathBuf::from(v),
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_space" => self.eval_space = v.parse()?,
            "ks" => self.ks = parse_list(key, v)?,
            "dz_tau" => self.dz_tau = v.parse()?,
            "record_wall_time" => self.record_wall_time = parse_bool(key, v)?,
            "aug_noise_sigma" => self.augment.noise_sigma = parse(key, v)?,
            "aug_scale_jitter" => self.augment.scale_jitter = parse(key, v)?,
            "aug_mask_frac" => self.augment.mask_frac = parse(key, v)?,
            "aug_strong" => self.augment.strong = parse_bool(key, v)?,
            "aug_strong_scale" => self.augment.strong_scale = parse(key, v)?,
            "data" => {
                self.data = match v {
                    "synthetic" => DataSource::Synthetic(SyntheticConfig::default()),
                    "vds" => DataSource::Vds {
                        train: PathBuf::new(),
                        test: PathBuf::new(),
                    },
                    "cifar10" | "cifar100" => DataSource::Cifar {
                        variant: if v == "cifar10" {
                            CifarVariant::Cifar10
                        } else {
                            CifarVariant::Cifar100
                        },
                        train: PathBuf::new(),
                        test: PathBuf::new(),
                        coarse_map: None,
                    },
                    other => return Err(Error::BadConfig(format!("unknown data source {other:?}"))),
                }
            }
            k @ ("train_path" | "test_path" | "coarse_map") => self.set_path(k, v)?,
            "syn_m_coarse" => self.synthetic_mut().m_coarse = parse(key, v)?,
            "syn_fine_per_coarse" => self.synthetic_mut().fine_per_coarse = parse(key, v)?,
            "syn_n_per_fine" => self.synthetic_mut().n_per_fine = parse(key, v)?,
            "syn_dim" => self.synthetic_mut().dim = parse(key, v)?,
            "syn_coarse_sep" => self.synthetic_mut().coarse_sep = parse(key, v)?,
            "syn_fine_sep" => self.synthetic_mut().fine_sep = parse(key, v)?,
            "syn_noise" => self.synthetic_mut().noise = parse(key, v)?,
            "syn_train_frac" => self.synthetic_mut().train_frac = parse(key, v)?,
            "syn_seed" => self.synthetic_mut().seed = parse(key, v)?,
            other => return Err(Error::BadConfig(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines (`#` starts a comment) on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::BadConfig(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_str(&fs::read_to_string(path)?)
    }

    /// Applies `(key, value)` overrides in order, then validates.
    pub fn with_overrides<'a>(mut self, overrides: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        let o = &self.objective;
        if !(0.0..=1.0).contains(&o.w) {
            return bad(format!("w = {} outside [0, 1]", o.w));
        }
        if !(o.tau0 > 0.0 && o.tau0.is_finite()) {
            return bad(format!("tau0 = {} must be positive", o.tau0));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.bank_size < self.batch_size {
            return bad(format!(
                "bank_size {} smaller than batch_size {}",
                self.bank_size, self.batch_size
            ));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.ema) {
            return bad("ema must lie in [0, 1]".into());
        }
        if self.eval_every < 1 {
            return bad("eval_every must be at least 1".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be a nonempty list of positive integers".into());
        }
        if self.feat_dim == 0 || self.proj_hidden == 0 || self.proj_dim == 0 || self.encoder_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        let a = &self.augment;
        if !(a.noise_sigma >= 0.0 && a.scale_jitter >= 0.0 && (0.0..1.0).contains(&a.mask_frac) && a.strong_scale >= 0.0) {
            return bad("augmentation magnitudes out of range".into());
        }
        match &self.data {
            DataSource::Synthetic(s) => s.validate()?,
            DataSource::Vds { train, test } | DataSource::Cifar { train, test, .. } => {
                if train.as_os_str().is_empty() || test.as_os_str().is_empty() {
                    return bad("train_path and test_path are required".into());
                }
            }
        }
        Ok(())
    }

    /// Serializes every setting in the format [`Self::parse_str`] reads.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let o = &self.objective;
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "objective = {}", o.kind);
        let _ = writeln!(s, "w = {}", o.w);
        let _ = writeln!(s, "tau = {}", o.tau);
        let _ = writeln!(s, "tau0 = {}", o.tau0);
        let _ = writeln!(s, "adaptive_w = {}", o.adaptive_w);
        let _ = writeln!(s, "encoder_hidden = {}", list(&self.encoder_hidden));
        let _ = writeln!(s, "feat_dim = {}", self.feat_dim);
        let _ = writeln!(s, "proj_hidden = {}", self.proj_hidden);
        let _ = writeln!(s, "proj_dim = {}", self.proj_dim);
        let _ = writeln!(s, "lr = {}", self.base_lr);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "decay_bias = {}", self.decay_bias);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "bank_size = {}", self.bank_size);
        let _ = writeln!(s, "ema = {}", self.ema);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "eval_space = {}", self.eval_space);
        let _ = writeln!(s, "ks = {}", list(&self.ks));
        let _ = writeln!(s, "dz_tau = {}", self.dz_tau);
        let _ = writeln!(s, "record_wall_time = {}", self.record_wall_time);
        let a = &self.augment;
        let _ = writeln!(s, "aug_noise_sigma = {}", a.noise_sigma);
        let _ = writeln!(s, "aug_scale_jitter = {}", a.scale_jitter);
        let _ = writeln!(s, "aug_mask_frac = {}", a.mask_frac);
        let _ = writeln!(s, "aug_strong = {}", a.strong);
        let _ = writeln!(s, "aug_strong_scale = {}", a.strong_scale);
        match &self.data {
            DataSource::Synthetic(c) => {
                let _ = writeln!(s, "data = synthetic");
                let _ = writeln!(s, "syn_m_coarse = {}", c.m_coarse);
                let _ = writeln!(s, "syn_fine_per_coarse = {}", c.fine_per_coarse);
                let _ = writeln!(s, "syn_n_per_fine = {}", c.n_per_fine);
                let _ = writeln!(s, "syn_dim = {}", c.dim);
                let _ = writeln!(s, "syn_coarse_sep = {}", c.coarse_sep);
                let _ = writeln!(s, "syn_fine_sep = {}", c.fine_sep);
                let _ = writeln!(s, "syn_noise = {}", c.noise);
                let _ = writeln!(s, "syn_train_frac = {}", c.train_frac);
                let _ = writeln!(s, "syn_seed = {}", c.seed);
            }
            DataSource::Vds { train, test } => {
                let _ = writeln!(s, "data = vds");
                let _ = writeln!(s, "train_path = {}", train.display());
                let _ = writeln!(s, "test_path = {}", test.display());
            }
            DataSource::Cifar {
                variant,
                train,
                test,
                coarse_map,
            } => {
                let name = match variant {
                    CifarVariant::Cifar10 => "cifar10",
                    CifarVariant::Cifar100 => "cifar100",
                };
                let _ = writeln!(s, "data = {name}");
                let _ = writeln!(s, "train_path = {}", train.display());
                let _ = writeln!(s, "test_path = {}", test.display());
                if let Some(m) = coarse_map {
                    let _ = writeln!(s, "coarse_map = {}", m.display());
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_comments_and_symbolic_tau() {
        let cfg = RunConfig::parse_str("# run\nobjective = grafit\nw = 0.5  # half\ntau = inf\nks = 1,5\n").unwrap();
        assert_eq!(cfg.objective.kind, ObjectiveKind::Grafit);
        assert_eq!(cfg.objective.w, 0.5);
        assert_eq!(cfg.objective.tau, Temperature::Infinity);
        assert_eq!(cfg.ks, vec![1, 5]);
        let cfg = RunConfig::parse_str("tau = 0").unwrap();
        assert_eq!(cfg.objective.tau, Temperature::Zero);
    }

    #[test]
    fn overrides_win() {
        let cfg = RunConfig::parse_str("epochs = 3").unwrap().with_overrides([("epochs", "7")]).unwrap();
        assert_eq!(cfg.epochs, 7);
    }

    #[test]
    fn rejects_invariant_violations() {
        for (k, v) in [
            ("w", "1.5"),
            ("w", "-0.1"),
            ("tau0", "0"),
            ("epochs", "0"),
            ("bank_size", "8"),
            ("batch_size", "0"),
            ("momentum", "1"),
        ] {
            let r = RunConfig::default().with_overrides([(k, v)]);
            assert!(matches!(r, Err(Error::BadConfig(_))), "{k} = {v} accepted");
        }
        assert!(RunConfig::parse_str("nonsense = 1").is_err());
        assert!(RunConfig::parse_str("epochs 3").is_err());
        assert!(RunConfig::parse_str("train_path = x").is_err());
    }

    #[test]
    fn config_string_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("data", "vds").unwrap();
        cfg.set("train_path", "a.vds").unwrap();
        cfg.set("test_path", "b.vds").unwrap();
        cfg.set("tau", "inf").unwrap();
        assert_eq!(RunConfig::parse_str(&cfg.to_config_string()).unwrap(), cfg);
        let syn = RunConfig::default();
        assert_eq!(RunConfig::parse_str(&syn.to_config_string()).unwrap(), syn);
    }
}
