//! Run configuration: `key = value` lines, overridden by command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use owr_core::clustering::KMeansParams;
use owr_core::embedding::SaliencyScore;
use owr_core::pipeline::TrainParams;
use owr_core::semantics::NormalizationMode;
use owr_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Fixed(usize),
    Elbow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_dir: Option<PathBuf>,
    pub k: KChoice,
    pub k_grid: Vec<usize>,
    pub positional_weight: f32,
    pub saliency_train: bool,
    pub saliency_eval: bool,
    pub saliency_score: SaliencyScore,
    pub normalization: NormalizationMode,
    pub batch_size_images: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    /// Grid axes for `sweep`.
    pub sweep_k: Vec<usize>,
    pub sweep_positional_weight: Vec<f32>,
    /// Label for the `patch_size` column of sweep output; `auto` uses the
    /// feature grid geometry.
    pub patch_size: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainParams::default();
        Self {
            dataset_dir: None,
            k: KChoice::Fixed(train.k),
            k_grid: Vec::new(),
            positional_weight: train.positional_weight,
            saliency_train: train.saliency_train,
            saliency_eval: train.saliency_eval,
            saliency_score: train.saliency_score,
            normalization: train.normalization,
            batch_size_images: train.kmeans.batch_size_images,
            seed: train.kmeans.seed,
            max_iters: train.kmeans.max_iters,
            tol: train.kmeans.tol,
            sweep_k: Vec::new(),
            sweep_positional_weight: Vec::new(),
            patch_size: "auto".into(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "dataset_dir",
    "k",
    "k_grid",
    "positional_weight",
    "saliency_train",
    "saliency_eval",
    "saliency_score",
    "normalization",
    "batch_size_images",
    "seed",
    "max_iters",
    "tol",
    "sweep_k",
    "sweep_positional_weight",
    "patch_size",
];

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {expected}"))
}

fn parse_num<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T, Error> {
    value.parse().map_err(|_| bad(key, value, expected))
}

fn parse_list<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<Vec<T>, Error> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse_num(key, v.trim(), expected))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, Error> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let value = value.trim();
        match key {
            "dataset_dir" => self.dataset_dir = Some(PathBuf::from(value)),
            "k" => {
                self.k = if value == "elbow" {
                    KChoice::Elbow
                } else {
                    KChoice::Fixed(parse_num(key, value, "a positive integer or \"elbow\"")?)
                }
            }
            "k_grid" => self.k_grid = parse_list(key, value, "comma-separated integers")?,
            "positional_weight" => {
                self.positional_weight = parse_num(key, value, "a number in [0, 1]")?
            }
            "saliency_train" => self.saliency_train = parse_bool(key, value)?,
            "saliency_eval" => self.saliency_eval = parse_bool(key, value)?,
            "saliency_score" => {
                self.saliency_score = match value {
                    "absolute" => SaliencyScore::Absolute,
                    "signed" => SaliencyScore::Signed,
                    _ => return Err(bad(key, value, "absolute or signed")),
                }
            }
            "normalization" => {
                self.normalization = value
                    .parse()
                    .map_err(|_| bad(key, value, "per_cluster or dataset_wide"))?
            }
            "batch_size_images" => {
                self.batch_size_images = parse_num(key, value, "a positive integer")?
            }
            "seed" => self.seed = parse_num(key, value, "an unsigned integer")?,
            "max_iters" => self.max_iters = parse_num(key, value, "a positive integer")?,
            "tol" => self.tol = parse_num(key, value, "a non-negative number")?,
            "sweep_k" => self.sweep_k = parse_list(key, value, "comma-separated integers")?,
            "sweep_positional_weight" => {
                self.sweep_positional_weight = parse_list(key, value, "comma-separated numbers")?
            }
            "patch_size" => self.patch_size = value.to_string(),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are
    /// skipped; a key may appear only once per file.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), Error> {
        let mut seen = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let at = |reason: String| {
                Error::Config(format!("{}:{}: {reason}", origin.display(), idx + 1))
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at("expected `key = value`".into()))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(at(format!("duplicate key {key:?}")));
            }
            seen.push(key);
            self.set(key, value).map_err(|e| match e {
                Error::Config(reason) => at(reason),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Every key with its effective value, one per line, in fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "dataset_dir" => self
                    .dataset_dir
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                "k" => match self.k {
                    KChoice::Fixed(k) => k.to_string(),
                    KChoice::Elbow => "elbow".into(),
                },
                "k_grid" => join(&self.k_grid),
                "positional_weight" => self.positional_weight.to_string(),
                "saliency_train" => self.saliency_train.to_string(),
                "saliency_eval" => self.saliency_eval.to_string(),
                "saliency_score" => match self.saliency_score {
                    SaliencyScore::Absolute => "absolute".into(),
                    SaliencyScore::Signed => "signed".into(),
                },
                "normalization" => self.normalization.to_string(),
                "batch_size_images" => self.batch_size_images.to_string(),
                "seed" => self.seed.to_string(),
                "max_iters" => self.max_iters.to_string(),
                "tol" => self.tol.to_string(),
                "sweep_k" => join(&self.sweep_k),
                "sweep_positional_weight" => join(&self.sweep_positional_weight),
                "patch_size" => self.patch_size.clone(),
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn dataset_dir(&self) -> Result<&Path, Error> {
        self.dataset_dir
            .as_deref()
            .ok_or_else(|| Error::Config("dataset_dir is not set".into()))
    }

    /// Checks cross-key rules and that the dataset directory exists.
    pub fn validate(&self) -> Result<(), Error> {
        let dir = self.dataset_dir()?;
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "dataset_dir {} is not a directory",
                dir.display()
            )));
        }
        match self.k {
            KChoice::Elbow if self.k_grid.is_empty() => {
                return Err(Error::Config("k = elbow needs a k_grid".into()))
            }
            KChoice::Fixed(_) if !self.k_grid.is_empty() => {
                return Err(Error::Config(
                    "k_grid is only used with k = elbow; set one or the other".into(),
                ))
            }
            KChoice::Fixed(0) => return Err(Error::Config("k must be positive".into())),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.positional_weight) {
            return Err(Error::Config("positional_weight must lie in [0, 1]".into()));
        }
        if self.batch_size_images == 0 || self.max_iters == 0 {
            return Err(Error::Config(
                "batch_size_images and max_iters must be positive".into(),
            ));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Config("tol must be non-negative".into()));
        }
        Ok(())
    }

    pub fn kmeans(&self) -> KMeansParams {
        KMeansParams {
            batch_size_images: self.batch_size_images,
            max_iters: self.max_iters,
            seed: self.seed,
            tol: self.tol,
        }
    }
}
