//! TOML run configuration.
//!
//! ```toml
//! schema_version = 1
//! name = "mnist-ossl"
//!
//! [model]
//! backbone = "lenet5"
//!
//! [sgd]
//! mode = "ossl"
//! n_epoch = 30
//!
//! [train_set]
//! name = "mnist"
//! format = "idx"
//! files = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"]
//! limit = 10000
//!
//! [[test_sets]]
//! name = "usps"
//! format = "raw"
//! files = ["usps_test.osslraw"]
//! resize = "nearest"
//! ```
//!
//! Unknown keys are errors. Relative paths are taken relative to the file
//! that names them. [`RunConfig::resolve`] fills every default, including the
//! normalization statistics measured on the training set, and the result
//! serializes back into a config that reproduces the same run.

use crate::error::{Error, Result};
use crate::formats::{cifar, idx, raw};
use ossl::bilevel::{SgdConfig, TrainMode};
use ossl::data::{
    channel_stats, preprocess, synthetic_blobs, LabeledImageSet, PreprocessSpec, Resize, SetRole,
};
use ossl::losses::LowerVariant;
use ossl::nn::{BackboneKind, InputSpec, ModelConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the directory under which runs without an
/// explicit `output_dir` are placed.
pub const OUTPUT_ROOT_ENV: &str = "OSSL_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Wall time makes `metrics.csv` differ between identical runs, so it is
    /// off unless asked for.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Per-channel `[mean, std]` applied to every set after resizing.
    /// Measured on the training set when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<Vec<[f64; 2]>>,
    pub model: ModelSection,
    #[serde(default)]
    pub sgd: SgdSection,
    pub train_set: DatasetSection,
    #[serde(default)]
    pub test_sets: Vec<DatasetSection>,
}

fn default_name() -> String {
    "run".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: String,
    /// Defaults to the training set's class count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_hidden: Option<usize>,
    /// `[channels, height, width]`; defaults to the preprocessed training
    /// set's geometry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<[usize; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdSection {
    pub lr: f64,
    pub batch_size: usize,
    pub n_epoch: usize,
    pub shuffle_seed: u64,
    pub mode: String,
    pub lower_variant: String,
    pub eval_batch_size: usize,
}

impl Default for SgdSection {
    fn default() -> Self {
        let d = SgdConfig::default();
        Self {
            lr: d.lr,
            batch_size: d.batch_size,
            n_epoch: d.n_epoch,
            shuffle_seed: d.shuffle_seed,
            mode: d.mode.name().into(),
            lower_variant: d.lower_variant.name().into(),
            eval_batch_size: d.eval_batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    /// `idx` (images file, labels file), `cifar` (one or more batch files),
    /// `raw` (one OSSLRAW1 file) or `synthetic`.
    pub format: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<PathBuf>,
    /// Keep only the first `limit` images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default)]
    pub grayscale: bool,
    #[serde(default = "default_resize")]
    pub resize: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
}

fn default_resize() -> String {
    Resize::None.name().into()
}

/// Separable band images, for smoke tests and CI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub count: usize,
    pub classes: usize,
    pub shape: [usize; 3],
    #[serde(default = "default_noise")]
    pub noise: f32,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f32 {
    0.3
}

/// Everything a training run needs, validated and loaded.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// The materialized configuration, suitable for writing back out.
    pub resolved: RunConfig,
    pub model: ModelConfig,
    pub sgd: SgdConfig,
    pub train: LabeledImageSet,
    pub tests: Vec<LabeledImageSet>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::ConfigSyntax(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!(
                    "version {} is not supported (expected {SCHEMA_VERSION})",
                    cfg.schema_version
                ),
            ));
        }
        Ok(cfg)
    }

    /// Reads a config file and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let base = absolute(base)?;
        cfg.rebase(&base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for set in std::iter::once(&mut self.train_set).chain(&mut self.test_sets) {
            set.files.iter_mut().for_each(fix);
        }
        if let Some(dir) = &mut self.output_dir {
            fix(dir);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the serialized configuration, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Checks every field, loads the data and materializes all defaults.
    ///
    /// `out_override` replaces `output_dir`; otherwise runs land in
    /// `output_dir`, then `$OSSL_OUTPUT_ROOT/<name>`, then `runs/<name>`.
    pub fn resolve(&self, out_override: Option<&Path>) -> Result<Prepared> {
        let mut r = self.clone();
        let backbone = BackboneKind::from_name(&r.model.backbone).ok_or_else(|| {
            Error::config(
                "model.backbone",
                format!(
                    "unknown backbone `{}` (lenet5, densenet40, tiny_cnn)",
                    r.model.backbone
                ),
            )
        })?;
        let sgd = r.sgd.to_config()?;
        for (i, set) in std::iter::once(&r.train_set)
            .chain(&r.test_sets)
            .enumerate()
        {
            set.validate(&field_prefix(i))?;
        }
        let names: Vec<&str> = r.test_sets.iter().map(|s| s.name.as_str()).collect();
        if let Some(dup) = names
            .iter()
            .enumerate()
            .find(|(i, n)| names[..*i].contains(n))
        {
            return Err(Error::config(
                "test_sets",
                format!("duplicate test set name `{}`", dup.1),
            ));
        }

        let train_raw = r.train_set.load("train_set", SetRole::Train)?;
        let first = r.train_set.spatial(&train_raw, None, "train_set")?;
        let input = match r.model.input {
            Some([c, h, w]) => InputSpec::new(c, h, w),
            None => first.target,
        };
        let train_geom = r.train_set.spatial(&train_raw, Some(input), "train_set")?;
        let train_unnorm =
            preprocess(&train_raw, &train_geom).map_err(|e| as_field("train_set", e))?;
        let stats = match &r.normalize {
            Some(pairs) => {
                if pairs.len() != input.channels {
                    return Err(Error::config(
                        "normalize",
                        format!("{} pairs for {} channels", pairs.len(), input.channels),
                    ));
                }
                if let Some(p) = pairs
                    .iter()
                    .find(|p| !(p[1] > 0.0 && p[1].is_finite() && p[0].is_finite()))
                {
                    return Err(Error::config(
                        "normalize",
                        format!("invalid pair {p:?}: std must be positive"),
                    ));
                }
                pairs.iter().map(|p| (p[0], p[1])).collect()
            }
            None => {
                let s: Vec<(f64, f64)> = channel_stats(&train_unnorm)
                    .into_iter()
                    .map(|(m, s)| (m, if s > 0.0 { s } else { 1.0 }))
                    .collect();
                s
            }
        };
        r.normalize = Some(stats.iter().map(|&(m, s)| [m, s]).collect());
        let norm = |name: &str, set: &LabeledImageSet, field: &str| -> Result<LabeledImageSet> {
            let spec = PreprocessSpec {
                normalize: stats.clone(),
                ..PreprocessSpec::identity(input)
            };
            preprocess(set, &spec)
                .map(|s| s.with_name(name))
                .map_err(|e| as_field(field, e))
        };
        let train = norm(&r.train_set.name, &train_unnorm, "train_set")?;

        let num_classes = r.model.num_classes.unwrap_or(train.class_count());
        r.model.num_classes = Some(num_classes);
        r.model.input = Some([input.channels, input.height, input.width]);
        let mut model = ModelConfig::new(backbone, num_classes, input, r.model.init_seed);
        model.head_hidden = r.model.head_hidden;
        ossl::nn::build_model::<f32>(&model).map_err(|e| as_field("model", e))?;

        let mut tests = Vec::with_capacity(r.test_sets.len());
        for (i, sec) in r.test_sets.iter().enumerate() {
            let field = field_prefix(i + 1);
            let set = sec.load(&field, SetRole::OodTest)?;
            if set.class_count() != num_classes {
                return Err(Error::config(
                    field,
                    format!("{} classes, model has {num_classes}", set.class_count()),
                ));
            }
            let geom = sec.spatial(&set, Some(input), &field)?;
            let set = preprocess(&set, &geom).map_err(|e| as_field(&field, e))?;
            tests.push(norm(&sec.name, &set, &field)?.with_role(SetRole::OodTest));
        }

        let output_dir = match out_override {
            Some(p) => absolute(p)?,
            None => match &r.output_dir {
                Some(p) => p.clone(),
                None => {
                    let root = std::env::var_os(OUTPUT_ROOT_ENV)
                        .map(PathBuf::from)
                        .unwrap_or_else(|| PathBuf::from("runs"));
                    absolute(&root.join(&r.name))?
                }
            },
        };
        r.output_dir = Some(output_dir.clone());
        Ok(Prepared {
            resolved: r,
            model,
            sgd,
            train,
            tests,
            output_dir,
        })
    }
}

fn field_prefix(i: usize) -> String {
    if i == 0 {
        "train_set".into()
    } else {
        format!("test_sets[{}]", i - 1)
    }
}

fn as_field(field: &str, e: ossl::Error) -> Error {
    Error::config(field, e.to_string())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

impl SgdSection {
    pub fn to_config(&self) -> Result<SgdConfig> {
        let mode = TrainMode::from_name(&self.mode).ok_or_else(|| {
            Error::config(
                "sgd.mode",
                format!(
                    "unknown mode `{}` (baseline_ch, baseline_ch_rh, ossl)",
                    self.mode
                ),
            )
        })?;
        let lower_variant = LowerVariant::from_name(&self.lower_variant).ok_or_else(|| {
            Error::config(
                "sgd.lower_variant",
                format!("unknown variant `{}` (ah, rh)", self.lower_variant),
            )
        })?;
        let cfg = SgdConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            n_epoch: self.n_epoch,
            shuffle_seed: self.shuffle_seed,
            mode,
            lower_variant,
            eval_batch_size: self.eval_batch_size,
        };
        cfg.validate()
            .map_err(|e| Error::config("sgd", e.to_string()))?;
        Ok(cfg)
    }
}

impl DatasetSection {
    fn validate(&self, field: &str) -> Result<()> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(
                    format!("{field}.files"),
                    format!("format `{}` needs {what}", self.format),
                ))
            }
        };
        match self.format.as_str() {
            "idx" => need(
                self.files.len() == 2,
                "exactly two files: images then labels",
            )?,
            "raw" => need(self.files.len() == 1, "exactly one file")?,
            "cifar" => need(!self.files.is_empty(), "at least one batch file")?,
            "synthetic" => {
                need(self.files.is_empty(), "no files")?;
                if self.synthetic.is_none() {
                    return Err(Error::config(
                        format!("{field}.synthetic"),
                        "missing for format `synthetic`",
                    ));
                }
            }
            other => {
                return Err(Error::config(
                    format!("{field}.format"),
                    format!("unknown format `{other}` (idx, cifar, raw, synthetic)"),
                ))
            }
        }
        if self.synthetic.is_some() && self.format != "synthetic" {
            return Err(Error::config(
                format!("{field}.synthetic"),
                "only allowed with format `synthetic`",
            ));
        }
        if Resize::from_name(&self.resize).is_none() {
            return Err(Error::config(
                format!("{field}.resize"),
                format!("unknown resize `{}` (none, bilinear, nearest)", self.resize),
            ));
        }
        for (i, f) in self.files.iter().enumerate() {
            if !f.is_file() {
                return Err(Error::config(
                    format!("{field}.files[{i}]"),
                    format!("{} does not exist", f.display()),
                ));
            }
        }
        Ok(())
    }

    /// Loads the set as stored on disk, applying `limit`.
    pub fn load(&self, field: &str, role: SetRole) -> Result<LabeledImageSet> {
        let set = match self.format.as_str() {
            "idx" => idx::load_idx(&self.name, &self.files[0], &self.files[1])?,
            "cifar" => cifar::load_cifar_bin(&self.name, &self.files)?,
            "raw" => raw::load_raw_tensor(&self.name, &self.files[0])?,
            "synthetic" => {
                let s = self.synthetic.as_ref().expect("validated");
                let [c, h, w] = s.shape;
                synthetic_blobs(
                    &self.name,
                    s.count,
                    s.classes,
                    InputSpec::new(c, h, w),
                    s.noise,
                    s.seed,
                )
                .map_err(|e| as_field(&format!("{field}.synthetic"), e))?
            }
            other => unreachable!("format `{other}` passed validation"),
        };
        let set = match self.limit {
            Some(n) => set.take(n),
            None => set,
        };
        Ok(set.with_role(role))
    }

    /// Grayscale and resize steps toward `target`; without a target, the
    /// geometry the set has after grayscale conversion.
    fn spatial(
        &self,
        set: &LabeledImageSet,
        target: Option<InputSpec>,
        field: &str,
    ) -> Result<PreprocessSpec> {
        let src = set.input_spec();
        let resize = Resize::from_name(&self.resize).expect("validated");
        let target = target.unwrap_or(InputSpec {
            channels: if self.grayscale { 1 } else { src.channels },
            ..src
        });
        if resize == Resize::None && (src.height, src.width) != (target.height, target.width) {
            return Err(Error::config(
                format!("{field}.resize"),
                format!(
                    "{}x{} images need a resize to reach the model's {}x{}",
                    src.height, src.width, target.height, target.width
                ),
            ));
        }
        Ok(PreprocessSpec {
            target,
            grayscale: self.grayscale,
            resize,
            normalize: Vec::new(),
        })
    }
}
