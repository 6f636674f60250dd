//! Run configuration files.
//!
//! A run is described by one TOML file. Every table rejects unknown keys,
//! and the whole file is checked (model built, data paths resolved,
//! optimizer validated) before any training starts.

use std::fmt;
use std::path::{Path, PathBuf};

use rpn::data::{self, NormalizerSpec, Split};
use rpn::model::{HeadSpec, LayerSpec, Model, ModelSpec};
use rpn::train::TrainConfig;
use serde::{Deserialize, Serialize};

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Free-form label copied into the summary.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output directory, relative to the config file.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub model: ModelSection,
    pub data: DataSpec,
    #[serde(default)]
    pub normalizer: NormalizerSpec,
    pub train: TrainConfig,
}

/// Either `dims` with one shared head list, or explicit `layers`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    #[serde(default)]
    pub heads: Option<Vec<HeadSpec>>,
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
}

impl ModelSection {
    pub fn spec(&self) -> Result<ModelSpec, String> {
        match (&self.dims, &self.heads, &self.layers) {
            (Some(dims), Some(heads), None) => {
                if dims.len() < 2 {
                    return Err("model.dims needs at least two entries".into());
                }
                if heads.is_empty() {
                    return Err("model.heads is empty".into());
                }
                let mut spec = ModelSpec::stack(dims, &heads[0]);
                for layer in &mut spec.layers {
                    layer.heads = heads.clone();
                }
                Ok(spec)
            }
            (None, None, Some(layers)) => Ok(ModelSpec { layers: layers.clone() }),
            _ => Err("model: give either `dims` with `heads`, or `layers`".into()),
        }
    }
}

fn default_n() -> usize {
    2000
}

fn one() -> usize {
    1
}

fn default_side() -> usize {
    28
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Samples from a catalog function, split in half. Without `seed` the
    /// run seed draws the samples.
    Function {
        id: String,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Labelled CSV with stratified k-fold splits. With `regression` the
    /// label column is read as a number and only `folds = 1` is allowed.
    Csv {
        path: PathBuf,
        label: String,
        #[serde(default = "one")]
        folds: usize,
        #[serde(default)]
        fold_seed: u64,
        #[serde(default)]
        regression: bool,
    },
    /// IDX image/label files, optionally average-pooled and truncated.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default = "one")]
        downsample: usize,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

impl DataSpec {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            DataSpec::Function { .. } => vec![],
            DataSpec::Csv { path, .. } => vec![path],
            DataSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => vec![train_images, train_labels, test_images, test_labels],
        }
    }

    /// Train/test splits for one seed; several for k-fold CSV data.
    pub fn load(&self, seed: u64) -> rpn::Result<Vec<Split>> {
        match self {
            DataSpec::Function { id, n, seed: fixed } => {
                let def = data::find_function(id)?;
                Ok(vec![data::gen_function_dataset(&def, *n, fixed.unwrap_or(seed))?])
            }
            DataSpec::Csv {
                path,
                label,
                regression: true,
                ..
            } => {
                let table = data::read_csv(path, label)?;
                let mut all = table.data;
                for y in &mut all.y {
                    let name = &table.classes[y[0] as usize];
                    y[0] = name.parse().map_err(|_| rpn::Error::Format {
                        path: path.clone(),
                        message: format!("label {name:?} is not a number"),
                    })?;
                }
                Ok(vec![Split {
                    train: all.clone(),
                    test: all,
                }])
            }
            DataSpec::Csv {
                path,
                label,
                folds,
                fold_seed,
                ..
            } => data::load_csv(path, label, *folds, *fold_seed),
            DataSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                side,
                downsample,
                train_limit,
                test_limit,
            } => {
                let prep = |img: &Path, lab: &Path, limit: Option<usize>| -> rpn::Result<data::Dataset> {
                    let mut d = data::load_idx(img, lab)?;
                    if let Some(k) = limit {
                        d = d.subset(&(0..k.min(d.len())).collect::<Vec<_>>());
                    }
                    if *downsample > 1 {
                        d = data::downsample(&d, *side, *downsample)?;
                    }
                    Ok(d)
                };
                Ok(vec![Split {
                    train: prep(train_images, train_labels, *train_limit)?,
                    test: prep(test_images, test_labels, *test_limit)?,
                }])
            }
        }
    }
}

/// A config that failed to parse or validate.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    /// Dotted key path of the offending field, when known.
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{}: at `{field}`: {}", self.path.display(), self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

/// A parsed and validated config with paths made absolute.
pub struct Loaded {
    pub config: RunConfig,
    pub model: Model,
    pub source: PathBuf,
}

pub fn parse(text: &str) -> Result<RunConfig, (Option<String>, String)> {
    let de = toml::Deserializer::parse(text).map_err(|e| (None, e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let field = (field != ".").then_some(field);
        (field, e.into_inner().message().to_string())
    })
}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let err = |field: Option<&str>, message: String| ConfigError {
        path: path.to_path_buf(),
        field: field.map(String::from),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(None, e.to_string()))?;
    let mut config = parse(&text).map_err(|(f, m)| err(f.as_deref(), m))?;
    let base = path.parent().unwrap_or(Path::new("."));
    config.out = base.join(&config.out);
    for p in config.data.paths_mut() {
        *p = base.join(&*p);
        if !p.exists() {
            return Err(err(Some("data"), format!("no such file: {}", p.display())));
        }
    }
    if config.seeds.is_empty() {
        return Err(err(Some("seeds"), "at least one seed is required".into()));
    }
    let spec = config.model.spec().map_err(|m| err(Some("model"), m))?;
    let model = Model::build(&spec).map_err(|e| err(Some("model"), e.to_string()))?;
    config.train.validate().map_err(|e| err(Some("train"), e.to_string()))?;
    match &config.data {
        DataSpec::Function { id, n, .. } => {
            let def = data::find_function(id).map_err(|e| err(Some("data.id"), e.to_string()))?;
            if def.arity() != model.in_dim() {
                return Err(err(
                    Some("model"),
                    format!("{id} takes {} inputs, model expects {}", def.arity(), model.in_dim()),
                ));
            }
            if *n < 2 {
                return Err(err(Some("data.n"), "need at least two samples".into()));
            }
        }
        DataSpec::Csv { folds, .. } if *folds == 0 => {
            return Err(err(Some("data.folds"), "folds must be at least 1".into()));
        }
        DataSpec::Csv {
            folds,
            regression: true,
            ..
        } if *folds != 1 => {
            return Err(err(Some("data.folds"), "regression CSV data takes folds = 1".into()));
        }
        DataSpec::Idx { side, downsample, .. } if *downsample == 0 || side % downsample != 0 => {
            return Err(err(
                Some("data.downsample"),
                format!("downsample {downsample} must divide side {side}"),
            ));
        }
        _ => {}
    }
    Ok(Loaded {
        config,
        model,
        source: path.to_path_buf(),
    })
}
