//! Run configuration: a TOML file with sections, layered over a preset and
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use klms::experiments::{
    CoherenceThreshold, CompareSettings, DictionarySpec, ExperimentConfig, SystemKind, Tolerances,
};
use klms::moments::Ar1Params;
use klms::theory::StorageMode;
use klms::Dictionary;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub input: InputSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub dictionary: DictionarySection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub tolerance: ToleranceSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub system: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub rho: Option<f64>,
    pub sigma_x: Option<f64>,
    pub noise_std: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub step_size: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySection {
    /// `grid`, `coherence` or `file`.
    pub kind: Option<String>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub points: Option<Vec<usize>>,
    pub stream_len: Option<usize>,
    pub threshold: Option<f64>,
    pub target_size: Option<usize>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub runs: Option<usize>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub estimation_samples: Option<usize>,
    pub dense_limit: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    pub steady_state: Option<f64>,
    pub transient: Option<f64>,
    pub window: Option<usize>,
    pub checkpoints: Option<Vec<usize>>,
    pub tail_fraction: Option<f64>,
}

/// Values given on the command line; each one overrides the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub runs: Option<usize>,
    pub horizon: Option<usize>,
    pub eta: Option<f64>,
    pub sigma: Option<f64>,
}

/// A fully resolved run: the experiment plus where outputs go.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub out: PathBuf,
    /// Every setting, written next to the outputs.
    pub resolved: FileConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

/// Applies preset, file and flags in that order and validates the result.
/// Relative dictionary paths are taken relative to the config file.
pub fn resolve(file: Option<(&FileConfig, &Path)>, flags: &Overrides) -> Result<RunConfig, CliError> {
    let empty = FileConfig::default();
    let (f, base_dir) = match file {
        Some((f, path)) => (f, path.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (&empty, PathBuf::new()),
    };
    let preset = flags.preset.clone().or_else(|| f.experiment.preset.clone()).unwrap_or_else(|| "exp1".into());
    let mut e = ExperimentConfig::preset(&preset).map_err(|err| CliError::Config(err.to_string()))?;

    if let Some(name) = &f.experiment.name {
        e.name = name.clone();
    }
    if let Some(system) = &f.experiment.system {
        e.system = system.parse::<SystemKind>().map_err(|err| CliError::Config(err.to_string()))?;
    }
    let rho = f.input.rho.unwrap_or(e.input.rho);
    let sigma_x = f.input.sigma_x.unwrap_or(e.input.sigma_x);
    e.input = Ar1Params::new(rho, sigma_x).map_err(|err| CliError::Config(err.to_string()))?;
    e.noise_std = f.input.noise_std.unwrap_or(e.noise_std);
    if !(e.noise_std.is_finite() && e.noise_std >= 0.0) {
        return Err(CliError::Config(format!("noise_std must be non-negative, got {}", e.noise_std)));
    }
    e.bandwidth = positive("kernel bandwidth", flags.sigma.or(f.kernel.bandwidth).unwrap_or(e.bandwidth))?;
    e.step_size = positive("step size", flags.eta.or(f.filter.step_size).unwrap_or(e.step_size))?;

    let d = &f.dictionary;
    let kind = d.kind.clone().unwrap_or_else(|| match &e.dictionary {
        DictionarySpec::Grid { .. } => "grid".into(),
        DictionarySpec::Coherence { .. } => "coherence".into(),
        DictionarySpec::Explicit(_) => "file".into(),
    });
    let mut dict_path = None;
    e.dictionary = match kind.as_str() {
        "grid" => {
            let (lower, upper, points) = match &e.dictionary {
                DictionarySpec::Grid { lower, upper, points } => (lower.clone(), upper.clone(), points.clone()),
                _ => (vec![-1.0, -1.0], vec![1.0, 1.0], vec![5, 5]),
            };
            DictionarySpec::Grid {
                lower: d.lower.clone().unwrap_or(lower),
                upper: d.upper.clone().unwrap_or(upper),
                points: d.points.clone().unwrap_or(points),
            }
        }
        "coherence" => {
            let (len, default_threshold) = match &e.dictionary {
                DictionarySpec::Coherence { stream_len, threshold } => (*stream_len, *threshold),
                _ => (5000, CoherenceThreshold::TargetSize(37)),
            };
            let threshold = match (d.threshold, d.target_size) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Config("give either dictionary.threshold or dictionary.target_size".into()))
                }
                (Some(mu), None) => CoherenceThreshold::Fixed(mu),
                (None, Some(m)) => CoherenceThreshold::TargetSize(m),
                (None, None) => default_threshold,
            };
            DictionarySpec::Coherence { stream_len: d.stream_len.unwrap_or(len), threshold }
        }
        "file" => {
            let rel = d.path.clone().ok_or_else(|| CliError::Config("dictionary.kind = \"file\" needs dictionary.path".into()))?;
            let path = if rel.is_absolute() { rel } else { base_dir.join(rel) };
            if !path.is_file() {
                return Err(CliError::Config(format!("dictionary file {} does not exist", path.display())));
            }
            let dict = Dictionary::load(&path)
                .map_err(|err| CliError::Config(format!("invalid dictionary file {}: {err}", path.display())))?;
            dict_path = Some(path);
            DictionarySpec::Explicit(dict)
        }
        other => return Err(CliError::Config(format!("unknown dictionary kind {other:?}"))),
    };

    e.runs = flags.runs.or(f.run.runs).unwrap_or(e.runs);
    e.horizon = flags.horizon.or(f.run.horizon).unwrap_or(e.horizon);
    e.seed = flags.seed.or(f.run.seed).unwrap_or(e.seed);
    e.estimation_samples = f.theory.estimation_samples.unwrap_or(e.estimation_samples);
    let dense_limit = f.theory.dense_limit.unwrap_or(klms::theory::DEFAULT_DENSE_LIMIT);
    e.storage = StorageMode::Auto(dense_limit);

    let t = &f.tolerance;
    e.compare = CompareSettings {
        window: t.window.unwrap_or(e.compare.window),
        checkpoints: t.checkpoints.clone().unwrap_or(e.compare.checkpoints.clone()),
        tail_fraction: t.tail_fraction.unwrap_or(e.compare.tail_fraction),
        tolerances: Tolerances {
            steady_state: positive("steady-state tolerance", t.steady_state.unwrap_or(e.compare.tolerances.steady_state))?,
            transient: positive("transient tolerance", t.transient.unwrap_or(e.compare.tolerances.transient))?,
        },
    };
    if e.runs == 0 || e.horizon == 0 {
        return Err(CliError::Config("runs and horizon must be at least 1".into()));
    }
    if e.estimation_samples < 1000 {
        return Err(CliError::Config("theory.estimation_samples must be at least 1000".into()));
    }
    e.validate().map_err(|err| CliError::Config(err.to_string()))?;

    let out = flags.out.clone().or_else(|| f.run.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let resolved = echo(&preset, &e, &out, dict_path);
    Ok(RunConfig { experiment: e, out, resolved })
}

fn echo(preset: &str, e: &ExperimentConfig, out: &Path, dict_path: Option<PathBuf>) -> FileConfig {
    let dictionary = match &e.dictionary {
        DictionarySpec::Grid { lower, upper, points } => DictionarySection {
            kind: Some("grid".into()),
            lower: Some(lower.clone()),
            upper: Some(upper.clone()),
            points: Some(points.clone()),
            ..Default::default()
        },
        DictionarySpec::Coherence { stream_len, threshold } => DictionarySection {
            kind: Some("coherence".into()),
            stream_len: Some(*stream_len),
            threshold: match threshold {
                CoherenceThreshold::Fixed(mu) => Some(*mu),
                CoherenceThreshold::TargetSize(_) => None,
            },
            target_size: match threshold {
                CoherenceThreshold::TargetSize(m) => Some(*m),
                CoherenceThreshold::Fixed(_) => None,
            },
            ..Default::default()
        },
        DictionarySpec::Explicit(_) => DictionarySection { kind: Some("file".into()), path: dict_path, ..Default::default() },
    };
    let dense_limit = match e.storage {
        StorageMode::Auto(limit) => limit,
        StorageMode::Dense => usize::MAX,
        StorageMode::MatrixFree => 0,
    };
    FileConfig {
        experiment: ExperimentSection {
            preset: Some(preset.into()),
            name: Some(e.name.clone()),
            system: Some(e.system.name().into()),
        },
        input: InputSection { rho: Some(e.input.rho), sigma_x: Some(e.input.sigma_x), noise_std: Some(e.noise_std) },
        kernel: KernelSection { bandwidth: Some(e.bandwidth) },
        filter: FilterSection { step_size: Some(e.step_size) },
        dictionary,
        run: RunSection { runs: Some(e.runs), horizon: Some(e.horizon), seed: Some(e.seed), out: Some(out.to_path_buf()) },
        theory: TheorySection { estimation_samples: Some(e.estimation_samples), dense_limit: Some(dense_limit) },
        tolerance: ToleranceSection {
            steady_state: Some(e.compare.tolerances.steady_state),
            transient: Some(e.compare.tolerances.transient),
            window: Some(e.compare.window),
            checkpoints: Some(e.compare.checkpoints.clone()),
            tail_fraction: Some(e.compare.tail_fraction),
        },
    }
}
