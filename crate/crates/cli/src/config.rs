//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! repeated keys are errors. Command-line flags override file values.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use agedict::dataset::SampleFormat;
use agedict::planted::PlantedConfig;
use agedict::synthesis::{SignConvention, DEFAULT_PASSES};
use agedict::HyperParams;

use crate::CliError;

pub const KEYS: &[&str] = &[
    "lambda",
    "gamma",
    "k",
    "m",
    "max_outer_iter",
    "rel_tol",
    "seed",
    "lasso_tol",
    "lasso_max_sweeps",
    "center",
    "manifest",
    "model",
    "out",
    "passes",
    "sign",
    "f",
    "groups",
    "n",
    "sparsity",
    "noise",
    "code_scale",
    "layer_scale",
    "format",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub max_outer_iter: Option<usize>,
    pub rel_tol: Option<f64>,
    pub seed: Option<u64>,
    pub lasso_tol: Option<f64>,
    pub lasso_max_sweeps: Option<usize>,
    pub center: Option<bool>,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub passes: Option<usize>,
    pub sign: Option<SignConvention>,
    // synthetic data generation
    pub f: Option<usize>,
    pub groups: Option<usize>,
    pub n: Option<usize>,
    pub sparsity: Option<usize>,
    pub noise: Option<f64>,
    pub code_scale: Option<f64>,
    pub layer_scale: Option<f64>,
    pub format: Option<SampleFormat>,
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Config {
        line,
        message: format!("cannot parse {value:?} for `{key}`"),
    })
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(CliError::Config {
                    line,
                    message: format!("expected `key = value`, got {trimmed:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(CliError::Config {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            seen.push(key.to_string());
            cfg.set(key, value, line, base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, line: usize, base: &Path) -> Result<(), CliError> {
        let path = || base.join(value);
        match key {
            "lambda" => self.lambda = Some(parse_value(key, value, line)?),
            "gamma" => self.gamma = Some(parse_value(key, value, line)?),
            "k" => self.k = Some(parse_value(key, value, line)?),
            "m" => self.m = Some(parse_value(key, value, line)?),
            "max_outer_iter" => self.max_outer_iter = Some(parse_value(key, value, line)?),
            "rel_tol" => self.rel_tol = Some(parse_value(key, value, line)?),
            "seed" => self.seed = Some(parse_value(key, value, line)?),
            "lasso_tol" => self.lasso_tol = Some(parse_value(key, value, line)?),
            "lasso_max_sweeps" => self.lasso_max_sweeps = Some(parse_value(key, value, line)?),
            "center" => self.center = Some(parse_value(key, value, line)?),
            "manifest" => self.manifest = Some(path()),
            "model" => self.model = Some(path()),
            "out" => self.out = Some(path()),
            "passes" => self.passes = Some(parse_value(key, value, line)?),
            "sign" => {
                self.sign = Some(value.parse().map_err(|e: agedict::Error| CliError::Config {
                    line,
                    message: e.to_string(),
                })?)
            }
            "f" => self.f = Some(parse_value(key, value, line)?),
            "groups" => self.groups = Some(parse_value(key, value, line)?),
            "n" => self.n = Some(parse_value(key, value, line)?),
            "sparsity" => self.sparsity = Some(parse_value(key, value, line)?),
            "noise" => self.noise = Some(parse_value(key, value, line)?),
            "code_scale" => self.code_scale = Some(parse_value(key, value, line)?),
            "layer_scale" => self.layer_scale = Some(parse_value(key, value, line)?),
            "format" => {
                self.format = Some(match value {
                    "pgm" => SampleFormat::Pgm,
                    "text" | "txt" => SampleFormat::Text,
                    other => {
                        return Err(CliError::Config {
                            line,
                            message: format!("format must be `pgm` or `text`, got {other:?}"),
                        })
                    }
                })
            }
            other => {
                return Err(CliError::Config {
                    line,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
        Ok(())
    }

    /// Range checks shared by every command.
    pub fn validate(&self) -> Result<(), CliError> {
        self.hyper().validate()?;
        if self.passes == Some(0) {
            return Err(CliError::Usage("passes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn hyper(&self) -> HyperParams {
        let d = HyperParams::default();
        HyperParams {
            lambda: self.lambda.unwrap_or(d.lambda),
            gamma: self.gamma.unwrap_or(d.gamma),
            k: self.k.unwrap_or(d.k),
            m: self.m.or(d.m),
            max_outer_iter: self.max_outer_iter.unwrap_or(d.max_outer_iter),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            rng_seed: self.seed.unwrap_or(d.rng_seed),
            lasso_tol: self.lasso_tol.unwrap_or(d.lasso_tol),
            lasso_max_sweeps: self.lasso_max_sweeps.or(d.lasso_max_sweeps),
            center: self.center.unwrap_or(d.center),
        }
    }

    /// Generator settings. Unset `k` and `m` fall back to the generator's
    /// own defaults rather than the training defaults.
    pub fn planted(&self) -> PlantedConfig {
        let d = PlantedConfig::default();
        let hyper = self.hyper();
        PlantedConfig {
            f: self.f.unwrap_or(d.f),
            groups: self.groups.unwrap_or(d.groups),
            k: self.k.unwrap_or(d.k),
            m: self.m.unwrap_or(d.m),
            n: self.n.unwrap_or(d.n),
            sparsity: self.sparsity.unwrap_or(d.sparsity),
            noise: self.noise.unwrap_or(d.noise),
            code_scale: self.code_scale.unwrap_or(d.code_scale),
            layer_scale: self.layer_scale.unwrap_or(d.layer_scale),
            seed: self.seed.unwrap_or(d.seed),
            lambda: hyper.lambda,
            gamma: hyper.gamma,
        }
    }

    pub fn passes(&self) -> usize {
        self.passes.unwrap_or(DEFAULT_PASSES)
    }

    pub fn sign(&self) -> SignConvention {
        self.sign.unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn empty_config_gives_published_defaults() {
        let cfg = parse("").unwrap();
        let h = cfg.hyper();
        assert_eq!((h.lambda, h.gamma, h.k), (0.01, 0.1, 70));
        assert_eq!(cfg.passes(), 3);
        assert_eq!(cfg.sign(), SignConvention::Add);
    }

    #[test]
    fn reads_values_comments_and_paths() {
        let cfg = parse("# run\nlambda = 0.5\n\n  k=12 \nmodel = out/m.adlm\nsign = subtract\ncenter = true\n").unwrap();
        assert_eq!(cfg.lambda, Some(0.5));
        assert_eq!(cfg.k, Some(12));
        assert_eq!(cfg.model, Some(PathBuf::from("/base/out/m.adlm")));
        assert_eq!(cfg.sign, Some(SignConvention::Subtract));
        assert_eq!(cfg.center, Some(true));
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for text in ["alpha = 1", "k = 3\nk = 4", "lambda", "k = -1", "sign = minus", "format = png"] {
            assert!(matches!(parse(text), Err(CliError::Config { .. })), "{text}");
        }
    }

    #[test]
    fn range_checks_follow_hyperparameters() {
        assert!(parse("lambda = -1").is_err());
        assert!(parse("gamma = -2").is_err());
        assert!(parse("k = 0").is_err());
        assert!(parse("passes = 0").is_err());
        assert!(parse("rel_tol = nan").is_err());
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let sample = |k: &str| match k {
            "center" => "false",
            "sign" => "add",
            "format" => "pgm",
            "manifest" | "model" | "out" => "x",
            "lambda" | "gamma" | "rel_tol" | "lasso_tol" | "noise" | "code_scale" | "layer_scale" => "0.5",
            _ => "3",
        };
        for k in KEYS {
            parse(&format!("{k} = {}", sample(k))).unwrap();
        }
    }
}
