//! Command implementations behind the `agedict` binary.

pub mod config;
pub mod metrics;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use agedict::dataset::{load_dataset, read_sample, write_sample, Manifest, SampleFormat};
use agedict::dictionary_learning::TrainOutput;
use agedict::planted::generate;
use agedict::synthesis::{pass_change, synthesize_sequence, SynthesisRequest};
use agedict::{model_store, AgingModel};
use nalgebra::DVector;
use thiserror::Error;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] agedict::Error),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

/// Result of a successful command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    /// Text for standard output.
    pub report: String,
}

impl Outcome {
    fn ok(report: String) -> Self {
        Outcome {
            exit_code: EXIT_OK,
            report,
        }
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn required<'a>(value: Option<&'a PathBuf>, what: &str) -> Result<&'a PathBuf, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

/// Writes a planted dataset under `cfg.out`: samples, `manifest.txt`, the
/// generating model `truth.adlm`, and a held-out subject under `probe/`.
pub fn gen_synthetic(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let out = required(cfg.out.as_ref(), "output directory (--out)")?;
    let planted_cfg = cfg.planted();
    let format = cfg.format.unwrap_or(SampleFormat::Text);
    let shape = match format {
        SampleFormat::Text => None,
        SampleFormat::Pgm => {
            let side = (planted_cfg.f as f64).sqrt().round() as usize;
            if side * side != planted_cfg.f {
                return Err(CliError::Usage(format!(
                    "graymap output needs a square sample size, f = {} is not",
                    planted_cfg.f
                )));
            }
            Some((side, side))
        }
    };
    let planted = generate(&planted_cfg)?;
    let ext = format.extension();

    let samples = out.join("samples");
    create_dir(&samples)?;
    let mut bridges = Vec::new();
    for (b, pair) in planted.bundle.bridges.iter().enumerate() {
        let mut sides = (Vec::new(), Vec::new());
        for i in 0..pair.x.ncols() {
            for (tag, m, list) in [("x", &pair.x, &mut sides.0), ("y", &pair.y, &mut sides.1)] {
                let path = samples.join(format!("b{}_{tag}{i:04}.{ext}", b + 1));
                write_sample(&path, m.column(i).as_slice(), format, shape)?;
                list.push(path);
            }
        }
        bridges.push(sides);
    }
    let manifest = Manifest {
        f: planted_cfg.f,
        groups: planted_cfg.groups,
        labels: None,
        bridges,
    };
    write_file(&out.join("manifest.txt"), &manifest.render(out))?;
    model_store::save(&planted.truth, &out.join("truth.adlm"))?;

    let probe = planted.probe(0, planted_cfg.seed.wrapping_add(1), false)?;
    let truth_dir = out.join("probe").join("truth");
    create_dir(&truth_dir)?;
    let clamp = |v: &DVector<f64>| v.map(|x| x.clamp(0.0, 1.0));
    write_sample(
        &out.join("probe").join(format!("input.{ext}")),
        clamp(&probe.input).as_slice(),
        format,
        shape,
    )?;
    for (j, face) in probe.future.iter().enumerate() {
        let group = probe.start_group + j + 2;
        write_sample(
            &truth_dir.join(format!("group_{group}.{ext}")),
            clamp(face).as_slice(),
            format,
            shape,
        )?;
    }

    Ok(Outcome::ok(format!(
        "wrote {} pairs per bridge, {} groups, f = {} to {}\n",
        planted_cfg.n,
        planted_cfg.groups,
        planted_cfg.f,
        out.display()
    )))
}

/// Comma-separated training log with the resolved hyperparameters as
/// leading `#` comment lines.
pub fn training_log_csv(out: &TrainOutput) -> String {
    let h = &out.model.hyper;
    let mut s = String::new();
    for (key, value) in [
        ("lambda", h.lambda.to_string()),
        ("gamma", h.gamma.to_string()),
        ("k", h.k.to_string()),
        ("m", out.model.m().to_string()),
        ("max_outer_iter", h.max_outer_iter.to_string()),
        ("rel_tol", h.rel_tol.to_string()),
        ("seed", h.rng_seed.to_string()),
        ("lasso_tol", h.lasso_tol.to_string()),
        ("lasso_max_sweeps", h.lasso_sweeps().to_string()),
        ("center", h.center.to_string()),
        ("initial_objective", out.initial_objective.to_string()),
        ("converged", out.converged.to_string()),
    ] {
        let _ = writeln!(s, "# {key}={value}");
    }
    s.push_str("iteration,objective,max_column_norm,condition,codes_ms,dictionaries_ms,personalized_ms\n");
    for (row, t) in out.model.training_log.iter().zip(&out.timings) {
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        let _ = writeln!(
            s,
            "{},{},{},{},{:.3},{:.3},{:.3}",
            row.iteration,
            row.objective,
            row.max_column_norm,
            row.condition,
            ms(t.codes),
            ms(t.dictionaries),
            ms(t.personalized)
        );
    }
    s
}

/// Trains on `cfg.manifest`, saves the model to `cfg.model` and the log to
/// `training_log.csv` in `cfg.out` (default: the model's directory). Exits
/// with code 2 when the iteration limit was reached first.
pub fn train(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let manifest = required(cfg.manifest.as_ref(), "dataset manifest")?;
    let model_path = required(cfg.model.as_ref(), "model path (--model)")?;
    let hyper = cfg.hyper();
    hyper.validate()?;
    let bundle = load_dataset(manifest)?;
    let out = agedict::train(&bundle, &hyper)?;
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model_store::save(&out.model, model_path)?;

    let log_dir = match &cfg.out {
        Some(dir) => dir.clone(),
        None => model_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !log_dir.as_os_str().is_empty() {
        create_dir(&log_dir)?;
    }
    let csv = training_log_csv(&out);
    write_file(&log_dir.join("training_log.csv"), &csv)?;
    Ok(Outcome {
        exit_code: if out.converged { EXIT_OK } else { EXIT_NOT_CONVERGED },
        report: csv,
    })
}

type Shape = Option<(usize, usize)>;

fn read_normalized(path: &Path) -> Result<(Vec<f64>, Shape), CliError> {
    let raw = read_sample(path)?;
    let values: Vec<f64> = raw.values.iter().map(|v| v / raw.full_scale).collect();
    if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(agedict::Error::OutOfRange {
            value: v,
            context: path.display().to_string(),
        }
        .into());
    }
    Ok((values, raw.shape))
}

/// Synthesizes faces of every group after `group` (one-based) for the
/// sample at `input`, writing `group_<c>` files in the input's format and a
/// `diagnostics.txt` of per-step objective traces.
pub fn synthesize(cfg: &RunConfig, input: &Path, group: usize) -> Result<Outcome, CliError> {
    let model_path = required(cfg.model.as_ref(), "model path (--model)")?;
    let out = required(cfg.out.as_ref(), "output directory (--out)")?;
    let model: AgingModel = model_store::load(model_path)?;
    let groups = model.groups();
    if group == 0 || group >= groups {
        return Err(agedict::Error::GroupOutOfRange {
            group,
            valid: format!("1..={}", groups - 1),
        }
        .into());
    }
    let (values, shape) = read_normalized(input)?;
    let request = SynthesisRequest {
        input: DVector::from_vec(values),
        start_group: group - 1,
        passes: cfg.passes(),
        sign: cfg.sign(),
    };
    let seq = synthesize_sequence(&model, &request)?;

    create_dir(out)?;
    let format = if shape.is_some() { SampleFormat::Pgm } else { SampleFormat::Text };
    let mut report = String::new();
    for (j, face) in seq.faces.iter().enumerate() {
        let target = group + j + 1;
        let path = out.join(format!("group_{target}.{}", format.extension()));
        write_sample(&path, face.as_slice(), format, shape)?;
        let _ = writeln!(report, "{}", path.display());
    }

    let mut diag = String::new();
    let _ = writeln!(
        diag,
        "# start_group={group} passes={} sign={} lambda={} gamma={}",
        request.passes, request.sign, model.hyper.lambda, model.hyper.gamma
    );
    for d in &seq.diagnostics {
        let trace: Vec<String> = d.objective_trace.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            diag,
            "pass={} step={}->{} alternations={} objective={}",
            d.pass,
            d.from_group + 1,
            d.from_group + 2,
            trace.len(),
            trace.join(",")
        );
    }
    for p in 1..seq.pass_faces.len() {
        let _ = writeln!(
            diag,
            "pass_change {}->{} {}",
            p,
            p + 1,
            pass_change(&seq.pass_faces[p], &seq.pass_faces[p - 1])
        );
    }
    write_file(&out.join("diagnostics.txt"), &diag)?;
    Ok(Outcome::ok(report))
}

fn sample_files(dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_sample = name.ends_with(".pgm") || name.ends_with(".txt");
        if entry.path().is_file() && is_sample && name != "diagnostics.txt" {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Per-file RMSE and PSNR between same-named samples of two directories,
/// followed by mean and median rows. Written to `metrics.csv` in `cfg.out`
/// when set.
pub fn eval(cfg: &RunConfig, synthesized: &Path, truth: &Path) -> Result<Outcome, CliError> {
    let ours = sample_files(synthesized)?;
    let theirs = sample_files(truth)?;
    if ours != theirs {
        let missing: Vec<&String> = ours
            .iter()
            .filter(|n| !theirs.contains(n))
            .chain(theirs.iter().filter(|n| !ours.contains(n)))
            .collect();
        return Err(CliError::Usage(format!("unmatched files: {missing:?}")));
    }
    if ours.is_empty() {
        return Err(CliError::Usage(format!("no samples in {}", synthesized.display())));
    }
    let mut csv = String::from("file,rmse,psnr\n");
    let mut rmses = Vec::new();
    let mut psnrs = Vec::new();
    for name in &ours {
        let (a, _) = read_normalized(&synthesized.join(name))?;
        let (b, _) = read_normalized(&truth.join(name))?;
        if a.len() != b.len() {
            return Err(agedict::Error::DimensionMismatch {
                context: name.clone(),
                expected: b.len(),
                found: a.len(),
            }
            .into());
        }
        let r = metrics::rmse(&a, &b);
        let p = metrics::psnr(r);
        let _ = writeln!(csv, "{name},{r},{}", metrics::format_metric(p));
        rmses.push(r);
        psnrs.push(p);
    }
    for (label, agg) in [("mean", metrics::mean as fn(&[f64]) -> f64), ("median", metrics::median)] {
        let _ = writeln!(
            csv,
            "{label},{},{}",
            agg(&rmses),
            metrics::format_metric(agg(&psnrs))
        );
    }
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        write_file(&out.join("metrics.csv"), &csv)?;
    }
    Ok(Outcome::ok(csv))
}
