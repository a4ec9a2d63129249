//! Config-driven experiment runner behind the `responsekit` binary.
//!
//! Every command reads one JSON config and writes its reports into the
//! output directory. A whole experiment is determined by `(config, master
//! seed)`: re-running reproduces deterministic outputs bit for bit and
//! Monte-Carlo outputs stream for stream. Output files are staged to a
//! temporary name and renamed into place once complete.
//!
//! Commands: `sig`, `kernel`, `simulate`, `respond`, `volterra`, `fit`,
//! `predict`, `repro`.

use crate::kernel::{gram, KernelError, KernelSpec};
use crate::learn::{self, KernelModel, LearnError};
use crate::path::{Path, PathError};
use crate::repro;
use crate::response::{
    compose_kernels, fdt_correlation_ou_multi, impulse_response_mc, volterra_eval, ImpulseSpec,
    ResponseError, VolterraKernels, VolterraKernelsDump,
};
use crate::rng::derive_master;
use crate::srnn::{
    euler_maruyama, output_functional, Activation, InitLaw, Readout, SrnnError, SrnnParams,
};
use crate::signature::{signature, SignatureError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown command `{0}` (expected sig, kernel, simulate, respond, volterra, fit, predict or repro)")]
    UnknownCommand(String),
    #[error("config `{file}` at field `{field}`: {message}")]
    ConfigParse {
        file: String,
        field: String,
        message: String,
    },
    #[error("config field `{field}`: {message}")]
    ConfigValue { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} of {total} verification criteria failed")]
    CriteriaFailed { failed: usize, total: usize },
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Srnn(#[from] SrnnError),
    #[error(transparent)]
    Response(#[from] ResponseError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

impl CliError {
    /// Machine-readable form emitted on failure.
    pub fn to_json(&self, command: &str) -> String {
        let field = match self {
            CliError::ConfigParse { field, .. } | CliError::ConfigValue { field, .. } => {
                Some(field.clone())
            }
            _ => None,
        };
        serde_json::json!({
            "error": self.to_string(),
            "command": command,
            "field": field,
        })
        .to_string()
    }
}

// ---------------------------------------------------------------------------
// Config types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigConfig {
    pub path_file: String,
    pub level: usize,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCmdConfig {
    /// Explicit path files, evaluated in the given order.
    #[serde(default)]
    pub path_files: Vec<String>,
    /// Directory of `*.csv` paths, read in sorted order.
    #[serde(default)]
    pub paths_dir: Option<String>,
    pub spec: KernelSpec,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    Point { state: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Stationary Gaussian of the unperturbed linear dynamics.
    Stationary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrnnConfig {
    pub gamma: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub input_matrix: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub activation: Activation,
    pub readout: Readout,
    pub init: InitConfig,
}

impl SrnnConfig {
    pub fn build(&self) -> Result<SrnnParams, CliError> {
        let gamma = matrix_from("srnn.gamma", &self.gamma)?;
        let w = matrix_from("srnn.w", &self.w)?;
        let input_matrix = matrix_from("srnn.input_matrix", &self.input_matrix)?;
        let sigma = matrix_from("srnn.sigma", &self.sigma)?;
        let b = DVector::from_column_slice(&self.b);
        let init = match &self.init {
            InitConfig::Point { state } => InitLaw::Point(state.clone()),
            InitConfig::Gaussian { mean, cov } => InitLaw::Gaussian {
                mean: mean.clone(),
                cov: matrix_from("srnn.init.cov", cov)?,
            },
            InitConfig::Stationary => InitLaw::Point(vec![0.0; gamma.nrows()]),
        };
        let params = SrnnParams::new(
            gamma,
            w,
            b,
            input_matrix,
            sigma,
            self.activation,
            self.readout.clone(),
            init,
        )?;
        match self.init {
            InitConfig::Stationary => Ok(params.with_stationary_init()?),
            _ => Ok(params),
        }
    }
}

fn matrix_from(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Err(CliError::ConfigValue {
            field: field.into(),
            message: "matrix has no rows".into(),
        });
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::ConfigValue {
            field: field.into(),
            message: "matrix rows must be non-empty and of equal length".into(),
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub srnn: SrnnConfig,
    /// CSV input path; absent means zero input.
    #[serde(default)]
    pub input_file: Option<String>,
    pub t_end: f64,
    pub dt: f64,
    /// Monte-Carlo sample count for the output functional.
    pub samples: usize,
    pub seed: u64,
    /// Number of individual trajectories to dump as CSV.
    #[serde(default)]
    pub dump_trajectories: usize,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RespondConfig {
    pub srnn: SrnnConfig,
    pub direction: Vec<f64>,
    /// Observation time of the impulse experiments.
    pub t: f64,
    /// Lags tau; each impulse is placed at s = t - tau.
    pub lags: Vec<f64>,
    pub impulse: ImpulseSpec,
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
    /// Also estimate the stationary correlation (linear networks only).
    #[serde(default)]
    pub compare_fdt: bool,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolterraConfig {
    /// Kernel set dump (JSON).
    pub kernel_file: String,
    /// Optional second kernel set; when present the two are composed
    /// (`kernel_file` outer, `compose_with` inner).
    #[serde(default)]
    pub compose_with: Option<String>,
    #[serde(default)]
    pub composed_output: Option<String>,
    /// Scalar signal to evaluate the (possibly composed) series against.
    #[serde(default)]
    pub gamma_file: Option<String>,
    #[serde(default)]
    pub eval_times: Vec<f64>,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub input_files: Vec<String>,
    #[serde(default)]
    pub inputs_dir: Option<String>,
    /// CSV with header `target`, one row per input, in input order.
    pub targets_file: String,
    pub spec: KernelSpec,
    pub lambda: f64,
    #[serde(default)]
    pub model_output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub model_file: String,
    #[serde(default)]
    pub input_files: Vec<String>,
    #[serde(default)]
    pub inputs_dir: Option<String>,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    /// Criterion ids to run; absent means all.
    #[serde(default)]
    pub criteria: Option<Vec<usize>>,
    #[serde(default)]
    pub output: Option<String>,
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// Executes `command` with the given config file. Returns the list of files
/// written. `seed_override` replaces the config's master seed when present.
pub fn run(
    command: &str,
    config_file: &FsPath,
    seed_override: Option<u64>,
    out_dir: &FsPath,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    match command {
        "sig" => run_sig(parse_config(config_file)?, out_dir),
        "kernel" => run_kernel(parse_config(config_file)?, out_dir),
        "simulate" => run_simulate(parse_config(config_file)?, seed_override, out_dir),
        "respond" => run_respond(parse_config(config_file)?, seed_override, out_dir),
        "volterra" => run_volterra(parse_config(config_file)?, out_dir),
        "fit" => run_fit(parse_config(config_file)?, out_dir),
        "predict" => run_predict(parse_config(config_file)?, out_dir),
        "repro" => run_repro(parse_config(config_file)?, seed_override, out_dir),
        other => Err(CliError::UnknownCommand(other.to_string())),
    }
}

fn parse_config<T: serde::de::DeserializeOwned>(file: &FsPath) -> Result<T, CliError> {
    let raw = std::fs::read_to_string(file).map_err(|e| CliError::Io {
        path: file.display().to_string(),
        source: e,
    })?;
    let mut de = serde_json::Deserializer::from_str(&raw);
    serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::ConfigParse {
        file: file.display().to_string(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Canonical form of a config: parse, then re-serialize with stable field
/// order. Canonicalizing twice is the identity.
pub fn canonicalize_config(command: &str, raw: &str) -> Result<String, CliError> {
    fn canon<T: serde::de::DeserializeOwned + Serialize>(raw: &str) -> Result<String, CliError> {
        let mut de = serde_json::Deserializer::from_str(raw);
        let cfg: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            CliError::ConfigParse {
                file: "<inline>".into(),
                field: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        serde_json::to_string_pretty(&cfg).map_err(|e| CliError::ConfigValue {
            field: "<serialize>".into(),
            message: e.to_string(),
        })
    }
    match command {
        "sig" => canon::<SigConfig>(raw),
        "kernel" => canon::<KernelCmdConfig>(raw),
        "simulate" => canon::<SimulateConfig>(raw),
        "respond" => canon::<RespondConfig>(raw),
        "volterra" => canon::<VolterraConfig>(raw),
        "fit" => canon::<FitConfig>(raw),
        "predict" => canon::<PredictConfig>(raw),
        "repro" => canon::<ReproConfig>(raw),
        other => Err(CliError::UnknownCommand(other.to_string())),
    }
}

/// Stages the contents to a dot-file and renames into place, so partially
/// written reports are never observed under their final name.
fn write_atomic(target: &FsPath, contents: &str) -> Result<(), CliError> {
    let tmp = target.with_file_name(format!(
        ".{}.tmp",
        target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    let io_err = |e: std::io::Error| CliError::Io {
        path: target.display().to_string(),
        source: e,
    };
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(contents.as_bytes()).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    std::fs::rename(&tmp, target).map_err(io_err)?;
    Ok(())
}

fn out_file(out_dir: &FsPath, requested: &Option<String>, default: &str) -> PathBuf {
    out_dir.join(requested.as_deref().unwrap_or(default))
}

fn collect_inputs(
    files: &[String],
    dir: &Option<String>,
    field: &str,
) -> Result<Vec<(String, Path)>, CliError> {
    let mut names: Vec<String> = files.to_vec();
    if let Some(d) = dir {
        let mut from_dir: Vec<String> = std::fs::read_dir(d)
            .map_err(|e| CliError::Io {
                path: d.clone(),
                source: e,
            })?
            .filter_map(|entry| entry.ok())
            .map(|entry| entry.path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .map(|p| p.display().to_string())
            .collect();
        from_dir.sort();
        names.extend(from_dir);
    }
    if names.is_empty() {
        return Err(CliError::ConfigValue {
            field: field.into(),
            message: "no input paths given".into(),
        });
    }
    names
        .into_iter()
        .map(|n| Ok((n.clone(), Path::read_csv(&n)?)))
        .collect()
}

fn read_targets_csv(file: &str) -> Result<Vec<f64>, CliError> {
    let raw = std::fs::read_to_string(file).map_err(|e| CliError::Io {
        path: file.into(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == "target") {
            continue;
        }
        out.push(line.parse::<f64>().map_err(|e| CliError::ConfigValue {
            field: format!("targets_file line {}", i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

// -- commands ---------------------------------------------------------------

fn run_sig(cfg: SigConfig, out_dir: &FsPath) -> Result<Vec<PathBuf>, CliError> {
    let path = Path::read_csv(&cfg.path_file)?;
    let sig = signature(&path, cfg.level)?;
    let file = out_file(out_dir, &cfg.output, "signature.json");
    write_atomic(&file, &serde_json::to_string_pretty(&sig).unwrap())?;
    Ok(vec![file])
}

fn run_kernel(cfg: KernelCmdConfig, out_dir: &FsPath) -> Result<Vec<PathBuf>, CliError> {
    let inputs = collect_inputs(&cfg.path_files, &cfg.paths_dir, "path_files")?;
    let paths: Vec<Path> = inputs.into_iter().map(|(_, p)| p).collect();
    let g = gram(&paths, &cfg.spec)?;
    let mut csv = String::new();
    for i in 0..g.nrows() {
        let row: Vec<String> = (0..g.ncols()).map(|j| format!("{:.17e}", g[(i, j)])).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let file = out_file(out_dir, &cfg.output, "gram.csv");
    write_atomic(&file, &csv)?;
    Ok(vec![file])
}

fn run_simulate(
    cfg: SimulateConfig,
    seed_override: Option<u64>,
    out_dir: &FsPath,
) -> Result<Vec<PathBuf>, CliError> {
    let params = cfg.srnn.build()?;
    let seed = seed_override.unwrap_or(cfg.seed);
    let input = match &cfg.input_file {
        Some(f) => Path::read_csv(f)?,
        None => Path::zero(params.input_dim(), 0.0, cfg.t_end),
    };
    let mut written = Vec::new();
    let master = derive_master(seed, "simulate");
    for k in 0..cfg.dump_trajectories {
        let traj = euler_maruyama(
            &params,
            &input,
            cfg.t_end,
            cfg.dt,
            crate::rng::SeedStream::new(master, k as u64),
        )?;
        let file = out_dir.join(format!("trajectory_{k}.csv"));
        traj.write_csv(&file).map_err(|e| CliError::Io {
            path: file.display().to_string(),
            source: e,
        })?;
        written.push(file);
    }
    let (estimate, stderr) =
        output_functional(&params, &input, cfg.t_end, cfg.dt, cfg.samples, master)?;
    let report = serde_json::json!({
        "estimate": estimate,
        "stderr": stderr,
        "samples": cfg.samples,
        "t_end": cfg.t_end,
        "dt": cfg.dt,
        "seed": seed,
    });
    let file = out_file(out_dir, &cfg.output, "simulate.json");
    write_atomic(&file, &serde_json::to_string_pretty(&report).unwrap())?;
    written.push(file);
    Ok(written)
}

fn run_respond(
    cfg: RespondConfig,
    seed_override: Option<u64>,
    out_dir: &FsPath,
) -> Result<Vec<PathBuf>, CliError> {
    let params = cfg.srnn.build()?;
    let seed = seed_override.unwrap_or(cfg.seed);
    let mut impulses = Vec::new();
    for (i, &tau) in cfg.lags.iter().enumerate() {
        let est = impulse_response_mc(
            &params,
            &cfg.direction,
            cfg.t,
            cfg.t - tau,
            &cfg.impulse,
            cfg.dt,
            cfg.samples,
            derive_master(seed, &format!("respond-lag{i}")),
        )?;
        impulses.push(est);
    }
    let correlations = if cfg.compare_fdt {
        Some(fdt_correlation_ou_multi(
            &params,
            &cfg.direction,
            &cfg.lags,
            cfg.dt,
            cfg.samples,
            derive_master(seed, "respond-fdt"),
        )?)
    } else {
        None
    };

    let mut csv = String::from("tau,impulse,correlation,stderr_i,stderr_c\n");
    for (i, (tau, est)) in cfg.lags.iter().zip(&impulses).enumerate() {
        let (corr, se_c) = match &correlations {
            Some(c) => (format!("{:.17e}", c[i].0), format!("{:.17e}", c[i].1)),
            None => (String::new(), String::new()),
        };
        csv.push_str(&format!(
            "{tau},{:.17e},{corr},{:.17e},{se_c}\n",
            est.value, est.stderr
        ));
    }
    let file = out_file(out_dir, &cfg.output, "fdt_report.csv");
    write_atomic(&file, &csv)?;
    Ok(vec![file])
}

fn run_volterra(cfg: VolterraConfig, out_dir: &FsPath) -> Result<Vec<PathBuf>, CliError> {
    let load = |file: &str| -> Result<VolterraKernels, CliError> {
        let raw = std::fs::read_to_string(file).map_err(|e| CliError::Io {
            path: file.into(),
            source: e,
        })?;
        let dump: VolterraKernelsDump =
            serde_json::from_str(&raw).map_err(|e| CliError::ConfigValue {
                field: "kernel_file".into(),
                message: e.to_string(),
            })?;
        Ok(VolterraKernels::from_dump(dump)?)
    };
    let mut kernels = load(&cfg.kernel_file)?;
    let mut written = Vec::new();
    if let Some(inner_file) = &cfg.compose_with {
        let inner = load(inner_file)?;
        kernels = compose_kernels(&kernels, &inner)?;
        if cfg.composed_output.is_some() {
            let file = out_file(out_dir, &cfg.composed_output, "composed_kernels.json");
            write_atomic(
                &file,
                &serde_json::to_string(&kernels.to_dump()).unwrap(),
            )?;
            written.push(file);
        }
    }
    if let Some(gamma_file) = &cfg.gamma_file {
        let gamma = Path::read_csv(gamma_file)?;
        let evals: Vec<serde_json::Value> = cfg
            .eval_times
            .iter()
            .map(|&t| {
                volterra_eval(&kernels, &gamma, t)
                    .map(|v| serde_json::json!({"t": t, "value": v}))
            })
            .collect::<Result<_, _>>()?;
        let report = serde_json::json!({
            "orders": kernels.orders(),
            "evaluations": evals,
        });
        let file = out_file(out_dir, &cfg.output, "volterra.json");
        write_atomic(&file, &serde_json::to_string_pretty(&report).unwrap())?;
        written.push(file);
    }
    Ok(written)
}

fn run_fit(cfg: FitConfig, out_dir: &FsPath) -> Result<Vec<PathBuf>, CliError> {
    let inputs = collect_inputs(&cfg.input_files, &cfg.inputs_dir, "input_files")?;
    let targets = read_targets_csv(&cfg.targets_file)?;
    if targets.len() != inputs.len() {
        return Err(CliError::ConfigValue {
            field: "targets_file".into(),
            message: format!("{} targets for {} inputs", targets.len(), inputs.len()),
        });
    }
    let paths: Vec<Path> = inputs.into_iter().map(|(_, p)| p).collect();
    let model = learn::fit(&paths, &targets, &cfg.spec, cfg.lambda)?;
    let file = out_file(out_dir, &cfg.model_output, "model.json");
    model.save(&file)?;
    Ok(vec![file])
}

fn run_predict(cfg: PredictConfig, out_dir: &FsPath) -> Result<Vec<PathBuf>, CliError> {
    let model = KernelModel::load(&cfg.model_file)?;
    let inputs = collect_inputs(&cfg.input_files, &cfg.inputs_dir, "input_files")?;
    let mut csv = String::from("file,prediction\n");
    for (name, path) in &inputs {
        let value = model.predict(path)?;
        csv.push_str(&format!("{name},{value:.17e}\n"));
    }
    let file = out_file(out_dir, &cfg.output, "predictions.csv");
    write_atomic(&file, &csv)?;
    Ok(vec![file])
}

fn run_repro(
    cfg: ReproConfig,
    seed_override: Option<u64>,
    out_dir: &FsPath,
) -> Result<Vec<PathBuf>, CliError> {
    let seed = seed_override.or(cfg.seed).unwrap_or(repro::DEFAULT_SEED);
    let ids: Vec<usize> = cfg.criteria.clone().unwrap_or_else(|| (1..=11).collect());
    let results = repro::run_subset(&ids, seed);
    for r in &results {
        println!("{}", r.line());
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let report: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "id": r.id,
                "name": r.name,
                "passed": r.passed,
                "runtime_seconds": r.runtime.as_secs_f64(),
                "budget_seconds": r.budget.as_secs_f64(),
                "detail": r.detail,
            })
        })
        .collect();
    let file = out_file(out_dir, &cfg.output, "repro.json");
    write_atomic(
        &file,
        &serde_json::to_string_pretty(&serde_json::json!({
            "seed": seed,
            "results": report,
        }))
        .unwrap(),
    )?;
    if failed > 0 {
        return Err(CliError::CriteriaFailed {
            failed,
            total: results.len(),
        });
    }
    Ok(vec![file])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_command_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, "{}").unwrap();
        let e = run("fly", &cfg, None, dir.path()).unwrap_err();
        assert!(matches!(e, CliError::UnknownCommand(_)));
        assert!(e.to_json("fly").contains("unknown command"));
    }

    #[test]
    fn config_errors_carry_field_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"path_file": "p.csv", "level": "three"}"#).unwrap();
        match run("sig", &cfg, None, dir.path()) {
            Err(CliError::ConfigParse { field, .. }) => assert_eq!(field, "level"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn canonicalization_is_idempotent() {
        let raw = r#"{"level": 3, "path_file": "p.csv"}"#;
        let once = canonicalize_config("sig", raw).unwrap();
        let twice = canonicalize_config("sig", &once).unwrap();
        assert_eq!(once, twice);
        assert!(once.find("path_file").unwrap() < once.find("level").unwrap());
    }

    #[test]
    fn sig_command_writes_dump() {
        let dir = tempfile::tempdir().unwrap();
        let path_file = dir.path().join("p.csv");
        Path::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]],
        )
        .unwrap()
        .write_csv(&path_file)
        .unwrap();
        let cfg = dir.path().join("sig.json");
        std::fs::write(
            &cfg,
            serde_json::json!({"path_file": path_file, "level": 2}).to_string(),
        )
        .unwrap();
        let written = run("sig", &cfg, None, dir.path()).unwrap();
        let dump: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&written[0]).unwrap()).unwrap();
        assert_eq!(dump["dim"], 2);
        // Level-2 word (1,2) of the L-shaped path.
        assert!((dump["levels"][2][1].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_validation_reports_field() {
        let bad = vec![vec![1.0, 2.0], vec![3.0]];
        match matrix_from("srnn.gamma", &bad) {
            Err(CliError::ConfigValue { field, .. }) => assert_eq!(field, "srnn.gamma"),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
