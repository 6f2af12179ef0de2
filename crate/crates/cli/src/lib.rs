//! Batch front end: JSON-configured commands for the exact solver, training,
//! rollout evaluation, bound reports, and dataset collection.
//!
//! Every command is a pure function of (config file, seed): reruns write
//! byte-identical output files. Config documents carry a top-level
//! `command` discriminator that must match the invoked subcommand, and
//! unknown keys are rejected.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use jsqgame::bound::{evaluation_error_bound, BoundError, BoundReport};
use jsqgame::evaluation::{evaluate_policy, Dataset, EmpiricalKernel, EvalError};
use jsqgame::exact::{
    best_response_value, shapley_value_iteration, ExactModel, MixedPolicy,
    ShapleySolution, SolverError, StateSpace, DEFAULT_STATE_CAP,
};
use jsqgame::features::sigma_norm;
use jsqgame::game::GameParams;
use jsqgame::lspi::{
    collect, collect_sweep, evaluate_policy_rollout, train, AttackerModel,
    ExplorationSchedule, InitialState, TrainConfig, TrainError,
};
use jsqgame::{ChaCha12Rng, SeedableRng};

/// Exit codes: 1 config/schema, 2 resource/capacity, 3 numerical divergence.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("capacity: {0}")]
    Capacity(String),
    #[error("divergence: {0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Capacity(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

fn io_err(context: &str, err: std::io::Error) -> CliError {
    CliError::Config(format!("{context}: {err}"))
}

impl From<SolverError> for CliError {
    fn from(err: SolverError) -> Self {
        match err {
            SolverError::StateCapExceeded { .. } => CliError::Capacity(err.to_string()),
            other => CliError::Divergence(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        match err {
            TrainError::BadConfig(msg) => CliError::Config(msg.to_string()),
            TrainError::Solver(inner) => inner.into(),
            TrainError::Eval(EvalError::InsufficientData { .. }) => {
                CliError::Config(err.to_string())
            }
            other => CliError::Divergence(other.to_string()),
        }
    }
}

impl From<BoundError> for CliError {
    fn from(err: BoundError) -> Self {
        CliError::Config(err.to_string())
    }
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    100_000
}

fn default_state_cap() -> usize {
    DEFAULT_STATE_CAP
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveExactConfig {
    pub command: String,
    pub params: GameParams,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub command: String,
    pub train: TrainConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub command: String,
    pub params: GameParams,
    /// Path to a stored defender policy file.
    pub policy: PathBuf,
    pub attacker: AttackerModel,
    pub horizon: usize,
    pub n_rollouts: usize,
    pub seed: u64,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub command: String,
    pub params: GameParams,
    /// Path to a stored dataset in the newline-delimited record format.
    pub dataset: PathBuf,
    /// Path to the defender policy evaluated on the dataset.
    pub policy: PathBuf,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectMode {
    /// One epsilon-greedy trajectory of `n` steps.
    Trajectory,
    /// Forced uniform exploration: every `(x, a, b)` triple exactly
    /// `visits_per_triple` times.
    Sweep,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectConfig {
    pub command: String,
    pub params: GameParams,
    pub mode: CollectMode,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub visits_per_triple: usize,
    /// Defender policy path; uniform when omitted.
    #[serde(default)]
    pub policy: Option<PathBuf>,
    #[serde(default = "uniform_attacker")]
    pub attacker: AttackerModel,
    pub seed: u64,
    #[serde(default)]
    pub schedule: ExplorationSchedule,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
}

fn uniform_attacker() -> AttackerModel {
    AttackerModel::RandomUniform
}

/// Stored defender (or attacker) policy with the parameters it was built
/// for.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub params: GameParams,
    pub policy: MixedPolicy,
}

#[derive(Debug, Serialize)]
struct SolutionFile<'a> {
    params: &'a GameParams,
    iterations: usize,
    v_star: &'a [f64],
    q_star: &'a jsqgame::exact::QTable,
    attacker: &'a MixedPolicy,
    defender: &'a MixedPolicy,
}

#[derive(Debug, Serialize)]
struct EvaluationFile<'a> {
    params: &'a GameParams,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
    mean_discounted_cost: f64,
    standard_error: f64,
    exploitability: Option<ExploitabilitySection>,
}

#[derive(Debug, Serialize)]
struct ExploitabilitySection {
    sup_gap: f64,
    v_star_sup: f64,
    ratio: f64,
}

#[derive(Debug, Serialize)]
struct BoundFile<'a> {
    params: &'a GameParams,
    dataset: &'a Path,
    n: usize,
    delta: f64,
    report: &'a BoundReport,
    measured_sigma_error: f64,
}

fn read_config<T: serde::de::DeserializeOwned>(
    path: &Path,
    expected_command: &str,
) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| io_err("opening config", e))?;
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("parsing config: {e}")))?;
    let command = value
        .get("command")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CliError::Config("missing field `command`".to_string()))?;
    if command != expected_command {
        return Err(CliError::Config(format!(
            "config is for command `{command}`, expected `{expected_command}`"
        )));
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("schema: {e}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err("creating output file", e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)
        .map_err(|e| CliError::Config(format!("writing {}: {e}", path.display())))?;
    writer.write_all(b"\n").map_err(|e| io_err("writing output file", e))?;
    Ok(())
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_err("creating output directory", e))
}

fn validate_params(params: &GameParams, quiet: bool) -> Result<(), CliError> {
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if !params.is_stable() && !quiet {
        eprintln!(
            "warning: lambda = {} >= m * mu = {}; the nominal system is overloaded",
            params.lambda,
            params.m as f64 * params.mu
        );
    }
    Ok(())
}

fn load_policy(path: &Path, params: &GameParams, n_states: usize) -> Result<MixedPolicy, CliError> {
    let file = File::open(path).map_err(|e| io_err("opening policy file", e))?;
    let stored: PolicyFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("parsing policy file: {e}")))?;
    if stored.params != *params {
        return Err(CliError::Capacity(
            "policy file parameters do not match the configured parameters".to_string(),
        ));
    }
    if !stored.policy.validate(n_states) {
        return Err(CliError::Config("policy file holds an invalid distribution".to_string()));
    }
    Ok(stored.policy)
}

pub fn cmd_solve_exact(config_path: &Path, out: &Path, quiet: bool) -> Result<(), CliError> {
    let cfg: SolveExactConfig = read_config(config_path, "solve-exact")?;
    validate_params(&cfg.params, quiet)?;
    if !cfg.tol.is_finite() || cfg.tol <= 0.0 {
        return Err(CliError::Config("tol must be positive".to_string()));
    }
    let space = StateSpace::enumerate_capped(&cfg.params, cfg.state_cap)?;
    let solution: ShapleySolution =
        shapley_value_iteration(&space, &cfg.params, cfg.tol, cfg.max_iter)?;

    ensure_out_dir(out)?;
    write_json(
        &out.join("solution.json"),
        &SolutionFile {
            params: &cfg.params,
            iterations: solution.iterations,
            v_star: &solution.v_star,
            q_star: &solution.q_star,
            attacker: &solution.attacker,
            defender: &solution.defender,
        },
    )?;
    write_json(
        &out.join("policy.json"),
        &PolicyFile { params: cfg.params.clone(), policy: solution.defender.clone() },
    )?;
    let mut log = String::new();
    for (iteration, delta) in solution.sup_deltas.iter().enumerate() {
        log.push_str(&format!("{} {}\n", iteration + 1, delta));
    }
    fs::write(out.join("convergence.log"), log).map_err(|e| io_err("writing log", e))?;
    if !quiet {
        println!(
            "solve-exact: {} states, converged after {} iterations",
            space.len(),
            solution.iterations
        );
    }
    Ok(())
}

pub fn cmd_train(
    config_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
    quiet: bool,
) -> Result<(), CliError> {
    let mut cfg: TrainCommandConfig = read_config(config_path, "train")?;
    if let Some(seed) = seed_override {
        cfg.train.seed = seed;
    }
    validate_params(&cfg.train.params, quiet)?;
    ensure_out_dir(out)?;

    let report = match train(&cfg.train) {
        Ok(report) => report,
        Err(TrainError::Diverged { iteration, partial }) => {
            // partial trace still written before surfacing the failure
            write_train_outputs(out, &cfg.train, &partial)?;
            return Err(CliError::Divergence(format!(
                "policy evaluation diverged at outer iteration {iteration}"
            )));
        }
        Err(other) => return Err(other.into()),
    };
    write_train_outputs(out, &cfg.train, &report)?;
    if !quiet {
        println!(
            "train: {} iterations, converged = {}",
            report.iterations, report.converged
        );
    }
    Ok(())
}

fn write_train_outputs(
    out: &Path,
    cfg: &TrainConfig,
    report: &jsqgame::lspi::TrainReport,
) -> Result<(), CliError> {
    write_json(&out.join("report.json"), report)?;
    write_json(
        &out.join("policy.json"),
        &PolicyFile { params: cfg.params.clone(), policy: report.beta_final.clone() },
    )?;

    let mut csv = String::from("iteration");
    for i in 0..cfg.params.feature_dim() {
        csv.push_str(&format!(",theta_{i}"));
    }
    csv.push_str(",theta_delta,sigma_td_error,epsilon_end,dataset_len\n");
    for (theta, diag) in report.theta_trace.iter().zip(&report.diagnostics) {
        csv.push_str(&diag.iteration.to_string());
        for value in theta {
            csv.push_str(&format!(",{value}"));
        }
        csv.push_str(&format!(
            ",{},{},{},{}\n",
            diag.theta_delta, diag.sigma_td_error, diag.epsilon_end, diag.dataset_len
        ));
    }
    fs::write(out.join("theta_trace.csv"), csv).map_err(|e| io_err("writing trace", e))
}

pub fn cmd_evaluate(
    config_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
    quiet: bool,
) -> Result<(), CliError> {
    let mut cfg: EvaluateConfig = read_config(config_path, "evaluate")?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    validate_params(&cfg.params, quiet)?;
    if cfg.n_rollouts == 0 {
        return Err(CliError::Config("n_rollouts must be at least 1".to_string()));
    }
    if cfg.horizon == 0 {
        return Err(CliError::Config("horizon must be at least 1".to_string()));
    }
    let space = StateSpace::enumerate_capped(&cfg.params, cfg.state_cap)?;
    let beta = load_policy(&cfg.policy, &cfg.params, space.len())?;

    let (mean, se) = evaluate_policy_rollout(
        &beta,
        &cfg.attacker,
        cfg.horizon,
        cfg.n_rollouts,
        &space,
        &cfg.params,
        cfg.seed,
        &cfg.initial_state,
    )?;

    // oracle exploitability whenever the state space is enumerable
    let exploitability = {
        let solution = shapley_value_iteration(&space, &cfg.params, 1e-12, 1_000_000)?;
        let (_, v_response) =
            best_response_value(&beta, &space, &cfg.params, 1e-12, 1_000_000)?;
        let sup_gap = v_response
            .iter()
            .zip(&solution.v_star)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let v_star_sup = solution.v_star.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Some(ExploitabilitySection { sup_gap, v_star_sup, ratio: sup_gap / v_star_sup })
    };

    ensure_out_dir(out)?;
    write_json(
        &out.join("evaluation.json"),
        &EvaluationFile {
            params: &cfg.params,
            horizon: cfg.horizon,
            n_rollouts: cfg.n_rollouts,
            seed: cfg.seed,
            mean_discounted_cost: mean,
            standard_error: se,
            exploitability,
        },
    )?;
    if !quiet {
        println!("evaluate: mean discounted cost {mean:.6} (se {se:.6})");
    }
    Ok(())
}

pub fn cmd_bound(config_path: &Path, out: &Path, quiet: bool) -> Result<(), CliError> {
    let cfg: BoundConfig = read_config(config_path, "bound")?;
    validate_params(&cfg.params, quiet)?;
    if !cfg.delta.is_finite() || cfg.delta <= 0.0 || cfg.delta >= 1.0 {
        return Err(CliError::Config("delta must lie strictly between 0 and 1".to_string()));
    }
    let space = StateSpace::enumerate_capped(&cfg.params, cfg.state_cap)?;
    let beta = load_policy(&cfg.policy, &cfg.params, space.len())?;

    let file = File::open(&cfg.dataset).map_err(|e| io_err("opening dataset", e))?;
    let ds = Dataset::read_from(BufReader::new(file), &cfg.params).map_err(|e| match e {
        // records that do not fit the configured system are a mismatch
        EvalError::MalformedRecord { .. } => CliError::Capacity(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    if ds.is_empty() {
        return Err(CliError::Config("dataset is empty".to_string()));
    }

    let outcome = evaluate_policy(&ds, &beta, &space, &cfg.params)
        .map_err(|e| CliError::Divergence(e.to_string()))?;
    let phi = ds.feature_matrix(&cfg.params);
    let kernel = EmpiricalKernel::from_dataset(&ds, &cfg.params);

    // oracle action values of (best-responding attacker, beta)
    let model = ExactModel::new(&space, &cfg.params);
    let (_, v_response) = best_response_value(&beta, &space, &cfg.params, 1e-12, 1_000_000)?;
    let q_table = model.q_from_values(cfg.params.gamma, &v_response);
    let q_true: Vec<f64> = ds
        .samples()
        .iter()
        .map(|s| q_table.get(space.index(&s.state), s.attack, s.defend))
        .collect();

    let report = evaluation_error_bound(&ds, &phi, &kernel, &q_true, &cfg.params, cfg.delta)?;
    let fitted = phi.mul(&outcome.theta);
    let err: Vec<f64> = q_true.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let measured = sigma_norm(&err);

    ensure_out_dir(out)?;
    write_json(
        &out.join("bound_report.json"),
        &BoundFile {
            params: &cfg.params,
            dataset: &cfg.dataset,
            n: ds.len(),
            delta: cfg.delta,
            report: &report,
            measured_sigma_error: measured,
        },
    )?;
    if !quiet {
        println!(
            "bound: measured sigma error {measured:.6} vs bound total {:.6}",
            report.total
        );
    }
    Ok(())
}

pub fn cmd_collect(
    config_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
    quiet: bool,
) -> Result<(), CliError> {
    let mut cfg: CollectConfig = read_config(config_path, "collect")?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    validate_params(&cfg.params, quiet)?;
    let space = StateSpace::enumerate_capped(&cfg.params, cfg.state_cap)?;
    let beta = match &cfg.policy {
        Some(path) => load_policy(path, &cfg.params, space.len())?,
        None => MixedPolicy::uniform(space.len()),
    };

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let ds = match cfg.mode {
        CollectMode::Trajectory => {
            if cfg.n == 0 {
                return Err(CliError::Config(
                    "trajectory mode needs n >= 1 samples".to_string(),
                ));
            }
            collect(
                &beta,
                &cfg.attacker,
                cfg.n,
                &cfg.schedule,
                &space,
                &cfg.params,
                &mut rng,
                &cfg.initial_state,
            )?
        }
        CollectMode::Sweep => {
            if cfg.visits_per_triple == 0 {
                return Err(CliError::Config(
                    "sweep mode needs visits_per_triple >= 1".to_string(),
                ));
            }
            collect_sweep(&space, &cfg.params, cfg.visits_per_triple, &mut rng)
        }
    };

    ensure_out_dir(out)?;
    let file = File::create(out.join("dataset.txt")).map_err(|e| io_err("creating dataset", e))?;
    let mut writer = BufWriter::new(file);
    ds.write_to(&mut writer).map_err(|e| io_err("writing dataset", e))?;
    writer.flush().map_err(|e| io_err("writing dataset", e))?;
    if !quiet {
        println!("collect: wrote {} samples", ds.len());
    }
    Ok(())
}
