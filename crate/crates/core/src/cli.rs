//! Command-line front end: configuration ingestion, subcommand dispatch,
//! reproducible runs, and file emission.
//!
//! All subcommands accept a JSON config file plus flags, with flags taking
//! precedence. Data can be given explicitly (`--x0`, `--v0`, `--nu`) or
//! generated from `--seed`: positions are sorted standard normals and
//! velocities plain standard normals, both re-centered to the zero-mean
//! frame, so every corpus is regenerable from the seed. Outputs are
//! deterministic for a fixed config and seed, byte for byte.

use std::path::{Path, PathBuf};
use std::sync::mpsc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    bounds_long_range, bounds_short_range, default_slope_threshold, empirical_clusters,
    flocking_diagnostics, verify_bounds, BoundsReport, Claim, ClaimStatus,
};
use crate::clustering::{
    kappa_critical_first_order, kappa_critical_second_order, predict_first_order,
    predict_second_order, sweep_cluster_count, ClusterPartition, SweepInput,
};
use crate::error::{Error, Result};
use crate::instance;
use crate::integrator::{
    integrate_first_order, integrate_second_order, IntegratorConfig, Trajectory,
};
use crate::model::{
    natural_velocities, normalize, FirstOrderState, ModelParams, SecondOrderState, Shift,
};
use crate::potential::{Potential, Regime};

/// Environment variable providing the default output directory.
pub const OUT_DIR_ENV: &str = "SINGULAR_CS_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "singular-cs",
    version,
    about = "1D singular Cucker-Smale model: simulation, cluster prediction, bounds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the model and emit a trajectory CSV plus an events JSON.
    Simulate(SimulateArgs),
    /// Closed-form cluster prediction (boundaries, count, group velocities).
    Predict(DataArgs),
    /// Critical coupling strength for mono-cluster flocking.
    KappaCritical(DataArgs),
    /// Cluster counts over a grid of coupling strengths.
    Sweep(SweepArgs),
    /// Simulate, then check bounds and predictions; emit a claims ledger.
    Verify(SimulateArgs),
    /// Solve the window equilibrium system for given natural velocities.
    Equilibrium(EquilibriumArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct DataArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Kernel exponent beta.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Coupling strength kappa.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Model order: "first" (default) or "second".
    #[arg(long)]
    pub order: Option<String>,
    /// Particle count (needed only when data is generated).
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated natural velocities in spatial order (first order).
    #[arg(long, allow_hyphen_values = true)]
    pub nu: Option<String>,
    /// Comma-separated initial positions in spatial order.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Comma-separated initial velocities (second order).
    #[arg(long, allow_hyphen_values = true)]
    pub v0: Option<String>,
    /// Seed for generated data.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reject inputs that are not already in the zero-mean frame instead of
    /// normalizing them.
    #[arg(long)]
    pub strict: bool,
    /// Directory to also write the output file into.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Integration horizon.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Relative step tolerance.
    #[arg(long)]
    pub rtol: Option<f64>,
    /// Absolute step tolerance.
    #[arg(long)]
    pub atol: Option<f64>,
    /// Output sample cadence.
    #[arg(long)]
    pub sample_dt: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated coupling strengths.
    #[arg(long, allow_hyphen_values = true)]
    pub kappa_grid: Option<String>,
    /// Worker threads for grid evaluation.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args, Default)]
pub struct EquilibriumArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Total particle count N entering kappa/N (defaults to the window size).
    #[arg(long)]
    pub n_total: Option<usize>,
}

/// JSON config file schema. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub beta: Option<f64>,
    pub kappa: Option<f64>,
    pub order: Option<String>,
    pub x0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
    pub nu: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub sample_dt: Option<f64>,
    pub seed: Option<u64>,
    pub strict: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

impl Order {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Order::First),
            "second" => Ok(Order::Second),
            other => Err(Error::Config(format!(
                "order must be \"first\" or \"second\", got {other:?}"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Order::First => "first",
            Order::Second => "second",
        }
    }
}

fn parse_list(label: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad {label} entry {t:?}: {e}")))
        })
        .collect()
}

/// Fully resolved instance: merged config, normalized data, model parameters.
#[derive(Debug, Clone)]
pub struct ResolvedInstance {
    pub beta: f64,
    pub kappa: f64,
    pub order: Order,
    pub n: usize,
    /// Positions in spatial order, zero-mean.
    pub x0: Option<Vec<f64>>,
    /// Second-order velocities, zero-mean.
    pub v0: Option<Vec<f64>>,
    /// First-order natural velocities, zero-mean.
    pub nu: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub shift: Option<Shift>,
    pub file: FileConfig,
}

impl ResolvedInstance {
    pub fn potential(&self) -> Result<Potential> {
        Potential::new(self.beta)
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.n, self.kappa, self.potential()?)
    }

    /// Natural velocities in spatial order, deriving them from (x0, v0) when
    /// not supplied directly.
    pub fn natural_velocities(&self) -> Result<Vec<f64>> {
        if let Some(nu) = &self.nu {
            return Ok(nu.clone());
        }
        let x0 = self.x0.as_ref().ok_or_else(|| {
            Error::Config("positions are required to derive natural velocities".into())
        })?;
        let v0 = self
            .v0
            .as_ref()
            .ok_or_else(|| Error::Config("velocities or natural velocities are required".into()))?;
        natural_velocities(&self.params()?, x0, v0)
    }
}

fn is_zero_mean(v: &[f64]) -> bool {
    let sum: f64 = v.iter().sum();
    let scale = v.iter().map(|x| x.abs()).fold(1.0f64, f64::max);
    sum.abs() <= 1e-9 * scale * v.len() as f64
}

fn resolve(data: &DataArgs, need_positions: bool) -> Result<ResolvedInstance> {
    resolve_with(data, need_positions, true)
}

/// `need_kappa` is false for subcommands whose result does not depend on the
/// coupling (threshold computation, sweeps over a grid); a placeholder of 1
/// is used there when no kappa is given.
fn resolve_with(
    data: &DataArgs,
    need_positions: bool,
    need_kappa: bool,
) -> Result<ResolvedInstance> {
    let file = match &data.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let beta = data
        .beta
        .or(file.beta)
        .ok_or_else(|| Error::Config("beta is required (flag --beta or config)".into()))?;
    let kappa = match data.kappa.or(file.kappa) {
        Some(k) => k,
        None if need_kappa => {
            return Err(Error::Config(
                "kappa is required (flag --kappa or config)".into(),
            ))
        }
        None => 1.0,
    };
    let order = match data.order.as_deref().or(file.order.as_deref()) {
        Some(s) => Order::parse(s)?,
        None => Order::First,
    };
    // Second-order data always includes positions.
    let need_positions = need_positions || order == Order::Second;
    let strict = data.strict || file.strict.unwrap_or(false);
    let seed = data.seed.or(file.seed);

    let mut x0 = match (&data.x0, &file.x0) {
        (Some(s), _) => Some(parse_list("x0", s)?),
        (None, Some(v)) => Some(v.clone()),
        (None, None) => None,
    };
    let mut v0 = match (&data.v0, &file.v0) {
        (Some(s), _) => Some(parse_list("v0", s)?),
        (None, Some(v)) => Some(v.clone()),
        (None, None) => None,
    };
    let mut nu = match (&data.nu, &file.nu) {
        (Some(s), _) => Some(parse_list("nu", s)?),
        (None, Some(v)) => Some(v.clone()),
        (None, None) => None,
    };

    // Generate whatever is missing from the seed.
    let velocity_like = match order {
        Order::First => nu.is_some(),
        Order::Second => v0.is_some(),
    };
    if (need_positions && x0.is_none()) || !velocity_like {
        let seed_val = seed.ok_or_else(|| {
            Error::Config("no data given and no --seed to generate it from".into())
        })?;
        let n = data
            .n
            .or(file.n)
            .or_else(|| x0.as_ref().map(Vec::len))
            .or_else(|| nu.as_ref().map(Vec::len))
            .or_else(|| v0.as_ref().map(Vec::len))
            .ok_or_else(|| Error::Config("--n is required to generate data".into()))?;
        let mut rng = instance::rng_for_seed(seed_val);
        let (gx, gv) = instance::generate_instance(&mut rng, n);
        if need_positions && x0.is_none() {
            x0 = Some(gx);
        }
        if !velocity_like {
            match order {
                Order::First => nu = Some(gv),
                Order::Second => v0 = Some(gv),
            }
        }
    }

    // Cross-check lengths and settle N.
    let mut n = None;
    for v in [&x0, &v0, &nu].into_iter().flatten() {
        match n {
            None => n = Some(v.len()),
            Some(m) if m == v.len() => {}
            Some(m) => {
                return Err(Error::Config(format!(
                    "inconsistent data lengths: {m} vs {}",
                    v.len()
                )))
            }
        }
    }
    let n = n.ok_or_else(|| Error::Config("no particle data resolved".into()))?;
    if let Some(m) = data.n.or(file.n) {
        if m != n {
            return Err(Error::Config(format!(
                "--n = {m} conflicts with data of length {n}"
            )));
        }
    }

    // Frame handling: strict mode rejects off-frame input; the default
    // normalizes and records the shift.
    let mut shift = None;
    let velocity_slot = match order {
        Order::First => &mut nu,
        Order::Second => &mut v0,
    };
    let x_ok = x0.as_deref().map(is_zero_mean).unwrap_or(true);
    let v_ok = velocity_slot.as_deref().map(is_zero_mean).unwrap_or(true);
    if !(x_ok && v_ok) {
        if strict {
            return Err(Error::Normalization(
                "input is not zero-mean and strict mode is on".into(),
            ));
        }
        let xs = x0.clone().unwrap_or_else(|| vec![0.0; n]);
        let vs = velocity_slot.clone().unwrap_or_else(|| vec![0.0; n]);
        let (xs, vs, sh) = normalize(&xs, &vs);
        if x0.is_some() {
            x0 = Some(xs);
        }
        if velocity_slot.is_some() {
            *match order {
                Order::First => &mut nu,
                Order::Second => &mut v0,
            } = Some(vs);
        }
        shift = Some(sh);
    }

    Ok(ResolvedInstance {
        beta,
        kappa,
        order,
        n,
        x0,
        v0,
        nu,
        seed,
        shift,
        file,
    })
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

/// Everything a subcommand produces: the stdout payload and files to write.
#[derive(Debug, Default)]
pub struct Outputs {
    pub stdout: String,
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn out_dir_for(flag: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
}

#[derive(Serialize)]
struct PredictOutput {
    boundaries: Vec<usize>,
    count: usize,
    group_velocities: Vec<f64>,
    kappa_c: f64,
    degenerate: bool,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct KappaCriticalOutput {
    kappa_c: f64,
    order: &'static str,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct EquilibriumOutput {
    positions: Vec<f64>,
    residual: f64,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct SimulateSummary {
    order: &'static str,
    t_end: f64,
    samples: usize,
    events: usize,
    frame_shift: Option<[f64; 2]>,
    seed: Option<u64>,
    files: Vec<String>,
}

#[derive(Serialize)]
struct VerifyOutput {
    claims: Vec<Claim>,
    bounds: BoundsReport,
    fitted_rate: Option<f64>,
    theoretical_rate: Option<f64>,
    seed: Option<u64>,
}

fn prediction_for(inst: &ResolvedInstance) -> Result<(ClusterPartition, f64)> {
    let pot = inst.potential()?;
    match inst.order {
        Order::First => {
            let nu = inst
                .nu
                .clone()
                .ok_or_else(|| Error::Config("first-order prediction needs --nu".into()))?;
            let part = predict_first_order(&nu, inst.kappa, &pot)?;
            let kc = kappa_critical_first_order(&nu, &pot)?;
            Ok((part, kc))
        }
        Order::Second => {
            let x0 = inst
                .x0
                .clone()
                .ok_or_else(|| Error::Config("second-order prediction needs --x0".into()))?;
            let v0 = inst
                .v0
                .clone()
                .ok_or_else(|| Error::Config("second-order prediction needs --v0".into()))?;
            let part = predict_second_order(&x0, &v0, inst.kappa, &pot)?;
            let kc = kappa_critical_second_order(&x0, &v0, &pot)?;
            Ok((part, kc))
        }
    }
}

fn cmd_predict(args: &DataArgs) -> Result<Outputs> {
    let inst = resolve(args, false)?;
    let (part, kc) = prediction_for(&inst)?;
    let out = PredictOutput {
        boundaries: part.boundaries.clone(),
        count: part.count(),
        group_velocities: part.group_velocities.clone(),
        kappa_c: kc,
        degenerate: part.is_degenerate(),
        seed: inst.seed,
    };
    let stdout = to_pretty_json(&out)?;
    let mut outputs = Outputs {
        stdout: stdout.clone(),
        files: Vec::new(),
    };
    if let Some(dir) = out_dir_for(&args.out_dir) {
        outputs
            .files
            .push((dir.join("predict.json"), stdout.into_bytes()));
    }
    Ok(outputs)
}

fn cmd_kappa_critical(args: &DataArgs) -> Result<Outputs> {
    let inst = resolve_with(args, false, false)?;
    let pot = inst.potential()?;
    let kc = match inst.order {
        Order::First => {
            let nu = inst
                .nu
                .clone()
                .ok_or_else(|| Error::Config("first-order threshold needs --nu".into()))?;
            kappa_critical_first_order(&nu, &pot)?
        }
        Order::Second => {
            let x0 = inst
                .x0
                .clone()
                .ok_or_else(|| Error::Config("second-order threshold needs --x0".into()))?;
            let v0 = inst
                .v0
                .clone()
                .ok_or_else(|| Error::Config("second-order threshold needs --v0".into()))?;
            kappa_critical_second_order(&x0, &v0, &pot)?
        }
    };
    let out = KappaCriticalOutput {
        kappa_c: kc,
        order: inst.order.name(),
        seed: inst.seed,
    };
    let stdout = to_pretty_json(&out)?;
    let mut outputs = Outputs {
        stdout: stdout.clone(),
        files: Vec::new(),
    };
    if let Some(dir) = out_dir_for(&args.out_dir) {
        outputs
            .files
            .push((dir.join("kappa_critical.json"), stdout.into_bytes()));
    }
    Ok(outputs)
}

fn cmd_sweep(args: &SweepArgs) -> Result<Outputs> {
    let inst = resolve_with(&args.data, false, false)?;
    let grid = match &args.kappa_grid {
        Some(s) => parse_list("kappa-grid", s)?,
        None => return Err(Error::Config("--kappa-grid is required".into())),
    };
    if grid.is_empty() || grid.iter().any(|k| !k.is_finite() || *k <= 0.0) {
        return Err(Error::InvalidParam(
            "kappa grid must be non-empty and positive".into(),
        ));
    }
    let pot = inst.potential()?;
    let counts = match inst.order {
        Order::First => {
            let nu = inst
                .nu
                .clone()
                .ok_or_else(|| Error::Config("first-order sweep needs --nu".into()))?;
            sweep_parallel(&SweepInput::FirstOrder { nu: &nu }, &grid, &pot, args.jobs)?
        }
        Order::Second => {
            let x0 = inst
                .x0
                .clone()
                .ok_or_else(|| Error::Config("second-order sweep needs --x0".into()))?;
            let v0 = inst
                .v0
                .clone()
                .ok_or_else(|| Error::Config("second-order sweep needs --v0".into()))?;
            sweep_parallel(
                &SweepInput::SecondOrder { x0: &x0, v0: &v0 },
                &grid,
                &pot,
                args.jobs,
            )?
        }
    };
    let mut csv = String::from("kappa,n_clusters\n");
    for (k, c) in &counts {
        csv.push_str(&format!("{k},{c}\n"));
    }
    let mut outputs = Outputs {
        stdout: csv.clone(),
        files: Vec::new(),
    };
    if let Some(dir) = out_dir_for(&args.data.out_dir) {
        outputs
            .files
            .push((dir.join("sweep.csv"), csv.into_bytes()));
    }
    Ok(outputs)
}

/// Evaluate grid points on up to `jobs` worker threads, preserving grid
/// order in the output.
pub fn sweep_parallel(
    input: &SweepInput<'_>,
    grid: &[f64],
    potential: &Potential,
    jobs: usize,
) -> Result<Vec<(f64, usize)>> {
    let jobs = jobs.max(1).min(grid.len().max(1));
    if jobs == 1 {
        return sweep_cluster_count(input, grid, potential);
    }
    let mut results: Vec<Option<Result<(f64, usize)>>> = (0..grid.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for worker in 0..jobs {
            let tx = tx.clone();
            let input = input.clone();
            let potential = *potential;
            scope.spawn(move || {
                let mut idx = worker;
                while idx < grid.len() {
                    let res =
                        sweep_cluster_count(&input, &grid[idx..=idx], &potential).map(|v| v[0]);
                    if tx.send((idx, res)).is_err() {
                        return;
                    }
                    idx += jobs;
                }
            });
        }
        drop(tx);
        for (idx, res) in rx {
            results[idx] = Some(res);
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("worker covered every grid index"))
        .collect()
}

fn integrator_config(args: &SimulateArgs, inst: &ResolvedInstance) -> IntegratorConfig {
    IntegratorConfig {
        rtol: args.rtol.or(inst.file.rtol).unwrap_or(1e-6),
        atol: args.atol.or(inst.file.atol).unwrap_or(1e-9),
        sample_dt: args.sample_dt.or(inst.file.sample_dt),
        refine_events: true,
        ..Default::default()
    }
}

fn simulate_trajectory(args: &SimulateArgs) -> Result<(ResolvedInstance, Trajectory, f64)> {
    let inst = resolve(&args.data, true)?;
    let t_end = args.t_end.or(inst.file.t_end).unwrap_or(50.0);
    let cfg = integrator_config(args, &inst);
    let params = inst.params()?;
    let pot = inst.potential()?;
    let x0 = inst
        .x0
        .clone()
        .ok_or_else(|| Error::Config("simulation needs initial positions".into()))?;
    let mut traj = match inst.order {
        Order::First => {
            let nu = inst.natural_velocities()?;
            let state = FirstOrderState::new(x0, nu)?;
            integrate_first_order(&params, &state, &cfg, t_end)?
        }
        Order::Second => {
            if pot.regime() == Regime::LongRange {
                // Below beta = 1 the second order runs through the reduction;
                // sample velocities are the reduced field, which equals the
                // second-order velocity along the solution.
                let nu = inst.natural_velocities()?;
                let state = FirstOrderState::new(x0, nu)?;
                integrate_first_order(&params, &state, &cfg, t_end)?
            } else {
                let v0 = inst
                    .v0
                    .clone()
                    .ok_or_else(|| Error::Config("second-order simulation needs --v0".into()))?;
                let state = SecondOrderState::new(x0, v0)?;
                integrate_second_order(&params, &state, &cfg, t_end)?
            }
        }
    };
    traj.shift = inst.shift;
    Ok((inst, traj, t_end))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<Outputs> {
    let (inst, traj, t_end) = simulate_trajectory(args)?;
    let dir = out_dir_for(&args.data.out_dir).unwrap_or_else(|| PathBuf::from("."));
    let csv_path = dir.join("trajectory.csv");
    let events_path = dir.join("events.json");

    let mut csv = Vec::new();
    traj.write_csv(&mut csv, inst.seed)?;
    let events = serde_json::to_string_pretty(&traj.events_json())
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?
        + "\n";

    // File names only: the summary must not depend on where outputs land.
    let summary = SimulateSummary {
        order: inst.order.name(),
        t_end,
        samples: traj.samples.len(),
        events: traj.events.len(),
        frame_shift: traj.shift.map(|s| [s.mean_position, s.mean_velocity]),
        seed: inst.seed,
        files: vec!["trajectory.csv".into(), "events.json".into()],
    };
    Ok(Outputs {
        stdout: to_pretty_json(&summary)?,
        files: vec![(csv_path, csv), (events_path, events.into_bytes())],
    })
}

fn cmd_verify(args: &SimulateArgs) -> Result<Outputs> {
    let (inst, traj, _) = simulate_trajectory(args)?;
    let pot = inst.potential()?;
    let nu = inst.natural_velocities()?;
    let x0 = inst.x0.clone().unwrap();

    // Bounds want data in spatial order.
    let mut order: Vec<usize> = (0..x0.len()).collect();
    order.sort_by(|&a, &b| x0[a].partial_cmp(&x0[b]).unwrap());
    let xs: Vec<f64> = order.iter().map(|&i| x0[i]).collect();
    let ns: Vec<f64> = order.iter().map(|&i| nu[i]).collect();

    let bounds = match pot.regime() {
        Regime::LongRange => bounds_long_range(&ns, &xs, inst.kappa, &pot)?,
        Regime::ShortRange => bounds_short_range(&ns, &xs, inst.kappa, &pot)?,
        Regime::Critical => BoundsReport {
            regime: Regime::Critical,
            kappa: inst.kappa,
            min_distance_bound: None,
            min_distance_degenerate: false,
            diameter_bound: None,
            decay_rate: None,
            diameter_floor: None,
            chain: Vec::new(),
            min_distance_floor: None,
            scaling_estimate: None,
        },
    };

    let mut claims = verify_bounds(&traj, &bounds);

    // Short range: compare the empirical partition against the closed-form
    // prediction.
    if pot.regime() == Regime::ShortRange {
        let prediction = predict_first_order(&ns, inst.kappa, &pot)?;
        let threshold = default_slope_threshold(&prediction);
        match empirical_clusters(&traj, 0.5, threshold) {
            Ok(emp) => {
                let ok = emp.boundaries == prediction.boundaries;
                claims.push(Claim {
                    name: "cluster-prediction".into(),
                    status: if ok {
                        ClaimStatus::Pass
                    } else {
                        ClaimStatus::Fail
                    },
                    detail: format!(
                        "empirical boundaries {:?} vs predicted {:?}",
                        emp.boundaries, prediction.boundaries
                    ),
                });
            }
            Err(e) => claims.push(Claim {
                name: "cluster-prediction".into(),
                status: ClaimStatus::Inconclusive,
                detail: format!("{e}"),
            }),
        }
    }

    let diag = flocking_diagnostics(&traj)?;
    let out = VerifyOutput {
        claims,
        theoretical_rate: bounds.decay_rate,
        fitted_rate: diag.fitted_rate,
        bounds,
        seed: inst.seed,
    };
    let stdout = to_pretty_json(&out)?;
    let mut outputs = Outputs {
        stdout: stdout.clone(),
        files: Vec::new(),
    };
    if let Some(dir) = out_dir_for(&args.data.out_dir) {
        outputs
            .files
            .push((dir.join("verify.json"), stdout.into_bytes()));
    }
    Ok(outputs)
}

fn cmd_equilibrium(args: &EquilibriumArgs) -> Result<Outputs> {
    let inst = resolve(&args.data, false)?;
    let pot = inst.potential()?;
    let nu = inst
        .nu
        .clone()
        .ok_or_else(|| Error::Config("equilibrium needs --nu (or --seed)".into()))?;
    let n_total = args.n_total.unwrap_or(nu.len());
    let positions = crate::analysis::solve_equilibrium(&nu, inst.kappa, &pot, n_total)?;
    // Residual for the report.
    let kn = inst.kappa / n_total as f64;
    let mut residual = 0.0f64;
    for i in 0..positions.len() {
        let mut acc = 0.0;
        for k in 0..positions.len() {
            if k != i {
                acc += pot.interaction(positions[k] - positions[i])?;
            }
        }
        residual = residual.max((nu[i] + kn * acc).abs());
    }
    let out = EquilibriumOutput {
        positions,
        residual,
        seed: inst.seed,
    };
    let stdout = to_pretty_json(&out)?;
    let mut outputs = Outputs {
        stdout: stdout.clone(),
        files: Vec::new(),
    };
    if let Some(dir) = out_dir_for(&args.data.out_dir) {
        outputs
            .files
            .push((dir.join("equilibrium.json"), stdout.into_bytes()));
    }
    Ok(outputs)
}

/// Compute a subcommand's outputs without touching the filesystem (beyond
/// reading the config file).
pub fn execute(cli: &Cli) -> Result<Outputs> {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::KappaCritical(args) => cmd_kappa_critical(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Equilibrium(args) => cmd_equilibrium(args),
    }
}

/// Execute and write: files first, then the stdout payload.
pub fn run(cli: &Cli) -> Result<()> {
    let outputs = execute(cli)?;
    for (path, bytes) in &outputs.files {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, bytes)?;
    }
    print!("{}", outputs.stdout);
    Ok(())
}
