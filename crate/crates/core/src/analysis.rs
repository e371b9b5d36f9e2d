//! Explicit bound constants, the equilibrium solver, and trajectory
//! diagnostics (empirical clusters, flocking rates, bound verification).
//!
//! The bound constants come in two families. Below beta = 1 the flow admits
//! an a-priori diameter bound and, for strictly ordered natural velocities,
//! an asymptotic pairwise floor; together they pin the exponential flocking
//! rate `kappa * psi(diameter_bound)`. Above beta = 1 a chain of inductive
//! floors descends from the diameter floor through the ranked initial gaps to
//! a uniform-in-time minimum-distance floor. The constants are conservative
//! by construction; the verification routines only ever check that simulated
//! trajectories respect them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::potential::{Potential, Regime};

/// Explicit bound constants for one instance.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub regime: Regime,
    pub kappa: f64,
    /// Asymptotic pairwise lower bound (beta < 1); `None` when the natural
    /// velocities are not strictly increasing, which the bound requires.
    pub min_distance_bound: Option<f64>,
    /// True when an exactly repeated natural velocity forced the pairwise
    /// bound to zero.
    pub min_distance_degenerate: bool,
    /// Uniform upper bound on the position diameter (beta < 1).
    pub diameter_bound: Option<f64>,
    /// Exponential flocking rate `kappa * psi(diameter_bound)` (beta < 1).
    pub decay_rate: Option<f64>,
    /// Uniform lower bound on the position diameter (beta > 1).
    pub diameter_floor: Option<f64>,
    /// Inductive chain of floors from the diameter down to the closest pair
    /// (beta > 1); weakly decreasing.
    pub chain: Vec<f64>,
    /// Uniform lower bound on the minimum pair distance (beta > 1).
    pub min_distance_floor: Option<f64>,
    /// Order of the minimum-distance floor in the particle count:
    /// `exp(-N^2 ln N / (beta - 1))`, exponential factor only.
    pub scaling_estimate: Option<f64>,
}

fn diameter(x: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in x {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    hi - lo
}

/// Bound constants for the long-range regime (beta < 1). `nu` must be given
/// in the spatial order of `x0`.
pub fn bounds_long_range(
    nu: &[f64],
    x0: &[f64],
    kappa: f64,
    potential: &Potential,
) -> Result<BoundsReport> {
    if potential.regime() != Regime::LongRange {
        return Err(Error::Regime {
            operation: "bounds_long_range",
            required: "long-range",
            actual: potential.regime(),
            beta: potential.beta(),
        });
    }
    let n = nu.len();
    if n < 2 || x0.len() != n {
        return Err(Error::InvalidParam(
            "need matching nu and x0 with at least two particles".into(),
        ));
    }
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "kappa must be positive, got {kappa}"
        )));
    }

    let d_nu = diameter(nu);
    let d_x0 = diameter(x0);
    let diameter_bound = d_x0.max(potential.big_psi_inverse(d_nu / kappa)?);
    let decay_rate = if diameter_bound > 0.0 {
        kappa * potential.psi(diameter_bound)?
    } else {
        f64::INFINITY
    };

    // The pairwise floor needs non-decreasing natural velocities in spatial
    // order; a strictly repeated value degenerates the floor to zero.
    let mut min_distance_bound = None;
    let mut degenerate = false;
    if nu.windows(2).all(|w| w[1] >= w[0]) {
        let mut floor = f64::INFINITY;
        for i in 0..n - 1 {
            let gap_nu = nu[i + 1] - nu[i];
            if gap_nu == 0.0 {
                degenerate = true;
            }
            let balance = potential.big_psi_inverse(gap_nu / kappa)?;
            floor = floor.min(balance.min(x0[i + 1] - x0[i]));
        }
        min_distance_bound = Some(floor);
    }

    Ok(BoundsReport {
        regime: Regime::LongRange,
        kappa,
        min_distance_bound,
        min_distance_degenerate: degenerate,
        diameter_bound: Some(diameter_bound),
        decay_rate: Some(decay_rate),
        diameter_floor: None,
        chain: Vec::new(),
        min_distance_floor: None,
        scaling_estimate: None,
    })
}

/// Bound constants for the short-range regime (beta > 1). Positions must be
/// strictly increasing.
pub fn bounds_short_range(
    nu: &[f64],
    x0: &[f64],
    kappa: f64,
    potential: &Potential,
) -> Result<BoundsReport> {
    if potential.regime() != Regime::ShortRange {
        return Err(Error::Regime {
            operation: "bounds_short_range",
            required: "short-range",
            actual: potential.regime(),
            beta: potential.beta(),
        });
    }
    let n = nu.len();
    if n < 2 || x0.len() != n {
        return Err(Error::InvalidParam(
            "need matching nu and x0 with at least two particles".into(),
        ));
    }
    if x0.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "positions must be strictly increasing and distinct".into(),
        ));
    }
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "kappa must be positive, got {kappa}"
        )));
    }

    let d_nu = diameter(nu);
    let phi_inf = potential.phi_limit()?;
    let floor_arg = -(n as f64) * d_nu / (2.0 * kappa);
    let diameter_floor = 1.0_f64
        .min(diameter(x0))
        .min(potential.phi_inverse(floor_arg)?);

    // Ranked initial gaps, ascending. The inductive recursion walks from the
    // diameter (largest gap) down to the closest pair, feeding each floor
    // into the next step and using the matching initial ranked gap.
    let mut gaps = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            gaps.push((x0[j] - x0[i]).abs());
        }
    }
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = gaps.len();

    let mut chain = Vec::with_capacity(m);
    let mut current = diameter_floor;
    chain.push(current);
    for p in (0..m - 1).rev() {
        let reach = potential.phi(current)?.abs().max(phi_inf);
        let arg = -(n as f64) / (2.0 * kappa) * (2.0 * kappa * reach + d_nu);
        let next = potential
            .phi_inverse(arg)?
            .min(1.0)
            .min(gaps[p])
            .min(current / 2.0);
        chain.push(next);
        current = next;
    }

    let scaling = (-(n as f64).powi(2) * (n as f64).ln() / (potential.beta() - 1.0)).exp();

    Ok(BoundsReport {
        regime: Regime::ShortRange,
        kappa,
        min_distance_bound: None,
        min_distance_degenerate: false,
        diameter_bound: None,
        decay_rate: None,
        diameter_floor: Some(diameter_floor),
        min_distance_floor: Some(current),
        chain,
        scaling_estimate: Some(scaling),
    })
}

// ---------------------------------------------------------------------------
// Equilibrium solver
// ---------------------------------------------------------------------------

/// Gaussian elimination with partial pivoting; `a` is row-major `n x n`.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Solver(
                "singular Jacobian in equilibrium solve".into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (upper, lower) = a.split_at_mut(col + 1);
        let lead = &upper[col];
        for (off, row) in lower.iter_mut().enumerate() {
            let f = row[col] / lead[col];
            if f == 0.0 {
                continue;
            }
            for (rk, lk) in row[col..n].iter_mut().zip(&lead[col..n]) {
                *rk -= f * lk;
            }
            b[col + 1 + off] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

fn equilibrium_residual(
    nu: &[f64],
    kappa: f64,
    potential: &Potential,
    n_total: usize,
    y: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let m = y.len();
    let kn = kappa / n_total as f64;
    for i in 0..m {
        let mut acc = 0.0;
        for k in 0..m {
            if k == i {
                continue;
            }
            let d = y[k] - y[i];
            if d == 0.0 {
                return Err(Error::Solver(
                    "iterate produced coincident positions".into(),
                ));
            }
            acc += potential.interaction(d)?;
        }
        out[i] = nu[i] + kn * acc;
    }
    Ok(())
}

fn residual_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Solve the window equilibrium system
/// `nu_i + (kappa / n_total) sum_{k != i} P(y_k - y_i) = 0` under the
/// zero-sum constraint, by damped Newton iteration. The window's natural
/// velocities must sum to zero. For beta > 1 the window has to be an
/// asymptotic cluster, otherwise no equilibrium exists and the solver reports
/// failure. Output is sorted ascending.
pub fn solve_equilibrium(
    nu: &[f64],
    kappa: f64,
    potential: &Potential,
    n_total: usize,
) -> Result<Vec<f64>> {
    let guess = default_equilibrium_guess(nu, kappa, potential, n_total)?;
    solve_equilibrium_with_guess(nu, kappa, potential, n_total, &guess)
}

/// Initial iterate with per-cut gap estimates. Modelling all pairs across
/// cut `l` as sharing one gap `g_l`, the prefix balance needs
/// `P(g_l) = -sum(nu prefix) * n_total / (kappa l (m - l))`; inverting the
/// potential per cut puts squeezed and stretched cuts at the right scale.
fn default_equilibrium_guess(
    nu: &[f64],
    kappa: f64,
    potential: &Potential,
    n_total: usize,
) -> Result<Vec<f64>> {
    let m = nu.len();
    let limit = match potential.regime() {
        Regime::ShortRange => potential.phi_limit()? * (1.0 - 1e-9),
        _ => 300.0,
    };
    let mut gaps = Vec::with_capacity(m - 1);
    let mut prefix = 0.0;
    for l in 1..m {
        prefix += nu[l - 1];
        let c = -prefix * n_total as f64 / (kappa * l as f64 * (m - l) as f64);
        let g = match potential.regime() {
            Regime::LongRange => potential.big_psi_inverse(c.max(0.0))?.max(1e-3),
            Regime::Critical | Regime::ShortRange => {
                potential.phi_inverse(c.min(limit))?.clamp(1e-6, 1e6)
            }
        };
        gaps.push(g);
    }
    let mut y = vec![0.0; m];
    for i in 1..m {
        y[i] = y[i - 1] + gaps[i - 1];
    }
    let mean = y.iter().sum::<f64>() / m as f64;
    for v in &mut y {
        *v -= mean;
    }
    Ok(y)
}

/// Same solver from an explicit initial guess (the guess is sorted and
/// re-centered before iterating, so permuted guesses are equivalent).
pub fn solve_equilibrium_with_guess(
    nu: &[f64],
    kappa: f64,
    potential: &Potential,
    n_total: usize,
    guess: &[f64],
) -> Result<Vec<f64>> {
    let m = nu.len();
    if m < 2 || guess.len() != m {
        return Err(Error::InvalidParam(
            "window needs at least two entries and a matching guess".into(),
        ));
    }
    if n_total < m {
        return Err(Error::InvalidParam(format!(
            "n_total = {n_total} smaller than the window size {m}"
        )));
    }
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let sum: f64 = nu.iter().sum();
    let scale = nu.iter().map(|v| v.abs()).fold(1.0f64, f64::max);
    if sum.abs() > 1e-7 * scale * m as f64 {
        return Err(Error::InvalidParam(format!(
            "window natural velocities must sum to zero, got {sum:e}"
        )));
    }

    // All-identical natural velocities below beta = 1: the equilibrium is
    // full collapse onto the center of mass.
    if potential.regime() == Regime::LongRange && diameter(nu) == 0.0 {
        return Ok(vec![0.0; m]);
    }

    let mut y: Vec<f64> = guess.to_vec();
    y.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = y.iter().sum::<f64>() / m as f64;
    for v in &mut y {
        *v -= mean;
    }
    // Break exact coincidences in the guess.
    for i in 1..m {
        if y[i] <= y[i - 1] {
            y[i] = y[i - 1] + 1e-6;
        }
    }

    let nu_inf = nu.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let target = 1e-12 * (1.0 + nu_inf);
    let kn = kappa / n_total as f64;

    let mut res = vec![0.0; m];
    equilibrium_residual(nu, kappa, potential, n_total, &y, &mut res)?;
    let mut norm = residual_norm(&res);

    for _ in 0..200 {
        if norm <= target {
            return Ok(y);
        }
        // Jacobian: off-diagonal (kappa/N) psi(|y_k - y_i|), diagonal minus
        // the row sum.
        let mut jac = vec![vec![0.0; m]; m];
        for i in 0..m {
            let mut row_sum = 0.0;
            for k in 0..m {
                if k == i {
                    continue;
                }
                let w = kn * potential.psi(y[k] - y[i])?;
                jac[i][k] = w;
                row_sum += w;
            }
            jac[i][i] = -row_sum;
        }
        // Pin the translation null direction; the residual is orthogonal to
        // it, so the computed step stays zero-sum.
        let shift = jac.iter().enumerate().map(|(i, r)| r[i].abs()).sum::<f64>() / m as f64;
        let shift = shift.max(1e-12);
        for row in jac.iter_mut() {
            for v in row.iter_mut() {
                *v += shift / m as f64;
            }
        }
        let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
        let mut delta = solve_dense(jac, rhs)?;

        // Clamp the step so a near-flat far field cannot fling the iterate
        // out of the solvable region.
        let longest = delta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let reach = 2.0 * (1.0 + diameter(&y));
        if longest > reach {
            let f = reach / longest;
            for d in &mut delta {
                *d *= f;
            }
        }

        // Damping: halve until the residual decreases. Trial iterates must
        // stay in the ascending sector; the window is in spatial order and
        // its equilibrium keeps that order, while roots in reordered sectors
        // belong to different arrangements.
        let mut lambda = 1.0;
        let mut advanced = false;
        let mut trial = vec![0.0; m];
        let mut trial_res = vec![0.0; m];
        for _ in 0..60 {
            for i in 0..m {
                trial[i] = y[i] + lambda * delta[i];
            }
            let ascending = trial.windows(2).all(|w| w[1] > w[0]);
            if ascending {
                if let Ok(()) =
                    equilibrium_residual(nu, kappa, potential, n_total, &trial, &mut trial_res)
                {
                    let tn = residual_norm(&trial_res);
                    if tn.is_finite() && tn < norm {
                        y.copy_from_slice(&trial);
                        res.copy_from_slice(&trial_res);
                        norm = tn;
                        advanced = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !advanced {
            return Err(Error::Solver(format!(
                "no equilibrium found: damped step stalled at residual {norm:e}"
            )));
        }
        // Re-center against roundoff drift.
        let mean = y.iter().sum::<f64>() / m as f64;
        for v in &mut y {
            *v -= mean;
        }
    }
    Err(Error::Solver(format!(
        "no equilibrium found within 200 iterations; residual {norm:e}"
    )))
}

// ---------------------------------------------------------------------------
// Trajectory diagnostics
// ---------------------------------------------------------------------------

/// Per-pair slope classification over the trailing window.
#[derive(Debug, Clone, Serialize)]
pub struct PairClass {
    /// Zero-based adjacent rank (pair between sorted slots `rank` and
    /// `rank + 1`).
    pub rank: usize,
    pub slope: f64,
    pub bounded: bool,
}

/// Empirical cluster structure read off a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalClusters {
    pub boundaries: Vec<usize>,
    pub adjacent: Vec<PairClass>,
    pub threshold: f64,
}

impl EmpiricalClusters {
    pub fn count(&self) -> usize {
        self.boundaries.len() - 1
    }
}

fn fit_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in ts.iter().zip(ys) {
        num += (t - tm) * (y - ym);
        den += (t - tm) * (t - tm);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Slope threshold derived from a prediction: a thousandth of the largest
/// adjacent group-velocity gap, or 1e-3 absolute when one cluster is
/// predicted.
pub fn default_slope_threshold(prediction: &crate::clustering::ClusterPartition) -> f64 {
    let max_gap = prediction
        .group_velocities
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0f64, f64::max);
    if max_gap > 0.0 {
        1e-3 * max_gap
    } else {
        1e-3
    }
}

/// Classify adjacent pairs as bounded or diverging by the fitted slope of
/// their distance over the trailing `window_fraction` of samples, and cut the
/// partition at diverging pairs. Order preservation makes adjacency
/// sufficient.
pub fn empirical_clusters(
    traj: &Trajectory,
    window_fraction: f64,
    slope_threshold: f64,
) -> Result<EmpiricalClusters> {
    if !(0.0 < window_fraction && window_fraction <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "window fraction must lie in (0, 1], got {window_fraction}"
        )));
    }
    let samples = &traj.samples;
    if samples.len() < 3 {
        return Err(Error::Diagnostic(
            "trajectory too short for slope fits (need at least 3 samples)".into(),
        ));
    }
    let t_end = samples.last().unwrap().time;
    let t0 = samples[0].time;
    let t_cut = t_end - window_fraction * (t_end - t0);
    let window: Vec<&crate::integrator::Sample> =
        samples.iter().filter(|s| s.time >= t_cut).collect();
    if window.len() < 3 {
        return Err(Error::Diagnostic(
            "trailing window holds fewer than 3 samples".into(),
        ));
    }

    // Spatial order at the end of the run (crossings may have reordered the
    // initial indexing below beta = 1).
    let last = window.last().unwrap();
    let n = last.positions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| last.positions[a].partial_cmp(&last.positions[b]).unwrap());

    let ts: Vec<f64> = window.iter().map(|s| s.time).collect();
    let mut adjacent = Vec::with_capacity(n - 1);
    let mut boundaries = vec![0];
    for rank in 0..n - 1 {
        let (a, b) = (order[rank], order[rank + 1]);
        let ds: Vec<f64> = window
            .iter()
            .map(|s| (s.positions[b] - s.positions[a]).abs())
            .collect();
        let slope = fit_slope(&ts, &ds);
        let bounded = slope < slope_threshold;
        if !bounded {
            boundaries.push(rank + 1);
        }
        adjacent.push(PairClass {
            rank,
            slope,
            bounded,
        });
    }
    boundaries.push(n);
    Ok(EmpiricalClusters {
        boundaries,
        adjacent,
        threshold: slope_threshold,
    })
}

/// Diameter and minimum-distance time series plus a fitted exponential decay
/// rate of the velocity diameter over the trailing half.
#[derive(Debug, Clone, Serialize)]
pub struct FlockingDiagnostics {
    pub times: Vec<f64>,
    pub d_x: Vec<f64>,
    pub d_v: Vec<f64>,
    pub d_1: Vec<f64>,
    /// Negative slope of `ln d_v`; `None` when the velocity diameter is flat
    /// at numerical zero (reported as exact alignment instead).
    pub fitted_rate: Option<f64>,
    pub exact_alignment: bool,
}

pub fn flocking_diagnostics(traj: &Trajectory) -> Result<FlockingDiagnostics> {
    let samples = &traj.samples;
    if samples.len() < 2 {
        return Err(Error::Diagnostic(
            "trajectory has fewer than 2 samples".into(),
        ));
    }
    let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let d_x: Vec<f64> = samples.iter().map(|s| diameter(&s.positions)).collect();
    let d_v: Vec<f64> = samples.iter().map(|s| diameter(&s.velocities)).collect();
    let d_1: Vec<f64> = samples.iter().map(|s| s.min_gap).collect();

    let v_scale = samples[0]
        .velocities
        .iter()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let half = samples.len() / 2;
    let tail_ts = &times[half..];
    let tail_dv = &d_v[half..];
    let exact = tail_dv.iter().all(|&v| v <= 1e-13 * v_scale);
    let fitted_rate = if exact || tail_ts.len() < 3 {
        None
    } else {
        let logs: Vec<f64> = tail_dv
            .iter()
            .map(|&v| v.max(f64::EPSILON).ln())
            .collect();
        Some(-fit_slope(tail_ts, &logs))
    };
    Ok(FlockingDiagnostics {
        times,
        d_x,
        d_v,
        d_1,
        fitted_rate,
        exact_alignment: exact,
    })
}

/// Outcome of one bound check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct Claim {
    pub name: String,
    pub status: ClaimStatus,
    pub detail: String,
}

fn claim(name: &str, status: ClaimStatus, detail: String) -> Claim {
    Claim {
        name: name.into(),
        status,
        detail,
    }
}

/// Check a trajectory against the report's bound constants, one claim per
/// bound. Bounds whose hypotheses the instance does not meet come back
/// inconclusive rather than failed.
pub fn verify_bounds(traj: &Trajectory, report: &BoundsReport) -> Vec<Claim> {
    let mut claims = Vec::new();
    let samples = &traj.samples;
    if samples.len() < 2 {
        claims.push(claim(
            "sampling",
            ClaimStatus::Inconclusive,
            "trajectory too short to verify bounds".into(),
        ));
        return claims;
    }
    let slack = 1.0 + 1e-9;

    if let Some(bound) = report.diameter_bound {
        let mut status = ClaimStatus::Pass;
        let mut detail = format!("position diameter stayed at or below {bound}");
        for s in samples {
            let d = diameter(&s.positions);
            if d > bound * slack {
                status = ClaimStatus::Fail;
                detail = format!("diameter {d} exceeded bound {bound} at t = {}", s.time);
                break;
            }
        }
        claims.push(claim("diameter-upper-bound", status, detail));
    }

    match (report.min_distance_bound, report.regime) {
        (Some(bound), Regime::LongRange) => {
            let mut status = ClaimStatus::Pass;
            let mut detail = format!("minimum pair distance stayed at or above {bound}");
            for s in samples {
                if s.min_gap < bound / slack {
                    status = ClaimStatus::Fail;
                    detail = format!(
                        "minimum distance {} fell below bound {bound} at t = {}",
                        s.min_gap, s.time
                    );
                    break;
                }
            }
            claims.push(claim("min-distance-lower-bound", status, detail));
        }
        (None, Regime::LongRange) => {
            claims.push(claim(
                "min-distance-lower-bound",
                ClaimStatus::Inconclusive,
                "natural velocities are not strictly increasing; the bound does not apply".into(),
            ));
        }
        _ => {}
    }

    if let Some(floor) = report.diameter_floor {
        let mut status = ClaimStatus::Pass;
        let mut detail = format!("position diameter stayed at or above {floor}");
        for s in samples {
            let d = diameter(&s.positions);
            if d < floor / slack {
                status = ClaimStatus::Fail;
                detail = format!("diameter {d} fell below floor {floor} at t = {}", s.time);
                break;
            }
        }
        claims.push(claim("diameter-lower-bound", status, detail));
    }

    if let Some(floor) = report.min_distance_floor {
        let mut status = ClaimStatus::Pass;
        let mut detail = format!("minimum pair distance stayed at or above {floor}");
        for s in samples {
            if s.min_gap < floor / slack {
                status = ClaimStatus::Fail;
                detail = format!(
                    "minimum distance {} fell below floor {floor} at t = {}",
                    s.min_gap, s.time
                );
                break;
            }
        }
        claims.push(claim("min-distance-lower-bound", status, detail));
    }

    if report.regime != Regime::LongRange {
        let initial_order: Vec<usize> = {
            let p0 = &samples[0].positions;
            let mut idx: Vec<usize> = (0..p0.len()).collect();
            idx.sort_by(|&a, &b| p0[a].partial_cmp(&p0[b]).unwrap());
            idx
        };
        let ok = samples.iter().all(|s| {
            initial_order
                .windows(2)
                .all(|w| s.positions[w[0]] < s.positions[w[1]])
        });
        claims.push(claim(
            "order-preservation",
            if ok {
                ClaimStatus::Pass
            } else {
                ClaimStatus::Fail
            },
            if ok {
                "position ordering identical at every sample".into()
            } else {
                "position ordering changed along the run".into()
            },
        ));
    }

    claims
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance;
    use crate::integrator::{integrate_first_order, IntegratorConfig};
    use crate::model::{natural_velocities, FirstOrderState, ModelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pot(beta: f64) -> Potential {
        Potential::new(beta).unwrap()
    }

    #[test]
    fn long_range_bounds_two_body() {
        let p = pot(0.5);
        let report = bounds_long_range(&[-1.0, 1.0], &[-1.0, 1.0], 1.0, &p).unwrap();
        // Balance separation for the gap: inverse of 2 sqrt(x) = 2.
        assert!((report.min_distance_bound.unwrap() - 1.0).abs() < 1e-14);
        assert!((report.diameter_bound.unwrap() - 2.0).abs() < 1e-14);
        let expected_rate = 1.0 / 2.0f64.sqrt();
        assert!((report.decay_rate.unwrap() - expected_rate).abs() < 1e-14);
        assert!(!report.min_distance_degenerate);
    }

    #[test]
    fn long_range_bounds_degenerate_and_unavailable() {
        let p = pot(0.5);
        let rep = bounds_long_range(&[-1.0, -1.0, 2.0], &[-1.0, 0.0, 1.0], 1.0, &p).unwrap();
        assert!(rep.min_distance_degenerate);
        assert_eq!(rep.min_distance_bound, Some(0.0));
        let rep = bounds_long_range(&[1.0, -1.0], &[-1.0, 1.0], 1.0, &p).unwrap();
        assert!(rep.min_distance_bound.is_none());
        assert!(rep.diameter_bound.is_some());
    }

    #[test]
    fn short_range_bounds_two_body() {
        let p = pot(2.0);
        let rep = bounds_short_range(&[-1.0, 1.0], &[-1.0, 1.0], 1.0, &p).unwrap();
        // Diameter floor: inverse of phi at -N D_nu / (2 kappa) = -2.
        assert!((rep.diameter_floor.unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(rep.chain.len(), 1);
        assert_eq!(rep.min_distance_floor, rep.diameter_floor);
        let s = rep.scaling_estimate.unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn chain_is_weakly_decreasing() {
        let p = pot(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(3..=5);
            let (x0, v0) = instance::generate_instance(&mut rng, n);
            let kappa: f64 = rng.random_range(0.2..3.0);
            let params = ModelParams::new(n, kappa, p).unwrap();
            let nu = natural_velocities(&params, &x0, &v0).unwrap();
            let rep = bounds_short_range(&nu, &x0, kappa, &p).unwrap();
            assert_eq!(rep.chain.len(), n * (n - 1) / 2);
            assert!(rep.chain.windows(2).all(|w| w[1] <= w[0]));
            assert!(rep.chain.iter().all(|&c| c > 0.0));
            assert_eq!(rep.min_distance_floor, rep.chain.last().copied());
        }
    }

    #[test]
    fn scaling_estimate_decreases_in_n() {
        let p = pot(2.0);
        let mut prev = f64::INFINITY;
        for n in 2..6 {
            let x0: Vec<f64> = (0..n).map(|i| i as f64 - (n - 1) as f64 / 2.0).collect();
            let nu = vec![0.0; n];
            let rep = bounds_short_range(&nu, &x0, 1.0, &p).unwrap();
            let s = rep.scaling_estimate.unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn equilibrium_two_body_analytic() {
        // Long-range: big_psi(d) = 2 at d = 1 balances nu = (-1, 1).
        let p = pot(0.5);
        let y = solve_equilibrium(&[-1.0, 1.0], 1.0, &p, 2).unwrap();
        assert!((y[0] + 0.5).abs() < 1e-8);
        assert!((y[1] - 0.5).abs() < 1e-8);

        // Short-range with zero natural velocities: unit gap (phi(1) = 0).
        let p = pot(2.0);
        let y = solve_equilibrium(&[0.0, 0.0], 1.0, &p, 2).unwrap();
        assert!((y[0] + 0.5).abs() < 1e-8);
        assert!((y[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn equilibrium_residual_small_and_guess_independent() {
        let p = pot(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let n = rng.random_range(2..=5);
            let mut nu = instance::generate_velocities(&mut rng, n);
            nu.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let kappa: f64 = rng.random_range(0.3..2.0);
            let y = solve_equilibrium(&nu, kappa, &p, n).unwrap();
            let mut res = vec![0.0; n];
            equilibrium_residual(&nu, kappa, &p, n, &y, &mut res).unwrap();
            assert!(residual_norm(&res) < 1e-10);

            // Random initializations agree after sorting.
            for _ in 0..3 {
                let guess: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let alt = solve_equilibrium_with_guess(&nu, kappa, &p, n, &guess).unwrap();
                for (a, b) in y.iter().zip(&alt) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn equilibrium_permuted_guesses_identical() {
        let p = pot(2.0);
        let nu = [-0.4, -0.1, 0.5];
        let base = solve_equilibrium_with_guess(&nu, 1.0, &p, 3, &[-1.0, 0.0, 1.0]).unwrap();
        let perm = solve_equilibrium_with_guess(&nu, 1.0, &p, 3, &[1.0, -1.0, 0.0]).unwrap();
        assert_eq!(base, perm);
    }

    #[test]
    fn equilibrium_identical_nu_collapses() {
        let p = pot(0.5);
        let y = solve_equilibrium(&[0.0, 0.0, 0.0], 1.0, &p, 3).unwrap();
        assert_eq!(y, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn dynamics_converge_to_equilibrium() {
        // Monotone natural velocities: collision-free flow converging
        // exponentially to the solved equilibrium.
        let p = pot(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let n = rng.random_range(2..=4);
            let kappa: f64 = rng.random_range(0.5..1.5);
            let x0 = instance::generate_positions(&mut rng, n);
            let mut nu = instance::generate_velocities(&mut rng, n);
            nu.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let params = ModelParams::new(n, kappa, p).unwrap();
            let rep = bounds_long_range(&nu, &x0, kappa, &p).unwrap();
            let rate = rep.decay_rate.unwrap();
            let t_end = 22.0 / rate;
            let st = FirstOrderState::new(x0, nu.clone()).unwrap();
            let cfg = IntegratorConfig {
                rtol: 1e-9,
                atol: 1e-12,
                sample_dt: Some(t_end / 50.0),
                ..Default::default()
            };
            let traj = integrate_first_order(&params, &st, &cfg, t_end).unwrap();
            let eq = solve_equilibrium(&nu, kappa, &p, n).unwrap();
            let last = traj.samples.last().unwrap();
            let mut end = last.positions.clone();
            end.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in end.iter().zip(&eq) {
                assert!((a - b).abs() < 1e-6, "end {a} vs equilibrium {b}");
            }

            // Post-flocking classification: a single cluster.
            let emp = empirical_clusters(&traj, 0.5, 1e-3).unwrap();
            assert_eq!(emp.count(), 1);

            // Fitted decay rate, measured on a horizon short enough that the
            // trailing window stays above the integration noise floor (the
            // realized decay can be much faster than the closed-form rate
            // when equilibrium gaps are tiny). The fit must come out at
            // least as fast as the closed-form lower bound.
            let mut horizon = 8.0 / rate;
            for _ in 0..12 {
                let cfg_fit = IntegratorConfig {
                    rtol: 1e-9,
                    atol: 1e-12,
                    sample_dt: Some(horizon / 60.0),
                    ..Default::default()
                };
                let short = integrate_first_order(&params, &st, &cfg_fit, horizon).unwrap();
                let diag = flocking_diagnostics(&short).unwrap();
                let tail_min = diag.d_v[diag.d_v.len() / 2..]
                    .iter()
                    .fold(f64::INFINITY, |m, &v| m.min(v));
                if tail_min < 1e-7 {
                    horizon *= 0.5;
                    continue;
                }
                let fitted = diag.fitted_rate.unwrap();
                assert!(
                    fitted >= rate * 0.99,
                    "fitted rate {fitted} below the closed-form bound {rate}"
                );
                break;
            }
        }
    }

    #[test]
    fn verify_bounds_passes_on_compliant_run() {
        let p = pot(0.5);
        let x0 = [-1.0, 0.2, 0.8];
        let nu = [-0.5, 0.1, 0.4];
        let (x0, nu, _) = crate::model::normalize(&x0, &nu);
        let params = ModelParams::new(3, 1.0, p).unwrap();
        let st = FirstOrderState::new(x0.clone(), nu.clone()).unwrap();
        let traj = integrate_first_order(&params, &st, &IntegratorConfig::default(), 30.0).unwrap();
        let rep = bounds_long_range(&nu, &x0, 1.0, &p).unwrap();
        let claims = verify_bounds(&traj, &rep);
        assert!(
            claims.iter().all(|c| c.status == ClaimStatus::Pass),
            "{claims:?}"
        );
    }

    #[test]
    fn verify_bounds_flags_violation() {
        // Tamper with the report to force a failure with a recorded time.
        let p = pot(0.5);
        let (x0, nu, _) = crate::model::normalize(&[-1.0, 1.0], &[-0.5, 0.5]);
        let params = ModelParams::new(2, 1.0, p).unwrap();
        let st = FirstOrderState::new(x0.clone(), nu.clone()).unwrap();
        let traj = integrate_first_order(&params, &st, &IntegratorConfig::default(), 5.0).unwrap();
        let mut rep = bounds_long_range(&nu, &x0, 1.0, &p).unwrap();
        rep.diameter_bound = Some(1e-3);
        let claims = verify_bounds(&traj, &rep);
        let dia = claims
            .iter()
            .find(|c| c.name == "diameter-upper-bound")
            .unwrap();
        assert_eq!(dia.status, ClaimStatus::Fail);
        assert!(dia.detail.contains("at t ="));
    }

    #[test]
    fn empirical_clusters_two_body() {
        let p = pot(2.0);
        let params = ModelParams::new(2, 2.0, p).unwrap();
        // kappa below the critical value 4: two clusters.
        let nu = natural_velocities(&params, &[-1.0, 1.0], &[-1.0, 1.0]).unwrap();
        let st = FirstOrderState::new(vec![-1.0, 1.0], nu.clone()).unwrap();
        let cfg = IntegratorConfig {
            sample_dt: Some(1.0),
            ..Default::default()
        };
        let traj = integrate_first_order(&params, &st, &cfg, 200.0).unwrap();
        let prediction = crate::clustering::predict_first_order(&nu, 2.0, &p).unwrap();
        assert_eq!(prediction.count(), 2);
        let thr = default_slope_threshold(&prediction);
        let emp = empirical_clusters(&traj, 0.5, thr).unwrap();
        assert_eq!(emp.boundaries, prediction.boundaries);

        // Separating clusters: the diameter grows linearly at the group
        // velocity gap.
        let diag = flocking_diagnostics(&traj).unwrap();
        let half = diag.times.len() / 2;
        let slope = {
            let ts = &diag.times[half..];
            let ds = &diag.d_x[half..];
            let tm = ts.iter().sum::<f64>() / ts.len() as f64;
            let dm = ds.iter().sum::<f64>() / ds.len() as f64;
            let num: f64 = ts.iter().zip(ds).map(|(t, d)| (t - tm) * (d - dm)).sum();
            let den: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
            num / den
        };
        let gap = prediction.group_velocities[1] - prediction.group_velocities[0];
        assert!(
            (slope - gap).abs() < 0.05 * gap,
            "separation slope {slope} vs predicted gap {gap}"
        );
    }

    #[test]
    fn verify_bounds_inconclusive_without_hypothesis() {
        // Non-monotone natural velocities: the pairwise floor does not apply
        // and its claim must come back inconclusive rather than failed.
        let p = pot(0.5);
        let (x0, nu, _) = crate::model::normalize(&[-1.0, 0.0, 1.0], &[0.5, -0.7, 0.2]);
        let params = ModelParams::new(3, 1.0, p).unwrap();
        let st = FirstOrderState::new(x0.clone(), nu.clone()).unwrap();
        let traj = integrate_first_order(&params, &st, &IntegratorConfig::default(), 5.0).unwrap();
        let rep = bounds_long_range(&nu, &x0, 1.0, &p).unwrap();
        assert!(rep.min_distance_bound.is_none());
        let claims = verify_bounds(&traj, &rep);
        let c = claims
            .iter()
            .find(|c| c.name == "min-distance-lower-bound")
            .unwrap();
        assert_eq!(c.status, ClaimStatus::Inconclusive);
    }

    #[test]
    fn diagnostics_on_constant_state() {
        let p = pot(2.0);
        let params = ModelParams::new(2, 1.0, p).unwrap();
        let st = crate::model::SecondOrderState::new(vec![-0.5, 0.5], vec![0.0, 0.0]).unwrap();
        let traj = crate::integrator::integrate_second_order(
            &params,
            &st,
            &IntegratorConfig::default(),
            5.0,
        )
        .unwrap();
        let d = flocking_diagnostics(&traj).unwrap();
        assert!(d.exact_alignment);
        assert!(d.fitted_rate.is_none());
        assert!(d.d_x.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let emp = empirical_clusters(&traj, 0.5, 1e-3).unwrap();
        assert_eq!(emp.count(), 1);
    }

    #[test]
    fn short_trajectory_is_diagnostic_error() {
        let p = pot(2.0);
        let params = ModelParams::new(2, 1.0, p).unwrap();
        let st = crate::model::SecondOrderState::new(vec![-0.5, 0.5], vec![0.0, 0.0]).unwrap();
        let cfg = IntegratorConfig {
            sample_dt: Some(10.0),
            ..Default::default()
        };
        let traj = crate::integrator::integrate_second_order(&params, &st, &cfg, 1.0).unwrap();
        assert!(matches!(
            empirical_clusters(&traj, 0.5, 1e-3),
            Err(Error::Diagnostic(_))
        ));
    }
}
