//! Model configuration, the first-order reduction, zero-mean normalization,
//! and the velocity fields of both orders.
//!
//! On the line the second-order alignment dynamics integrate once: each
//! particle keeps a conserved "natural velocity" and the positions follow a
//! first-order field built from the antiderivative of the communication
//! weight. All analysis and prediction in this crate runs on that reduction;
//! the second-order field is kept for direct integration at beta >= 1 and for
//! cross-checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{Potential, Regime};

/// Relative tolerance for zero-mean checks.
pub const FRAME_TOL: f64 = 1e-9;

/// Particle count, coupling strength and communication weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    n: usize,
    kappa: f64,
    potential: Potential,
}

impl ModelParams {
    pub fn new(n: usize, kappa: f64, potential: Potential) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParam(format!(
                "particle count must be at least 2, got {n}"
            )));
        }
        if !kappa.is_finite() || kappa <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "coupling strength must be positive, got {kappa}"
            )));
        }
        Ok(Self {
            n,
            kappa,
            potential,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    /// Same model at a different coupling strength.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(self.n, kappa, self.potential)
    }
}

/// Galilean shift removed by [`normalize`]; raw-frame trajectories are
/// recovered as `x(t) + mean_position + mean_velocity * t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub mean_position: f64,
    pub mean_velocity: f64,
}

/// Subtract the means from positions and velocities, returning the shifted
/// data and the shift record.
pub fn normalize(x: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>, Shift) {
    let xm = mean(x);
    let vm = mean(v);
    (
        x.iter().map(|&a| a - xm).collect(),
        v.iter().map(|&a| a - vm).collect(),
        Shift {
            mean_position: xm,
            mean_velocity: vm,
        },
    )
}

fn mean(a: &[f64]) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        a.iter().sum::<f64>() / a.len() as f64
    }
}

fn check_zero_mean(label: &str, values: &[f64], weights: Option<&[u32]>) -> Result<()> {
    let (sum, scale) = match weights {
        Some(w) => (
            values
                .iter()
                .zip(w)
                .map(|(&v, &w)| v * w as f64)
                .sum::<f64>(),
            values
                .iter()
                .zip(w)
                .map(|(&v, &w)| (v * w as f64).abs())
                .fold(0.0f64, f64::max),
        ),
        None => (
            values.iter().sum::<f64>(),
            values.iter().map(|v| v.abs()).fold(0.0f64, f64::max),
        ),
    };
    if sum.abs() > FRAME_TOL * scale.max(1.0) * values.len() as f64 {
        return Err(Error::Normalization(format!(
            "{label} sums to {sum:e}; normalize the input first or enable auto-normalization"
        )));
    }
    Ok(())
}

fn check_finite(label: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "{label} contains non-finite entries"
        )));
    }
    Ok(())
}

/// State of the first-order reduction. Coordinates represent groups of stuck
/// particles: `weights[g]` counts the original particles sharing coordinate
/// `g` and `members[g]` lists their original indices. A fresh state has one
/// singleton group per particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderState {
    positions: Vec<f64>,
    natural_velocities: Vec<f64>,
    weights: Vec<u32>,
    members: Vec<Vec<usize>>,
    time: f64,
}

impl FirstOrderState {
    /// Build a state of singleton groups from zero-mean data.
    pub fn new(positions: Vec<f64>, natural_velocities: Vec<f64>) -> Result<Self> {
        if positions.len() != natural_velocities.len() || positions.len() < 2 {
            return Err(Error::InvalidParam(
                "positions and natural velocities must have equal length >= 2".into(),
            ));
        }
        check_finite("positions", &positions)?;
        check_finite("natural velocities", &natural_velocities)?;
        check_zero_mean("weighted position sum", &positions, None)?;
        check_zero_mean("weighted natural-velocity sum", &natural_velocities, None)?;
        let n = positions.len();
        Ok(Self {
            positions,
            natural_velocities,
            weights: vec![1; n],
            members: (0..n).map(|i| vec![i]).collect(),
            time: 0.0,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn natural_velocities(&self) -> &[f64] {
        &self.natural_velocities
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub(crate) fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub(crate) fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    /// Number of active coordinates (groups).
    pub fn group_count(&self) -> usize {
        self.positions.len()
    }

    /// Total particle count, counting multiplicities.
    pub fn total_n(&self) -> usize {
        self.weights.iter().map(|&w| w as usize).sum()
    }

    /// Positions expanded back to one entry per original particle index.
    pub fn expand_positions(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.total_n()];
        for (g, members) in self.members.iter().enumerate() {
            for &m in members {
                out[m] = self.positions[g];
            }
        }
        out
    }

    /// Group weight expanded per original particle index.
    pub fn expand_weights(&self) -> Vec<u32> {
        let mut out = vec![0; self.total_n()];
        for (g, members) in self.members.iter().enumerate() {
            for &m in members {
                out[m] = self.weights[g];
            }
        }
        out
    }

    /// Merge groups `a` and `b` (weight-summed, weight-averaged position and
    /// natural velocity). Total momentum is preserved exactly.
    pub(crate) fn merge(&mut self, a: usize, b: usize) {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let wa = self.weights[a] as f64;
        let wb = self.weights[b] as f64;
        let w = wa + wb;
        self.positions[a] = (wa * self.positions[a] + wb * self.positions[b]) / w;
        self.natural_velocities[a] =
            (wa * self.natural_velocities[a] + wb * self.natural_velocities[b]) / w;
        self.weights[a] += self.weights[b];
        let mut moved = std::mem::take(&mut self.members[b]);
        self.members[a].append(&mut moved);
        self.positions.remove(b);
        self.natural_velocities.remove(b);
        self.weights.remove(b);
        self.members.remove(b);
    }

    /// Weighted mean position (a conserved quantity of the flow).
    pub fn weighted_mean_position(&self) -> f64 {
        let total: f64 = self
            .positions
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| x * w as f64)
            .sum();
        total / self.total_n() as f64
    }
}

/// State of the second-order system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderState {
    positions: Vec<f64>,
    velocities: Vec<f64>,
    time: f64,
}

impl SecondOrderState {
    pub fn new(positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if positions.len() != velocities.len() || positions.len() < 2 {
            return Err(Error::InvalidParam(
                "positions and velocities must have equal length >= 2".into(),
            ));
        }
        check_finite("positions", &positions)?;
        check_finite("velocities", &velocities)?;
        check_zero_mean("position sum", &positions, None)?;
        check_zero_mean("velocity sum", &velocities, None)?;
        Ok(Self {
            positions,
            velocities,
            time: 0.0,
        })
    }

    pub(crate) fn from_parts(positions: Vec<f64>, velocities: Vec<f64>, time: f64) -> Self {
        Self {
            positions,
            velocities,
            time,
        }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }
}

/// Natural velocities of the first-order reduction from second-order initial
/// data: `nu_i = v_i - (kappa/N) sum_k P(x_k - x_i)` with `P` the
/// regime-appropriate antiderivative. Inputs must be zero-mean; positions
/// must be pairwise distinct when beta >= 1.
pub fn natural_velocities(params: &ModelParams, x0: &[f64], v0: &[f64]) -> Result<Vec<f64>> {
    let n = params.n();
    if x0.len() != n || v0.len() != n {
        return Err(Error::InvalidParam(format!(
            "expected {n} positions and velocities, got {} and {}",
            x0.len(),
            v0.len()
        )));
    }
    check_zero_mean("position sum", x0, None)?;
    check_zero_mean("velocity sum", v0, None)?;
    let pot = params.potential();
    let long_range = pot.regime() == Regime::LongRange;
    let kn = params.kappa() / n as f64;
    let mut nu = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = 0.0;
        for k in 0..n {
            if k == i {
                continue;
            }
            let dx = x0[k] - x0[i];
            if dx == 0.0 {
                if long_range {
                    continue; // interaction vanishes at contact below beta = 1
                }
                return Err(Error::Domain(format!(
                    "particles {i} and {k} coincide; the potential is singular there for beta >= 1"
                )));
            }
            acc += pot.interaction(dx)?;
        }
        nu.push(v0[i] - kn * acc);
    }
    Ok(nu)
}

/// First-order velocity field
/// `dx_g/dt = nu_g + (kappa/N) sum_h w_h P(x_h - x_g)`, with `N` the total
/// particle count including multiplicities. Coincident distinct groups are
/// legal below beta = 1 (the interaction vanishes at contact) and a domain
/// error at or above it.
pub fn rhs_first_order(params: &ModelParams, state: &FirstOrderState) -> Result<Vec<f64>> {
    if state.total_n() != params.n() {
        return Err(Error::InvalidParam(format!(
            "state carries {} particles but params expect {}",
            state.total_n(),
            params.n()
        )));
    }
    let pot = params.potential();
    let long_range = pot.regime() == Regime::LongRange;
    let m = state.group_count();
    let x = state.positions();
    let nu = state.natural_velocities();
    let w = state.weights();
    let kn = params.kappa() / params.n() as f64;
    let mut dx = Vec::with_capacity(m);
    for g in 0..m {
        let mut acc = 0.0;
        for h in 0..m {
            if h == g {
                continue;
            }
            let d = x[h] - x[g];
            if d == 0.0 {
                if long_range {
                    continue;
                }
                return Err(Error::Domain(format!(
                    "active particles {g} and {h} coincide; the field is singular there for beta >= 1"
                )));
            }
            acc += w[h] as f64 * pot.interaction(d)?;
        }
        dx.push(nu[g] + kn * acc);
    }
    Ok(dx)
}

/// Second-order field: `dx_i/dt = v_i`,
/// `dv_i/dt = (kappa/N) sum_{j != i} psi(|x_i - x_j|) (v_j - v_i)`.
pub fn rhs_second_order(
    params: &ModelParams,
    state: &SecondOrderState,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = state.n();
    if n != params.n() {
        return Err(Error::InvalidParam(format!(
            "state carries {} particles but params expect {}",
            n,
            params.n()
        )));
    }
    let pot = params.potential();
    let x = state.positions();
    let v = state.velocities();
    let kn = params.kappa() / n as f64;
    let mut a = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = x[i] - x[j];
            if d == 0.0 {
                return Err(Error::Domain(format!(
                    "particles {i} and {j} coincide; the weight is singular there"
                )));
            }
            acc += pot.psi(d)? * (v[j] - v[i]);
        }
        a.push(kn * acc);
    }
    Ok((v.to_vec(), a))
}
