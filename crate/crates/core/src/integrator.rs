//! Adaptive time integration of both model orders with event handling.
//!
//! The stepper is an embedded Dormand-Prince 5(4) pair with a free fourth-order
//! dense output. Below beta = 1 the field is continuous but not Lipschitz at
//! contact; the integrator relies on error control alone there (no
//! regularization) and handles the two kinds of contact events: transversal
//! crossings, which are logged and integrated through, and sticking contacts
//! between groups with matching natural velocities, which merge coordinates.
//! At beta >= 1 collisions cannot happen, so any trial step that permutes the
//! position ordering is rejected outright, and the step size is additionally
//! capped by the closing rate of the nearest pair.

use std::io::Write;

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{FirstOrderState, ModelParams, SecondOrderState, Shift};
use crate::potential::{Potential, Regime};

// Dormand-Prince 5(4) tableau.
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Dense-output coefficients.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

/// Contact event between two particle groups, reported with the smallest
/// original particle index on each side (zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub i: usize,
    pub j: usize,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    /// Transversal collision of two groups with opposing natural-velocity
    /// order; the flow continues through it.
    Crossing,
    /// Contact of two groups with matching natural velocities; the groups
    /// merge permanently.
    Sticking,
}

/// Step-size and event-detection knobs. `None` thresholds are derived from
/// the initial state: `eps_stick` defaults to 1e-7 times the initial diameter
/// and `eps_nu` to 1e-9 * (1 + max |nu|).
#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub eps_stick: Option<f64>,
    pub eps_nu: Option<f64>,
    pub min_step: f64,
    pub max_step: f64,
    pub sample_dt: Option<f64>,
    /// Step cap factor against the closing rate of the nearest pair
    /// (beta >= 1 only).
    pub c_cap: f64,
    /// Refine crossing times by bisection on the dense output. Off by
    /// default: the flow is continuous through crossings, so trajectory
    /// accuracy does not depend on the event time.
    pub refine_events: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            eps_stick: None,
            eps_nu: None,
            min_step: 1e-12,
            max_step: f64::INFINITY,
            sample_dt: None,
            c_cap: 0.2,
            refine_events: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("min_step", self.min_step),
            ("c_cap", self.c_cap),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParam(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        // max_step may be infinite (no cap), but not NaN or nonpositive.
        if self.max_step.is_nan() || self.max_step <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "max_step must be positive, got {}",
                self.max_step
            )));
        }
        if let Some(dt) = self.sample_dt {
            if !dt.is_finite() || dt <= 0.0 {
                return Err(Error::InvalidParam(format!(
                    "sample_dt must be positive, got {dt}"
                )));
            }
        }
        for (name, v) in [("eps_stick", self.eps_stick), ("eps_nu", self.eps_nu)] {
            if let Some(v) = v {
                if !v.is_finite() || v <= 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "{name} must be positive, got {v}"
                    )));
                }
            }
        }
        if self.min_step >= self.max_step {
            return Err(Error::InvalidParam(
                "min_step must be smaller than max_step".into(),
            ));
        }
        Ok(())
    }
}

/// Step-cap policy for beta >= 1: the accepted step never exceeds
/// `c_cap * d_min / v_rel_max`, the minimal pair distance over the fastest
/// closing rate. With no closing pair the cap is inactive.
pub fn capped_step(proposed: f64, d_min: f64, v_rel_max: f64, c_cap: f64) -> f64 {
    if v_rel_max > 0.0 && d_min.is_finite() {
        proposed.min(c_cap * d_min / v_rel_max)
    } else {
        proposed
    }
}

/// One state snapshot, expanded to one entry per original particle so the
/// column layout is stable across sticking merges.
#[derive(Debug, Clone)]
pub struct Sample {
    pub time: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub weights: Vec<u32>,
    /// Minimal distance between distinct active coordinates at this time
    /// (infinite once everything has merged into one group).
    pub min_gap: f64,
}

#[derive(Debug, Clone)]
pub enum FinalState {
    First(FirstOrderState),
    Second(SecondOrderState),
}

/// Integration output: sampled states, the typed event log, and the exact
/// grouped end state (usable to resume a run).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: ModelParams,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub final_state: FinalState,
    pub shift: Option<Shift>,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.params.n()
    }

    pub fn is_second_order(&self) -> bool {
        matches!(self.final_state, FinalState::Second(_))
    }

    pub fn final_first(&self) -> Option<&FirstOrderState> {
        match &self.final_state {
            FinalState::First(s) => Some(s),
            FinalState::Second(_) => None,
        }
    }

    /// CSV export with header `t,x_1..x_N,v_1..v_N,w_1..w_N`. Merged
    /// particles repeat the shared coordinate so the column count is stable.
    /// The seed comment line keeps generated runs reproducible from the file
    /// alone.
    pub fn write_csv<W: Write>(&self, mut w: W, seed: Option<u64>) -> Result<()> {
        match seed {
            Some(s) => writeln!(w, "# seed={s}")?,
            None => writeln!(w, "# seed=none")?,
        }
        let n = self.n();
        let mut header = String::from("t");
        for i in 1..=n {
            header.push_str(&format!(",x_{i}"));
        }
        for i in 1..=n {
            header.push_str(&format!(",v_{i}"));
        }
        for i in 1..=n {
            header.push_str(&format!(",w_{i}"));
        }
        writeln!(w, "{header}")?;
        for s in &self.samples {
            let mut row = format!("{}", s.time);
            for x in &s.positions {
                row.push_str(&format!(",{x}"));
            }
            for v in &s.velocities {
                row.push_str(&format!(",{v}"));
            }
            for wt in &s.weights {
                row.push_str(&format!(",{wt}"));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    /// Events as a JSON array of `{kind, i, j, t}` with one-based particle
    /// indices matching the CSV columns.
    pub fn events_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.events
                .iter()
                .map(|e| {
                    json!({
                        "kind": match e.kind {
                            EventKind::Crossing => "crossing",
                            EventKind::Sticking => "sticking",
                        },
                        "i": e.i + 1,
                        "j": e.j + 1,
                        "t": e.time,
                    })
                })
                .collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// Dormand-Prince core
// ---------------------------------------------------------------------------

struct StepAttempt {
    y_new: Vec<f64>,
    err: f64,
    k: Vec<Vec<f64>>,
}

fn dopri5_try_step<F>(
    f: &mut F,
    t: f64,
    y: &[f64],
    h: f64,
    k1: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<StepAttempt>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    k[0].copy_from_slice(k1);
    let mut yt = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    for s in 1..7 {
        let row = &A[s - 1];
        for i in 0..n {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate().take(s) {
                acc += row[j] * kj[i];
            }
            yt[i] = y[i] + h * acc;
        }
        if s == 6 {
            // The 7th stage is evaluated at the candidate solution (FSAL).
            y_new.copy_from_slice(&yt);
        }
        let ts = t + C[s - 1] * h;
        let (head, tail) = k.split_at_mut(s);
        let _ = head;
        f(ts, &yt, &mut tail[0])?;
        if tail[0].iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite field value in stage".into()));
        }
    }

    let mut err_sq = 0.0;
    for i in 0..n {
        let mut e = 0.0;
        for (j, kj) in k.iter().enumerate() {
            e += E[j] * kj[i];
        }
        e *= h;
        let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
        let r = e / sc;
        err_sq += r * r;
    }
    let err = (err_sq / n as f64).sqrt();
    Ok(StepAttempt { y_new, err, k })
}

/// Quartic continuous extension over one accepted step.
struct DenseOutput {
    t0: f64,
    h: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseOutput {
    fn new(t0: f64, h: f64, y0: &[f64], y1: &[f64], k: &[Vec<f64>]) -> Self {
        let n = y0.len();
        let mut r1 = vec![0.0; n];
        let mut r2 = vec![0.0; n];
        let mut r3 = vec![0.0; n];
        let mut r4 = vec![0.0; n];
        let mut r5 = vec![0.0; n];
        for i in 0..n {
            let ydiff = y1[i] - y0[i];
            r1[i] = y0[i];
            r2[i] = ydiff;
            r3[i] = h * k[0][i] - ydiff;
            r4[i] = ydiff - h * k[6][i] - r3[i];
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += D[j] * kj[i];
            }
            r5[i] = h * acc;
        }
        Self {
            t0,
            h,
            rcont: [r1, r2, r3, r4, r5],
        }
    }

    fn eval_component(&self, theta: f64, i: usize) -> f64 {
        let [r1, r2, r3, r4, r5] = &self.rcont;
        let th1 = 1.0 - theta;
        r1[i] + theta * (r2[i] + th1 * (r3[i] + theta * (r4[i] + th1 * r5[i])))
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        let theta = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.eval_component(theta, i);
        }
    }

    /// Bisect `x_b - x_a` over `[lo, hi]` (in step fractions) to the
    /// requested absolute time tolerance. The bracket must change sign.
    fn bisect_root_in(&self, a: usize, b: usize, mut lo: f64, mut hi: f64, tol_t: f64) -> f64 {
        let g = |theta: f64| self.eval_component(theta, b) - self.eval_component(theta, a);
        let glo = g(lo);
        if glo == 0.0 {
            return self.t0 + lo * self.h;
        }
        for _ in 0..80 {
            if (hi - lo) * self.h.abs() <= tol_t {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm == 0.0 {
                return self.t0 + mid * self.h;
            }
            if (gm > 0.0) == (glo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.t0 + 0.5 * (lo + hi) * self.h
    }

    fn bisect_pair_root(&self, a: usize, b: usize, tol_t: f64) -> f64 {
        self.bisect_root_in(a, b, 0.0, 1.0, tol_t)
    }
}

/// First contact of a matched-velocity pair inside one accepted step, if any.
///
/// Sticking contact is not transversal (the pair distance flattens into the
/// contact), so endpoint sign checks can miss it entirely: the pair may graze
/// zero or cross and return within a single step. The dense output is scanned
/// on a fine grid for either a sign change (bisected to the flip time) or an
/// approach below the sticking window.
fn scan_contact(
    dense: &DenseOutput,
    a: usize,
    b: usize,
    y0: &[f64],
    eps_stick: f64,
    t: f64,
    h: f64,
) -> Option<f64> {
    let s0 = y0[b] - y0[a];
    if s0 == 0.0 || s0.abs() < eps_stick {
        return Some(t);
    }
    const GRID: usize = 64;
    let mut prev_sign = s0 > 0.0;
    let mut prev_theta = 0.0f64;
    for q in 1..=GRID {
        let theta = q as f64 / GRID as f64;
        let d = dense.eval_component(theta, b) - dense.eval_component(theta, a);
        if d == 0.0 {
            return Some(t + theta * h);
        }
        if (d > 0.0) != prev_sign {
            return Some(dense.bisect_root_in(a, b, prev_theta, theta, 1e-10));
        }
        if d.abs() < eps_stick {
            return Some(t + theta * h);
        }
        prev_sign = d > 0.0;
        prev_theta = theta;
    }
    None
}

fn initial_step(y: &[f64], k1: &[f64], horizon: f64, rtol: f64, atol: f64) -> f64 {
    let n = y.len() as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..y.len() {
        let sc = atol + rtol * y[i].abs();
        d0 += (y[i] / sc).powi(2);
        d1 += (k1[i] / sc).powi(2);
    }
    d0 = (d0 / n).sqrt();
    d1 = (d1 / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * horizon.max(1.0)
    } else {
        0.01 * d0 / d1
    };
    h0.min(horizon / 10.0)
}

fn growth_factor(err: f64, rejected_before: bool) -> f64 {
    let fac = if err == 0.0 {
        FAC_MAX
    } else {
        (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
    };
    if rejected_before {
        fac.min(1.0)
    } else {
        fac
    }
}

fn shrink_factor(err: f64) -> f64 {
    (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0)
}

fn diameter(x: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in x {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if x.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

fn argsort(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    idx
}

fn is_ordered(x: &[f64], perm: &[usize]) -> bool {
    perm.windows(2).all(|w| x[w[0]] < x[w[1]])
}

fn closest_pair(x: &[f64], perm: &[usize]) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::INFINITY);
    for w in perm.windows(2) {
        let d = x[w[1]] - x[w[0]];
        if d < best.2 {
            best = (w[0], w[1], d);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// First-order integration
// ---------------------------------------------------------------------------

/// Velocity field on raw group coordinates; shared by the stepper stages and
/// the public [`rhs_first_order`].
#[allow(clippy::too_many_arguments)]
fn first_order_field(
    pot: &Potential,
    kappa: f64,
    n_total: usize,
    long_range: bool,
    x: &[f64],
    nu: &[f64],
    w: &[u32],
    out: &mut [f64],
) -> Result<()> {
    let m = x.len();
    let kn = kappa / n_total as f64;
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
                    "active particles {g} and {h} coincide (beta >= 1)"
                )));
            }
            acc += w[h] as f64 * pot.interaction(d)?;
        }
        out[g] = nu[g] + kn * acc;
    }
    Ok(())
}

struct SampleScheduler {
    t0: f64,
    dt: f64,
    t_end: f64,
    next: usize,
}

impl SampleScheduler {
    fn new(t0: f64, dt: f64, t_end: f64) -> Self {
        Self {
            t0,
            dt,
            t_end,
            next: 1,
        }
    }

    /// Sample times in (from, to], grid-aligned so cadence does not drift.
    fn take_until(&mut self, to: f64) -> Vec<f64> {
        let mut out = Vec::new();
        loop {
            let ts = self.t0 + self.next as f64 * self.dt;
            if ts > to + 1e-14 * self.t_end.abs().max(1.0) || ts > self.t_end {
                break;
            }
            out.push(ts.min(self.t_end));
            self.next += 1;
        }
        out
    }
}

fn min_group_gap(x: &[f64]) -> f64 {
    let m = x.len();
    let mut best = f64::INFINITY;
    for a in 0..m {
        for b in (a + 1)..m {
            best = best.min((x[b] - x[a]).abs());
        }
    }
    best
}

fn expand_sample(
    time: f64,
    group_x: &[f64],
    group_v: &[f64],
    weights: &[u32],
    members: &[Vec<usize>],
    n: usize,
) -> Sample {
    let mut positions = vec![0.0; n];
    let mut velocities = vec![0.0; n];
    let mut w_out = vec![0u32; n];
    for (g, mem) in members.iter().enumerate() {
        for &i in mem {
            positions[i] = group_x[g];
            velocities[i] = group_v[g];
            w_out[i] = weights[g];
        }
    }
    Sample {
        time,
        positions,
        velocities,
        weights: w_out,
        min_gap: min_group_gap(group_x),
    }
}

fn representative_pair(members_a: &[usize], members_b: &[usize]) -> (usize, usize) {
    let ra = *members_a.iter().min().unwrap();
    let rb = *members_b.iter().min().unwrap();
    (ra.min(rb), ra.max(rb))
}

/// Integrate the first-order reduction from `state0` to `t_end`.
///
/// Below beta = 1 crossings are logged and sticking contacts merge groups;
/// at beta >= 1 the position ordering is enforced by step rejection and the
/// closing-rate cap.
pub fn integrate_first_order(
    params: &ModelParams,
    state0: &FirstOrderState,
    config: &IntegratorConfig,
    t_end: f64,
) -> Result<Trajectory> {
    config.validate()?;
    if !t_end.is_finite() {
        return Err(Error::Config(format!("t_end must be finite, got {t_end}")));
    }
    let t0 = state0.time();
    if t_end <= t0 {
        return Err(Error::Config(format!(
            "t_end = {t_end} must exceed the initial time {t0}"
        )));
    }
    if state0.total_n() != params.n() {
        return Err(Error::InvalidParam(format!(
            "state carries {} particles but params expect {}",
            state0.total_n(),
            params.n()
        )));
    }
    let pot = *params.potential();
    let long_range = pot.regime() == Regime::LongRange;
    let kappa = params.kappa();
    let n_total = params.n();

    let mut st = state0.clone();
    if !long_range {
        if st.group_count() != st.total_n() {
            return Err(Error::InvalidParam(
                "merged groups are only meaningful below beta = 1".into(),
            ));
        }
        let perm = argsort(st.positions());
        if !is_ordered(st.positions(), &perm) {
            return Err(Error::Domain(
                "coincident initial positions are not allowed for beta >= 1".into(),
            ));
        }
    }
    let perm = argsort(st.positions());

    let nu_max = st
        .natural_velocities()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let eps_nu = config.eps_nu.unwrap_or(1e-9 * (1.0 + nu_max));
    let eps_stick = config.eps_stick.unwrap_or(1e-7 * diameter(st.positions()));

    let horizon = t_end - t0;
    let sample_dt = config.sample_dt.unwrap_or(horizon / 400.0);
    let mut scheduler = SampleScheduler::new(t0, sample_dt, t_end);
    let mut samples = Vec::new();
    let mut events: Vec<Event> = Vec::new();

    let mut t = t0;
    let mut y = st.positions().to_vec();
    let mut k1 = vec![0.0; y.len()];
    first_order_field(
        &pot,
        kappa,
        n_total,
        long_range,
        &y,
        st.natural_velocities(),
        st.weights(),
        &mut k1,
    )?;
    samples.push(expand_sample(
        t,
        &y,
        &k1,
        st.weights(),
        st.members(),
        n_total,
    ));

    let mut h = initial_step(&y, &k1, horizon, config.rtol, config.atol)
        .clamp(config.min_step, config.max_step);
    let mut rejected_before = false;
    let time_eps = 1e-14 * horizon.max(t_end.abs());

    while t < t_end - time_eps {
        h = h.clamp(config.min_step, config.max_step).min(t_end - t);
        if !long_range {
            let (_, _, d_min) = closest_pair(&y, &perm);
            let mut v_rel_max = 0.0f64;
            for w in perm.windows(2) {
                v_rel_max = v_rel_max.max(k1[w[0]] - k1[w[1]]);
            }
            h = capped_step(h, d_min, v_rel_max, config.c_cap);
            if h < config.min_step {
                let (i, j, d) = closest_pair(&y, &perm);
                return Err(stiffness_error(&st, t, i, j, d, h, config.min_step));
            }
        }

        let nu_now = st.natural_velocities().to_vec();
        let w_now = st.weights().to_vec();
        let attempt = {
            let mut f = |ts: f64, ys: &[f64], out: &mut [f64]| -> Result<()> {
                let _ = ts;
                if !long_range && !is_ordered(ys, &perm) {
                    return Err(Error::Domain("ordering violated in stage".into()));
                }
                first_order_field(&pot, kappa, n_total, long_range, ys, &nu_now, &w_now, out)
            };
            dopri5_try_step(&mut f, t, &y, h, &k1, config.rtol, config.atol)
        };

        let attempt = match attempt {
            Ok(a) => a,
            Err(_) => {
                let hn = 0.5 * h;
                if hn < config.min_step {
                    let (i, j, d) = closest_pair(&y, &perm);
                    return Err(stiffness_error(&st, t, i, j, d, hn, config.min_step));
                }
                h = hn;
                rejected_before = true;
                continue;
            }
        };

        if !long_range && !is_ordered(&attempt.y_new, &perm) {
            let hn = 0.5 * h;
            if hn < config.min_step {
                let (i, j, d) = closest_pair(&y, &perm);
                return Err(stiffness_error(&st, t, i, j, d, hn, config.min_step));
            }
            h = hn;
            rejected_before = true;
            continue;
        }

        if attempt.err > 1.0 {
            let hn = h * shrink_factor(attempt.err);
            if hn < config.min_step {
                let (i, j, d) = closest_pair(&y, &perm);
                return Err(stiffness_error(&st, t, i, j, d, hn, config.min_step));
            }
            h = hn;
            rejected_before = true;
            continue;
        }

        // Accepted.
        let dense = DenseOutput::new(t, h, &y, &attempt.y_new, &attempt.k);
        let t_step_end = t + h;
        let mut cut_time = t_step_end;
        let mut merge_pair: Option<(usize, usize)> = None;

        if long_range {
            // Matched-velocity pairs: scan the step interior for contact.
            // Other pairs: transversal crossings flip the endpoint sign.
            let mut sticking_contacts: Vec<(usize, usize, f64)> = Vec::new();
            let mut crossing_flips: Vec<(usize, usize)> = Vec::new();
            let m = y.len();
            for a in 0..m {
                for b in (a + 1)..m {
                    if (nu_now[a] - nu_now[b]).abs() <= eps_nu {
                        if let Some(tc) = scan_contact(&dense, a, b, &y, eps_stick, t, h) {
                            sticking_contacts.push((a, b, tc));
                        }
                    } else {
                        let s_old = y[b] - y[a];
                        let s_new = attempt.y_new[b] - attempt.y_new[a];
                        if s_old != 0.0 && s_new != 0.0 && (s_old > 0.0) != (s_new > 0.0) {
                            crossing_flips.push((a, b));
                        }
                    }
                }
            }
            if let Some(&(a, b, tc)) = sticking_contacts
                .iter()
                .min_by(|x, y| x.2.partial_cmp(&y.2).unwrap())
            {
                cut_time = tc.max(t);
                merge_pair = Some((a, b));
                for &(ca, cb) in &crossing_flips {
                    let tcross = dense.bisect_pair_root(ca, cb, 1e-10);
                    if tcross <= cut_time {
                        let (i, j) = representative_pair(&st.members()[ca], &st.members()[cb]);
                        events.push(Event {
                            kind: EventKind::Crossing,
                            i,
                            j,
                            time: tcross,
                        });
                    }
                    // Flips past the cut have not happened yet; they will be
                    // re-detected after the merge truncates the step.
                }
            } else {
                for &(ca, cb) in &crossing_flips {
                    let tcross = if config.refine_events {
                        dense.bisect_pair_root(ca, cb, 1e-10)
                    } else {
                        t_step_end
                    };
                    let (i, j) = representative_pair(&st.members()[ca], &st.members()[cb]);
                    events.push(Event {
                        kind: EventKind::Crossing,
                        i,
                        j,
                        time: tcross,
                    });
                }
            }
        }

        // Emit pending samples up to the (possibly truncated) step end.
        for ts in scheduler.take_until(cut_time) {
            let mut xs = vec![0.0; y.len()];
            dense.eval(ts, &mut xs);
            let mut vs = vec![0.0; y.len()];
            first_order_field(
                &pot, kappa, n_total, long_range, &xs, &nu_now, &w_now, &mut vs,
            )?;
            samples.push(expand_sample(
                ts,
                &xs,
                &vs,
                st.weights(),
                st.members(),
                n_total,
            ));
        }

        if let Some((a, b)) = merge_pair {
            let mut xs = vec![0.0; y.len()];
            dense.eval(cut_time, &mut xs);
            st.positions_mut().copy_from_slice(&xs);
            st.set_time(cut_time);
            let (i, j) = representative_pair(&st.members()[a], &st.members()[b]);
            events.push(Event {
                kind: EventKind::Sticking,
                i,
                j,
                time: cut_time,
            });
            st.merge(a, b);
            merge_by_proximity(&mut st, eps_stick, eps_nu, cut_time, &mut events);
            t = cut_time;
            y = st.positions().to_vec();
            k1 = vec![0.0; y.len()];
            first_order_field(
                &pot,
                kappa,
                n_total,
                long_range,
                &y,
                st.natural_velocities(),
                st.weights(),
                &mut k1,
            )?;
        } else {
            t = t_step_end;
            y = attempt.y_new.clone();
            st.positions_mut().copy_from_slice(&y);
            st.set_time(t);
            let merged = if long_range {
                merge_by_proximity(&mut st, eps_stick, eps_nu, t, &mut events)
            } else {
                false
            };
            if merged {
                y = st.positions().to_vec();
                k1 = vec![0.0; y.len()];
                first_order_field(
                    &pot,
                    kappa,
                    n_total,
                    long_range,
                    &y,
                    st.natural_velocities(),
                    st.weights(),
                    &mut k1,
                )?;
            } else {
                k1 = attempt.k[6].clone();
            }
        }

        h *= growth_factor(attempt.err, rejected_before);
        rejected_before = false;
    }

    // Final sample exactly at t_end.
    let needs_final = samples
        .last()
        .map(|s| (s.time - t_end).abs() > time_eps)
        .unwrap_or(true);
    if needs_final {
        let mut vs = vec![0.0; y.len()];
        first_order_field(
            &pot,
            kappa,
            n_total,
            long_range,
            &y,
            st.natural_velocities(),
            st.weights(),
            &mut vs,
        )?;
        samples.push(expand_sample(
            t_end,
            &y,
            &vs,
            st.weights(),
            st.members(),
            n_total,
        ));
    }
    st.set_time(t_end);

    Ok(Trajectory {
        params: *params,
        samples,
        events,
        final_state: FinalState::First(st),
        shift: None,
    })
}

fn stiffness_error(
    st: &FirstOrderState,
    t: f64,
    gi: usize,
    gj: usize,
    d: f64,
    step: f64,
    min_step: f64,
) -> Error {
    let (i, j) = representative_pair(&st.members()[gi], &st.members()[gj]);
    Error::Stiffness {
        time: t,
        i,
        j,
        distance: d,
        step,
        min_step,
    }
}

/// Merge every group pair within the sticking window (near-contact and
/// near-equal natural velocities), cascading until stable.
fn merge_by_proximity(
    st: &mut FirstOrderState,
    eps_stick: f64,
    eps_nu: f64,
    time: f64,
    events: &mut Vec<Event>,
) -> bool {
    let mut merged_any = false;
    loop {
        let m = st.group_count();
        let mut target: Option<(usize, usize)> = None;
        'outer: for a in 0..m {
            for b in (a + 1)..m {
                let close = (st.positions()[b] - st.positions()[a]).abs() < eps_stick;
                let matched =
                    (st.natural_velocities()[b] - st.natural_velocities()[a]).abs() <= eps_nu;
                if close && matched {
                    target = Some((a, b));
                    break 'outer;
                }
            }
        }
        match target {
            Some((a, b)) => {
                let (i, j) = representative_pair(&st.members()[a], &st.members()[b]);
                events.push(Event {
                    kind: EventKind::Sticking,
                    i,
                    j,
                    time,
                });
                st.merge(a, b);
                merged_any = true;
            }
            None => break,
        }
    }
    merged_any
}

// ---------------------------------------------------------------------------
// Second-order integration
// ---------------------------------------------------------------------------

fn second_order_field(
    pot: &Potential,
    kappa: f64,
    n: usize,
    y: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let (x, v) = y.split_at(n);
    let kn = kappa / n as f64;
    for i in 0..n {
        out[i] = v[i];
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
        out[n + i] = kn * acc;
    }
    Ok(())
}

/// Integrate the second-order system directly. Requires beta >= 1; below the
/// critical exponent the dynamics are integrated through the first-order
/// reduction instead.
pub fn integrate_second_order(
    params: &ModelParams,
    state0: &SecondOrderState,
    config: &IntegratorConfig,
    t_end: f64,
) -> Result<Trajectory> {
    config.validate()?;
    if !t_end.is_finite() {
        return Err(Error::Config(format!("t_end must be finite, got {t_end}")));
    }
    let t0 = state0.time();
    if t_end <= t0 {
        return Err(Error::Config(format!(
            "t_end = {t_end} must exceed the initial time {t0}"
        )));
    }
    let pot = *params.potential();
    if pot.regime() == Regime::LongRange {
        return Err(Error::Regime {
            operation: "integrate_second_order",
            required: "critical or short-range",
            actual: pot.regime(),
            beta: pot.beta(),
        });
    }
    let n = state0.n();
    if n != params.n() {
        return Err(Error::InvalidParam(format!(
            "state carries {n} particles but params expect {}",
            params.n()
        )));
    }
    let perm = argsort(state0.positions());
    if !is_ordered(state0.positions(), &perm) {
        return Err(Error::Domain(
            "coincident initial positions are not allowed for beta >= 1".into(),
        ));
    }
    let kappa = params.kappa();

    let horizon = t_end - t0;
    let sample_dt = config.sample_dt.unwrap_or(horizon / 400.0);
    let mut scheduler = SampleScheduler::new(t0, sample_dt, t_end);
    let mut samples = Vec::new();

    let mut t = t0;
    let mut y: Vec<f64> = state0
        .positions()
        .iter()
        .chain(state0.velocities())
        .copied()
        .collect();
    let mut k1 = vec![0.0; 2 * n];
    second_order_field(&pot, kappa, n, &y, &mut k1)?;

    let weights = vec![1u32; n];
    let push_sample = |samples: &mut Vec<Sample>, tcur: f64, ycur: &[f64]| {
        let (x, v) = ycur.split_at(n);
        samples.push(Sample {
            time: tcur,
            positions: x.to_vec(),
            velocities: v.to_vec(),
            weights: weights.clone(),
            min_gap: min_group_gap(x),
        });
    };
    push_sample(&mut samples, t, &y);

    let mut h = initial_step(&y, &k1, horizon, config.rtol, config.atol)
        .clamp(config.min_step, config.max_step);
    let mut rejected_before = false;
    let time_eps = 1e-14 * horizon.max(t_end.abs());

    while t < t_end - time_eps {
        h = h.clamp(config.min_step, config.max_step).min(t_end - t);
        {
            let (x, v) = y.split_at(n);
            let (_, _, d_min) = closest_pair(x, &perm);
            let mut v_rel_max = 0.0f64;
            for w in perm.windows(2) {
                v_rel_max = v_rel_max.max(v[w[0]] - v[w[1]]);
            }
            h = capped_step(h, d_min, v_rel_max, config.c_cap);
            if h < config.min_step {
                let (i, j, d) = closest_pair(x, &perm);
                return Err(Error::Stiffness {
                    time: t,
                    i,
                    j,
                    distance: d,
                    step: h,
                    min_step: config.min_step,
                });
            }
        }

        let attempt = {
            let mut f = |ts: f64, ys: &[f64], out: &mut [f64]| -> Result<()> {
                let _ = ts;
                if !is_ordered(&ys[..n], &perm) {
                    return Err(Error::Domain("ordering violated in stage".into()));
                }
                second_order_field(&pot, kappa, n, ys, out)
            };
            dopri5_try_step(&mut f, t, &y, h, &k1, config.rtol, config.atol)
        };

        let reject = |h: f64, factor: f64| -> Result<f64> {
            let hn = h * factor;
            if hn < config.min_step {
                let (x, _) = y.split_at(n);
                let (i, j, d) = closest_pair(x, &perm);
                return Err(Error::Stiffness {
                    time: t,
                    i,
                    j,
                    distance: d,
                    step: hn,
                    min_step: config.min_step,
                });
            }
            Ok(hn)
        };

        let attempt = match attempt {
            Ok(a) => a,
            Err(_) => {
                h = reject(h, 0.5)?;
                rejected_before = true;
                continue;
            }
        };
        if !is_ordered(&attempt.y_new[..n], &perm) {
            h = reject(h, 0.5)?;
            rejected_before = true;
            continue;
        }
        if attempt.err > 1.0 {
            h = reject(h, shrink_factor(attempt.err))?;
            rejected_before = true;
            continue;
        }

        let dense = DenseOutput::new(t, h, &y, &attempt.y_new, &attempt.k);
        let t_step_end = t + h;
        for ts in scheduler.take_until(t_step_end) {
            let mut ys = vec![0.0; 2 * n];
            dense.eval(ts, &mut ys);
            push_sample(&mut samples, ts, &ys);
        }
        t = t_step_end;
        y = attempt.y_new.clone();
        k1 = attempt.k[6].clone();
        h *= growth_factor(attempt.err, rejected_before);
        rejected_before = false;
    }

    let needs_final = samples
        .last()
        .map(|s| (s.time - t_end).abs() > time_eps)
        .unwrap_or(true);
    if needs_final {
        push_sample(&mut samples, t_end, &y);
    }

    let (x, v) = y.split_at(n);
    Ok(Trajectory {
        params: *params,
        samples,
        events: Vec::new(),
        final_state: FinalState::Second(SecondOrderState::from_parts(
            x.to_vec(),
            v.to_vec(),
            t_end,
        )),
        shift: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{natural_velocities, rhs_first_order};
    use crate::potential::Potential;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(n: usize, kappa: f64, beta: f64) -> ModelParams {
        ModelParams::new(n, kappa, Potential::new(beta).unwrap()).unwrap()
    }

    fn first_state(x: &[f64], nu: &[f64]) -> FirstOrderState {
        FirstOrderState::new(x.to_vec(), nu.to_vec()).unwrap()
    }

    #[test]
    fn cap_policy_identity() {
        // Inactive when nothing closes.
        assert_eq!(capped_step(0.5, 1.0, 0.0, 0.2), 0.5);
        assert_eq!(capped_step(0.5, 1.0, -3.0, 0.2), 0.5);
        // Active cap: 0.2 * d_min / v_rel.
        assert_eq!(capped_step(0.5, 1.0, 10.0, 0.2), 0.2 * 1.0 / 10.0);
        // Shrinks proportionally with the closing distance.
        assert_eq!(capped_step(0.5, 0.01, 10.0, 0.2), 0.2 * 0.01 / 10.0);
    }

    #[test]
    fn dense_output_matches_fine_integration() {
        // Two-body long-range field, smooth regimes only.
        let p = params(2, 1.0, 0.5);
        let st = first_state(&[-1.0, 1.0], &[-0.3, 0.3]);
        let cfg = IntegratorConfig {
            rtol: 1e-10,
            atol: 1e-12,
            sample_dt: Some(0.037),
            ..Default::default()
        };
        let traj = integrate_first_order(&p, &st, &cfg, 1.0).unwrap();
        // Reference: positions at the sample times from a much finer sweep.
        let cfg_ref = IntegratorConfig {
            rtol: 1e-12,
            atol: 1e-14,
            sample_dt: Some(0.037),
            ..Default::default()
        };
        let reference = integrate_first_order(&p, &st, &cfg_ref, 1.0).unwrap();
        assert_eq!(traj.samples.len(), reference.samples.len());
        for (a, b) in traj.samples.iter().zip(&reference.samples) {
            assert!((a.time - b.time).abs() < 1e-12);
            for (xa, xb) in a.positions.iter().zip(&b.positions) {
                assert!((xa - xb).abs() < 1e-8, "dense output drift: {xa} vs {xb}");
            }
        }
    }

    #[test]
    fn two_body_sticking_at_unit_time() {
        // Equal natural velocities, unit initial gap: contact at exactly t = 1
        // for beta = 1/2, kappa = 1. The merge must be detected just before.
        let p = params(2, 1.0, 0.5);
        let st = first_state(&[-0.5, 0.5], &[0.0, 0.0]);
        let traj = integrate_first_order(&p, &st, &IntegratorConfig::default(), 2.0).unwrap();
        assert_eq!(traj.events.len(), 1);
        let e = traj.events[0];
        assert_eq!(e.kind, EventKind::Sticking);
        assert!(e.time <= 1.0 * 1.001, "sticking at {}", e.time);
        assert!(e.time > 0.9, "sticking suspiciously early at {}", e.time);
        // Stuck thereafter: expanded coordinates coincide.
        let final_st = traj.final_first().unwrap();
        assert_eq!(final_st.group_count(), 1);
        for s in traj.samples.iter().filter(|s| s.time > e.time) {
            assert_eq!(s.positions[0], s.positions[1]);
            assert_eq!(s.weights, vec![2, 2]);
        }
    }

    #[test]
    fn trichotomy_never_collide() {
        let p = params(2, 1.0, 0.5);
        let st = first_state(&[-1.0, 1.0], &[-1.0, 1.0]);
        let traj = integrate_first_order(&p, &st, &IntegratorConfig::default(), 30.0).unwrap();
        assert!(traj.events.is_empty());
        // Gap converges to the balance separation big_psi_inverse(2 / 1).
        let d_inf = p.potential().big_psi_inverse(2.0).unwrap();
        let last = traj.samples.last().unwrap();
        assert!(((last.positions[1] - last.positions[0]) - d_inf).abs() < 1e-5);
    }

    #[test]
    fn trichotomy_exactly_one_crossing() {
        let p = params(2, 1.0, 0.5);
        let st = first_state(&[-1.0, 1.0], &[1.0, -1.0]);
        let cfg = IntegratorConfig {
            refine_events: true,
            ..Default::default()
        };
        let traj = integrate_first_order(&p, &st, &cfg, 30.0).unwrap();
        assert_eq!(traj.events.len(), 1);
        assert_eq!(traj.events[0].kind, EventKind::Crossing);
        // Order is swapped at the end.
        let last = traj.samples.last().unwrap();
        assert!(last.positions[0] > last.positions[1]);
    }

    #[test]
    fn trichotomy_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..60 {
            let gap: f64 = rng.random_range(0.2..3.0);
            let dv: f64 = rng.random_range(0.1..1.5);
            let kappa: f64 = rng.random_range(0.3..2.0);
            let p = params(2, kappa, 0.5);
            let (nu, expect) = match case % 3 {
                0 => (vec![-dv, dv], None),
                1 => (vec![dv, -dv], Some(EventKind::Crossing)),
                _ => (vec![0.0, 0.0], Some(EventKind::Sticking)),
            };
            let st = first_state(&[-gap / 2.0, gap / 2.0], &nu);
            let traj = integrate_first_order(&p, &st, &IntegratorConfig::default(), 20.0).unwrap();
            match expect {
                None => assert!(traj.events.is_empty(), "case {case}: expected no events"),
                Some(kind) => {
                    assert_eq!(traj.events.len(), 1, "case {case}");
                    assert_eq!(traj.events[0].kind, kind, "case {case}");
                }
            }
        }
    }

    #[test]
    fn finite_event_count_with_ties() {
        // Duplicated natural velocities force stickings alongside crossings.
        let nu_raw = [1.0, 1.0, -0.5, -0.5, -1.0];
        let x_raw = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let (x, nu, _) = crate::model::normalize(&x_raw, &nu_raw);
        let p = params(5, 1.0, 0.5);
        let st = first_state(&x, &nu);
        let traj = integrate_first_order(&p, &st, &IntegratorConfig::default(), 60.0).unwrap();
        let n = 5;
        assert!(traj.events.len() <= n * (n - 1) / 2);
        let stickings = traj
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Sticking)
            .count();
        assert_eq!(stickings, 2);
    }

    #[test]
    fn sticking_permanence_and_restart() {
        let p = params(3, 1.0, 0.5);
        let (x, nu, _) = crate::model::normalize(&[-1.0, 0.0, 2.0], &[0.1, 0.1, -0.2]);
        let st = first_state(&x, &nu);
        let cfg = IntegratorConfig::default();
        let full = integrate_first_order(&p, &st, &cfg, 40.0).unwrap();
        let halfway = integrate_first_order(&p, &st, &cfg, 20.0).unwrap();
        let mid_state = halfway.final_first().unwrap().clone();
        assert!(mid_state.group_count() < 3, "expected a merge by t = 20");
        let resumed = integrate_first_order(&p, &mid_state, &cfg, 40.0).unwrap();
        // Group count never grows again.
        assert!(resumed.final_first().unwrap().group_count() <= mid_state.group_count());
        // The resumed tail reproduces the full run.
        let tail_full = full.samples.last().unwrap();
        let tail_res = resumed.samples.last().unwrap();
        for (a, b) in tail_full.positions.iter().zip(&tail_res.positions) {
            assert!((a - b).abs() < 1e-6, "restart mismatch: {a} vs {b}");
        }
    }

    #[test]
    fn order_preserved_short_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = 4;
            let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            x.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (x, v, _) = crate::model::normalize(&x, &v);
            if x.windows(2).any(|w| w[1] - w[0] < 1e-3) {
                continue;
            }
            let p = params(n, 1.0, 2.0);
            let st = SecondOrderState::new(x, v).unwrap();
            let traj = integrate_second_order(&p, &st, &IntegratorConfig::default(), 10.0).unwrap();
            for s in &traj.samples {
                assert!(
                    s.positions.windows(2).all(|w| w[0] < w[1]),
                    "ordering violated at t = {}",
                    s.time
                );
            }
            // Velocity diameter never increases along samples.
            let mut prev = f64::INFINITY;
            for s in &traj.samples {
                let dv = diameter(&s.velocities);
                assert!(dv <= prev * (1.0 + 1e-9) + 1e-12);
                prev = dv;
            }
        }
    }

    #[test]
    fn conservation_along_run() {
        let p = params(4, 1.2, 0.5);
        let (x, nu, _) = crate::model::normalize(&[-1.5, -0.2, 0.4, 1.9], &[0.4, -0.6, 0.5, -0.3]);
        let st = first_state(&x, &nu);
        let traj = integrate_first_order(&p, &st, &IntegratorConfig::default(), 25.0).unwrap();
        let scale = traj.samples[0]
            .positions
            .iter()
            .fold(1.0f64, |m, v| m.max(v.abs()));
        for s in &traj.samples {
            // Expanded rows list each original particle once, so the plain
            // mean is the conserved weighted mean.
            let mean: f64 = s.positions.iter().sum::<f64>() / s.positions.len() as f64;
            assert!(
                mean.abs() <= 1e-9 * scale,
                "drift {mean:e} at t = {}",
                s.time
            );
        }
    }

    #[test]
    fn identical_velocities_stay_uniform_second_order() {
        let p = params(3, 1.0, 2.0);
        let st = SecondOrderState::new(vec![-1.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]).unwrap();
        let traj = integrate_second_order(&p, &st, &IntegratorConfig::default(), 5.0).unwrap();
        let last = traj.samples.last().unwrap();
        for (i, &x) in last.positions.iter().enumerate() {
            assert!((x - st.positions()[i]).abs() < 1e-12);
        }
        assert!(last.velocities.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn momentum_conserved_second_order() {
        let p = params(3, 1.5, 1.0);
        let (x, v, _) = crate::model::normalize(&[-1.0, 0.1, 1.2], &[0.5, -0.2, -0.3]);
        let st = SecondOrderState::new(x, v).unwrap();
        let traj = integrate_second_order(&p, &st, &IntegratorConfig::default(), 20.0).unwrap();
        for s in &traj.samples {
            let pv: f64 = s.velocities.iter().sum();
            let px: f64 = s.positions.iter().sum();
            assert!(pv.abs() < 1e-9);
            assert!(px.abs() < 1e-9);
        }
        // Sample times strictly increase.
        assert!(traj.samples.windows(2).all(|w| w[0].time < w[1].time));
    }

    /// Two-body run at the critical exponent: the velocity diameter decays
    /// under the exponential envelope built from the realized diameter bound.
    #[test]
    fn critical_exponent_two_body_envelope() {
        let p = params(2, 1.0, 1.0);
        let st = SecondOrderState::new(vec![-1.0, 1.0], vec![0.4, -0.4]).unwrap();
        let cfg = IntegratorConfig {
            rtol: 1e-10,
            atol: 1e-13,
            sample_dt: Some(0.05),
            ..Default::default()
        };
        let traj = integrate_second_order(&p, &st, &cfg, 15.0).unwrap();
        let d_hat = traj
            .samples
            .iter()
            .map(|s| diameter(&s.positions))
            .fold(0.0f64, f64::max);
        let rate = p.kappa() * p.potential().psi(d_hat).unwrap();
        let d_v0 = diameter(&traj.samples[0].velocities);
        for s in &traj.samples {
            let envelope = d_v0 * (-rate * s.time).exp() * 1.05 + 1e-12;
            assert!(diameter(&s.velocities) <= envelope, "t = {}", s.time);
        }
    }

    #[test]
    fn convergence_with_tolerance() {
        // Collision-free long-range instance; end-state error shrinks as the
        // tolerance tightens.
        let p = params(3, 1.0, 0.5);
        let (x, nu, _) = crate::model::normalize(&[-1.0, 0.0, 1.0], &[-1.0, 0.1, 0.9]);
        let st = first_state(&x, &nu);
        let t_end = 5.0;
        let run = |rtol: f64| {
            let cfg = IntegratorConfig {
                rtol,
                atol: rtol * 1e-3,
                sample_dt: Some(t_end),
                ..Default::default()
            };
            integrate_first_order(&p, &st, &cfg, t_end)
                .unwrap()
                .samples
                .last()
                .unwrap()
                .positions
                .clone()
        };
        let reference = run(1e-12);
        let err = |rtol: f64| -> f64 {
            run(rtol)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let e4 = err(1e-4);
        let e6 = err(1e-6);
        let e8 = err(1e-8);
        assert!(e6 < e4, "e6 = {e6}, e4 = {e4}");
        assert!(e8 < e6, "e8 = {e8}, e6 = {e6}");
        assert!(e8 < 1e-7);
    }

    #[test]
    fn csv_layout_is_stable_across_merges() {
        let p = params(2, 1.0, 0.5);
        let st = first_state(&[-0.5, 0.5], &[0.0, 0.0]);
        let traj = integrate_first_order(&p, &st, &IntegratorConfig::default(), 2.0).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, Some(7)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# seed=7");
        assert_eq!(lines.next().unwrap(), "t,x_1,x_2,v_1,v_2,w_1,w_2");
        let cols = lines.next().unwrap().split(',').count();
        assert_eq!(cols, 7);
        for line in text.lines().skip(2) {
            assert_eq!(line.split(',').count(), 7);
        }
        let ev = traj.events_json();
        let arr = ev.as_array().unwrap();
        assert_eq!(arr.len(), 1);
        assert_eq!(arr[0]["kind"], "sticking");
        assert_eq!(arr[0]["i"], 1);
        assert_eq!(arr[0]["j"], 2);
    }

    #[test]
    fn rejects_bad_horizons() {
        let p = params(2, 1.0, 0.5);
        let st = first_state(&[-0.5, 0.5], &[0.0, 0.0]);
        let cfg = IntegratorConfig::default();
        assert!(matches!(
            integrate_first_order(&p, &st, &cfg, f64::NAN),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            integrate_first_order(&p, &st, &cfg, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn first_order_field_matches_public_rhs() {
        let p = params(3, 1.1, 0.5);
        let st = first_state(&[-1.0, 0.3, 0.7], &[0.2, -0.3, 0.1]);
        let by_rhs = rhs_first_order(&p, &st).unwrap();
        let mut by_field = vec![0.0; 3];
        first_order_field(
            p.potential(),
            p.kappa(),
            3,
            true,
            st.positions(),
            st.natural_velocities(),
            st.weights(),
            &mut by_field,
        )
        .unwrap();
        assert_eq!(by_rhs, by_field);
    }

    /// Differentiating the first-order trajectory recovers the second-order
    /// fields on a collision-free window: sampled velocities match central
    /// differences of positions, and the alignment acceleration matches
    /// central differences of the sampled velocities.
    #[test]
    fn first_order_reduction_matches_second_order_field() {
        let p = params(3, 1.0, 0.5);
        let (x, nu, _) = crate::model::normalize(&[-1.2, 0.1, 1.1], &[-0.8, 0.1, 0.7]);
        let st = first_state(&x, &nu);
        let dt = 0.01;
        let cfg = IntegratorConfig {
            rtol: 1e-10,
            atol: 1e-13,
            sample_dt: Some(dt),
            ..Default::default()
        };
        let traj = integrate_first_order(&p, &st, &cfg, 5.0).unwrap();
        assert!(traj.events.is_empty());
        for k in (1..traj.samples.len() - 1).step_by(17) {
            let (prev, cur, next) = (&traj.samples[k - 1], &traj.samples[k], &traj.samples[k + 1]);
            let h = next.time - prev.time;
            for i in 0..3 {
                let fd_v = (next.positions[i] - prev.positions[i]) / h;
                assert!(
                    (fd_v - cur.velocities[i]).abs() < 1e-3,
                    "velocity mismatch at t = {}: {fd_v} vs {}",
                    cur.time,
                    cur.velocities[i]
                );
            }
            let state =
                crate::model::SecondOrderState::new(cur.positions.clone(), cur.velocities.clone())
                    .unwrap();
            let (_, a) = crate::model::rhs_second_order(&p, &state).unwrap();
            for (i, ai) in a.iter().enumerate() {
                let fd_a = (next.velocities[i] - prev.velocities[i]) / h;
                assert!(
                    (fd_a - ai).abs() < 1e-3,
                    "acceleration mismatch at t = {}: {fd_a} vs {ai}",
                    cur.time,
                );
            }
        }
    }

    /// Shifting the frame by (c, u) shifts the trajectory by c + u t exactly:
    /// with integer shifts the normalized data is bit-identical, so the
    /// reconstruction through the shift record is exact.
    #[test]
    fn translation_covariance_via_shift_record() {
        let p = params(3, 1.0, 0.5);
        let x_base = [-1.0, 0.0, 1.0];
        let nu_base = [-0.5, 0.0, 0.5];
        let (c, u) = (2.0, 1.0);
        let x_shifted: Vec<f64> = x_base.iter().map(|v| v + c).collect();
        let nu_shifted: Vec<f64> = nu_base.iter().map(|v| v + u).collect();
        let (xn, nn, shift) = crate::model::normalize(&x_shifted, &nu_shifted);
        assert_eq!(shift.mean_position, c);
        assert_eq!(shift.mean_velocity, u);
        assert_eq!(xn, x_base.to_vec());
        assert_eq!(nn, nu_base.to_vec());

        let cfg = IntegratorConfig {
            sample_dt: Some(0.5),
            ..Default::default()
        };
        let base = integrate_first_order(&p, &first_state(&x_base, &nu_base), &cfg, 8.0).unwrap();
        let moved = integrate_first_order(&p, &first_state(&xn, &nn), &cfg, 8.0).unwrap();
        for (a, b) in base.samples.iter().zip(&moved.samples) {
            for (xa, xb) in a.positions.iter().zip(&b.positions) {
                let reconstructed = xb + shift.mean_position + shift.mean_velocity * a.time;
                let expected = xa + c + u * a.time;
                assert_eq!(reconstructed, expected);
            }
        }
    }

    #[test]
    fn first_order_beta_geq_one_orders_enforced() {
        // First-order integration also applies the ordering guard at beta >= 1.
        let p = params(2, 1.0, 2.0);
        let nu = natural_velocities(&p, &[-1.0, 1.0], &[-1.0, 1.0]).unwrap();
        let st = first_state(&[-1.0, 1.0], &nu);
        let traj = integrate_first_order(&p, &st, &IntegratorConfig::default(), 20.0).unwrap();
        assert!(traj.events.is_empty());
        for s in &traj.samples {
            assert!(s.positions[0] < s.positions[1]);
        }
    }
}
