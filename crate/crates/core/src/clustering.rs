//! Closed-form prediction of asymptotic cluster formation and critical
//! coupling strengths for the short-range regime (beta > 1).
//!
//! Particles are indexed in spatial order, and natural velocities must be
//! supplied in that order; the algorithms never sort. A greedy left-to-right
//! scan builds each cluster as the largest window whose internal
//! velocity-fluctuation deficits are outweighed by the coupling drift
//! `kappa * (m - k) * phi_limit / N`. The strict `> 0` test means exact zero
//! ties break the cluster and are flagged as degenerate.

use crate::error::{Error, Result};
use crate::model::{natural_velocities, ModelParams};
use crate::potential::{Potential, Regime};

/// Tolerance for the zero-sum precondition on natural velocities.
const SUM_TOL: f64 = 1e-7;

/// Ordered partition of `{1..N}` into asymptotic clusters, with the predicted
/// group velocity of each cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    /// Boundary indices `0 = n_0 < n_1 < ... < n_p = N`; cluster `l` holds
    /// particles `(n_{l-1}, n_l]` in spatial order (zero-based half-open
    /// `[n_{l-1}, n_l)` over slice indices).
    pub boundaries: Vec<usize>,
    /// Asymptotic common velocity of each cluster.
    pub group_velocities: Vec<f64>,
    /// Smallest |value| among all strict inequalities the scan tested. Zero
    /// means an exact tie was hit (degenerate instance).
    pub min_margin: f64,
}

impl ClusterPartition {
    pub fn count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Cluster index of a zero-based particle index.
    pub fn cluster_of(&self, particle: usize) -> usize {
        self.boundaries
            .windows(2)
            .position(|w| particle < w[1])
            .unwrap_or(self.count() - 1)
    }

    pub fn is_degenerate(&self) -> bool {
        self.min_margin == 0.0
    }
}

/// Boundaries produced by the small-coupling limit algorithm, which drops the
/// drift term entirely. Group velocities are intentionally absent: without
/// the drift the limiting algorithm predicts membership only.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallKappaPartition {
    pub boundaries: Vec<usize>,
    /// Smallest |prefix-fluctuation mean| tested; near-zero values mean the
    /// prediction is fragile under any perturbation of the coupling.
    pub min_margin: f64,
}

impl SmallKappaPartition {
    pub fn count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn is_degenerate(&self) -> bool {
        self.min_margin == 0.0
    }
}

/// Local averages and fluctuations over a window `(a, b]` of spatially
/// ordered data (zero-based: slice indices `a..b`).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    pub window: (usize, usize),
    pub mean_nu: f64,
    pub mean_x: Option<f64>,
    pub fluct_nu: Vec<f64>,
    pub fluct_x: Option<Vec<f64>>,
}

impl LocalStats {
    pub fn new(window: (usize, usize), nu: &[f64], x: Option<&[f64]>) -> Result<Self> {
        let (a, b) = window;
        if a >= b || b > nu.len() {
            return Err(Error::InvalidParam(format!(
                "window ({a}, {b}] is empty or out of bounds for {} entries",
                nu.len()
            )));
        }
        let slice = &nu[a..b];
        let mean_nu = slice.iter().sum::<f64>() / slice.len() as f64;
        let fluct_nu = slice.iter().map(|v| v - mean_nu).collect();
        let (mean_x, fluct_x) = match x {
            Some(xs) => {
                let sl = &xs[a..b];
                let m = sl.iter().sum::<f64>() / sl.len() as f64;
                (Some(m), Some(sl.iter().map(|v| v - m).collect()))
            }
            None => (None, None),
        };
        Ok(Self {
            window,
            mean_nu,
            mean_x,
            fluct_nu,
            fluct_x,
        })
    }
}

fn require_short_range(operation: &'static str, potential: &Potential) -> Result<f64> {
    if potential.regime() != Regime::ShortRange {
        return Err(Error::Regime {
            operation,
            required: "short-range",
            actual: potential.regime(),
            beta: potential.beta(),
        });
    }
    potential.phi_limit()
}

fn check_zero_sum(nu: &[f64]) -> Result<()> {
    let sum: f64 = nu.iter().sum();
    let scale = nu.iter().map(|v| v.abs()).fold(1.0f64, f64::max);
    if sum.abs() > SUM_TOL * scale * nu.len() as f64 {
        return Err(Error::Normalization(format!(
            "natural velocities sum to {sum:e}; the prediction assumes the zero-mean frame"
        )));
    }
    Ok(())
}

/// Does the window `(a, m]` qualify as a single cluster? Tests the strict
/// inequality at every interior cut `k`, tracking the smallest margin seen.
fn window_qualifies(
    nu: &[f64],
    a: usize,
    m: usize,
    drift_per_gap: f64, // kappa * phi_limit / N, or 0 for the small-kappa limit
    min_margin: &mut f64,
) -> bool {
    let width = m - a;
    let window_sum: f64 = nu[a..m].iter().sum();
    let window_mean = window_sum / width as f64;
    let mut prefix = 0.0;
    for k in 1..width {
        prefix += nu[a + k - 1] - window_mean;
        let value = prefix / k as f64 + drift_per_gap * (width - k) as f64;
        *min_margin = min_margin.min(value.abs());
        if value <= 0.0 {
            return false;
        }
    }
    true
}

fn greedy_partition(nu: &[f64], drift_per_gap: f64) -> (Vec<usize>, f64) {
    let n = nu.len();
    let mut boundaries = vec![0];
    let mut min_margin = f64::INFINITY;
    let mut a = 0;
    while a < n {
        // Singletons qualify vacuously; take the largest qualifying end.
        let mut best = a + 1;
        for m in (a + 1)..=n {
            if window_qualifies(nu, a, m, drift_per_gap, &mut min_margin) {
                best = m;
            }
        }
        boundaries.push(best);
        a = best;
    }
    (boundaries, min_margin)
}

/// Predict the asymptotic clusters of the first-order system from natural
/// velocities in spatial order. Requires beta > 1 (finite drift limit) and
/// zero-sum `nu`.
pub fn predict_first_order(
    nu: &[f64],
    kappa: f64,
    potential: &Potential,
) -> Result<ClusterPartition> {
    let phi_inf = require_short_range("predict_first_order", potential)?;
    if nu.is_empty() {
        return Err(Error::InvalidParam("empty natural-velocity vector".into()));
    }
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "coupling strength must be positive, got {kappa}"
        )));
    }
    check_zero_sum(nu)?;
    let n = nu.len();
    let drift = kappa * phi_inf / n as f64;
    let (boundaries, min_margin) = greedy_partition(nu, drift);
    let group_velocities = boundaries
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let mean = nu[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            mean + kappa * (n as f64 - hi as f64 - lo as f64) * phi_inf / n as f64
        })
        .collect();
    Ok(ClusterPartition {
        boundaries,
        group_velocities,
        min_margin,
    })
}

/// Critical coupling strength of the first-order system: the largest
/// prefix-deficit over the drift the cut can carry. Mono-cluster flocking
/// emerges for `kappa` strictly above the returned value and multi-cluster
/// formation at or below it; 0 means every coupling flocks.
pub fn kappa_critical_first_order(nu: &[f64], potential: &Potential) -> Result<f64> {
    let phi_inf = require_short_range("kappa_critical_first_order", potential)?;
    if nu.len() < 2 {
        return Err(Error::InvalidParam(
            "need at least two particles for a critical coupling".into(),
        ));
    }
    check_zero_sum(nu)?;
    let n = nu.len();
    let mut best = 0.0f64;
    let mut prefix = 0.0;
    for l in 1..n {
        prefix += nu[l - 1];
        let value = -(prefix / l as f64) / ((n - l) as f64 * phi_inf / n as f64);
        best = best.max(value);
    }
    Ok(best)
}

/// Predict the asymptotic clusters of the second-order system. Equivalent to
/// the first-order prediction applied to the natural velocities of the
/// reduction at the same coupling (literally the same code path).
pub fn predict_second_order(
    x0: &[f64],
    v0: &[f64],
    kappa: f64,
    potential: &Potential,
) -> Result<ClusterPartition> {
    require_short_range("predict_second_order", potential)?;
    let params = ModelParams::new(x0.len(), kappa, *potential)?;
    let nu = natural_velocities(&params, x0, v0)?;
    predict_first_order(&nu, kappa, potential)
}

/// Critical coupling of the second-order system in closed form. A cut with a
/// nonnegative prefix velocity sum never binds; a binding cut contributes
/// `(-sum v) / ((N-l) l phi_limit / N - (1/N) sum_{i<=l} sum_{k>l} phi(x_k - x_i))`,
/// whose denominator is positive because `phi` stays below its limit.
pub fn kappa_critical_second_order(x0: &[f64], v0: &[f64], potential: &Potential) -> Result<f64> {
    let phi_inf = require_short_range("kappa_critical_second_order", potential)?;
    let n = x0.len();
    if n < 2 || v0.len() != n {
        return Err(Error::InvalidParam(
            "need matching positions and velocities for at least two particles".into(),
        ));
    }
    if x0.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "positions must be strictly increasing and distinct".into(),
        ));
    }
    check_zero_sum(v0)?;
    let mut best = 0.0f64;
    let mut vsum = 0.0;
    for l in 1..n {
        vsum += v0[l - 1];
        if -vsum <= 0.0 {
            continue;
        }
        let mut cross = 0.0;
        for i in 0..l {
            for k in l..n {
                cross += potential.phi(x0[k] - x0[i])?;
            }
        }
        let denom = (n - l) as f64 * l as f64 * phi_inf / n as f64 - cross / n as f64;
        best = best.max(-vsum / denom);
    }
    Ok(best)
}

/// Small-coupling limit of the second-order prediction: the same greedy scan
/// driven by initial-velocity fluctuations alone.
pub fn predict_small_kappa(v0: &[f64]) -> Result<SmallKappaPartition> {
    if v0.is_empty() {
        return Err(Error::InvalidParam("empty velocity vector".into()));
    }
    let (boundaries, min_margin) = greedy_partition(v0, 0.0);
    Ok(SmallKappaPartition {
        boundaries,
        min_margin,
    })
}

/// Input data for a cluster-count sweep over coupling strengths.
#[derive(Debug, Clone)]
pub enum SweepInput<'a> {
    FirstOrder { nu: &'a [f64] },
    SecondOrder { x0: &'a [f64], v0: &'a [f64] },
}

/// Cluster counts over a grid of couplings. For the second order the natural
/// velocities are rebuilt at every grid point, so the count need not be
/// monotone in kappa.
pub fn sweep_cluster_count(
    input: &SweepInput<'_>,
    kappa_grid: &[f64],
    potential: &Potential,
) -> Result<Vec<(f64, usize)>> {
    if kappa_grid.is_empty() {
        return Err(Error::InvalidParam("empty kappa grid".into()));
    }
    kappa_grid
        .iter()
        .map(|&kappa| {
            let count = match input {
                SweepInput::FirstOrder { nu } => predict_first_order(nu, kappa, potential)?.count(),
                SweepInput::SecondOrder { x0, v0 } => {
                    predict_second_order(x0, v0, kappa, potential)?.count()
                }
            };
            Ok((kappa, count))
        })
        .collect()
}
