//! Singular communication weight `psi(r) = |r|^(-beta)` and its antiderivative
//! potentials.
//!
//! The exponent beta splits the model into three sharp regimes. For beta < 1
//! the weight is integrable at the origin and the potential `Psi` integrates
//! from zero; for beta >= 1 it is not, and the potential `Phi` integrates from
//! one instead. For beta > 1 the weight is also integrable at infinity, so
//! `Phi` saturates at a finite limit that controls how strongly far-away
//! particles can still pull on each other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent regime of the communication weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// 0 < beta < 1: weight integrable at the origin, long-range interaction.
    LongRange,
    /// beta = 1 exactly. The regime boundary is sharp, not fuzzy: a beta
    /// within 1e-12 of 1 but not equal to it is classified by its literal
    /// value.
    Critical,
    /// beta > 1: repulsive singularity at contact, short-range interaction.
    ShortRange,
}

impl Regime {
    fn name(self) -> &'static str {
        match self {
            Regime::LongRange => "long-range",
            Regime::Critical => "critical",
            Regime::ShortRange => "short-range",
        }
    }
}

/// Communication weight with exponent `beta > 0`, together with the closed
/// forms of its antiderivatives and their inverses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    beta: f64,
}

impl Potential {
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "exponent beta must be a positive finite real, got {beta}"
            )));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Regime is determined by beta alone; beta == 1 compares exactly.
    pub fn regime(&self) -> Regime {
        if self.beta < 1.0 {
            Regime::LongRange
        } else if self.beta == 1.0 {
            Regime::Critical
        } else {
            Regime::ShortRange
        }
    }

    fn require(
        &self,
        operation: &'static str,
        allowed: &[Regime],
        required: &'static str,
    ) -> Result<()> {
        let actual = self.regime();
        if allowed.contains(&actual) {
            Ok(())
        } else {
            Err(Error::Regime {
                operation,
                required,
                actual,
                beta: self.beta,
            })
        }
    }

    /// Communication weight `psi(r) = |r|^(-beta)`. Even in `r`, strictly
    /// decreasing in `|r|`, singular at `r = 0`.
    pub fn psi(&self, r: f64) -> Result<f64> {
        if r == 0.0 {
            return Err(Error::Domain(
                "communication weight is singular at zero separation".into(),
            ));
        }
        Ok(r.abs().powf(-self.beta))
    }

    /// Antiderivative of the weight taken from zero (long-range regime only):
    /// `sgn(x) |x|^(1-beta) / (1-beta)`. Odd, strictly increasing, concave on
    /// the nonnegative half-line, and zero at the origin.
    pub fn big_psi(&self, x: f64) -> Result<f64> {
        self.require("big_psi", &[Regime::LongRange], "long-range")?;
        if x == 0.0 {
            return Ok(0.0);
        }
        let m = x.abs().powf(1.0 - self.beta) / (1.0 - self.beta);
        Ok(x.signum() * m)
    }

    /// Antiderivative of the weight taken from one (critical/short-range
    /// regimes): `sgn(x) log|x|` at beta = 1 and
    /// `sgn(x) (1 - |x|^(1-beta)) / (beta - 1)` for beta > 1. Odd away from
    /// zero, strictly increasing on each half-line, and zero at |x| = 1. For
    /// beta > 1 it tends to the finite limit [`Potential::phi_limit`] at
    /// +infinity and to -infinity at 0+.
    pub fn phi(&self, x: f64) -> Result<f64> {
        self.require(
            "phi",
            &[Regime::Critical, Regime::ShortRange],
            "critical or short-range",
        )?;
        if x == 0.0 {
            return Err(Error::Domain(
                "potential is singular at zero separation for beta >= 1".into(),
            ));
        }
        let a = x.abs();
        let m = if self.beta == 1.0 {
            a.ln()
        } else {
            (1.0 - a.powf(1.0 - self.beta)) / (self.beta - 1.0)
        };
        Ok(x.signum() * m)
    }

    /// Long-distance limit of `phi` for beta > 1: `1 / (beta - 1)`.
    pub fn phi_limit(&self) -> Result<f64> {
        self.require("phi_limit", &[Regime::ShortRange], "short-range")?;
        Ok(1.0 / (self.beta - 1.0))
    }

    /// Positive solution of `phi(x) = c`. At beta = 1 this is `exp(c)` for any
    /// real `c`; for beta > 1 it is `[1 / (1 - c (beta-1))]^(1/(beta-1))` and
    /// requires `c` below the saturation value [`Potential::phi_limit`].
    pub fn phi_inverse(&self, c: f64) -> Result<f64> {
        self.require(
            "phi_inverse",
            &[Regime::Critical, Regime::ShortRange],
            "critical or short-range",
        )?;
        if self.beta == 1.0 {
            return Ok(c.exp());
        }
        let limit = 1.0 / (self.beta - 1.0);
        if c >= limit {
            return Err(Error::Range(format!(
                "phi_inverse({c}) undefined: phi saturates at {limit} for beta = {}",
                self.beta
            )));
        }
        let base = 1.0 - c * (self.beta - 1.0);
        Ok(base.powf(1.0 / (1.0 - self.beta)))
    }

    /// Nonnegative solution of `big_psi(x) = c` for `c >= 0`:
    /// `[(1-beta) c]^(1/(1-beta))`.
    pub fn big_psi_inverse(&self, c: f64) -> Result<f64> {
        self.require("big_psi_inverse", &[Regime::LongRange], "long-range")?;
        if c < 0.0 {
            return Err(Error::Range(format!(
                "big_psi_inverse takes the nonnegative branch, got {c}"
            )));
        }
        if c == 0.0 {
            return Ok(0.0);
        }
        Ok(((1.0 - self.beta) * c).powf(1.0 / (1.0 - self.beta)))
    }

    /// The antiderivative appropriate for the regime: `big_psi` below beta = 1
    /// and `phi` at or above it. This is the pair interaction entering the
    /// first-order velocity field.
    pub fn interaction(&self, x: f64) -> Result<f64> {
        match self.regime() {
            Regime::LongRange => self.big_psi(x),
            Regime::Critical | Regime::ShortRange => self.phi(x),
        }
    }

    /// Human-readable regime name (used in diagnostics).
    pub fn regime_name(&self) -> &'static str {
        self.regime().name()
    }
}
