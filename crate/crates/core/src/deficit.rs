//! The distorted expected maximum deficit `D(u) = ∫_u^∞ g(psi_t(v)) dv`.
//!
//! For `u < 0` the ruin probability is 1 on `[u, 0)`, so `D(u) = D(0) - u`.

use std::fmt;
use std::sync::Arc;

use crate::distortion::{sort_descending, Distortion};
use crate::error::{Error, Result};
use crate::model::ExponentialLine;
use crate::numerics::{adaptive_simpson, tail_integral, Tolerance};
use crate::simulate::SimBatch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Infinite,
    Finite(f64),
}

/// A ruin probability `v -> psi(v)`.
pub type RuinFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum DeficitSource {
    ClosedFormPH { line: ExponentialLine, exponent: f64 },
    ClosedFormTVaR { line: ExponentialLine, alpha: f64 },
    Quadrature { g: Distortion, psi: RuinFn },
    /// Samples of the running maximum, sorted descending, with their Choquet weights.
    Empirical {
        g: Distortion,
        sorted: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl fmt::Debug for DeficitSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeficitSource::ClosedFormPH { line, exponent } => f
                .debug_struct("ClosedFormPH")
                .field("line", line)
                .field("exponent", exponent)
                .finish(),
            DeficitSource::ClosedFormTVaR { line, alpha } => f
                .debug_struct("ClosedFormTVaR")
                .field("line", line)
                .field("alpha", alpha)
                .finish(),
            DeficitSource::Quadrature { g, .. } => {
                f.debug_struct("Quadrature").field("g", g).finish_non_exhaustive()
            }
            DeficitSource::Empirical { g, sorted, .. } => f
                .debug_struct("Empirical")
                .field("g", g)
                .field("n", &sorted.len())
                .finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeficitFunctional {
    source: DeficitSource,
    horizon: Horizon,
    tol: Tolerance,
}

/// Outcome of evaluating both TVaR branches at the critical threshold `v_alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContinuityMatch {
    TwoBranch { v_alpha: f64, left: f64, right: f64 },
    /// `alpha >= a`: `v_alpha <= 0` and only the exponential branch is used on `u >= 0`.
    SingleBranch { v_alpha: f64 },
}

impl DeficitFunctional {
    pub fn new(source: DeficitSource, horizon: Horizon) -> Result<Self> {
        let closed = matches!(
            source,
            DeficitSource::ClosedFormPH { .. } | DeficitSource::ClosedFormTVaR { .. }
        );
        if closed && horizon != Horizon::Infinite {
            return Err(Error::Unsupported(
                "closed forms exist only for the infinite horizon".into(),
            ));
        }
        if let Horizon::Finite(t) = horizon {
            if !(t >= 0.0) {
                return Err(Error::domain(format!("horizon must be >= 0, got {t}")));
            }
        }
        match &source {
            DeficitSource::ClosedFormPH { exponent, .. } => {
                Distortion::proportional_hazard(*exponent)?;
            }
            DeficitSource::ClosedFormTVaR { alpha, .. } => {
                Distortion::tvar(*alpha)?;
            }
            DeficitSource::Empirical { sorted, weights, .. } => {
                if sorted.is_empty() || sorted.len() != weights.len() {
                    return Err(Error::argument("empirical functional needs samples"));
                }
            }
            DeficitSource::Quadrature { .. } => {}
        }
        Ok(DeficitFunctional {
            source,
            horizon,
            tol: Tolerance::default(),
        })
    }

    pub fn closed_form_ph(line: ExponentialLine, exponent: f64) -> Result<Self> {
        Self::new(DeficitSource::ClosedFormPH { line, exponent }, Horizon::Infinite)
    }

    pub fn closed_form_tvar(line: ExponentialLine, alpha: f64) -> Result<Self> {
        Self::new(DeficitSource::ClosedFormTVaR { line, alpha }, Horizon::Infinite)
    }

    /// Closed form for identity/PH/TVaR, quadrature for anything else.
    pub fn for_line(line: ExponentialLine, g: Distortion) -> Result<Self> {
        match g {
            Distortion::Identity => Self::closed_form_ph(line, 1.0),
            Distortion::ProportionalHazard { exponent } => Self::closed_form_ph(line, exponent),
            Distortion::TVaR { alpha } => Self::closed_form_tvar(line, alpha),
            Distortion::VaRStep { .. } => Self::ultimate_quadrature(line, g),
        }
    }

    pub fn quadrature(g: Distortion, psi: RuinFn, horizon: Horizon) -> Result<Self> {
        Self::new(DeficitSource::Quadrature { g, psi }, horizon)
    }

    /// Quadrature against the line's ultimate ruin probability.
    pub fn ultimate_quadrature(line: ExponentialLine, g: Distortion) -> Result<Self> {
        Self::quadrature(g, Arc::new(move |v| line.ultimate_ruin(v)), Horizon::Infinite)
    }

    pub fn empirical(g: Distortion, samples: &[f64], horizon: Horizon) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::argument("empirical functional needs samples"));
        }
        if let Some(bad) = samples.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::domain(format!("maximum-loss sample {bad} is negative")));
        }
        let mut sorted = samples.to_vec();
        sort_descending(&mut sorted);
        let weights = g.sample_weights(sorted.len());
        Self::new(DeficitSource::Empirical { g, sorted, weights }, horizon)
    }

    pub fn from_batch(g: Distortion, batch: &SimBatch) -> Result<Self> {
        Self::empirical(g, batch.samples(), Horizon::Finite(batch.horizon()))
    }

    pub fn with_tolerance(mut self, tol: Tolerance) -> Self {
        self.tol = tol;
        self
    }

    pub fn source(&self) -> &DeficitSource {
        &self.source
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn tolerance(&self) -> &Tolerance {
        &self.tol
    }

    pub fn distortion(&self) -> Distortion {
        match &self.source {
            DeficitSource::ClosedFormPH { exponent, .. } => {
                if *exponent == 1.0 {
                    Distortion::Identity
                } else {
                    Distortion::ProportionalHazard { exponent: *exponent }
                }
            }
            DeficitSource::ClosedFormTVaR { alpha, .. } => Distortion::TVaR { alpha: *alpha },
            DeficitSource::Quadrature { g, .. } | DeficitSource::Empirical { g, .. } => *g,
        }
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(
            self.source,
            DeficitSource::ClosedFormPH { .. } | DeficitSource::ClosedFormTVaR { .. }
        )
    }

    /// `D(u)`.
    pub fn eval(&self, u: f64) -> Result<f64> {
        if u.is_nan() {
            return Err(Error::domain("deficit evaluated at NaN"));
        }
        match &self.source {
            DeficitSource::ClosedFormPH { line, exponent } => {
                let scale = ph_scale(line, *exponent);
                let rate = exponent * line.adjustment_coefficient();
                Ok(if u >= 0.0 {
                    scale * (-rate * u).exp()
                } else {
                    scale - u
                })
            }
            DeficitSource::ClosedFormTVaR { line, alpha } => Ok(tvar_eval(line, *alpha, u)),
            DeficitSource::Quadrature { g, psi } => {
                let integrand = |v: f64| g.eval(psi(v));
                let tail = tail_integral(integrand, u.max(0.0), &self.tol)?;
                if u < 0.0 {
                    Ok(adaptive_simpson(integrand, u, 0.0, &self.tol) + tail)
                } else {
                    Ok(tail)
                }
            }
            DeficitSource::Empirical { sorted, weights, .. } => Ok(sorted
                .iter()
                .zip(weights)
                .map(|(m, w)| (m - u).max(0.0) * w)
                .sum()),
        }
    }

    /// Evaluate both TVaR branches at `v_alpha`.
    pub fn continuity_match(&self) -> Result<ContinuityMatch> {
        let DeficitSource::ClosedFormTVaR { line, alpha } = &self.source else {
            return Err(Error::Unsupported(
                "continuity_match applies to the closed-form TVaR functional".into(),
            ));
        };
        let v_alpha = tvar_threshold(line, *alpha);
        if v_alpha <= 0.0 {
            return Ok(ContinuityMatch::SingleBranch { v_alpha });
        }
        let (a, r) = (line.ruin_constants().a, line.adjustment_coefficient());
        Ok(ContinuityMatch::TwoBranch {
            v_alpha,
            left: 1.0 / r,
            right: a / (alpha * r) * (-r * v_alpha).exp(),
        })
    }
}

/// `a^p / (p R)`, the PH deficit at zero capital.
pub(crate) fn ph_scale(line: &ExponentialLine, exponent: f64) -> f64 {
    let k = line.ruin_constants();
    k.a.powf(exponent) / (exponent * k.b)
}

/// `v_alpha = (1/R) ln(a / alpha)`; nonpositive when `alpha >= a`.
pub fn tvar_threshold(line: &ExponentialLine, alpha: f64) -> f64 {
    let k = line.ruin_constants();
    (k.a / alpha).ln() / k.b
}

fn tvar_eval(line: &ExponentialLine, alpha: f64, u: f64) -> f64 {
    let k = line.ruin_constants();
    let r = k.b;
    let v_alpha = tvar_threshold(line, alpha);
    let tail = |u: f64| k.a / (alpha * r) * (-r * u).exp();
    if v_alpha > 0.0 {
        if u <= v_alpha {
            v_alpha - u + 1.0 / r
        } else {
            tail(u)
        }
    } else if u >= 0.0 {
        tail(u)
    } else {
        tail(0.0) - u
    }
}
