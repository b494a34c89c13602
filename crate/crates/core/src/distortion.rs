//! Distortion functions and Choquet integrals against tail functions and
//! empirical samples.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{tail_integral, Tolerance};

/// A nondecreasing map `g: [0,1] -> [0,1]` with `g(0) = 0` and `g(1) = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distortion {
    Identity,
    /// `g(x) = x^p`, `p in (0, 1]`.
    ProportionalHazard { exponent: f64 },
    /// `g(x) = min(x / alpha, 1)`.
    TVaR { alpha: f64 },
    /// `g(x) = 1{x > alpha}`; not concave.
    VaRStep { alpha: f64 },
}

impl Distortion {
    pub fn proportional_hazard(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent <= 1.0) {
            return Err(Error::domain(format!(
                "proportional hazard exponent must be in (0, 1], got {exponent}"
            )));
        }
        Ok(Distortion::ProportionalHazard { exponent })
    }

    pub fn tvar(alpha: f64) -> Result<Self> {
        check_level(alpha)?;
        Ok(Distortion::TVaR { alpha })
    }

    pub fn var_step(alpha: f64) -> Result<Self> {
        check_level(alpha)?;
        Ok(Distortion::VaRStep { alpha })
    }

    pub fn is_concave(&self) -> bool {
        !matches!(self, Distortion::VaRStep { .. })
    }

    /// Strictly increasing on `[0, 1]`.
    pub fn is_strictly_increasing(&self) -> bool {
        matches!(
            self,
            Distortion::Identity | Distortion::ProportionalHazard { .. }
        )
    }

    /// Checked evaluation.
    pub fn apply(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("distortion argument {x} outside [0, 1]")));
        }
        Ok(self.eval(x))
    }

    /// Unchecked evaluation; arguments are clamped to `[0, 1]`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        if x == 0.0 {
            return 0.0;
        }
        if x == 1.0 {
            return 1.0;
        }
        match *self {
            Distortion::Identity => x,
            Distortion::ProportionalHazard { exponent } => x.powf(exponent),
            Distortion::TVaR { alpha } => (x / alpha).min(1.0),
            Distortion::VaRStep { alpha } => {
                if x > alpha {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Left derivative `g'(x)` on `(0, 1]`.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Distortion::Identity => 1.0,
            Distortion::ProportionalHazard { exponent } => {
                if x <= 0.0 {
                    if exponent == 1.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    exponent * x.powf(exponent - 1.0)
                }
            }
            Distortion::TVaR { alpha } => {
                if x <= alpha {
                    1.0 / alpha
                } else {
                    0.0
                }
            }
            Distortion::VaRStep { .. } => 0.0,
        }
    }

    /// Choquet weights `g(i/n) - g((i-1)/n)` for `i = 1..=n`.
    pub fn sample_weights(&self, n: usize) -> Vec<f64> {
        let nf = n as f64;
        let mut prev = 0.0;
        (1..=n)
            .map(|i| {
                let cur = self.eval(i as f64 / nf);
                let w = cur - prev;
                prev = cur;
                w
            })
            .collect()
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("level alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distortion::Identity => write!(f, "identity"),
            Distortion::ProportionalHazard { exponent } => write!(f, "ph:{exponent}"),
            Distortion::TVaR { alpha } => write!(f, "tvar:{alpha}"),
            Distortion::VaRStep { alpha } => write!(f, "varstep:{alpha}"),
        }
    }
}

impl FromStr for Distortion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s, None),
        };
        let value = |p: Option<&str>| -> Result<f64> {
            let p = p.ok_or_else(|| Error::argument(format!("distortion '{s}' needs a parameter")))?;
            p.parse::<f64>()
                .map_err(|_| Error::argument(format!("bad distortion parameter '{p}'")))
        };
        match name.to_ascii_lowercase().as_str() {
            "identity" if param.is_none() => Ok(Distortion::Identity),
            "ph" => Distortion::proportional_hazard(value(param)?),
            "tvar" => Distortion::tvar(value(param)?),
            "varstep" => Distortion::var_step(value(param)?),
            _ => Err(Error::argument(format!("unknown distortion '{s}'"))),
        }
    }
}

/// `∫_0^∞ g(tail(x)) dx` for a nonnegative variable with survival function `tail`.
pub fn choquet_tail<T>(g: &Distortion, tail: T, tol: &Tolerance) -> Result<f64>
where
    T: Fn(f64) -> f64,
{
    tail_integral(|x| g.eval(tail(x)), 0.0, tol)
}

/// Upper Choquet estimator `Σ x_(i) [g(i/n) - g((i-1)/n)]` with samples in
/// descending order.
pub fn choquet_empirical(g: &Distortion, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::argument("choquet_empirical needs at least one sample"));
    }
    if let Some(bad) = samples.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain(format!("sample {bad} is not a finite nonnegative value")));
    }
    let mut sorted = samples.to_vec();
    sort_descending(&mut sorted);
    Ok(weighted_sum(&sorted, &g.sample_weights(sorted.len())))
}

pub(crate) fn sort_descending(xs: &mut [f64]) {
    xs.sort_unstable_by(|a, b| b.total_cmp(a));
}

pub(crate) fn weighted_sum(desc: &[f64], weights: &[f64]) -> f64 {
    desc.iter().zip(weights).map(|(x, w)| x * w).sum()
}
