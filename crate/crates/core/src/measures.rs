//! Static capital requirements built on the deficit functional: the coherent,
//! convex and proportional measures, the critical proportional margin, the
//! EAR benchmark and the premium compatibility bound.

use std::cell::RefCell;

use crate::deficit::{ph_scale, tvar_threshold, DeficitFunctional, DeficitSource};
use crate::distortion::{choquet_empirical, Distortion};
use crate::error::{Error, Result};
use crate::model::ExponentialLine;
use crate::numerics::{brent_root, lambert_w0, Tolerance};
use crate::simulate::{aggregate_claims, bootstrap_choquet_se};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ClosedForm,
    RootBracketed,
    LambertW,
    Empirical,
}

/// Which piece of a piecewise formula produced the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `D` is affine in `u` here (TVaR below `v_alpha`, or negative capital).
    LinearSegment,
    ExponentialTail,
    /// PH inverse extrapolating the exponential curve past `D(0)`.
    AnalyticContinuation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureResult {
    pub value: f64,
    pub method: Method,
    /// Absolute residual of the defining equation at `value`.
    pub residual: f64,
    pub branch: Option<Branch>,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {x}")))
    }
}

fn numeric_method(d: &DeficitFunctional) -> Method {
    match d.source() {
        DeficitSource::Empirical { .. } => Method::Empirical,
        _ => Method::RootBracketed,
    }
}

/// `rho_g(L) = D(0)`.
pub fn coherent_measure(d: &DeficitFunctional) -> Result<MeasureResult> {
    let method = match d.source() {
        DeficitSource::Empirical { .. } => Method::Empirical,
        DeficitSource::Quadrature { .. } => Method::RootBracketed,
        _ => Method::ClosedForm,
    };
    Ok(MeasureResult {
        value: d.eval(0.0)?,
        method,
        residual: 0.0,
        branch: None,
    })
}

/// Smallest capital `u` with `D(u) <= A`.
pub fn convex_measure(d: &DeficitFunctional, a_level: f64) -> Result<MeasureResult> {
    positive("A", a_level)?;
    match d.source() {
        DeficitSource::ClosedFormPH { line, exponent } => {
            let scale = ph_scale(line, *exponent);
            let rate = exponent * line.adjustment_coefficient();
            let value = (scale.ln() - a_level.ln()) / rate;
            let branch = if a_level > scale {
                Branch::AnalyticContinuation
            } else {
                Branch::ExponentialTail
            };
            let residual = (scale * (-rate * value).exp() - a_level).abs();
            Ok(MeasureResult {
                value,
                method: Method::ClosedForm,
                residual,
                branch: Some(branch),
            })
        }
        DeficitSource::ClosedFormTVaR { line, alpha } => {
            let k = line.ruin_constants();
            let r = k.b;
            let v_alpha = tvar_threshold(line, *alpha);
            let (value, branch) = if v_alpha > 0.0 {
                if a_level >= 1.0 / r {
                    (v_alpha + 1.0 / r - a_level, Branch::LinearSegment)
                } else {
                    ((k.a / (alpha * r * a_level)).ln() / r, Branch::ExponentialTail)
                }
            } else {
                let d0 = k.a / (alpha * r);
                if a_level <= d0 {
                    ((d0 / a_level).ln() / r, Branch::ExponentialTail)
                } else {
                    (d0 - a_level, Branch::LinearSegment)
                }
            };
            Ok(MeasureResult {
                value,
                method: Method::ClosedForm,
                residual: (d.eval(value)? - a_level).abs(),
                branch: Some(branch),
            })
        }
        _ => convex_measure_bracketed(d, a_level),
    }
}

/// Convex measure by Brent on `D(u) - A`, whatever the source.
pub fn convex_measure_bracketed(d: &DeficitFunctional, a_level: f64) -> Result<MeasureResult> {
    positive("A", a_level)?;
    let d0 = d.eval(0.0)?;
    let tol = tight(d.tolerance());
    if d0 <= a_level {
        // D(u) = D(0) - u below zero
        let value = d0 - a_level;
        return Ok(MeasureResult {
            value,
            method: numeric_method(d),
            residual: (d.eval(value)? - a_level).abs(),
            branch: Some(Branch::LinearSegment),
        });
    }
    let f = |u: f64| d.eval(u).map(|x| x - a_level);
    let hi = expand_right(&f, 1.0, d.tolerance().max_iter)?;
    let value = root_of(&f, 0.0, hi, &tol)?;
    Ok(MeasureResult {
        value,
        method: numeric_method(d),
        residual: f(value)?.abs(),
        branch: None,
    })
}

/// Unique positive root of `D(u) = delta u`.
pub fn proportional_measure(d: &DeficitFunctional, delta: f64) -> Result<MeasureResult> {
    positive("delta", delta)?;
    match d.source() {
        DeficitSource::ClosedFormPH { line, exponent } => {
            let k = line.ruin_constants();
            let rate = exponent * k.b;
            let value = lambert_w0(k.a.powf(*exponent) / delta)? / rate;
            Ok(MeasureResult {
                value,
                method: Method::LambertW,
                residual: (d.eval(value)? - delta * value).abs(),
                branch: Some(Branch::ExponentialTail),
            })
        }
        DeficitSource::ClosedFormTVaR { line, alpha } => {
            let k = line.ruin_constants();
            let r = k.b;
            let v_alpha = tvar_threshold(line, *alpha);
            let (value, method, branch) = if v_alpha > 0.0 && delta * r * v_alpha >= 1.0 {
                (
                    (v_alpha + 1.0 / r) / (1.0 + delta),
                    Method::ClosedForm,
                    Branch::LinearSegment,
                )
            } else {
                (
                    lambert_w0(k.a / (alpha * delta))? / r,
                    Method::LambertW,
                    Branch::ExponentialTail,
                )
            };
            Ok(MeasureResult {
                value,
                method,
                residual: (d.eval(value)? - delta * value).abs(),
                branch: Some(branch),
            })
        }
        _ => proportional_measure_bracketed(d, delta),
    }
}

/// Proportional measure by Brent on `D(u) - delta u` over `[0, hi]`.
pub fn proportional_measure_bracketed(d: &DeficitFunctional, delta: f64) -> Result<MeasureResult> {
    positive("delta", delta)?;
    let d0 = d.eval(0.0)?;
    if !(d0 > 0.0) {
        return Err(Error::Model(
            "deficit at zero capital vanishes; no positive proportional root".into(),
        ));
    }
    let f = |u: f64| d.eval(u).map(|x| x - delta * u);
    let hi = expand_right(&f, (d0 / delta).min(1.0), d.tolerance().max_iter)?;
    let value = root_of(&f, 0.0, hi, &tight(d.tolerance()))?;
    Ok(MeasureResult {
        value,
        method: numeric_method(d),
        residual: f(value)?.abs(),
        branch: None,
    })
}

/// `delta* = D(u_c) / u_c` with `u_c` the coherent capital.
pub fn critical_threshold(d: &DeficitFunctional) -> Result<f64> {
    let uc = d.eval(0.0)?;
    if !(uc > 0.0) {
        return Err(Error::Model(format!(
            "coherent capital {uc} is not positive; critical threshold undefined"
        )));
    }
    Ok(d.eval(uc)? / uc)
}

/// Minimal capital bounding the expected area in red by `A`.
pub fn ear_convex_measure(line: &ExponentialLine, a_level: f64) -> Result<MeasureResult> {
    positive("A", a_level)?;
    let k = line.ruin_constants();
    let r = k.b;
    let scale = k.a / (line.c() * line.mu() * r.powi(3));
    let value = (scale.ln() - a_level.ln()) / r;
    Ok(MeasureResult {
        value,
        method: Method::ClosedForm,
        residual: (scale * (-r * value).exp() - a_level).abs(),
        branch: None,
    })
}

/// Monte Carlo estimate of `E_{gP}[S_1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PremiumBound {
    pub estimate: f64,
    /// Bootstrap standard error over 20 resamples.
    pub std_error: f64,
    /// False when `gP` is not concave and the bound is not guaranteed.
    pub concave: bool,
}

pub const PREMIUM_BOOTSTRAP_RESAMPLES: usize = 20;
pub const PREMIUM_MIN_PATHS: usize = 1000;

pub fn premium_lower_bound(line: &ExponentialLine, gp: &Distortion, n: usize, seed: u64) -> Result<PremiumBound> {
    premium_bound_for(line.lambda(), line.mu(), gp, n, seed)
}

/// Premium bound from the claim parameters alone; `lambda = 0` is allowed.
pub fn premium_bound_for(lambda: f64, mu: f64, gp: &Distortion, n: usize, seed: u64) -> Result<PremiumBound> {
    if n < PREMIUM_MIN_PATHS {
        return Err(Error::argument(format!(
            "premium bound needs at least {PREMIUM_MIN_PATHS} paths, got {n}"
        )));
    }
    let claims = aggregate_claims(lambda, mu, 1.0, n, seed)?;
    Ok(PremiumBound {
        estimate: choquet_empirical(gp, &claims)?,
        std_error: bootstrap_choquet_se(gp, &claims, PREMIUM_BOOTSTRAP_RESAMPLES, seed)?,
        concave: gp.is_concave(),
    })
}

fn tight(tol: &Tolerance) -> Tolerance {
    Tolerance {
        abs_tol: tol.abs_tol.min(1e-12),
        rel_tol: tol.rel_tol.min(1e-13),
        max_iter: tol.max_iter.max(200),
    }
}

fn expand_right<F: Fn(f64) -> Result<f64>>(f: &F, start: f64, max_iter: usize) -> Result<f64> {
    let mut hi = start.max(1e-3);
    for _ in 0..max_iter.max(200) {
        let v = f(hi)?;
        if v <= 0.0 {
            return Ok(hi);
        }
        hi *= 2.0;
    }
    Err(Error::Bracketing {
        lo: 0.0,
        hi,
        f_lo: f(0.0)?,
        f_hi: f(hi)?,
    })
}

fn root_of<F: Fn(f64) -> Result<f64>>(f: &F, lo: f64, hi: f64, tol: &Tolerance) -> Result<f64> {
    let failure = RefCell::new(None);
    let root = brent_root(
        |u| match f(u) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        lo,
        hi,
        tol,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => root,
    }
}
