//! Scalar kernels shared by every other module: bracketing root finders,
//! the principal branch of Lambert W, and adaptive Simpson quadrature on
//! finite and semi-infinite intervals.

use crate::error::{Error, Result};

/// Stopping rule for the iterative kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl Tolerance {
    pub fn new(abs_tol: f64, rel_tol: f64, max_iter: usize) -> Result<Self> {
        if !(abs_tol > 0.0) || !(rel_tol > 0.0) || max_iter == 0 {
            return Err(Error::argument(format!(
                "tolerance requires abs_tol > 0, rel_tol > 0, max_iter >= 1 (got {abs_tol}, {rel_tol}, {max_iter})"
            )));
        }
        Ok(Tolerance {
            abs_tol,
            rel_tol,
            max_iter,
        })
    }

    /// Copy with both tolerances replaced.
    pub fn with_tol(self, tol: f64) -> Self {
        Tolerance {
            abs_tol: tol,
            rel_tol: tol,
            ..self
        }
    }
}

fn check_bracket(lo: f64, hi: f64, f_lo: f64, f_hi: f64) -> Result<()> {
    if !(f_lo.is_finite() && f_hi.is_finite()) || f_lo * f_hi > 0.0 {
        return Err(Error::Bracketing { lo, hi, f_lo, f_hi });
    }
    Ok(())
}

/// Brent's method on `[lo, hi]`.
///
/// Terminates when the bracket half-width drops below
/// `0.5 * (abs_tol + rel_tol * |x|)` or an exact zero is hit.
pub fn brent_root<F>(f: F, lo: f64, hi: f64, tol: &Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    check_bracket(lo, hi, fa, fb)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }

    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;

    for _ in 0..tol.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }

        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * (tol.abs_tol + tol.rel_tol * b.abs());
        let m = 0.5 * (c - b);
        if m.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }

        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // inverse quadratic interpolation, or secant when a == c
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }

        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(m) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(Error::Convergence {
                iterations: tol.max_iter,
                last: b,
            });
        }
    }
    Err(Error::Convergence {
        iterations: tol.max_iter,
        last: b,
    })
}

/// Plain bisection; slower than [`brent_root`] but trivially robust.
pub fn bisect<F>(f: F, lo: f64, hi: f64, tol: &Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let fb = f(b);
    check_bracket(lo, hi, fa, fb)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    // bisection needs ~log2(width/tol) steps; allow for 1100 halvings at most
    let max_iter = tol.max_iter.max(1100);
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol.abs_tol + tol.rel_tol * m.abs() || m == a || m == b {
            return Ok(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        last: 0.5 * (a + b),
    })
}

/// Principal branch `W0` of the Lambert W function, `w * exp(w) = y`, `w >= -1`.
pub fn lambert_w0(y: f64) -> Result<f64> {
    const BRANCH: f64 = -1.0 / std::f64::consts::E;
    if y.is_nan() || y < BRANCH - 1e-15 {
        return Err(Error::domain(format!("lambert_w0 requires y >= -1/e, got {y}")));
    }
    if y <= BRANCH {
        return Ok(-1.0);
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    if y.is_infinite() {
        return Ok(f64::INFINITY);
    }

    let mut w = if y < -0.25 {
        // branch-point series in p = sqrt(2 (e y + 1))
        let p = (2.0 * (std::f64::consts::E * y + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        y.ln_1p()
    };

    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - y;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            return Ok(w);
        }
    }
    Ok(w)
}

struct SimpsonPanel {
    a: f64,
    fa: f64,
    m: f64,
    fm: f64,
    b: f64,
    fb: f64,
    whole: f64,
}

const MAX_SIMPSON_DEPTH: u32 = 50;

fn simpson_rec<F: Fn(f64) -> f64>(f: &F, p: SimpsonPanel, eps: f64, depth: u32) -> f64 {
    let lm = 0.5 * (p.a + p.m);
    let rm = 0.5 * (p.m + p.b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (p.m - p.a) / 6.0 * (p.fa + 4.0 * flm + p.fm);
    let right = (p.b - p.m) / 6.0 * (p.fm + 4.0 * frm + p.fb);
    let delta = left + right - p.whole;
    // below this the refinement only measures rounding noise
    let noise = 64.0 * f64::EPSILON * (left.abs() + right.abs());
    if depth >= MAX_SIMPSON_DEPTH || delta.abs() <= (15.0 * eps).max(noise) || lm <= p.a || rm >= p.b {
        return left + right + delta / 15.0;
    }
    simpson_rec(
        f,
        SimpsonPanel {
            a: p.a,
            fa: p.fa,
            m: lm,
            fm: flm,
            b: p.m,
            fb: p.fm,
            whole: left,
        },
        0.5 * eps,
        depth + 1,
    ) + simpson_rec(
        f,
        SimpsonPanel {
            a: p.m,
            fa: p.fm,
            m: rm,
            fm: frm,
            b: p.b,
            fb: p.fb,
            whole: right,
        },
        0.5 * eps,
        depth + 1,
    )
}

/// Adaptive Simpson quadrature of `f` on the finite interval `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: &Tolerance) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let eps = tol.abs_tol.max(tol.rel_tol * whole.abs());
    simpson_rec(
        &f,
        SimpsonPanel {
            a,
            fa,
            m,
            fm,
            b,
            fb,
            whole,
        },
        eps,
        0,
    )
}

/// Integral of a nonnegative nonincreasing `f` over `[a, ∞)`.
///
/// Panels `[a, a+h], [a+h, a+3h], ...` double in width starting from `h = 1`;
/// accumulation stops once a panel contributes less than `abs_tol` and `f`
/// at its right edge is below `abs_tol`. At most `max_iter` panels.
pub fn tail_integral<F: Fn(f64) -> f64>(f: F, a: f64, tol: &Tolerance) -> Result<f64> {
    let mut total = 0.0;
    let mut left = a;
    let mut width = 1.0;
    for _ in 0..tol.max_iter {
        let right = left + width;
        let panel_tol = Tolerance {
            abs_tol: tol.abs_tol,
            rel_tol: tol.rel_tol,
            max_iter: tol.max_iter,
        };
        let piece = adaptive_simpson(&f, left, right, &panel_tol);
        total += piece;
        if piece.abs() < tol.abs_tol.max(tol.rel_tol * total.abs()) && f(right).abs() < tol.abs_tol
        {
            return Ok(total);
        }
        left = right;
        width *= 2.0;
    }
    Err(Error::Truncation {
        panels: tol.max_iter,
        partial: total,
    })
}
