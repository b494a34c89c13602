//! Compound Poisson business lines with exponential claim sizes and their
//! ultimate ruin analytics.

use crate::error::{Error, Result};

/// One compound Poisson line: claim intensity `lambda`, mean claim size `mu`
/// (claims are exponential) and premium rate `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialLine {
    lambda: f64,
    mu: f64,
    c: f64,
}

/// `psi(u) = a * exp(-b u)` for `u >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuinConstants {
    /// Ruin probability at zero capital.
    pub a: f64,
    /// Exponential decay rate, equal to the adjustment coefficient.
    pub b: f64,
}

impl ExponentialLine {
    pub fn new(lambda: f64, mu: f64, c: f64) -> Result<Self> {
        if !(lambda > 0.0 && mu > 0.0 && c > 0.0) || !(lambda.is_finite() && mu.is_finite() && c.is_finite()) {
            return Err(Error::domain(format!(
                "line requires lambda, mu, c > 0 (got {lambda}, {mu}, {c})"
            )));
        }
        if c <= lambda * mu {
            return Err(Error::domain(format!(
                "premium rate {c} does not exceed expected claims {} (no safety loading)",
                lambda * mu
            )));
        }
        Ok(ExponentialLine { lambda, mu, c })
    }

    /// Line with ruin constants `(a, b)` and premium rate `c`.
    pub fn from_ruin_constants(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0 && b > 0.0) {
            return Err(Error::domain(format!(
                "ruin constants need a in (0,1) and b > 0 (got {a}, {b})"
            )));
        }
        let mu = (1.0 - a) / b;
        ExponentialLine::new(a * c / mu, mu, c)
    }

    /// Line with mean claim size `mu` and adjustment coefficient `r`, at unit
    /// claim intensity.
    pub fn from_adjustment(mu: f64, r: f64) -> Result<Self> {
        if !(mu > 0.0) || !(r > 0.0 && r < 1.0 / mu) {
            return Err(Error::domain(format!(
                "adjustment coefficient must lie in (0, 1/mu) = (0, {}), got {r}",
                1.0 / mu
            )));
        }
        let a = 1.0 - mu * r;
        ExponentialLine::new(1.0, mu, mu / a)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `R = (1/mu) (1 - lambda mu / c)`.
    pub fn adjustment_coefficient(&self) -> f64 {
        (1.0 - self.lambda * self.mu / self.c) / self.mu
    }

    pub fn ruin_constants(&self) -> RuinConstants {
        RuinConstants {
            a: self.lambda * self.mu / self.c,
            b: self.adjustment_coefficient(),
        }
    }

    /// Infinite-horizon ruin probability; 1 for negative capital.
    pub fn ultimate_ruin(&self, u: f64) -> f64 {
        if u < 0.0 {
            return 1.0;
        }
        let RuinConstants { a, b } = self.ruin_constants();
        a * (-b * u).exp()
    }
}

impl RuinConstants {
    pub fn ruin(&self, u: f64) -> f64 {
        if u < 0.0 {
            1.0
        } else {
            self.a * (-self.b * u).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table1() -> [ExponentialLine; 3] {
        [
            ExponentialLine::new(10.0, 1.0, 12.0).unwrap(),
            ExponentialLine::new(1.0, 10.0, 15.0).unwrap(),
            ExponentialLine::new(0.1, 100.0, 20.0).unwrap(),
        ]
    }

    #[test]
    fn adjustment_coefficients() {
        let r: Vec<f64> = table1().iter().map(|l| l.adjustment_coefficient()).collect();
        assert!((r[0] - 0.16667).abs() < 1e-5);
        assert!((r[1] - 0.03333).abs() < 1e-5);
        assert!((r[2] - 0.00500).abs() < 1e-5);
    }

    #[test]
    fn derived_constants() {
        let expected = [(0.8333, 0.1667), (0.6667, 0.0333), (0.5, 0.005)];
        for (line, (a, b)) in table1().iter().zip(expected) {
            let k = line.ruin_constants();
            assert!((k.a - a).abs() < 5e-5 && (k.b - b).abs() < 5e-5);
        }
    }

    #[test]
    fn ruin_probability_points() {
        let l1 = table1()[0];
        assert_eq!(l1.ultimate_ruin(0.0), l1.ruin_constants().a);
        assert!((l1.ultimate_ruin(2.78) - 0.5243).abs() < 1e-3);
        assert_eq!(l1.ultimate_ruin(-1.0), 1.0);
    }

    #[test]
    fn invalid_lines() {
        assert!(ExponentialLine::new(10.0, 1.0, 10.0).is_err());
        assert!(ExponentialLine::new(0.0, 1.0, 10.0).is_err());
        assert!(ExponentialLine::new(1.0, -1.0, 10.0).is_err());
        assert!(ExponentialLine::from_adjustment(1.0, 1.0).is_err());
    }

    #[test]
    fn constructors_round_trip() {
        let l = ExponentialLine::from_ruin_constants(0.9, 0.05, 1.0).unwrap();
        let k = l.ruin_constants();
        assert!((k.a - 0.9).abs() < 1e-12 && (k.b - 0.05).abs() < 1e-12);
        let l = ExponentialLine::from_adjustment(1.0, 0.3).unwrap();
        assert!((l.adjustment_coefficient() - 0.3).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn a_equals_one_minus_mu_r(lambda in 0.01f64..50.0, mu in 0.01f64..200.0, load in 0.01f64..3.0) {
            let line = ExponentialLine::new(lambda, mu, lambda * mu * (1.0 + load)).unwrap();
            let k = line.ruin_constants();
            prop_assert!((k.a - (1.0 - mu * k.b)).abs() < 1e-12);
            prop_assert!(k.a > 0.0 && k.a < 1.0 && k.b > 0.0);
        }

        #[test]
        fn ruin_monotone(lambda in 0.1f64..5.0, mu in 0.1f64..5.0, load in 0.05f64..2.0,
                         u in 0.0f64..50.0, du in 0.0f64..10.0, bump in 1.0f64..1.2) {
            let c = lambda * mu * (1.0 + load);
            let base = ExponentialLine::new(lambda, mu, c).unwrap();
            prop_assert!(base.ultimate_ruin(u + du) <= base.ultimate_ruin(u));
            let richer = ExponentialLine::new(lambda, mu, c * bump).unwrap();
            prop_assert!(richer.ultimate_ruin(u) <= base.ultimate_ruin(u) + 1e-15);
            if let Ok(busier) = ExponentialLine::new(lambda / bump, mu, c) {
                prop_assert!(busier.ultimate_ruin(u) <= base.ultimate_ruin(u) + 1e-15);
            }
            if let Ok(smaller) = ExponentialLine::new(lambda, mu / bump, c) {
                prop_assert!(smaller.ultimate_ruin(u) <= base.ultimate_ruin(u) + 1e-15);
            }
        }
    }
}
