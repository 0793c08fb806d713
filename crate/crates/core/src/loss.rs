use serde::{Deserialize, Serialize};

/// Scalar margin losses `ℓ(u)` applied to `Y · f(X)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `log(1 + e^{-u})`
    Logistic,
    /// `e^{-u}`
    Exponential,
    /// `-u`; unbounded below, so descent-lemma guarantees do not apply.
    Correlation,
}

/// Lipschitz constant of `ℓ'` (`m0`) and bound on `|ℓ'|` (`m1`) over an interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossConstants {
    pub m0: f64,
    pub m1: f64,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Logistic, LossKind::Exponential, LossKind::Correlation];

    pub fn value(self, u: f64) -> f64 {
        match self {
            LossKind::Logistic => {
                if u > 0.0 {
                    (-u).exp().ln_1p()
                } else {
                    -u + u.exp().ln_1p()
                }
            }
            LossKind::Exponential => (-u).exp(),
            LossKind::Correlation => -u,
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            LossKind::Logistic => {
                // -1 / (1 + e^u), evaluated without overflow
                if u > 0.0 {
                    let e = (-u).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + u.exp())
                }
            }
            LossKind::Exponential => -(-u).exp(),
            LossKind::Correlation => -1.0,
        }
    }

    /// Constants on `[-bound, bound]`. Logistic uses the global values `(1/4, 1)`.
    pub fn constants(self, bound: f64) -> LossConstants {
        match self {
            LossKind::Logistic => LossConstants { m0: 0.25, m1: 1.0 },
            LossKind::Exponential => {
                let e = bound.abs().exp();
                LossConstants { m0: e, m1: e }
            }
            LossKind::Correlation => LossConstants { m0: 0.0, m1: 1.0 },
        }
    }

    /// `ℓ(top − eps) − ℓ(top)` for `eps ≥ 0`, accurate when `eps` is far below `top`'s ulp.
    pub fn excess(self, top: f64, eps: f64) -> f64 {
        match self {
            LossKind::Logistic => {
                // σ(−top) = 1/(1 + e^top)
                let sig = -self.derivative(top);
                (eps.exp_m1() * sig).ln_1p()
            }
            LossKind::Exponential => (-top).exp() * eps.exp_m1(),
            LossKind::Correlation => eps,
        }
    }

    /// Strictly decreasing and bounded below.
    pub fn satisfies_loss_assumption(self) -> bool {
        !matches!(self, LossKind::Correlation)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::Exponential => "exponential",
            LossKind::Correlation => "correlation",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" => Ok(LossKind::Logistic),
            "exponential" | "exp" => Ok(LossKind::Exponential),
            "correlation" | "linear" => Ok(LossKind::Correlation),
            other => Err(crate::Error::InvalidInput(format!("unknown loss `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn logistic_is_stable_in_both_tails() {
        assert_relative_eq!(LossKind::Logistic.value(0.0), std::f64::consts::LN_2);
        assert!(LossKind::Logistic.value(30.0) > 0.0);
        assert_eq!(LossKind::Logistic.value(800.0), 0.0);
        assert_relative_eq!(LossKind::Logistic.value(-800.0), 800.0);
        assert_relative_eq!(LossKind::Logistic.derivative(0.0), -0.5);
        assert!(LossKind::Logistic.derivative(-800.0).is_finite());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for kind in LossKind::ALL {
            for &u in &[-3.0, -0.4, 0.0, 0.7, 5.0] {
                let fd = (kind.value(u + h) - kind.value(u - h)) / (2.0 * h);
                assert_relative_eq!(kind.derivative(u), fd, epsilon = 1e-8, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn excess_matches_direct_difference() {
        for kind in LossKind::ALL {
            for &(top, eps) in &[(1.0, 0.3), (-2.0, 1.5), (4.0, 0.0)] {
                let direct = kind.value(top - eps) - kind.value(top);
                assert_relative_eq!(kind.excess(top, eps), direct, epsilon = 1e-12);
            }
            let tiny = kind.excess(1.0, 1e-30);
            assert!(tiny > 0.0 && tiny < 1e-29);
        }
    }

    #[test]
    fn strictly_decreasing() {
        for kind in LossKind::ALL {
            let vals: Vec<f64> = (-20..=20).map(|i| kind.value(i as f64 * 0.25)).collect();
            assert!(vals.windows(2).all(|w| w[1] < w[0]), "{kind:?}");
        }
    }

    #[test]
    fn exponential_constants_are_interval_relative() {
        let c = LossKind::Exponential.constants(2.0);
        assert_relative_eq!(c.m0, 2f64.exp());
        assert_relative_eq!(c.m1, 2f64.exp());
        assert_eq!(LossKind::Logistic.constants(100.0), LossConstants { m0: 0.25, m1: 1.0 });
    }
}
