/// Robust loss `rho(s)` applied to the squared norm `s` of a residual block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustLoss {
    Trivial,
    Huber(f64),
    Cauchy(f64),
}

impl Default for RobustLoss {
    fn default() -> Self {
        RobustLoss::Trivial
    }
}

impl RobustLoss {
    /// Returns `(rho(s), rho'(s))`.
    pub fn evaluate(&self, s: f64) -> (f64, f64) {
        match *self {
            RobustLoss::Trivial => (s, 1.0),
            RobustLoss::Huber(a) => {
                let a2 = a * a;
                if s <= a2 {
                    (s, 1.0)
                } else {
                    let r = s.sqrt();
                    (2.0 * a * r - a2, a / r)
                }
            }
            RobustLoss::Cauchy(a) => {
                let a2 = a * a;
                let ratio = s / a2;
                (a2 * ratio.ln_1p(), 1.0 / (1.0 + ratio))
            }
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            RobustLoss::Trivial => true,
            RobustLoss::Huber(a) | RobustLoss::Cauchy(a) => a > 0.0 && a.is_finite(),
        }
    }
}
