//! Importance-weighted scalar losses `ℓ(p) = h · base(p; y)` on a linear
//! prediction `p`, with derivatives up to third order and Fenchel conjugates.
//!
//! The conjugate uses the perspective identity `(h f)*(s) = h f*(s / h)`, so
//! the weight enters in exactly one place. Outside its domain a conjugate is
//! `+∞` ([`f64::INFINITY`]), which compares above every finite value.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::scalar_math::{solve_1d, Bracket};

/// Bracket half-width used by the numeric conjugate.
const ORACLE_HALF_WIDTH: f64 = 100.0;
/// Distance from the open ends of the logarithmic loss domain used by the oracle.
const ORACLE_EDGE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossFamily {
    Squared,
    Logistic,
    Exponential,
    Logarithmic,
}

impl LossFamily {
    pub const ALL: [LossFamily; 4] =
        [LossFamily::Squared, LossFamily::Logistic, LossFamily::Exponential, LossFamily::Logarithmic];

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Squared => "squared",
            LossFamily::Logistic => "logistic",
            LossFamily::Exponential => "exponential",
            LossFamily::Logarithmic => "logarithmic",
        }
    }

    pub fn label_is_admissible(self, y: f64) -> bool {
        match self {
            LossFamily::Squared => y.is_finite(),
            LossFamily::Logistic | LossFamily::Exponential => y == 1.0 || y == -1.0,
            LossFamily::Logarithmic => y == 0.0 || y == 1.0,
        }
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "squared" | "square" => Ok(LossFamily::Squared),
            "logistic" => Ok(LossFamily::Logistic),
            "exponential" | "exp" => Ok(LossFamily::Exponential),
            "logarithmic" | "log" => Ok(LossFamily::Logarithmic),
            other => Err(format!("unknown loss family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("label {label} is not admissible for the {family} loss")]
    InvalidLabel { family: LossFamily, label: f64 },
    #[error("importance weight must be positive and finite, got {0}")]
    InvalidWeight(f64),
    #[error("prediction {p} is outside the domain of the {family} loss")]
    OutOfDomain { family: LossFamily, p: f64 },
}

/// One round's loss: family, label `y` and importance weight `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLoss {
    family: LossFamily,
    label: f64,
    weight: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl ScalarLoss {
    pub fn new(family: LossFamily, label: f64, weight: f64) -> Result<Self, LossError> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(LossError::InvalidWeight(weight));
        }
        if !family.label_is_admissible(label) {
            return Err(LossError::InvalidLabel { family, label });
        }
        Ok(Self { family, label, weight })
    }

    pub fn family(&self) -> LossFamily {
        self.family
    }

    pub fn label(&self) -> f64 {
        self.label
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn in_domain(&self, p: f64) -> bool {
        match self.family {
            LossFamily::Logarithmic => p > 0.0 && p < 1.0,
            _ => p.is_finite(),
        }
    }

    fn check(&self, p: f64) -> Result<(), LossError> {
        if self.in_domain(p) {
            Ok(())
        } else {
            Err(LossError::OutOfDomain { family: self.family, p })
        }
    }

    pub fn value(&self, p: f64) -> Result<f64, LossError> {
        self.check(p)?;
        Ok(self.value_unchecked(p))
    }

    pub fn d1(&self, p: f64) -> Result<f64, LossError> {
        self.check(p)?;
        Ok(self.d1_unchecked(p))
    }

    pub fn d2(&self, p: f64) -> Result<f64, LossError> {
        self.check(p)?;
        Ok(self.d2_unchecked(p))
    }

    pub fn d3(&self, p: f64) -> Result<f64, LossError> {
        self.check(p)?;
        Ok(self.d3_unchecked(p))
    }

    pub(crate) fn value_unchecked(&self, p: f64) -> f64 {
        let (y, h) = (self.label, self.weight);
        match self.family {
            LossFamily::Squared => 0.5 * h * (p - y) * (p - y),
            LossFamily::Logistic => h * softplus(-y * p),
            LossFamily::Exponential => h * (-y * p).exp(),
            LossFamily::Logarithmic => {
                if y == 1.0 {
                    -h * p.ln()
                } else {
                    -h * (-p).ln_1p()
                }
            }
        }
    }

    pub(crate) fn d1_unchecked(&self, p: f64) -> f64 {
        let (y, h) = (self.label, self.weight);
        match self.family {
            LossFamily::Squared => h * (p - y),
            LossFamily::Logistic => -y * h * sigmoid(-y * p),
            LossFamily::Exponential => -y * h * (-y * p).exp(),
            LossFamily::Logarithmic => {
                if y == 1.0 {
                    -h / p
                } else {
                    h / (1.0 - p)
                }
            }
        }
    }

    pub(crate) fn d2_unchecked(&self, p: f64) -> f64 {
        let (y, h) = (self.label, self.weight);
        match self.family {
            LossFamily::Squared => h,
            LossFamily::Logistic => h * sigmoid(y * p) * sigmoid(-y * p),
            LossFamily::Exponential => h * (-y * p).exp(),
            LossFamily::Logarithmic => {
                if y == 1.0 {
                    h / (p * p)
                } else {
                    h / ((1.0 - p) * (1.0 - p))
                }
            }
        }
    }

    pub(crate) fn d3_unchecked(&self, p: f64) -> f64 {
        let (y, h) = (self.label, self.weight);
        match self.family {
            LossFamily::Squared => 0.0,
            // d/dp [u(1-u)] with u = σ(yp) is y u (1-u) (1-2u), and 1 - 2σ(z) = -tanh(z/2).
            LossFamily::Logistic => {
                -y * h * sigmoid(y * p) * sigmoid(-y * p) * (0.5 * y * p).tanh()
            }
            LossFamily::Exponential => -y * h * (-y * p).exp(),
            LossFamily::Logarithmic => {
                if y == 1.0 {
                    -2.0 * h / (p * p * p)
                } else {
                    let r = 1.0 - p;
                    2.0 * h / (r * r * r)
                }
            }
        }
    }

    /// Closed domain `[lo, hi]` of the conjugate (endpoints may be infinite).
    pub fn conjugate_domain(&self) -> (f64, f64) {
        let (y, h) = (self.label, self.weight);
        match self.family {
            LossFamily::Squared | LossFamily::Logarithmic => (f64::NEG_INFINITY, f64::INFINITY),
            LossFamily::Logistic => {
                if y > 0.0 {
                    (-h, 0.0)
                } else {
                    (0.0, h)
                }
            }
            LossFamily::Exponential => {
                if y > 0.0 {
                    (f64::NEG_INFINITY, 0.0)
                } else {
                    (0.0, f64::INFINITY)
                }
            }
        }
    }

    pub fn in_conjugate_domain(&self, s: f64) -> bool {
        let (lo, hi) = self.conjugate_domain();
        s >= lo && s <= hi
    }

    /// `ℓ*(s) = sup_p { s p - ℓ(p) }`, or `+∞` outside the conjugate domain.
    pub fn conjugate(&self, s: f64) -> f64 {
        if s.is_nan() || !self.in_conjugate_domain(s) {
            return f64::INFINITY;
        }
        let (y, h) = (self.label, self.weight);
        match self.family {
            LossFamily::Squared => s * s / (2.0 * h) + s * y,
            LossFamily::Logistic => {
                let u = (-s * y / h).clamp(0.0, 1.0);
                h * (xlogx(u) + xlogx(1.0 - u))
            }
            LossFamily::Exponential => {
                let a = (-s * y / h).max(0.0);
                h * (xlogx(a) - a)
            }
            LossFamily::Logarithmic => {
                let r = s / h;
                if y == 1.0 {
                    if r <= -1.0 {
                        h * (-1.0 - (-r).ln())
                    } else {
                        s
                    }
                } else if r >= 1.0 {
                    h * (r - 1.0 - r.ln())
                } else {
                    0.0
                }
            }
        }
    }

    /// The prediction attaining the supremum in [`Self::conjugate`], i.e. the
    /// derivative of the conjugate. Infinite at open boundaries; clamped to
    /// the domain edge for the logarithmic loss.
    pub fn conjugate_argmax(&self, s: f64) -> f64 {
        let (y, h) = (self.label, self.weight);
        match self.family {
            LossFamily::Squared => y + s / h,
            LossFamily::Logistic => {
                let u = (-s * y / h).clamp(0.0, 1.0);
                y * ((1.0 - u).ln() - u.ln())
            }
            LossFamily::Exponential => {
                let a = (-s * y / h).max(0.0);
                -y * a.ln()
            }
            LossFamily::Logarithmic => {
                let r = s / h;
                if y == 1.0 {
                    if r <= -1.0 {
                        -1.0 / r
                    } else {
                        1.0
                    }
                } else if r >= 1.0 {
                    1.0 - 1.0 / r
                } else {
                    0.0
                }
            }
        }
    }

    /// Numeric supremum of `s p - ℓ(p)` over a wide bracket of predictions,
    /// found from the stationarity condition `ℓ'(p) = s`. Independent of the
    /// closed forms in [`Self::conjugate`]; used to validate them.
    pub fn conjugate_oracle(&self, s: f64) -> f64 {
        if s.is_nan() || !self.in_conjugate_domain(s) {
            return f64::INFINITY;
        }
        let (lo, hi) = match self.family {
            LossFamily::Logarithmic => (ORACLE_EDGE, 1.0 - ORACLE_EDGE),
            _ => {
                let half = ORACLE_HALF_WIDTH + 2.0 * (self.label.abs() + s.abs() / self.weight);
                (-half, half)
            }
        };
        let objective = |p: f64| s * p - self.value_unchecked(p);
        // The objective is concave: its slope s - ℓ'(p) is non-increasing.
        let slope = |p: f64| s - self.d1_unchecked(p);
        let p_star = if slope(lo) <= 0.0 {
            lo
        } else if slope(hi) >= 0.0 {
            hi
        } else {
            let bracket = Bracket::new(lo, hi).expect("oracle bracket is non-degenerate");
            solve_1d(slope, bracket, 1e-14).unwrap_or(0.5 * (lo + hi))
        };
        objective(p_star)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss(family: LossFamily, y: f64, h: f64) -> ScalarLoss {
        ScalarLoss::new(family, y, h).unwrap()
    }

    fn random_loss(rng: &mut ChaCha8Rng, family: LossFamily) -> ScalarLoss {
        let y = match family {
            LossFamily::Squared => rng.random_range(-3.0..3.0),
            LossFamily::Logarithmic => f64::from(rng.random_range(0..2u8)),
            _ => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        loss(family, y, 10f64.powf(rng.random_range(-1.0..2.0)))
    }

    fn random_p(rng: &mut ChaCha8Rng, family: LossFamily) -> f64 {
        match family {
            LossFamily::Logarithmic => rng.random_range(0.02..0.98),
            _ => rng.random_range(-4.0..4.0),
        }
    }

    #[test]
    fn value_examples() {
        assert_eq!(loss(LossFamily::Squared, 0.0, 1.0).value(2.0).unwrap(), 2.0);
        assert!((loss(LossFamily::Logistic, 1.0, 1.0).value(0.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(loss(LossFamily::Exponential, 1.0, 1.0).value(0.0).unwrap(), 1.0);
    }

    #[test]
    fn derivative_examples() {
        let sq = loss(LossFamily::Squared, 1.0, 1.0);
        assert_eq!(sq.d1(3.0).unwrap(), 2.0);
        assert_eq!(sq.d3(3.0).unwrap(), 0.0);
        assert_eq!(loss(LossFamily::Logistic, 1.0, 1.0).d1(0.0).unwrap(), -0.5);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(ScalarLoss::new(LossFamily::Logistic, 0.0, 1.0), Err(LossError::InvalidLabel { .. })));
        assert!(matches!(ScalarLoss::new(LossFamily::Logarithmic, -1.0, 1.0), Err(LossError::InvalidLabel { .. })));
        assert!(matches!(ScalarLoss::new(LossFamily::Squared, 0.0, 0.0), Err(LossError::InvalidWeight(_))));
        assert!(matches!(ScalarLoss::new(LossFamily::Squared, f64::NAN, 1.0), Err(LossError::InvalidLabel { .. })));
        let log = loss(LossFamily::Logarithmic, 1.0, 1.0);
        assert!(matches!(log.value(1.5), Err(LossError::OutOfDomain { .. })));
        assert!(log.d1(0.0).is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for family in LossFamily::ALL {
            for _ in 0..20 {
                let l = random_loss(&mut rng, family);
                let p = random_p(&mut rng, family);
                let eps = 1e-5;
                let fd = |f: &dyn Fn(f64) -> f64| (f(p + eps) - f(p - eps)) / (2.0 * eps);
                let pairs: [(f64, f64); 3] = [
                    (l.d1(p).unwrap(), fd(&|x| l.value_unchecked(x))),
                    (l.d2(p).unwrap(), fd(&|x| l.d1_unchecked(x))),
                    (l.d3(p).unwrap(), fd(&|x| l.d2_unchecked(x))),
                ];
                for (k, (exact, approx)) in pairs.into_iter().enumerate() {
                    let scale = exact.abs().max(l.weight());
                    assert!(
                        (exact - approx).abs() <= 1e-6 * scale,
                        "{family} d{} at p={p}: {exact} vs {approx}",
                        k + 1
                    );
                }
            }
        }
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(loss(LossFamily::Squared, 0.0, 1.0).conjugate(3.0), 4.5);
        let lg = loss(LossFamily::Logistic, 1.0, 1.0);
        assert!((lg.conjugate(-0.5) + 2f64.ln()).abs() < 1e-15);
        assert!((lg.conjugate_oracle(-0.5) + 2f64.ln()).abs() < 1e-9);
        assert_eq!(lg.conjugate(0.1), f64::INFINITY);
        assert_eq!(lg.conjugate(-1.5), f64::INFINITY);
        let ex = loss(LossFamily::Exponential, 1.0, 1.0);
        assert!((ex.conjugate(-1.0) + 1.0).abs() < 1e-15);
        assert!((ex.conjugate_oracle(-1.0) + 1.0).abs() < 1e-9);
        assert_eq!(ex.conjugate(0.0), 0.0);
    }

    #[test]
    fn oracle_trivial_points() {
        assert!((loss(LossFamily::Squared, 0.0, 1.0).conjugate_oracle(3.0) - 4.5).abs() < 1e-9);
        assert!(loss(LossFamily::Logistic, 1.0, 1.0).conjugate_oracle(0.0).abs() < 1e-9);
    }

    #[test]
    fn conjugate_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..200 {
            let family = LossFamily::ALL[i % 4];
            let l = random_loss(&mut rng, family);
            let (lo, hi) = l.conjugate_domain();
            let s = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => rng.random_range(lo..=hi),
                (false, true) => hi - rng.random_range(0.0..5.0) * l.weight(),
                (true, false) => lo + rng.random_range(0.0..5.0) * l.weight(),
                (false, false) => rng.random_range(-5.0..5.0) * l.weight(),
            };
            let closed = l.conjugate(s);
            let numeric = l.conjugate_oracle(s);
            assert!((closed - numeric).abs() <= 1e-6, "{family} y={} h={} s={s}: {closed} vs {numeric}", l.label(), l.weight());
        }
    }

    #[test]
    fn fenchel_young_and_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..400 {
            let family = LossFamily::ALL[i % 4];
            let l = random_loss(&mut rng, family);
            let p = random_p(&mut rng, family);
            let g = l.d1(p).unwrap();
            let v = l.value(p).unwrap();
            let gap = v + l.conjugate(g) - g * p;
            assert!(gap.abs() <= 1e-8 * (1.0 + v.abs() + (g * p).abs()), "{family} equality gap {gap}");
            let s = g + rng.random_range(-1.0..1.0) * l.weight();
            assert!(v + l.conjugate(s) >= s * p - 1e-9);
            assert!((l.conjugate_argmax(g) - p).abs() <= 1e-8 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn sign_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let p = rng.random_range(-6.0..6.0);
            for y in [1.0, -1.0] {
                let ex = loss(LossFamily::Exponential, y, 2.0);
                let (d1, d3) = (ex.d1(p).unwrap(), ex.d3(p).unwrap());
                assert!(if y > 0.0 { d1 <= 0.0 && d3 <= 0.0 } else { d1 >= 0.0 && d3 >= 0.0 });
                // Logistic: the third derivative shares the sign of the first
                // only on the side y p >= 0.
                let lg = loss(LossFamily::Logistic, y, 2.0);
                let (d1, d3) = (lg.d1(p).unwrap(), lg.d3(p).unwrap());
                if y * p >= 0.0 {
                    assert!(d1 * d3 >= 0.0);
                } else {
                    assert!(d3 * d1 <= 0.0);
                }
            }
            let q = rng.random_range(1e-3..1.0 - 1e-3);
            for y in [0.0, 1.0] {
                let lo = loss(LossFamily::Logarithmic, y, 1.5);
                assert_eq!(lo.d1(q).unwrap().signum(), lo.d3(q).unwrap().signum());
            }
        }
    }

    #[test]
    fn convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for i in 0..400 {
            let family = LossFamily::ALL[i % 4];
            let l = random_loss(&mut rng, family);
            assert!(l.d2(random_p(&mut rng, family)).unwrap() >= 0.0);
        }
    }
}
