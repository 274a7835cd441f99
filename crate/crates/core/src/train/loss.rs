use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Hinge,
    Logistic,
}

/// `y·ReLU(−ŷ) + (1−y)·ReLU(ŷ)` and its derivative in `ŷ`; the kink at 0
/// gets subgradient 0.
pub fn hinge_loss(score: f64, label: f64) -> (f64, f64) {
    let pos = if score < 0.0 { (-score, -1.0) } else { (0.0, 0.0) };
    let neg = if score > 0.0 { (score, 1.0) } else { (0.0, 0.0) };
    (label * pos.0 + (1.0 - label) * neg.0, label * pos.1 + (1.0 - label) * neg.1)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `softplus(ŷ) − y·ŷ` with gradient `σ(ŷ) − y`.
pub fn logistic_loss(score: f64, label: f64) -> (f64, f64) {
    (softplus(score) - label * score, sigmoid(score) - label)
}

impl LossKind {
    pub fn eval(self, score: f64, label: f64) -> (f64, f64) {
        match self {
            LossKind::Hinge => hinge_loss(score, label),
            LossKind::Logistic => logistic_loss(score, label),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(0.5, 1.0), (0.0, 0.0));
        assert_eq!(hinge_loss(0.5, 0.0), (0.5, 1.0));
        assert_eq!(hinge_loss(-2.0, 1.0), (2.0, -1.0));
        assert_eq!(hinge_loss(0.0, 1.0), (0.0, 0.0));
        assert_eq!(hinge_loss(0.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn logistic_examples() {
        let (l, g) = logistic_loss(0.0, 1.0);
        assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(g, -0.5, epsilon = 1e-15);
        assert!(logistic_loss(800.0, 1.0).0.abs() < 1e-300);
        let exact = (1.0 + 3.0f64.exp()).ln();
        assert_abs_diff_eq!(logistic_loss(3.0, 0.0).0, exact, epsilon = 1e-14);
        assert_abs_diff_eq!(logistic_loss(3.0, 0.0).0, 3.0486, epsilon = 1e-4);
        let (l, g) = logistic_loss(-800.0, 0.0);
        assert!(l.is_finite() && g.is_finite() && l < 1e-300);
    }

    #[test]
    fn logistic_gradient_matches_difference() {
        for &s in &[-3.0, -0.2, 0.0, 0.7, 5.0] {
            for &y in &[0.0, 1.0] {
                let h = 1e-6;
                let fd = (logistic_loss(s + h, y).0 - logistic_loss(s - h, y).0) / (2.0 * h);
                assert_abs_diff_eq!(logistic_loss(s, y).1, fd, epsilon = 1e-8);
            }
        }
    }
}
