//! Training objective: a noise-scaled MAE blended with an
//! intensity-weighted MAE.
//!
//! The scaled term divides the plain MAE by the noise level so that every
//! noise band contributes comparably. The weighted term multiplies each
//! pixel's error by a weight that grows with the target value through a sum
//! of four logistic steps, so heavy-rain pixels dominate an objective that
//! would otherwise be swamped by drizzle and zeros:
//!
//! ```text
//! w(y) = 3.5 s(150 (y - 0.015)) + 5 s(50 (y - 0.08))
//!      + 6 s(20 (y - 0.25))     + 7 s(10 (y - 0.5))
//!      + 0.6 (1 - s(150 (y - 0.015)))
//! ```
//!
//! with `s` the logistic function. The weight is bounded by 22.1 and
//! strictly increasing, with w(0) near 1 and w(1) near 21.5.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of the intensity weight curve. Defaults reproduce the curve
/// above; the fields exist so ablations can move the knees or amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightCurve {
    pub thresholds: [f64; 4],
    pub steepness: [f64; 4],
    pub amplitudes: [f64; 4],
    pub low_amplitude: f64,
}

impl Default for WeightCurve {
    fn default() -> Self {
        WeightCurve {
            thresholds: [0.015, 0.08, 0.25, 0.5],
            steepness: [150.0, 50.0, 20.0, 10.0],
            amplitudes: [3.5, 5.0, 6.0, 7.0],
            low_amplitude: 0.6,
        }
    }
}

impl WeightCurve {
    pub fn weight(&self, y: f64) -> f64 {
        let mut w = 0.0;
        for k in 0..4 {
            w += self.amplitudes[k] * sigmoid((y - self.thresholds[k]) * self.steepness[k]);
        }
        w + self.low_amplitude * (1.0 - sigmoid((y - self.thresholds[0]) * self.steepness[0]))
    }

    /// Upper bound of the weight over all inputs: every step saturated plus
    /// the low-intensity floor.
    pub fn bound(&self) -> f64 {
        self.amplitudes.iter().sum::<f64>() + self.low_amplitude
    }
}

/// Which field feeds the weight curve. Weighting by the target is the
/// reference behaviour; weighting by the prediction is kept for ablations
/// and is treated as constant when differentiating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    Truth,
    Pred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Blend factor between the scaled and weighted terms.
    pub alpha: f64,
    /// Guard added to the noise level in the scaled term's denominator.
    pub epsilon: f64,
    pub curve: WeightCurve,
    pub weight_source: WeightSource,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.8,
            epsilon: 1e-6,
            curve: WeightCurve::default(),
            weight_source: WeightSource::Truth,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

fn check_pair(pred: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> Result<()> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty loss input".into()));
    }
    if pred.iter().chain(truth.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in loss input".into()));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("noise level {sigma} must be positive")));
    }
    Ok(())
}

/// MAE divided by the noise level: `mean |pred - truth| / (sigma + eps)`.
pub fn scaled_mae(
    pred: &ArrayView2<f64>,
    truth: &ArrayView2<f64>,
    sigma: f64,
    epsilon: f64,
) -> Result<f64> {
    check_pair(pred, truth)?;
    check_sigma(sigma)?;
    let n = pred.len() as f64;
    let mae = pred
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n;
    Ok(mae / (sigma + epsilon))
}

/// Intensity-weighted MAE: `mean w(y) |pred - truth|` with `y` drawn from
/// the configured weight source.
pub fn weighted_mae(
    pred: &ArrayView2<f64>,
    truth: &ArrayView2<f64>,
    curve: &WeightCurve,
    source: WeightSource,
) -> Result<f64> {
    check_pair(pred, truth)?;
    let basis = match source {
        WeightSource::Truth => truth,
        WeightSource::Pred => pred,
    };
    let n = pred.len() as f64;
    let sum = pred
        .iter()
        .zip(truth.iter())
        .zip(basis.iter())
        .map(|((p, t), y)| curve.weight(*y) * (p - t).abs())
        .sum::<f64>();
    Ok(sum / n)
}

/// Blended objective: `alpha * scaled + (1 - alpha) * weighted`.
pub fn hybrid_loss(
    pred: &ArrayView2<f64>,
    truth: &ArrayView2<f64>,
    sigma: f64,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let s = scaled_mae(pred, truth, sigma, cfg.epsilon)?;
    let w = weighted_mae(pred, truth, &cfg.curve, cfg.weight_source)?;
    Ok(cfg.alpha * s + (1.0 - cfg.alpha) * w)
}

/// Objective value together with its gradient in the prediction. The weight
/// factor is held constant when differentiating, so the gradient of each
/// pixel is `(alpha / (sigma + eps) + (1 - alpha) w) * sign(pred - truth) / n`.
pub fn hybrid_loss_grad(
    pred: &ArrayView2<f64>,
    truth: &ArrayView2<f64>,
    sigma: f64,
    cfg: &LossConfig,
) -> Result<(f64, Array2<f64>)> {
    cfg.validate()?;
    check_pair(pred, truth)?;
    check_sigma(sigma)?;
    let n = pred.len() as f64;
    let mut grad = Array2::<f64>::zeros(pred.dim());
    let mut scaled_sum = 0.0;
    let mut weighted_sum = 0.0;
    for ((g, p), t) in grad.iter_mut().zip(pred.iter()).zip(truth.iter()) {
        let d = p - t;
        let y = match cfg.weight_source {
            WeightSource::Truth => *t,
            WeightSource::Pred => *p,
        };
        let w = cfg.curve.weight(y);
        scaled_sum += d.abs();
        weighted_sum += w * d.abs();
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = (cfg.alpha / (sigma + cfg.epsilon) + (1.0 - cfg.alpha) * w) * s / n;
    }
    let loss =
        cfg.alpha * scaled_sum / n / (sigma + cfg.epsilon) + (1.0 - cfg.alpha) * weighted_sum / n;
    Ok((loss, grad))
}
