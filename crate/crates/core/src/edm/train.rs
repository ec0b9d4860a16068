//! Denoiser training loop.
//!
//! Each step draws a noise level from a log-normal band, corrupts the
//! standardised target, runs the preconditioned network and descends the
//! blended objective with Adam. Batches are drawn uniformly from the
//! provided sample set; everything is driven by one seeded generator, so a
//! training run is a pure function of (data, config).

use crate::edm::{edm_coeffs, TinyConvDenoiser};
use crate::error::{Error, Result};
use crate::loss::{hybrid_loss_grad, LossConfig};
use ndarray::{Array2, Array3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Draw a noise level: `exp(N(p_mean, p_std))`.
pub fn sample_sigma(p_mean: f64, p_std: f64, rng: &mut dyn RngCore) -> f64 {
    let n = Normal::new(p_mean, p_std).expect("finite band parameters");
    let z: f64 = n.sample(rng);
    z.exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Log-mean of the training noise band.
    pub p_mean: f64,
    /// Log-std of the training noise band.
    pub p_std: f64,
    pub sigma_data: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            p_mean: -1.2,
            p_std: 1.2,
            sigma_data: 1.0,
            steps: 200,
            batch: 2,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1)")));
            }
        }
        if !(self.p_std > 0.0) || !self.p_std.is_finite() || !self.p_mean.is_finite() {
            return Err(Error::Config(format!(
                "noise band ({}, {}) is invalid",
                self.p_mean, self.p_std
            )));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::Config(format!("sigma_data {} must be positive", self.sigma_data)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.loss.validate()
    }
}

/// One training example: conditioning stack plus standardised target.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub cond: Array3<f64>,
    pub target: Array2<f64>,
}

impl TrainSample {
    pub fn validate(&self) -> Result<()> {
        let (_, cy, cx) = self.cond.dim();
        if self.target.dim() != (cy, cx) {
            return Err(Error::Shape(format!(
                "target {:?} does not match conditioning {:?}",
                self.target.dim(),
                self.cond.dim()
            )));
        }
        if self.cond.iter().chain(self.target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in training sample".into()));
        }
        Ok(())
    }
}

pub struct Trainer {
    net: TinyConvDenoiser,
    cfg: TrainConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(net: TinyConvDenoiser, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let n = net.param_count();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer { net, cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0, rng })
    }

    pub fn net(&self) -> &TinyConvDenoiser {
        &self.net
    }

    pub fn into_net(self) -> TinyConvDenoiser {
        self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One optimisation step on an explicit batch. Returns the batch loss.
    pub fn train_step(&mut self, batch: &[&TrainSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let mut total_loss = 0.0;
        let mut acc: Option<crate::edm::NetGrads> = None;
        for sample in batch {
            sample.validate()?;
            let sigma = sample_sigma(self.cfg.p_mean, self.cfg.p_std, &mut self.rng);
            let c = edm_coeffs(sigma, self.cfg.sigma_data)?;
            let x_noisy = sample.target.mapv(|t| {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                t + sigma * e
            });
            let x_in = x_noisy.mapv(|v| v * c.c_in);
            let input = self.net.assemble_input(&x_in, &sample.cond, c.c_noise)?;
            let tape = self.net.forward_cached(input);
            let pred = ndarray::Zip::from(&x_noisy)
                .and(tape.output())
                .map_collect(|x, r| c.c_skip * x + c.c_out * r);
            let (loss, dpred) =
                hybrid_loss_grad(&pred.view(), &sample.target.view(), sigma, &self.cfg.loss)?;
            total_loss += loss;
            let draw = dpred.mapv(|g| g * c.c_out);
            let grads = self.net.backward(&tape, &draw);
            match &mut acc {
                None => acc = Some(grads),
                Some(a) => a.add(&grads),
            }
        }
        let mut grads = acc.expect("non-empty batch");
        grads.scale(1.0 / batch.len() as f64);
        self.adam_update(&grads.flat())?;
        Ok(total_loss / batch.len() as f64)
    }

    fn adam_update(&mut self, g: &[f64]) -> Result<()> {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.t += 1;
        let mut p = self.net.params_flat();
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for i in 0..p.len() {
            self.m[i] = self.cfg.beta1 * self.m[i] + (1.0 - self.cfg.beta1) * g[i];
            self.v[i] = self.cfg.beta2 * self.v[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            p[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.adam_eps);
        }
        self.net.set_params_flat(&p)
    }

    /// Run the configured number of steps, drawing batches uniformly from
    /// `dataset`. Returns the per-step loss trace.
    pub fn run(&mut self, dataset: &[TrainSample]) -> Result<Vec<f64>> {
        if dataset.is_empty() {
            return Err(Error::MissingData("empty training dataset".into()));
        }
        let mut trace = Vec::with_capacity(self.cfg.steps);
        for _ in 0..self.cfg.steps {
            let batch: Vec<&TrainSample> = (0..self.cfg.batch)
                .map(|_| &dataset[self.rng.random_range(0..dataset.len())])
                .collect();
            trace.push(self.train_step(&batch)?);
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::NetConfig;
    use rand::SeedableRng;

    fn toy_dataset(n: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let cond = Array3::from_shape_fn((2, 8, 8), |_| rng.random_range(-1.0..1.0));
                let target = cond.index_axis(ndarray::Axis(0), 0).mapv(|v| 0.5 * v);
                TrainSample { cond, target }
            })
            .collect()
    }

    #[test]
    fn sigma_sampling_stays_in_a_plausible_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for _ in 0..2000 {
            let s = sample_sigma(-1.2, 1.2, &mut rng);
            assert!(s > 0.0 && s.is_finite());
            lo = lo.min(s);
            hi = hi.max(s);
        }
        // exp(-1.2 +- ~3.5 * 1.2) spans roughly [0.005, 20]
        assert!(lo < 0.05);
        assert!(hi > 2.0);
        assert!(hi < 1000.0);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = toy_dataset(4, 9);
        let cfg = TrainConfig { steps: 12, ..TrainConfig::default() };
        let run = |seed: u64| {
            let net = TinyConvDenoiser::init(NetConfig::new(2), 3).unwrap();
            let mut tr =
                Trainer::new(net, TrainConfig { seed, ..cfg.clone() }).unwrap();
            let trace = tr.run(&data).unwrap();
            (trace, tr.net().params_flat())
        };
        let (ta, pa) = run(5);
        let (tb, pb) = run(5);
        let (tc, _) = run(6);
        assert_eq!(ta, tb);
        assert_eq!(pa, pb);
        assert_ne!(ta, tc);
    }

    #[test]
    fn loss_trends_down_on_a_learnable_task() {
        let data = toy_dataset(6, 2);
        let net = TinyConvDenoiser::init(NetConfig::new(2), 1).unwrap();
        let cfg = TrainConfig { steps: 120, batch: 2, seed: 4, ..TrainConfig::default() };
        let mut tr = Trainer::new(net, cfg).unwrap();
        let trace = tr.run(&data).unwrap();
        let head: f64 = trace[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = trace[trace.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(
            tail < 0.8 * head,
            "loss did not decrease: head {head:.4} tail {tail:.4}"
        );
    }

    #[test]
    fn mismatched_sample_is_rejected() {
        let s = TrainSample { cond: Array3::zeros((2, 8, 8)), target: Array2::zeros((4, 4)) };
        assert!(s.validate().is_err());
        let nan = TrainSample {
            cond: Array3::zeros((2, 4, 4)),
            target: Array2::from_elem((4, 4), f64::NAN),
        };
        assert!(nan.validate().is_err());
    }
}
