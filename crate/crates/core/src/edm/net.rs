//! A small three-layer convolutional denoiser with hand-written backprop.
//!
//! Input stack: the scaled noisy field, the conditioning channels, then a
//! constant plane holding the encoded noise level. Two hidden 3x3 conv
//! layers with pointwise nonlinearities feed a linear 3x3 output layer that
//! produces the raw clean-field estimate. Everything runs in `f64` so the
//! analytic gradients can be validated against central differences tightly.

use crate::edm::Denoiser;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// No nonlinearity; with zero biases the whole network is linear in its
    /// input, which gives the gradient checker a regime where central
    /// differences are exact to rounding.
    Identity,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Conditioning channels; the network input adds the noisy field and
    /// the noise-level plane on top of these.
    pub cond_channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub activation: Activation,
}

impl NetConfig {
    pub fn new(cond_channels: usize) -> Self {
        NetConfig { cond_channels, hidden: 16, kernel: 3, activation: Activation::Tanh }
    }

    pub fn in_channels(&self) -> usize {
        self.cond_channels + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    /// Weights indexed `[out][in][ky][kx]`.
    w: Array4<f64>,
    b: Array1<f64>,
}

impl ConvLayer {
    fn init(out_c: usize, in_c: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (1.0 / (in_c * k * k) as f64).sqrt();
        let w = Array4::from_shape_simple_fn((out_c, in_c, k, k), || {
            let e: f64 = StandardNormal.sample(rng);
            e * std
        });
        ConvLayer { w, b: Array1::zeros(out_c) }
    }

    /// Same-size convolution with zero padding.
    fn forward(&self, input: &Array3<f64>) -> Array3<f64> {
        let (out_c, in_c, k, _) = self.w.dim();
        let (_, ny, nx) = input.dim();
        let h = k / 2;
        let mut out = Array3::zeros((out_c, ny, nx));
        for o in 0..out_c {
            out.index_axis_mut(ndarray::Axis(0), o).fill(self.b[o]);
            for c in 0..in_c {
                for ky in 0..k {
                    for kx in 0..k {
                        let w = self.w[[o, c, ky, kx]];
                        if w == 0.0 {
                            continue;
                        }
                        let (y0, y1) = shift_range(ny, ky, h);
                        let (x0, x1) = shift_range(nx, kx, h);
                        for y in y0..y1 {
                            let iy = y + ky - h;
                            let src = input.slice(ndarray::s![c, iy, x0 + kx - h..x1 + kx - h]);
                            let mut dst = out.slice_mut(ndarray::s![o, y, x0..x1]);
                            dst.zip_mut_with(&src, |d, s| *d += w * s);
                        }
                    }
                }
            }
        }
        out
    }

    /// Gradients of a scalar loss w.r.t. weights, biases and the layer
    /// input, given the gradient w.r.t. the layer output.
    fn backward(
        &self,
        input: &Array3<f64>,
        gout: &Array3<f64>,
    ) -> (Array4<f64>, Array1<f64>, Array3<f64>) {
        let (out_c, in_c, k, _) = self.w.dim();
        let (_, ny, nx) = input.dim();
        let h = k / 2;
        let mut gw = Array4::zeros((out_c, in_c, k, k));
        let mut gb = Array1::zeros(out_c);
        let mut gin = Array3::zeros(input.dim());
        for o in 0..out_c {
            gb[o] = gout.index_axis(ndarray::Axis(0), o).sum();
            for c in 0..in_c {
                for ky in 0..k {
                    for kx in 0..k {
                        let (y0, y1) = shift_range(ny, ky, h);
                        let (x0, x1) = shift_range(nx, kx, h);
                        let mut acc = 0.0;
                        let w = self.w[[o, c, ky, kx]];
                        for y in y0..y1 {
                            let iy = y + ky - h;
                            let src = input.slice(ndarray::s![c, iy, x0 + kx - h..x1 + kx - h]);
                            let g = gout.slice(ndarray::s![o, y, x0..x1]);
                            acc += src.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>();
                            let mut gi =
                                gin.slice_mut(ndarray::s![c, iy, x0 + kx - h..x1 + kx - h]);
                            gi.zip_mut_with(&g, |d, s| *d += w * s);
                        }
                        gw[[o, c, ky, kx]] = acc;
                    }
                }
            }
        }
        (gw, gb, gin)
    }
}

/// Valid output rows/cols for a kernel tap offset `kq - h` on an axis of
/// length `n`: positions where the shifted index stays in bounds.
fn shift_range(n: usize, kq: usize, h: usize) -> (usize, usize) {
    let lo = h.saturating_sub(kq);
    let hi = (n + h).saturating_sub(kq).min(n);
    (lo, hi.max(lo))
}

/// Per-layer gradients in network order.
pub struct NetGrads {
    layers: Vec<(Array4<f64>, Array1<f64>)>,
}

impl NetGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn scale(&mut self, f: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * f);
            b.mapv_inplace(|v| v * f);
        }
    }

    pub fn add(&mut self, other: &NetGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }
}

/// Forward-pass intermediates kept for the backward pass.
pub struct Tape {
    input: Array3<f64>,
    a1: Array3<f64>,
    a2: Array3<f64>,
    out: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.out
    }
}

pub struct TinyConvDenoiser {
    cfg: NetConfig,
    l1: ConvLayer,
    l2: ConvLayer,
    l3: ConvLayer,
}

impl TinyConvDenoiser {
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = ConvLayer::init(cfg.hidden, cfg.in_channels(), cfg.kernel, &mut rng);
        let l2 = ConvLayer::init(cfg.hidden, cfg.hidden, cfg.kernel, &mut rng);
        let l3 = ConvLayer::init(1, cfg.hidden, cfg.kernel, &mut rng);
        Ok(TinyConvDenoiser { cfg, l1, l2, l3 })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        [&self.l1, &self.l2, &self.l3]
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in [&self.l1, &self.l2, &self.l3] {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                p.len()
            )));
        }
        let mut it = p.iter();
        for l in [&mut self.l1, &mut self.l2, &mut self.l3] {
            for w in l.w.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in l.b.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Stack the network input: scaled noisy field, conditioning channels,
    /// constant noise-level plane.
    pub fn assemble_input(
        &self,
        x_in: &Array2<f64>,
        cond: &Array3<f64>,
        c_noise: f64,
    ) -> Result<Array3<f64>> {
        let (cc, cy, cx) = cond.dim();
        let (ny, nx) = x_in.dim();
        if cc != self.cfg.cond_channels {
            return Err(Error::Shape(format!(
                "expected {} conditioning channels, got {cc}",
                self.cfg.cond_channels
            )));
        }
        if cy != ny || cx != nx {
            return Err(Error::Shape(format!(
                "conditioning {cy}x{cx} does not match field {ny}x{nx}"
            )));
        }
        let mut input = Array3::zeros((self.cfg.in_channels(), ny, nx));
        input.index_axis_mut(ndarray::Axis(0), 0).assign(x_in);
        for c in 0..cc {
            input
                .index_axis_mut(ndarray::Axis(0), c + 1)
                .assign(&cond.index_axis(ndarray::Axis(0), c));
        }
        input.index_axis_mut(ndarray::Axis(0), cc + 1).fill(c_noise);
        Ok(input)
    }

    pub fn forward_cached(&self, input: Array3<f64>) -> Tape {
        let act = self.cfg.activation;
        let a1 = self.l1.forward(&input).mapv(|z| act.apply(z));
        let a2 = self.l2.forward(&a1).mapv(|z| act.apply(z));
        let out3 = self.l3.forward(&a2);
        let out = out3.index_axis(ndarray::Axis(0), 0).to_owned();
        Tape { input, a1, a2, out }
    }

    /// Backpropagate a gradient w.r.t. the network output.
    pub fn backward(&self, tape: &Tape, dout: &Array2<f64>) -> NetGrads {
        let act = self.cfg.activation;
        let g3 = dout
            .clone()
            .into_shape_with_order((1, dout.nrows(), dout.ncols()))
            .expect("adding a unit channel axis");
        let (gw3, gb3, ga2) = self.l3.backward(&tape.a2, &g3);
        let gz2 = ndarray::Zip::from(&ga2)
            .and(&tape.a2)
            .map_collect(|g, a| g * act.derivative_from_output(*a));
        let (gw2, gb2, ga1) = self.l2.backward(&tape.a1, &gz2);
        let gz1 = ndarray::Zip::from(&ga1)
            .and(&tape.a1)
            .map_collect(|g, a| g * act.derivative_from_output(*a));
        let (gw1, gb1, _) = self.l1.backward(&tape.input, &gz1);
        NetGrads { layers: vec![(gw1, gb1), (gw2, gb2), (gw3, gb3)] }
    }
}

impl Denoiser for TinyConvDenoiser {
    fn cond_channels(&self) -> Option<usize> {
        Some(self.cfg.cond_channels)
    }

    fn raw_denoise(
        &self,
        x_in: &Array2<f64>,
        cond: &Array3<f64>,
        c_noise: f64,
    ) -> Result<Array2<f64>> {
        let input = self.assemble_input(x_in, cond, c_noise)?;
        Ok(self.forward_cached(input).out)
    }
}
