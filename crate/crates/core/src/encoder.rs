//! Multi-layer logistic encoder `h = f_L ∘ … ∘ f_1 (x)` with
//! `f_l(a) = logistic([a, 1] · θ_l)`, and backpropagation of code gradients.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::logistic_inplace;
use crate::rbm::RbmLayer;

/// Ordered weight tables; table `l` is `(D_{l-1} + 1) × D_l` and its last
/// row multiplies the appended constant input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepNet {
    layers: Vec<Array2<f64>>,
}

/// Activations of every layer for one batch, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub input: Array2<f64>,
    /// `activations[l]` is the output of layer `l + 1`; the last entry is H.
    pub activations: Vec<Array2<f64>>,
}

impl EncodeTrace {
    pub fn codes(&self) -> &Array2<f64> {
        self.activations.last().expect("trace of a non-empty net")
    }

    pub fn into_codes(mut self) -> Array2<f64> {
        self.activations.pop().expect("trace of a non-empty net")
    }
}

impl DeepNet {
    pub fn new(layers: Vec<Array2<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for (l, t) in layers.iter().enumerate() {
            if t.nrows() < 2 || t.ncols() == 0 {
                return Err(Error::invalid(format!("layer {l} has degenerate shape {:?}", t.dim())));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l} has non-finite weights")));
            }
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].ncols() + 1 != pair[1].nrows() {
                return Err(Error::invalid(format!(
                    "layer {} outputs {} units but layer {} expects {}",
                    l,
                    pair[0].ncols(),
                    l + 1,
                    pair[1].nrows() - 1
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Visible→hidden weights of each RBM with its hidden bias as the bias row.
    pub fn from_rbm_stack(stack: &[RbmLayer]) -> Result<Self> {
        if stack.is_empty() {
            return Err(Error::invalid("empty RBM stack"));
        }
        Self::new(stack.iter().map(|r| r.weights.clone()).collect())
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].nrows() - 1
    }

    pub fn code_dim(&self) -> usize {
        self.layers.last().expect("non-empty").ncols()
    }

    pub fn encode(&self, x: &ArrayView2<f64>) -> Result<EncodeTrace> {
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects {} input features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for theta in &self.layers {
            let prev = activations.last().map_or_else(|| x.view(), |a| a.view());
            let a = forward_layer(&prev, theta);
            activations.push(a);
        }
        Ok(EncodeTrace {
            input: x.to_owned(),
            activations,
        })
    }

    /// Codes only.
    pub fn transform(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.encode(x)?.into_codes())
    }

    /// Weight gradients `dθ_l = [a_{l-1}, 1]ᵀ · δ_l` for upstream code
    /// gradient `dh`. Bias rows of `θ_{l+1}` do not feed `δ_l`.
    pub fn backprop(&self, trace: &EncodeTrace, dh: &ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        if trace.activations.len() != self.layers.len() {
            return Err(Error::invalid("trace was not produced by this network"));
        }
        if dh.dim() != trace.codes().dim() {
            return Err(Error::invalid(format!(
                "code gradient shape {:?} does not match codes {:?}",
                dh.dim(),
                trace.codes().dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut grads = vec![Array2::zeros((0, 0)); n_layers];
        let mut delta = dh.to_owned();
        for l in (0..n_layers).rev() {
            let a = &trace.activations[l];
            delta.zip_mut_with(a, |d, &h| *d *= h * (1.0 - h));
            let prev = if l == 0 {
                trace.input.view()
            } else {
                trace.activations[l - 1].view()
            };
            let theta = &self.layers[l];
            let fan_in = theta.nrows() - 1;
            let mut g = Array2::zeros(theta.raw_dim());
            g.slice_mut(s![..fan_in, ..]).assign(&prev.t().dot(&delta));
            g.row_mut(fan_in).assign(&delta.sum_axis(Axis(0)));
            grads[l] = g;
            if l > 0 {
                delta = delta.dot(&theta.slice(s![..fan_in, ..]).t());
            }
        }
        Ok(grads)
    }

    /// `θ_l ← θ_l − rate · dθ_l`.
    pub fn apply_update(&mut self, grads: &[Array2<f64>], rate: f64) -> Result<()> {
        if grads.len() != self.layers.len() || grads.iter().zip(&self.layers).any(|(g, t)| g.dim() != t.dim()) {
            return Err(Error::invalid("gradient shapes do not match the network"));
        }
        for (theta, g) in self.layers.iter_mut().zip(grads) {
            theta.scaled_add(-rate, g);
        }
        Ok(())
    }

    /// Value-returning variant of [`DeepNet::apply_update`].
    pub fn updated(&self, grads: &[Array2<f64>], rate: f64) -> Result<Self> {
        let mut next = self.clone();
        next.apply_update(grads, rate)?;
        Ok(next)
    }
}

fn forward_layer(prev: &ArrayView2<f64>, theta: &Array2<f64>) -> Array2<f64> {
    let fan_in = theta.nrows() - 1;
    let mut pre = prev.dot(&theta.slice(s![..fan_in, ..]));
    pre += &theta.row(fan_in).insert_axis(Axis(0));
    logistic_inplace(&mut pre);
    pre
}
