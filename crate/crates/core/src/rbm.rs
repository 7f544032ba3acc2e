//! Restricted Boltzmann machines trained with one-step contrastive
//! divergence, stacked greedily to initialize the encoder.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{logistic_inplace, DataMatrix, FeatureKind};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisibleKind {
    Binary,
    /// Unit-variance Gaussian visibles over standardized inputs.
    Gaussian,
}

/// One RBM.
///
/// `weights` is `(n_visible + 1) × n_hidden`; its last row is the hidden
/// bias, so the visible→hidden map is `[v, 1] · weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmLayer {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub visible_kind: VisibleKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Clamped to the number of rows.
    pub minibatch_size: usize,
    /// Step size for binary-visible layers.
    pub learning_rate: f64,
    /// Step size for Gaussian-visible layers.
    pub gaussian_learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            minibatch_size: 32,
            learning_rate: 0.05,
            gaussian_learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 2e-4,
            init_scale: 0.1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.learning_rate,
            self.gaussian_learning_rate,
            self.momentum,
            self.weight_decay,
            self.init_scale,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("pretraining rates must be finite"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::invalid("minibatch size must be positive"));
        }
        if self.learning_rate <= 0.0 || self.gaussian_learning_rate <= 0.0 {
            return Err(Error::invalid("pretraining learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || self.init_scale < 0.0 {
            return Err(Error::invalid("weight decay and init scale must be non-negative"));
        }
        Ok(())
    }

    fn rate_for(&self, kind: VisibleKind) -> f64 {
        match kind {
            VisibleKind::Binary => self.learning_rate,
            VisibleKind::Gaussian => self.gaussian_learning_rate,
        }
    }
}

/// Momentum buffers carried between CD-1 steps.
#[derive(Debug, Clone)]
pub struct Velocity {
    weights: Array2<f64>,
    visible_bias: Array1<f64>,
}

impl Velocity {
    pub fn zeros_for(layer: &RbmLayer) -> Self {
        Self {
            weights: Array2::zeros(layer.weights.raw_dim()),
            visible_bias: Array1::zeros(layer.visible_bias.len()),
        }
    }
}

impl RbmLayer {
    pub fn zeros(n_visible: usize, n_hidden: usize, visible_kind: VisibleKind) -> Self {
        Self {
            weights: Array2::zeros((n_visible + 1, n_hidden)),
            visible_bias: Array1::zeros(n_visible),
            visible_kind,
        }
    }

    /// Weights drawn from N(0, scale²), biases zero.
    pub fn random(
        n_visible: usize,
        n_hidden: usize,
        visible_kind: VisibleKind,
        scale: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if n_visible == 0 || n_hidden == 0 {
            return Err(Error::invalid("RBM dimensions must be positive"));
        }
        let normal = Normal::new(0.0, scale).map_err(|e| Error::invalid(e.to_string()))?;
        let mut layer = Self::zeros(n_visible, n_hidden, visible_kind);
        layer
            .weights
            .slice_mut(s![..n_visible, ..])
            .mapv_inplace(|_| normal.sample(rng));
        Ok(layer)
    }

    pub fn n_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.ncols()
    }

    fn coupling(&self) -> ArrayView2<'_, f64> {
        self.weights.slice(s![..self.n_visible(), ..])
    }

    fn hidden_bias(&self) -> ndarray::ArrayView1<'_, f64> {
        self.weights.row(self.n_visible())
    }

    /// `logistic(v · W + b_hidden)`.
    pub fn hidden_activation(&self, v: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if v.ncols() != self.n_visible() {
            return Err(Error::invalid(format!(
                "RBM expects {} visible columns, got {}",
                self.n_visible(),
                v.ncols()
            )));
        }
        let mut pre = v.dot(&self.coupling());
        pre += &self.hidden_bias().insert_axis(Axis(0));
        logistic_inplace(&mut pre);
        Ok(pre)
    }

    /// Mean visible state given hidden states: logistic for binary
    /// visibles, linear for Gaussian ones.
    pub fn visible_reconstruction(&self, h: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if h.ncols() != self.n_hidden() {
            return Err(Error::invalid(format!(
                "RBM expects {} hidden columns, got {}",
                self.n_hidden(),
                h.ncols()
            )));
        }
        let mut pre = h.dot(&self.coupling().t());
        pre += &self.visible_bias.view().insert_axis(Axis(0));
        if self.visible_kind == VisibleKind::Binary {
            logistic_inplace(&mut pre);
        }
        Ok(pre)
    }

    /// One CD-1 update on `batch`; returns the mean squared reconstruction error.
    ///
    /// Hidden states are sampled in the positive phase only; the
    /// reconstruction and the negative hidden phase use expectations.
    pub fn cd1_step(
        &mut self,
        batch: &ArrayView2<f64>,
        cfg: &PretrainConfig,
        velocity: &mut Velocity,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        let n_vis = self.n_visible();
        let b = batch.nrows();
        if b == 0 {
            return Err(Error::invalid("empty minibatch"));
        }
        let h_pos = self.hidden_activation(batch)?;
        let h_sample = h_pos.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        let v_neg = self.visible_reconstruction(&h_sample.view())?;
        let h_neg = self.hidden_activation(&v_neg.view())?;

        let inv_b = 1.0 / b as f64;
        let pos = batch.t().dot(&h_pos);
        let neg = v_neg.t().dot(&h_neg);
        let mut grad = Array2::zeros(self.weights.raw_dim());
        {
            let mut coupling = grad.slice_mut(s![..n_vis, ..]);
            coupling.assign(&((&pos - &neg) * inv_b));
            coupling.scaled_add(-cfg.weight_decay, &self.coupling());
        }
        let hidden_grad = (h_pos.sum_axis(Axis(0)) - h_neg.sum_axis(Axis(0))) * inv_b;
        grad.row_mut(n_vis).assign(&hidden_grad);
        let visible_grad = (batch.sum_axis(Axis(0)) - v_neg.sum_axis(Axis(0))) * inv_b;

        let rate = cfg.rate_for(self.visible_kind);
        velocity.weights *= cfg.momentum;
        velocity.weights.scaled_add(rate, &grad);
        velocity.visible_bias *= cfg.momentum;
        velocity.visible_bias.scaled_add(rate, &visible_grad);
        self.weights += &velocity.weights;
        self.visible_bias += &velocity.visible_bias;

        let err = (&v_neg - batch).mapv(|e| e * e).sum() / (b * n_vis) as f64;
        Ok(err)
    }

    /// Epoch loop over shuffled minibatches. Returns the per-epoch mean
    /// reconstruction error.
    pub fn train(&mut self, x: &ArrayView2<f64>, cfg: &PretrainConfig, rng: &mut SeededRng) -> Result<Vec<f64>> {
        cfg.validate()?;
        let n = x.nrows();
        let batch = cfg.minibatch_size.min(n);
        let mut velocity = Velocity::zeros_for(self);
        let mut order: Vec<usize> = (0..n).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut count = 0usize;
            for chunk in order.chunks(batch) {
                let mb = x.select(Axis(0), chunk);
                total += self.cd1_step(&mb.view(), cfg, &mut velocity, rng)? * chunk.len() as f64;
                count += chunk.len();
            }
            let err = total / count as f64;
            if !err.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite {
                    iteration: epoch,
                    dump: format!(
                        "RBM {}x{} diverged during pretraining; lower the learning rate",
                        self.n_visible(),
                        self.n_hidden()
                    ),
                });
            }
            trace.push(err);
        }
        Ok(trace)
    }

    /// Mean squared error of a deterministic up-down pass.
    pub fn reconstruction_error(&self, x: &ArrayView2<f64>) -> Result<f64> {
        let h = self.hidden_activation(x)?;
        let v = self.visible_reconstruction(&h.view())?;
        Ok((&v - x).mapv(|e| e * e).mean().unwrap_or(0.0))
    }
}

#[derive(Debug, Clone)]
pub struct PretrainedStack {
    pub layers: Vec<RbmLayer>,
    /// Per layer, per epoch mean reconstruction error.
    pub reconstruction_error: Vec<Vec<f64>>,
}

/// Greedy layer-wise pretraining. The first layer has Gaussian visibles for
/// continuous data and binary visibles otherwise; each later layer is trained
/// on the hidden probabilities of the one below.
pub fn pretrain_stack(
    x: &DataMatrix,
    layer_sizes: &[usize],
    cfg: &PretrainConfig,
    rng: &mut SeededRng,
) -> Result<PretrainedStack> {
    if layer_sizes.is_empty() {
        return Err(Error::invalid("at least one hidden layer is required"));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::invalid("hidden layer sizes must be positive"));
    }
    cfg.validate()?;
    let mut input = x.values().clone();
    let mut layers = Vec::with_capacity(layer_sizes.len());
    let mut traces = Vec::with_capacity(layer_sizes.len());
    for (l, &n_hidden) in layer_sizes.iter().enumerate() {
        let kind = if l == 0 && x.kind() == FeatureKind::Continuous {
            VisibleKind::Gaussian
        } else {
            VisibleKind::Binary
        };
        let mut layer = RbmLayer::random(input.ncols(), n_hidden, kind, cfg.init_scale, rng)?;
        let trace = layer.train(&input.view(), cfg, rng)?;
        log::debug!(
            "rbm layer {l}: {}->{} {:?}, final reconstruction error {:?}",
            layer.n_visible(),
            n_hidden,
            kind,
            trace.last()
        );
        input = layer.hidden_activation(&input.view())?;
        layers.push(layer);
        traces.push(trace);
    }
    Ok(PretrainedStack {
        layers,
        reconstruction_error: traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg() -> PretrainConfig {
        PretrainConfig::default()
    }

    #[test]
    fn zero_layer_gives_half() {
        let layer = RbmLayer::zeros(3, 4, VisibleKind::Binary);
        let v = array![[1.0, -2.0, 7.0], [0.0, 0.0, 0.0]];
        let h = layer.hidden_activation(&v.view()).unwrap();
        assert!(h.iter().all(|&p| p == 0.5));
        let back = layer.visible_reconstruction(&h.view()).unwrap();
        assert!(back.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn single_unit_activation() {
        let mut layer = RbmLayer::zeros(1, 1, VisibleKind::Binary);
        layer.weights = array![[2.0], [-1.0]];
        let h = layer.hidden_activation(&array![[1.0]].view()).unwrap();
        // logistic(2·1 − 1)
        assert!((h[[0, 0]] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((h[[0, 0]] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn stacked_batch_duplicates_rows() {
        let mut rng = SeededRng::new(1);
        let layer = RbmLayer::random(3, 2, VisibleKind::Binary, 0.5, &mut rng).unwrap();
        let v = array![[0.1, 0.9, 0.3]];
        let vv = ndarray::concatenate(Axis(0), &[v.view(), v.view()]).unwrap();
        let h = layer.hidden_activation(&vv.view()).unwrap();
        assert_eq!(h.row(0), h.row(1));
    }

    #[test]
    fn gaussian_reconstruction_is_linear_mean() {
        let mut layer = RbmLayer::zeros(2, 3, VisibleKind::Gaussian);
        layer.visible_bias = array![0.25, -1.5];
        let h = array![[1.0, 0.0, 1.0], [0.3, 0.2, 0.1]];
        let v = layer.visible_reconstruction(&h.view()).unwrap();
        for row in v.rows() {
            assert_eq!(row, layer.visible_bias);
        }
    }

    #[test]
    fn binary_reconstruction_single_unit() {
        let mut layer = RbmLayer::zeros(1, 1, VisibleKind::Binary);
        layer.weights[[0, 0]] = 2.0;
        let v = layer.visible_reconstruction(&array![[1.0]].view()).unwrap();
        assert!((v[[0, 0]] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((v[[0, 0]] - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let layer = RbmLayer::zeros(3, 2, VisibleKind::Binary);
        assert!(layer.hidden_activation(&Array2::zeros((1, 2)).view()).is_err());
        assert!(layer.visible_reconstruction(&Array2::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn equilibrium_batch_has_zero_update() {
        // zero weights and v = 0.5 everywhere: the reconstruction equals the
        // data, so positive and negative statistics cancel exactly
        let mut layer = RbmLayer::zeros(4, 3, VisibleKind::Binary);
        let batch = Array2::from_elem((8, 4), 0.5);
        let mut vel = Velocity::zeros_for(&layer);
        let mut rng = SeededRng::new(9);
        let err = layer.cd1_step(&batch.view(), &cfg(), &mut vel, &mut rng).unwrap();
        assert_eq!(err, 0.0);
        assert!(layer.weights.iter().all(|&w| w == 0.0));
        assert!(layer.visible_bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn cd1_is_deterministic() {
        let run = || {
            let mut rng = SeededRng::new(77);
            let mut layer = RbmLayer::random(5, 3, VisibleKind::Binary, 0.1, &mut rng).unwrap();
            let batch = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 5 + j) % 2) as f64);
            let mut vel = Velocity::zeros_for(&layer);
            for _ in 0..3 {
                layer.cd1_step(&batch.view(), &cfg(), &mut vel, &mut rng).unwrap();
            }
            layer
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn correlated_toy_reconstruction_improves() {
        let x = array![[1.0, 1.0], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0]];
        let mut rng = SeededRng::new(4);
        let mut layer = RbmLayer::random(2, 2, VisibleKind::Binary, 0.01, &mut rng).unwrap();
        let c = PretrainConfig {
            epochs: 200,
            minibatch_size: 6,
            ..cfg()
        };
        let trace = layer.train(&x.view(), &c, &mut rng).unwrap();
        assert_eq!(trace.len(), 200);
        assert!(trace[199] < trace[0], "{} !< {}", trace[199], trace[0]);
    }

    #[test]
    fn stack_shapes_and_kinds() {
        let mut rng = SeededRng::new(2);
        let x = DataMatrix::new(
            Array2::from_shape_fn((20, 13), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0),
            None,
            FeatureKind::Continuous,
        )
        .unwrap();
        let c = PretrainConfig { epochs: 2, ..cfg() };
        let stack = pretrain_stack(&x, &[100], &c, &mut rng).unwrap();
        assert_eq!(stack.layers.len(), 1);
        assert_eq!(stack.layers[0].visible_kind, VisibleKind::Gaussian);
        assert_eq!(stack.layers[0].weights.dim(), (14, 100));

        let b = DataMatrix::new(
            Array2::from_shape_fn((10, 12), |(i, j)| ((i + j) % 3 == 0) as u8 as f64),
            None,
            FeatureKind::Binary,
        )
        .unwrap();
        let stack = pretrain_stack(&b, &[8, 6, 4], &c, &mut rng).unwrap();
        let dims: Vec<_> = stack.layers.iter().map(|l| l.weights.dim()).collect();
        assert_eq!(dims, vec![(13, 8), (9, 6), (7, 4)]);
        assert!(stack.layers.iter().all(|l| l.visible_kind == VisibleKind::Binary));
    }

    #[test]
    fn zero_epochs_returns_initial_layer() {
        let x = DataMatrix::new(Array2::from_elem((4, 3), 0.5), None, FeatureKind::Binary).unwrap();
        let c = PretrainConfig { epochs: 0, ..cfg() };
        let stack = pretrain_stack(&x, &[5], &c, &mut SeededRng::new(8)).unwrap();
        let fresh = RbmLayer::random(3, 5, VisibleKind::Binary, c.init_scale, &mut SeededRng::new(8)).unwrap();
        assert_eq!(stack.layers[0], fresh);
        assert!(stack.reconstruction_error[0].is_empty());
        let hb = stack.layers[0].weights.row(3);
        assert!(hb.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn empty_layer_sizes_rejected() {
        let x = DataMatrix::new(Array2::from_elem((4, 3), 0.5), None, FeatureKind::Binary).unwrap();
        assert!(pretrain_stack(&x, &[], &cfg(), &mut SeededRng::new(0)).is_err());
    }
}
