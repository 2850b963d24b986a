//! Gaussian MLP: tanh hidden layers, a mean head and a bounded
//! log-variance head sharing one output layer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    fn xavier(n_out: usize, n_in: usize, rng: &mut ChaCha12Rng) -> Self {
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        Self {
            w: DMatrix::from_fn(n_out, n_in, |_, _| rng.random_range(-bound..bound)),
            b: DVector::zeros(n_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            b: DVector::zeros(self.b.len()),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One ensemble member operating in normalized input/target space.
///
/// The final layer emits `2·n_out` values: the first half is the mean, the
/// second half a raw log-variance that is soft-clamped into
/// `[min_logvar, max_logvar]` so predicted variances can neither collapse
/// nor explode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianMlp {
    pub layers: Vec<Dense>,
    pub n_in: usize,
    pub n_out: usize,
    pub min_logvar: f64,
    pub max_logvar: f64,
}

/// Intermediate quantities of a batched forward pass, kept for backprop.
pub struct ForwardCache {
    /// Input plus post-activation of every hidden layer; columns are samples.
    pub activations: Vec<DMatrix<f64>>,
    pub raw_out: DMatrix<f64>,
    pub mean: DMatrix<f64>,
    pub logvar: DMatrix<f64>,
    /// d logvar / d raw logvar of the soft clamp.
    pub dlogvar: DMatrix<f64>,
}

impl GaussianMlp {
    pub fn new(
        n_in: usize,
        n_out: usize,
        hidden: &[usize],
        min_logvar: f64,
        max_logvar: f64,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        assert!(!hidden.is_empty(), "at least one hidden layer");
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = n_in;
        for &h in hidden {
            layers.push(Dense::xavier(h, prev, rng));
            prev = h;
        }
        layers.push(Dense::xavier(2 * n_out, prev, rng));
        Self {
            layers,
            n_in,
            n_out,
            min_logvar,
            max_logvar,
        }
    }

    fn clamp_logvar(&self, raw: f64) -> (f64, f64) {
        let upper = self.max_logvar - softplus(self.max_logvar - raw);
        let lv = self.min_logvar + softplus(upper - self.min_logvar);
        let d_upper = sigmoid(self.max_logvar - raw);
        let d_lv = sigmoid(upper - self.min_logvar) * d_upper;
        (lv, d_lv)
    }

    /// Batched forward pass; input columns are samples in normalized space.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> ForwardCache {
        let n_hidden = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(n_hidden + 1);
        activations.push(x.clone());
        let mut h = x.clone();
        for layer in &self.layers[..n_hidden] {
            let mut z = &layer.w * &h;
            for (j, mut col) in z.column_iter_mut().enumerate() {
                let _ = j;
                col += &layer.b;
            }
            z.apply(|v| *v = v.tanh());
            activations.push(z.clone());
            h = z;
        }
        let last = &self.layers[n_hidden];
        let mut raw = &last.w * &h;
        for mut col in raw.column_iter_mut() {
            col += &last.b;
        }
        let cols = raw.ncols();
        let mut mean = DMatrix::zeros(self.n_out, cols);
        let mut logvar = DMatrix::zeros(self.n_out, cols);
        let mut dlogvar = DMatrix::zeros(self.n_out, cols);
        for c in 0..cols {
            for r in 0..self.n_out {
                mean[(r, c)] = raw[(r, c)];
                let (lv, dlv) = self.clamp_logvar(raw[(r + self.n_out, c)]);
                logvar[(r, c)] = lv;
                dlogvar[(r, c)] = dlv;
            }
        }
        ForwardCache {
            activations,
            raw_out: raw,
            mean,
            logvar,
            dlogvar,
        }
    }

    /// Single-sample forward returning (mean, logvar) in normalized space.
    pub fn forward(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let cache = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()));
        (
            cache.mean.column(0).into_owned(),
            cache.logvar.column(0).into_owned(),
        )
    }

    /// Gradients of the Gaussian NLL
    /// `L = mean_samples Σ_d ½[(t−m)²·e^{−lv} + lv]`
    /// with respect to every layer, given upstream target residuals.
    ///
    /// Returns (gradients, mean NLL over the batch).
    pub fn backward_nll(&self, cache: &ForwardCache, targets: &DMatrix<f64>) -> (Vec<Dense>, f64) {
        let batch = targets.ncols() as f64;
        let mut nll = 0.0;
        let cols = targets.ncols();
        // Gradient w.r.t. raw output (both heads).
        let mut d_raw = DMatrix::zeros(2 * self.n_out, cols);
        for c in 0..cols {
            for r in 0..self.n_out {
                let m = cache.mean[(r, c)];
                let lv = cache.logvar[(r, c)];
                let t = targets[(r, c)];
                let inv_var = (-lv).exp();
                let resid = t - m;
                nll += 0.5 * (resid * resid * inv_var + lv);
                d_raw[(r, c)] = -resid * inv_var / batch;
                let d_lv = 0.5 * (1.0 - resid * resid * inv_var) / batch;
                d_raw[(r + self.n_out, c)] = d_lv * cache.dlogvar[(r, c)];
            }
        }
        nll /= batch;

        let mut grads: Vec<Dense> = self.layers.iter().map(|l| l.zeros_like()).collect();
        let n_layers = self.layers.len();
        let mut delta = d_raw;
        for li in (0..n_layers).rev() {
            let input = &cache.activations[li];
            grads[li].w = &delta * input.transpose();
            grads[li].b = delta.column_sum();
            if li > 0 {
                let mut back = self.layers[li].w.transpose() * &delta;
                // tanh': 1 - h²  on the activation that fed this layer
                for c in 0..back.ncols() {
                    for r in 0..back.nrows() {
                        let h = cache.activations[li][(r, c)];
                        back[(r, c)] *= 1.0 - h * h;
                    }
                }
                delta = back;
            }
        }
        (grads, nll)
    }

    /// Mean NLL of the batch without gradients.
    pub fn nll(&self, x: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
        let cache = self.forward_batch(x);
        let mut nll = 0.0;
        for c in 0..targets.ncols() {
            for r in 0..self.n_out {
                let m = cache.mean[(r, c)];
                let lv = cache.logvar[(r, c)];
                let resid = targets[(r, c)] - m;
                nll += 0.5 * (resid * resid * (-lv).exp() + lv);
            }
        }
        nll / targets.ncols() as f64
    }

    /// Jacobian of the normalized mean head with respect to the normalized
    /// input, by backward accumulation through the tanh stack.
    pub fn mean_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let cache = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()));
        let n_layers = self.layers.len();
        // Start from the mean rows of the last layer.
        let last = &self.layers[n_layers - 1];
        let mut jac = last.w.rows(0, self.n_out).into_owned();
        for li in (0..n_layers - 1).rev() {
            let act = cache.activations[li + 1].column(0);
            let mut scaled = self.layers[li].w.clone();
            for (r, mut row) in scaled.row_iter_mut().enumerate() {
                let d = 1.0 - act[r] * act[r];
                row *= d;
            }
            jac *= scaled;
        }
        jac
    }
}
