//! From-scratch differentiable networks: three-layer MLP encoders with ELU and
//! one LayerNorm, a diagonal-Gaussian policy head and a value head, plus the
//! Adam optimizer. Forward passes cache what reverse mode needs; gradients
//! are written by hand and verified against central finite differences.
//!
//! Everything is generic over the scalar so training can run in f32 while
//! gradient checks run in f64.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Scalar type used by the networks.
pub trait Scalar:
    ndarray::LinalgScalar + num_traits::Float + Send + Sync + std::fmt::Debug + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Clamp range for the learned log standard deviation.
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_EPS: f64 = 1e-5;

fn elu<F: Scalar>(z: F) -> F {
    if z > F::zero() {
        z
    } else {
        z.exp() - F::one()
    }
}

/// ELU derivative from the activated value: 1 on the linear branch,
/// h + 1 = e^z on the exponential branch.
fn elu_deriv_from_output<F: Scalar>(h: F) -> F {
    if h > F::zero() {
        F::one()
    } else {
        h + F::one()
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// Affine layer y = x W + b with W stored (in, out).
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    /// Orthogonal weight init scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng>(rng: &mut R, input: usize, output: usize, gain: f64) -> Self {
        Self { w: orthogonal_matrix(rng, input, output, gain), b: Array1::zeros(output) }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates dL/dW = x^T dy and dL/db = sum_rows dy, returns dL/dx.
    pub fn backward(
        &self,
        x: &ArrayView2<F>,
        dy: &ArrayView2<F>,
        grads: &mut LinearGrads<F>,
    ) -> Array2<F> {
        grads.w = &grads.w + &x.t().dot(dy);
        grads.b = &grads.b + &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn zero_grads(&self) -> LinearGrads<F> {
        LinearGrads { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }
}

/// Random matrix with orthonormal columns (rows when input < output),
/// scaled by `gain`. Twice-iterated Gram-Schmidt on Gaussian draws.
fn orthogonal_matrix<F: Scalar, R: Rng>(
    rng: &mut R,
    input: usize,
    output: usize,
    gain: f64,
) -> Array2<F> {
    let (rows, cols, transpose) =
        if input >= output { (input, output, false) } else { (output, input, true) };
    let mut a = Array2::<f64>::zeros((rows, cols));
    for v in a.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    for _ in 0..2 {
        for j in 0..cols {
            for i in 0..j {
                let dot = a.column(i).dot(&a.column(j));
                let qi = a.column(i).to_owned();
                a.column_mut(j).zip_mut_with(&qi, |x, q| *x -= dot * q);
            }
            let norm = a.column(j).dot(&a.column(j)).sqrt();
            a.column_mut(j).mapv_inplace(|x| x / norm);
        }
    }
    let a = if transpose { a.t().as_standard_layout().to_owned() } else { a };
    a.mapv(|v| F::from_f64(v * gain))
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

/// Per-sample normalization with learned scale/shift.
#[derive(Debug, Clone)]
pub struct LayerNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub eps: F,
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::from_elem(dim, F::one()),
            beta: Array1::zeros(dim),
            eps: F::from_f64(LN_EPS),
        }
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let n = x.ncols();
        let nf = F::from_f64(n as f64);
        let mut xhat = Array2::zeros(x.raw_dim());
        let mut inv_std = Array1::zeros(x.nrows());
        for (r, row) in x.outer_iter().enumerate() {
            let mean = row.sum() / nf;
            let mut var = F::zero();
            for v in row.iter() {
                let d = *v - mean;
                var = var + d * d;
            }
            var = var / nf;
            let is = (var + self.eps).sqrt().recip();
            inv_std[r] = is;
            for (c, v) in row.iter().enumerate() {
                xhat[(r, c)] = (*v - mean) * is;
            }
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache<F>,
        dy: &ArrayView2<F>,
        grads: &mut LayerNormGrads<F>,
    ) -> Array2<F> {
        let n = dy.ncols();
        let nf = F::from_f64(n as f64);
        grads.beta = &grads.beta + &dy.sum_axis(Axis(0));
        grads.gamma = &grads.gamma + &(dy * &cache.xhat).sum_axis(Axis(0));

        let mut dx = Array2::zeros(dy.raw_dim());
        for (r, dy_row) in dy.outer_iter().enumerate() {
            let xhat_row = cache.xhat.row(r);
            let is = cache.inv_std[r];
            let mut m1 = F::zero();
            let mut m2 = F::zero();
            for c in 0..n {
                let dxhat = dy_row[c] * self.gamma[c];
                m1 = m1 + dxhat;
                m2 = m2 + dxhat * xhat_row[c];
            }
            m1 = m1 / nf;
            m2 = m2 / nf;
            for c in 0..n {
                let dxhat = dy_row[c] * self.gamma[c];
                dx[(r, c)] = is * (dxhat - m1 - xhat_row[c] * m2);
            }
        }
        dx
    }

    pub fn zero_grads(&self) -> LayerNormGrads<F> {
        LayerNormGrads {
            gamma: Array1::zeros(self.gamma.raw_dim()),
            beta: Array1::zeros(self.beta.raw_dim()),
        }
    }
}

// ---------------------------------------------------------------------------
// MLP encoder
// ---------------------------------------------------------------------------

/// Where the single LayerNorm sits inside the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerNormPos {
    /// Linear -> ELU -> LN -> Linear -> ELU -> Linear.
    #[default]
    AfterFirst,
    /// Linear -> ELU -> Linear -> ELU -> LN -> Linear (ablation).
    AfterSecond,
}

/// Three affine layers with ELU activations and one LayerNorm.
#[derive(Debug, Clone)]
pub struct Mlp<F> {
    pub l1: Linear<F>,
    pub ln: LayerNorm<F>,
    pub l2: Linear<F>,
    pub l3: Linear<F>,
    pub ln_pos: LayerNormPos,
}

#[derive(Debug, Clone)]
pub struct MlpGrads<F> {
    pub l1: LinearGrads<F>,
    pub ln: LayerNormGrads<F>,
    pub l2: LinearGrads<F>,
    pub l3: LinearGrads<F>,
}

/// Intermediates kept for the backward pass.
pub struct MlpCache<F> {
    x: Array2<F>,
    h1: Array2<F>,
    ln1: Option<LayerNormCache<F>>,
    l2_in: Array2<F>,
    h2: Array2<F>,
    ln2: Option<LayerNormCache<F>>,
    l3_in: Array2<F>,
}

impl<F: Scalar> Mlp<F> {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize, ln_pos: LayerNormPos) -> Self {
        let gain = std::f64::consts::SQRT_2;
        Self {
            l1: Linear::orthogonal(rng, input, hidden, gain),
            ln: LayerNorm::new(hidden),
            l2: Linear::orthogonal(rng, hidden, hidden, gain),
            l3: Linear::orthogonal(rng, hidden, hidden, gain),
            ln_pos,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.l3.output_dim()
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        let (out, _) = self.forward_cached(x);
        out
    }

    pub fn forward_cached(&self, x: &ArrayView2<F>) -> (Array2<F>, MlpCache<F>) {
        let h1 = self.l1.forward(x).mapv(elu);
        let (l2_in, ln1) = match self.ln_pos {
            LayerNormPos::AfterFirst => {
                let (n, c) = self.ln.forward(&h1.view());
                (n, Some(c))
            }
            LayerNormPos::AfterSecond => (h1.clone(), None),
        };
        let h2 = self.l2.forward(&l2_in.view()).mapv(elu);
        let (l3_in, ln2) = match self.ln_pos {
            LayerNormPos::AfterFirst => (h2.clone(), None),
            LayerNormPos::AfterSecond => {
                let (n, c) = self.ln.forward(&h2.view());
                (n, Some(c))
            }
        };
        let out = self.l3.forward(&l3_in.view());
        (out, MlpCache { x: x.to_owned(), h1, ln1, l2_in, h2, ln2, l3_in })
    }

    pub fn backward(
        &self,
        cache: &MlpCache<F>,
        d_out: &ArrayView2<F>,
        grads: &mut MlpGrads<F>,
    ) -> Array2<F> {
        let d_l3_in = self.l3.backward(&cache.l3_in.view(), d_out, &mut grads.l3);
        let d_h2 = match (&cache.ln2, self.ln_pos) {
            (Some(c), LayerNormPos::AfterSecond) => {
                self.ln.backward(c, &d_l3_in.view(), &mut grads.ln)
            }
            _ => d_l3_in,
        };
        let mut d_z2 = d_h2;
        d_z2.zip_mut_with(&cache.h2, |d, h| *d = *d * elu_deriv_from_output(*h));
        let d_l2_in = self.l2.backward(&cache.l2_in.view(), &d_z2.view(), &mut grads.l2);
        let d_h1 = match (&cache.ln1, self.ln_pos) {
            (Some(c), LayerNormPos::AfterFirst) => {
                self.ln.backward(c, &d_l2_in.view(), &mut grads.ln)
            }
            _ => d_l2_in,
        };
        let mut d_z1 = d_h1;
        d_z1.zip_mut_with(&cache.h1, |d, h| *d = *d * elu_deriv_from_output(*h));
        self.l1.backward(&cache.x.view(), &d_z1.view(), &mut grads.l1)
    }

    pub fn zero_grads(&self) -> MlpGrads<F> {
        MlpGrads {
            l1: self.l1.zero_grads(),
            ln: self.ln.zero_grads(),
            l2: self.l2.zero_grads(),
            l3: self.l3.zero_grads(),
        }
    }
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

/// Diagonal-Gaussian action head: affine mean plus state-independent
/// learned log standard deviations.
#[derive(Debug, Clone)]
pub struct GaussianHead<F> {
    pub mean: Linear<F>,
    pub log_std: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct GaussianHeadGrads<F> {
    pub mean: LinearGrads<F>,
    pub log_std: Array1<F>,
}

impl<F: Scalar> GaussianHead<F> {
    pub fn new<R: Rng>(rng: &mut R, latent: usize, act_dim: usize, init_log_std: f64) -> Self {
        Self {
            mean: Linear::orthogonal(rng, latent, act_dim, 0.01),
            log_std: Array1::from_elem(act_dim, F::from_f64(init_log_std)),
        }
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Log standard deviations after the [-20, 2] clamp.
    pub fn clamped_log_std(&self) -> Array1<F> {
        self.log_std
            .mapv(|v| v.max(F::from_f64(LOG_STD_MIN)).min(F::from_f64(LOG_STD_MAX)))
    }

    pub fn std(&self) -> Array1<F> {
        self.clamped_log_std().mapv(|v| v.exp())
    }

    /// Draw an action for one latent row; returns (action, log_prob).
    pub fn sample_row<R: Rng>(&self, mean: &ArrayView1<F>, rng: &mut R) -> (Vec<F>, F) {
        let std = self.std();
        let mut action = Vec::with_capacity(mean.len());
        for d in 0..mean.len() {
            let z: f64 = StandardNormal.sample(rng);
            action.push(mean[d] + std[d] * F::from_f64(z));
        }
        let lp = self.log_prob_row(mean, &action);
        (action, lp)
    }

    /// Log density of `action` under N(mean, diag(std^2)).
    pub fn log_prob_row(&self, mean: &ArrayView1<F>, action: &[F]) -> F {
        let log_std = self.clamped_log_std();
        let half = F::from_f64(0.5);
        let ln2pi = F::from_f64((2.0 * std::f64::consts::PI).ln());
        let mut lp = F::zero();
        for d in 0..action.len() {
            let z = (action[d] - mean[d]) / log_std[d].exp();
            lp = lp - half * z * z - log_std[d] - half * ln2pi;
        }
        lp
    }

    /// Entropy of the diagonal Gaussian: sum(log std) + D/2 (1 + ln 2 pi).
    pub fn entropy(&self) -> F {
        let log_std = self.clamped_log_std();
        let d = F::from_f64(log_std.len() as f64);
        let half = F::from_f64(0.5);
        let ln2pi = F::from_f64((2.0 * std::f64::consts::PI).ln());
        log_std.sum() + d * half * (F::one() + ln2pi)
    }

    /// Gradient mask for the log-std clamp (zero outside the active range).
    pub fn log_std_grad_mask(&self) -> Array1<F> {
        self.log_std.mapv(|v| {
            if v.to_f64() > LOG_STD_MIN && v.to_f64() < LOG_STD_MAX {
                F::one()
            } else {
                F::zero()
            }
        })
    }

    pub fn zero_grads(&self) -> GaussianHeadGrads<F> {
        GaussianHeadGrads {
            mean: self.mean.zero_grads(),
            log_std: Array1::zeros(self.log_std.raw_dim()),
        }
    }
}

// ---------------------------------------------------------------------------
// Policy and value networks
// ---------------------------------------------------------------------------

/// Actor: encoder + Gaussian head.
#[derive(Debug, Clone)]
pub struct Policy<F> {
    pub enc: Mlp<F>,
    pub head: GaussianHead<F>,
}

#[derive(Debug, Clone)]
pub struct PolicyGrads<F> {
    pub enc: MlpGrads<F>,
    pub head: GaussianHeadGrads<F>,
}

pub struct PolicyCache<F> {
    enc: MlpCache<F>,
    latent: Array2<F>,
}

impl<F: Scalar> Policy<F> {
    pub fn new<R: Rng>(
        rng: &mut R,
        obs_dim: usize,
        hidden: usize,
        act_dim: usize,
        init_log_std: f64,
        ln_pos: LayerNormPos,
    ) -> Self {
        Self {
            enc: Mlp::new(rng, obs_dim, hidden, ln_pos),
            head: GaussianHead::new(rng, hidden, act_dim, init_log_std),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.enc.input_dim()
    }

    /// Action means for a batch of observations.
    pub fn forward_mean(&self, obs: &ArrayView2<F>) -> Array2<F> {
        let latent = self.enc.forward(obs);
        self.head.mean.forward(&latent.view())
    }

    pub fn forward_cached(&self, obs: &ArrayView2<F>) -> (Array2<F>, PolicyCache<F>) {
        let (latent, enc_cache) = self.enc.forward_cached(obs);
        let means = self.head.mean.forward(&latent.view());
        (means, PolicyCache { enc: enc_cache, latent })
    }

    /// Backpropagate gradients w.r.t. the action means (log-std grads are
    /// accumulated directly by the loss).
    pub fn backward(
        &self,
        cache: &PolicyCache<F>,
        d_means: &ArrayView2<F>,
        grads: &mut PolicyGrads<F>,
    ) {
        let d_latent =
            self.head.mean.backward(&cache.latent.view(), d_means, &mut grads.head.mean);
        self.enc.backward(&cache.enc, &d_latent.view(), &mut grads.enc);
    }

    pub fn zero_grads(&self) -> PolicyGrads<F> {
        PolicyGrads { enc: self.enc.zero_grads(), head: self.head.zero_grads() }
    }
}

/// Critic: per-feature input scaling, encoder, scalar head. The scaling is a
/// stored normalization constant (the raw time feature is a large integer),
/// not a learned parameter.
#[derive(Debug, Clone)]
pub struct ValueNet<F> {
    pub enc: Mlp<F>,
    pub head: Linear<F>,
    pub input_scale: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct ValueNetGrads<F> {
    pub enc: MlpGrads<F>,
    pub head: LinearGrads<F>,
}

pub struct ValueNetCache<F> {
    enc: MlpCache<F>,
    latent: Array2<F>,
}

impl<F: Scalar> ValueNet<F> {
    pub fn new<R: Rng>(
        rng: &mut R,
        obs_dim: usize,
        hidden: usize,
        input_scale: Array1<F>,
        ln_pos: LayerNormPos,
    ) -> Self {
        assert_eq!(input_scale.len(), obs_dim);
        Self {
            enc: Mlp::new(rng, obs_dim, hidden, ln_pos),
            head: Linear::orthogonal(rng, hidden, 1, 1.0),
            input_scale,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.enc.input_dim()
    }

    /// State values for a batch of observations.
    pub fn forward(&self, obs: &ArrayView2<F>) -> Array1<F> {
        let scaled = obs * &self.input_scale;
        let latent = self.enc.forward(&scaled.view());
        let v = self.head.forward(&latent.view());
        v.column(0).to_owned()
    }

    pub fn forward_cached(&self, obs: &ArrayView2<F>) -> (Array1<F>, ValueNetCache<F>) {
        let scaled = obs * &self.input_scale;
        let (latent, enc_cache) = self.enc.forward_cached(&scaled.view());
        let v = self.head.forward(&latent.view());
        (v.column(0).to_owned(), ValueNetCache { enc: enc_cache, latent })
    }

    pub fn backward(
        &self,
        cache: &ValueNetCache<F>,
        d_values: &ArrayView1<F>,
        grads: &mut ValueNetGrads<F>,
    ) {
        let d_v = d_values.to_owned().insert_axis(Axis(1));
        let d_latent = self.head.backward(&cache.latent.view(), &d_v.view(), &mut grads.head);
        self.enc.backward(&cache.enc, &d_latent.view(), &mut grads.enc);
    }

    pub fn zero_grads(&self) -> ValueNetGrads<F> {
        ValueNetGrads { enc: self.enc.zero_grads(), head: self.head.zero_grads() }
    }
}

// ---------------------------------------------------------------------------
// Flat parameter access (optimizer, checkpointing, gradient checks)
// ---------------------------------------------------------------------------

/// Networks and grad buffers expose their tensors as ordered slices; the
/// order is part of the checkpoint format and must stay stable.
pub trait TensorSet<F> {
    fn tensor_names(&self) -> Vec<String>;
    fn tensor_shapes(&self) -> Vec<Vec<usize>>;
    fn slices(&self) -> Vec<&[F]>;
    fn slices_mut(&mut self) -> Vec<&mut [F]>;
    fn param_count(&self) -> usize {
        self.tensor_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

impl<F: Scalar> TensorSet<F> for Linear<F> {
    fn tensor_names(&self) -> Vec<String> {
        vec!["w".into(), "b".into()]
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        vec![self.w.shape().to_vec(), vec![self.b.len()]]
    }
    fn slices(&self) -> Vec<&[F]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }
    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

impl<F: Scalar> TensorSet<F> for LinearGrads<F> {
    fn tensor_names(&self) -> Vec<String> {
        Vec::new()
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        vec![self.w.shape().to_vec(), vec![self.b.len()]]
    }
    fn slices(&self) -> Vec<&[F]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }
    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

impl<F: Scalar> TensorSet<F> for Mlp<F> {
    fn tensor_names(&self) -> Vec<String> {
        ["l1.w", "l1.b", "ln.gamma", "ln.beta", "l2.w", "l2.b", "l3.w", "l3.b"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        vec![
            self.l1.w.shape().to_vec(),
            vec![self.l1.b.len()],
            vec![self.ln.gamma.len()],
            vec![self.ln.beta.len()],
            self.l2.w.shape().to_vec(),
            vec![self.l2.b.len()],
            self.l3.w.shape().to_vec(),
            vec![self.l3.b.len()],
        ]
    }
    fn slices(&self) -> Vec<&[F]> {
        vec![
            self.l1.w.as_slice().unwrap(),
            self.l1.b.as_slice().unwrap(),
            self.ln.gamma.as_slice().unwrap(),
            self.ln.beta.as_slice().unwrap(),
            self.l2.w.as_slice().unwrap(),
            self.l2.b.as_slice().unwrap(),
            self.l3.w.as_slice().unwrap(),
            self.l3.b.as_slice().unwrap(),
        ]
    }
    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.l1.w.as_slice_mut().unwrap(),
            self.l1.b.as_slice_mut().unwrap(),
            self.ln.gamma.as_slice_mut().unwrap(),
            self.ln.beta.as_slice_mut().unwrap(),
            self.l2.w.as_slice_mut().unwrap(),
            self.l2.b.as_slice_mut().unwrap(),
            self.l3.w.as_slice_mut().unwrap(),
            self.l3.b.as_slice_mut().unwrap(),
        ]
    }
}

impl<F: Scalar> TensorSet<F> for MlpGrads<F> {
    fn tensor_names(&self) -> Vec<String> {
        Vec::new()
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        vec![
            self.l1.w.shape().to_vec(),
            vec![self.l1.b.len()],
            vec![self.ln.gamma.len()],
            vec![self.ln.beta.len()],
            self.l2.w.shape().to_vec(),
            vec![self.l2.b.len()],
            self.l3.w.shape().to_vec(),
            vec![self.l3.b.len()],
        ]
    }
    fn slices(&self) -> Vec<&[F]> {
        vec![
            self.l1.w.as_slice().unwrap(),
            self.l1.b.as_slice().unwrap(),
            self.ln.gamma.as_slice().unwrap(),
            self.ln.beta.as_slice().unwrap(),
            self.l2.w.as_slice().unwrap(),
            self.l2.b.as_slice().unwrap(),
            self.l3.w.as_slice().unwrap(),
            self.l3.b.as_slice().unwrap(),
        ]
    }
    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.l1.w.as_slice_mut().unwrap(),
            self.l1.b.as_slice_mut().unwrap(),
            self.ln.gamma.as_slice_mut().unwrap(),
            self.ln.beta.as_slice_mut().unwrap(),
            self.l2.w.as_slice_mut().unwrap(),
            self.l2.b.as_slice_mut().unwrap(),
            self.l3.w.as_slice_mut().unwrap(),
            self.l3.b.as_slice_mut().unwrap(),
        ]
    }
}

impl<F: Scalar> TensorSet<F> for Policy<F> {
    fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            TensorSet::<F>::tensor_names(&self.enc).into_iter().map(|n| format!("actor.{n}")).collect();
        names.push("actor.head.w".into());
        names.push("actor.head.b".into());
        names.push("actor.log_std".into());
        names
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = TensorSet::<F>::tensor_shapes(&self.enc);
        shapes.push(self.head.mean.w.shape().to_vec());
        shapes.push(vec![self.head.mean.b.len()]);
        shapes.push(vec![self.head.log_std.len()]);
        shapes
    }
    fn slices(&self) -> Vec<&[F]> {
        let mut s = TensorSet::<F>::slices(&self.enc);
        s.push(self.head.mean.w.as_slice().unwrap());
        s.push(self.head.mean.b.as_slice().unwrap());
        s.push(self.head.log_std.as_slice().unwrap());
        s
    }
    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut s = TensorSet::<F>::slices_mut(&mut self.enc);
        s.push(self.head.mean.w.as_slice_mut().unwrap());
        s.push(self.head.mean.b.as_slice_mut().unwrap());
        s.push(self.head.log_std.as_slice_mut().unwrap());
        s
    }
}

impl<F: Scalar> TensorSet<F> for PolicyGrads<F> {
    fn tensor_names(&self) -> Vec<String> {
        Vec::new()
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = TensorSet::<F>::tensor_shapes(&self.enc);
        shapes.push(self.head.mean.w.shape().to_vec());
        shapes.push(vec![self.head.mean.b.len()]);
        shapes.push(vec![self.head.log_std.len()]);
        shapes
    }
    fn slices(&self) -> Vec<&[F]> {
        let mut s = TensorSet::<F>::slices(&self.enc);
        s.push(self.head.mean.w.as_slice().unwrap());
        s.push(self.head.mean.b.as_slice().unwrap());
        s.push(self.head.log_std.as_slice().unwrap());
        s
    }
    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut s = TensorSet::<F>::slices_mut(&mut self.enc);
        s.push(self.head.mean.w.as_slice_mut().unwrap());
        s.push(self.head.mean.b.as_slice_mut().unwrap());
        s.push(self.head.log_std.as_slice_mut().unwrap());
        s
    }
}

impl<F: Scalar> TensorSet<F> for ValueNet<F> {
    fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            TensorSet::<F>::tensor_names(&self.enc).into_iter().map(|n| format!("critic.{n}")).collect();
        names.push("critic.head.w".into());
        names.push("critic.head.b".into());
        names
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = TensorSet::<F>::tensor_shapes(&self.enc);
        shapes.push(self.head.w.shape().to_vec());
        shapes.push(vec![self.head.b.len()]);
        shapes
    }
    fn slices(&self) -> Vec<&[F]> {
        let mut s = TensorSet::<F>::slices(&self.enc);
        s.push(self.head.w.as_slice().unwrap());
        s.push(self.head.b.as_slice().unwrap());
        s
    }
    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut s = TensorSet::<F>::slices_mut(&mut self.enc);
        s.push(self.head.w.as_slice_mut().unwrap());
        s.push(self.head.b.as_slice_mut().unwrap());
        s
    }
}

impl<F: Scalar> TensorSet<F> for ValueNetGrads<F> {
    fn tensor_names(&self) -> Vec<String> {
        Vec::new()
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = TensorSet::<F>::tensor_shapes(&self.enc);
        shapes.push(self.head.w.shape().to_vec());
        shapes.push(vec![self.head.b.len()]);
        shapes
    }
    fn slices(&self) -> Vec<&[F]> {
        let mut s = TensorSet::<F>::slices(&self.enc);
        s.push(self.head.w.as_slice().unwrap());
        s.push(self.head.b.as_slice().unwrap());
        s
    }
    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut s = TensorSet::<F>::slices_mut(&mut self.enc);
        s.push(self.head.w.as_slice_mut().unwrap());
        s.push(self.head.b.as_slice_mut().unwrap());
        s
    }
}

/// Elementwise a += b over aligned tensor sets.
pub fn add_assign<F: Scalar, A: TensorSet<F>, B: TensorSet<F>>(acc: &mut A, other: &B) {
    let mut a = acc.slices_mut();
    let b = other.slices();
    assert_eq!(a.len(), b.len());
    for (pa, pb) in a.iter_mut().zip(b.iter()) {
        for (x, y) in pa.iter_mut().zip(pb.iter()) {
            *x = *x + *y;
        }
    }
}

/// Global L2 norm across every tensor in the set.
pub fn global_grad_norm<F: Scalar, T: TensorSet<F>>(grads: &T) -> F {
    let mut sq = F::zero();
    for s in grads.slices() {
        for v in s {
            sq = sq + *v * *v;
        }
    }
    sq.sqrt()
}

/// Scale every tensor in place.
pub fn scale_tensors<F: Scalar, T: TensorSet<F>>(grads: &mut T, factor: F) {
    for s in grads.slices_mut() {
        for v in s.iter_mut() {
            *v = *v * factor;
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam with bias correction; state aligned with a TensorSet's slice order.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new<T: TensorSet<F>>(net: &T, lr: f64) -> Self {
        let m = net.slices().iter().map(|s| vec![F::zero(); s.len()]).collect::<Vec<_>>();
        let v = m.clone();
        Self {
            lr: F::from_f64(lr),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
            t: 0,
            m,
            v,
        }
    }

    pub fn step<N: TensorSet<F>, G: TensorSet<F>>(&mut self, net: &mut N, grads: &G) {
        self.t += 1;
        let bc1 = F::one() - self.beta1.powi(self.t);
        let bc2 = F::one() - self.beta2.powi(self.t);
        let mut params = net.slices_mut();
        let gs = grads.slices();
        assert_eq!(params.len(), self.m.len());
        for i in 0..params.len() {
            let p = &mut params[i];
            let g = gs[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (F::one() - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (F::one() - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn elu_reference_values() {
        assert_eq!(elu(1.0f64), 1.0);
        assert_eq!(elu(0.0f64), 0.0);
        assert_relative_eq!(elu(-1.0f64), (-1.0f64).exp() - 1.0, epsilon = 1e-15);
        assert_relative_eq!(elu(-1.0f64), -0.6321, epsilon = 1e-4);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let ln = LayerNorm::<f64>::new(4);
        let x = array![[3.0, 3.0, 3.0, 3.0]];
        let (y, _) = ln.forward(&x.view());
        for v in y.iter() {
            assert!(v.abs() < 1e-6, "constant rows normalize to zero, got {v}");
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ln = LayerNorm::<f64>::new(64);
        let mut x = Array2::zeros((8, 64));
        for v in x.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        let (y, _) = ln.forward(&x.view());
        for row in y.outer_iter() {
            let mean = row.sum() / 64.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4, "row variance {var}");
        }
    }

    #[test]
    fn two_unit_network_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mlp = Mlp::<f64>::new(&mut rng, 2, 2, LayerNormPos::AfterFirst);
        mlp.l1.w = array![[1.0, 0.5], [-0.25, 1.5]];
        mlp.l1.b = array![0.1, -0.2];
        mlp.ln.gamma = array![1.2, 0.8];
        mlp.ln.beta = array![0.05, -0.05];
        mlp.l2.w = array![[0.7, -0.3], [0.2, 0.9]];
        mlp.l2.b = array![0.0, 0.1];
        mlp.l3.w = array![[1.0, 0.0], [0.5, -1.0]];
        mlp.l3.b = array![-0.1, 0.2];

        let x = array![[0.3, -0.6]];
        let out = mlp.forward(&x.view());

        // Hand computation, scalar by scalar.
        let z1: [f64; 2] =
            [0.3 * 1.0 + (-0.6) * (-0.25) + 0.1, 0.3 * 0.5 + (-0.6) * 1.5 + (-0.2)];
        let h1 = [elu(z1[0]), elu(z1[1])];
        let mean = (h1[0] + h1[1]) / 2.0;
        let var = ((h1[0] - mean).powi(2) + (h1[1] - mean).powi(2)) / 2.0;
        let is = 1.0 / (var + 1e-5).sqrt();
        let n1 = [1.2 * (h1[0] - mean) * is + 0.05, 0.8 * (h1[1] - mean) * is - 0.05];
        let z2 = [n1[0] * 0.7 + n1[1] * 0.2, n1[0] * (-0.3) + n1[1] * 0.9 + 0.1];
        let h2 = [elu(z2[0]), elu(z2[1])];
        let expect =
            [h2[0] * 1.0 + h2[1] * 0.5 - 0.1, h2[0] * 0.0 + h2[1] * (-1.0) + 0.2];
        assert_relative_eq!(out[(0, 0)], expect[0], epsilon = 1e-12);
        assert_relative_eq!(out[(0, 1)], expect[1], epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_init_has_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gain = std::f64::consts::SQRT_2;
        let w: Array2<f64> = orthogonal_matrix(&mut rng, 24, 8, gain);
        let gram = w.t().dot(&w);
        for i in 0..8 {
            for j in 0..8 {
                let expect = if i == j { gain * gain } else { 0.0 };
                assert!((gram[(i, j)] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = 42;
        let hidden = 256;
        let act = 4;
        let policy =
            Policy::<f32>::new(&mut rng, obs, hidden, act, -1.2, LayerNormPos::AfterFirst);
        let expect = (obs * hidden + hidden)      // l1
            + 2 * hidden                          // layer norm
            + (hidden * hidden + hidden) * 2      // l2, l3
            + (hidden * act + act)                // mean head
            + act; // log_std
        assert_eq!(TensorSet::<f32>::param_count(&policy), expect);
        assert_eq!(expect, 144_136);

        let critic_obs = 43;
        let scale = Array1::from_elem(critic_obs, 1.0f32);
        let critic =
            ValueNet::<f32>::new(&mut rng, critic_obs, hidden, scale, LayerNormPos::AfterFirst);
        let expect_critic = (critic_obs * hidden + hidden)
            + 2 * hidden
            + (hidden * hidden + hidden) * 2
            + (hidden + 1);
        assert_eq!(TensorSet::<f32>::param_count(&critic), expect_critic);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::<f32>::new(&mut rng, 10, 32, LayerNormPos::AfterFirst);
        let mut x = Array2::zeros((5, 10));
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0f32..1.0);
        }
        let a = mlp.forward(&x.view());
        let b = mlp.forward(&x.view());
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_log_prob_at_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = GaussianHead::<f64>::new(&mut rng, 8, 4, (0.3f64).ln());
        let mean = array![0.2, -0.4, 0.0, 1.0];
        let action = [0.2, -0.4, 0.0, 1.0];
        let lp = head.log_prob_row(&mean.view(), &action);
        let expect = -head.clamped_log_std().sum() - 2.0 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(lp, expect, epsilon = 1e-12);
    }

    #[test]
    fn entropy_closed_form_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut head = GaussianHead::<f64>::new(&mut rng, 8, 4, 0.0);
        let h_unit = head.entropy();
        assert_relative_eq!(
            h_unit,
            2.0 * (1.0 + (2.0 * std::f64::consts::PI).ln()),
            epsilon = 1e-12
        );
        assert_relative_eq!(h_unit, 5.6758, epsilon = 1e-4);

        head.log_std.mapv_inplace(|v| v + (2.0f64).ln());
        assert_relative_eq!(head.entropy(), h_unit + 4.0 * (2.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn entropy_matches_quadrature_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut head = GaussianHead::<f64>::new(&mut rng, 8, 1, (0.7f64).ln());
        head.log_std[0] = (0.7f64).ln();
        let sigma = 0.7;
        // Trapezoid rule for -p ln p over [-10 sigma, 10 sigma].
        let n = 200_000;
        let a = -10.0 * sigma;
        let b = 10.0 * sigma;
        let h = (b - a) / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let x = a + i as f64 * h;
            let p = (-(x * x) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let f = if p > 0.0 { -p * p.ln() } else { 0.0 };
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * f * h;
        }
        assert_relative_eq!(head.entropy(), integral, epsilon = 1e-6);
    }

    #[test]
    fn sampling_statistics_match_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut head = GaussianHead::<f64>::new(&mut rng, 8, 2, (0.5f64).ln());
        head.log_std = array![(0.5f64).ln(), (1.5f64).ln()];
        let mean = array![1.0, -2.0];
        let n = 100_000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            let (a, _) = head.sample_row(&mean.view(), &mut rng);
            for d in 0..2 {
                sums[d] += a[d];
                sq[d] += a[d] * a[d];
            }
        }
        let stds = [0.5, 1.5];
        for d in 0..2 {
            let m = sums[d] / n as f64;
            let s = (sq[d] / n as f64 - m * m).sqrt();
            // 3-sigma confidence bands on the mean and std estimates.
            let mean_tol = 3.0 * stds[d] / (n as f64).sqrt();
            assert!((m - mean[d]).abs() < mean_tol, "mean {m} vs {}", mean[d]);
            let std_tol = 3.0 * stds[d] / (2.0 * (n as f64)).sqrt() * 2.0;
            assert!((s - stds[d]).abs() < std_tol, "std {s} vs {}", stds[d]);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::<f64>::new(&mut rng, 6, 8, LayerNormPos::AfterFirst);
        let mut x = Array2::zeros((3, 6));
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (_, cache) = mlp.forward_cached(&x.view());
        let mut grads = mlp.zero_grads();
        let d_out = Array2::zeros((3, 8));
        let dx = mlp.backward(&cache, &d_out.view(), &mut grads);
        assert!(global_grad_norm(&grads) == 0.0);
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_linear_layer_quadratic_loss_gradient_closed_form() {
        // L = 0.5 || x W - y ||^2  =>  dL/dW = x^T (x W - y).
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lin = Linear::<f64>::orthogonal(&mut rng, 3, 2, 1.0);
        let x = array![[0.5, -1.0, 2.0], [1.5, 0.3, -0.7]];
        let y = array![[0.1, 0.2], [-0.3, 0.4]];
        let out = lin.forward(&x.view());
        let resid = &out - &y;
        let mut grads = lin.zero_grads();
        lin.backward(&x.view(), &resid.view(), &mut grads);
        let expect = x.t().dot(&resid);
        for (a, b) in grads.w.iter().zip(expect.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for (seed, ln_pos) in [(0, LayerNormPos::AfterFirst), (1, LayerNormPos::AfterSecond)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mlp = Mlp::<f64>::new(&mut rng, 5, 7, ln_pos);
            let mut x = Array2::zeros((4, 5));
            for v in x.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let mut target = Array2::zeros((4, 7));
            for v in target.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }

            // Loss: 0.5 sum (out - target)^2.
            let (out, cache) = mlp.forward_cached(&x.view());
            let d_out = &out - &target;
            let mut grads = mlp.zero_grads();
            mlp.backward(&cache, &d_out.view(), &mut grads);

            let h = 1e-5;
            let analytic: Vec<f64> =
                TensorSet::<f64>::slices(&grads).iter().flat_map(|s| s.iter().copied()).collect();
            let mut fd = Vec::with_capacity(analytic.len());
            let n_tensors = TensorSet::<f64>::slices(&mlp).len();
            for ti in 0..n_tensors {
                let len = TensorSet::<f64>::slices(&mlp)[ti].len();
                for j in 0..len {
                    let orig = TensorSet::<f64>::slices(&mlp)[ti][j];
                    TensorSet::<f64>::slices_mut(&mut mlp)[ti][j] = orig + h;
                    let lp = 0.5 * (&mlp.forward(&x.view()) - &target).mapv(|v| v * v).sum();
                    TensorSet::<f64>::slices_mut(&mut mlp)[ti][j] = orig - h;
                    let lm = 0.5 * (&mlp.forward(&x.view()) - &target).mapv(|v| v * v).sum();
                    TensorSet::<f64>::slices_mut(&mut mlp)[ti][j] = orig;
                    fd.push((lp - lm) / (2.0 * h));
                }
            }
            let mut worst = 0.0f64;
            for (a, f) in analytic.iter().zip(fd.iter()) {
                let rel = (a - f).abs() / (a.abs() + f.abs() + 1e-6);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-4, "worst relative gradient error {worst} ({ln_pos:?})");
        }
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lin = Linear::<f64>::orthogonal(&mut rng, 2, 2, 1.0);
        let target = array![[2.0, -1.0], [0.5, 1.5]];
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let mut adam = Adam::new(&lin, 0.05);
        for _ in 0..2000 {
            let out = lin.forward(&x.view());
            let resid = &out - &target;
            let mut grads = lin.zero_grads();
            lin.backward(&x.view(), &resid.view(), &mut grads);
            adam.step(&mut lin, &grads);
        }
        let out = lin.forward(&x.view());
        assert!((&out - &target).mapv(|v| v.abs()).sum() < 1e-3);
    }
}
