//! One K-matrix graph-convolution block, a linear classifier head and exact
//! reverse-mode gradients through all of it, adjacency basis included.
//!
//! Shapes: node signal `U` is `s x n`, each filter `W_k` is `s x C`, the block
//! output `f(sum_k A_k U^T W_k)` is `n x C`.

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::connectivity::{self, basis_forward, basis_vjp, AdjacencyBasis, BasisCheckpoint, EffectiveBasis, CHECKPOINT_VERSION};
use crate::error::{shape_err, Error, Result};
use crate::numkit::{matmul, Mat, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative; relu'(0) is taken as 0.
    #[inline]
    fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" | "none" => Ok(Activation::Identity),
            _ => Err(Error::Input(format!("unknown activation '{s}'"))),
        }
    }
}

/// How the `n x C` block output reaches the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Row-major flatten to `n*C` features. Head is `(n*C) x classes`.
    Flatten,
    /// Sum over nodes to `C` features. Head is `C x classes`; node-permutation invariant.
    SumNodes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnModel {
    pub basis: AdjacencyBasis,
    pub filters: Vec<Mat>,
    pub head: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub readout: Readout,
    /// Fixed 0/1 mask on the effective basis, set by magnitude pruning.
    pub mask: Option<Tensor3>,
}

impl GcnModel {
    /// Random model: filters and head uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        basis: AdjacencyBasis,
        signal_dim: usize,
        channels: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let k = basis.k();
        let n = basis.n();
        let wb = 1.0 / (signal_dim as f64).sqrt();
        let filters = (0..k)
            .map(|_| Mat::from_fn(signal_dim, channels, |_, _| rng.random_range(-wb..=wb)))
            .collect();
        let fan_in = n * channels;
        let hb = 1.0 / (fan_in as f64).sqrt();
        let head = Mat::from_fn(fan_in, num_classes, |_, _| rng.random_range(-hb..=hb));
        let model = Self {
            basis,
            filters,
            head,
            bias: vec![0.0; num_classes],
            activation: Activation::Relu,
            readout: Readout::Flatten,
            mask: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.basis.k()
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn signal_dim(&self) -> usize {
        self.filters[0].rows()
    }

    pub fn channels(&self) -> usize {
        self.filters[0].cols()
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn readout_dim(&self) -> usize {
        match self.readout {
            Readout::Flatten => self.n() * self.channels(),
            Readout::SumNodes => self.channels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        if self.filters.len() != self.k() {
            return shape_err(format!("{} filters for K = {}", self.filters.len(), self.k()));
        }
        let shape = self.filters[0].shape();
        if self.filters.iter().any(|w| w.shape() != shape) {
            return shape_err("filters must share one shape");
        }
        if self.head.shape() != (self.readout_dim(), self.num_classes()) {
            return shape_err(format!(
                "head is {:?}, expected {:?}",
                self.head.shape(),
                (self.readout_dim(), self.num_classes())
            ));
        }
        if let Some(mask) = &self.mask {
            self.basis.ahat.check_same(mask, "mask")?;
        }
        Ok(())
    }

    /// Effective basis at `gamma_eff` and the (masked) matrices the block uses.
    pub fn effective(&self, gamma_eff: f64) -> Result<(EffectiveBasis, Tensor3)> {
        let eff = basis_forward(&self.basis, gamma_eff)?;
        let used = match &self.mask {
            Some(mask) => eff.a.hadamard(mask)?,
            None => eff.a.clone(),
        };
        Ok((eff, used))
    }

    /// Forward pass of one sample against already-computed block matrices.
    pub fn forward_sample(&self, a: &Tensor3, u: &Mat) -> Result<SampleTrace> {
        let (s, n) = u.shape();
        if s != self.signal_dim() || n != self.n() {
            return shape_err(format!(
                "signal is {s}x{n}, model expects {}x{}",
                self.signal_dim(),
                self.n()
            ));
        }
        let ut = u.transpose();
        let mut aut = Vec::with_capacity(self.k());
        let mut pre = Mat::zeros(n, self.channels());
        for (k, w) in self.filters.iter().enumerate() {
            let au = matmul(&a.mat(k), &ut)?;
            pre.add_assign(&matmul(&au, w)?)?;
            aut.push(au);
        }
        let hidden = pre.map(|x| self.activation.apply(x));
        let features = self.readout_features(&hidden);
        let mut logits = self.bias.clone();
        for (f, &x) in features.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (l, h) in logits.iter_mut().zip(self.head.row(f)) {
                *l += x * h;
            }
        }
        Ok(SampleTrace {
            u: u.clone(),
            aut,
            pre_activation: pre,
            hidden,
            features,
            logits,
        })
    }

    fn readout_features(&self, hidden: &Mat) -> Vec<f64> {
        match self.readout {
            Readout::Flatten => hidden.data().to_vec(),
            Readout::SumNodes => {
                let mut out = vec![0.0; hidden.cols()];
                for i in 0..hidden.rows() {
                    for (o, v) in out.iter_mut().zip(hidden.row(i)) {
                        *o += v;
                    }
                }
                out
            }
        }
    }

    /// Gradients of one sample w.r.t. filters, head and the block matrices `a`.
    pub fn backward_sample(&self, trace: &SampleTrace, d_logits: &[f64]) -> Result<BlockGradients> {
        if d_logits.len() != self.num_classes() {
            return shape_err(format!("{} logit gradients for {} classes", d_logits.len(), self.num_classes()));
        }
        let n = self.n();
        let c = self.channels();
        let mut d_head = Mat::zeros(self.head.rows(), self.head.cols());
        let mut d_features = vec![0.0; self.head.rows()];
        for (f, &x) in trace.features.iter().enumerate() {
            let hrow = self.head.row(f);
            let mut acc = 0.0;
            for (cls, &g) in d_logits.iter().enumerate() {
                d_head[(f, cls)] = x * g;
                acc += hrow[cls] * g;
            }
            d_features[f] = acc;
        }
        let d_pre = Mat::from_fn(n, c, |i, ch| {
            let dh = match self.readout {
                Readout::Flatten => d_features[i * c + ch],
                Readout::SumNodes => d_features[ch],
            };
            dh * self.activation.grad(trace.pre_activation[(i, ch)])
        });
        let mut d_filters = Vec::with_capacity(self.k());
        let mut d_a = Tensor3::zeros(self.k(), n, n);
        for (k, w) in self.filters.iter().enumerate() {
            // d W_k = (A_k U^T)^T dPre ; d A_k = dPre W_k^T U
            d_filters.push(matmul(&trace.aut[k].transpose(), &d_pre)?);
            let dpw = matmul(&d_pre, &w.transpose())?;
            d_a.set_mat(k, &matmul(&dpw, &trace.u)?)?;
        }
        Ok(BlockGradients {
            d_a,
            d_filters,
            d_head,
            d_bias: d_logits.to_vec(),
        })
    }

    /// Pushes block-matrix gradients through the mask and the basis reparametrization.
    pub fn finish_gradients(&self, eff: &EffectiveBasis, block: BlockGradients) -> Result<Gradients> {
        let d_eff = match &self.mask {
            Some(mask) => block.d_a.hadamard(mask)?,
            None => block.d_a,
        };
        let d_ahat = basis_vjp(&self.basis, eff, &d_eff)?;
        Ok(Gradients {
            d_ahat,
            d_filters: block.d_filters,
            d_head: block.d_head,
            d_bias: block.d_bias,
        })
    }

    pub fn predict(&self, a: &Tensor3, u: &Mat) -> Result<usize> {
        let t = self.forward_sample(a, u)?;
        Ok(argmax(&t.logits))
    }

    pub fn to_checkpoint(&self, epoch: usize) -> ModelCheckpoint {
        ModelCheckpoint {
            format: MODEL_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            epoch,
            activation: self.activation,
            readout: self.readout,
            basis: self.basis.to_checkpoint(),
            filters: self.filters.clone(),
            head: self.head.clone(),
            bias: self.bias.clone(),
            mask: self.mask.clone(),
        }
    }

    pub fn from_checkpoint(ck: ModelCheckpoint) -> Result<(Self, usize)> {
        if ck.format != MODEL_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "expected {MODEL_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                ck.format, ck.version
            )));
        }
        let model = Self {
            basis: AdjacencyBasis::from_checkpoint(ck.basis)?,
            filters: ck.filters,
            head: ck.head,
            bias: ck.bias,
            activation: ck.activation,
            readout: ck.readout,
            mask: ck.mask,
        };
        model.validate()?;
        Ok((model, ck.epoch))
    }

    pub fn save(&self, path: &Path, epoch: usize) -> Result<()> {
        connectivity::write_json(path, &self.to_checkpoint(epoch))
    }

    pub fn load(path: &Path) -> Result<(Self, usize)> {
        let ck: ModelCheckpoint = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        Self::from_checkpoint(ck)
    }
}

const MODEL_FORMAT: &str = "lwgcn-model";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub epoch: usize,
    pub activation: Activation,
    pub readout: Readout,
    pub basis: BasisCheckpoint,
    pub filters: Vec<Mat>,
    pub head: Mat,
    pub bias: Vec<f64>,
    pub mask: Option<Tensor3>,
}

/// Per-sample forward caches.
#[derive(Clone, Debug)]
pub struct SampleTrace {
    u: Mat,
    aut: Vec<Mat>,
    pub pre_activation: Mat,
    pub hidden: Mat,
    features: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Full single-sample forward record.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub eff: EffectiveBasis,
    pub a_used: Tensor3,
    pub sample: SampleTrace,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        &self.sample.logits
    }

    pub fn pre_activation(&self) -> &Mat {
        &self.sample.pre_activation
    }

    pub fn hidden(&self) -> &Mat {
        &self.sample.hidden
    }
}

/// Gradients before the basis reparametrization (w.r.t. the block matrices).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGradients {
    pub d_a: Tensor3,
    pub d_filters: Vec<Mat>,
    pub d_head: Mat,
    pub d_bias: Vec<f64>,
}

impl BlockGradients {
    pub fn add_assign(&mut self, other: &BlockGradients) -> Result<()> {
        self.d_a.check_same(&other.d_a, "gradient accumulation")?;
        for (a, b) in self.d_a.data_mut().iter_mut().zip(other.d_a.data()) {
            *a += b;
        }
        for (a, b) in self.d_filters.iter_mut().zip(&other.d_filters) {
            a.add_assign(b)?;
        }
        self.d_head.add_assign(&other.d_head)?;
        for (a, b) in self.d_bias.iter_mut().zip(&other.d_bias) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.d_a.data_mut().iter_mut().for_each(|v| *v *= s);
        for w in &mut self.d_filters {
            w.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        self.d_head.data_mut().iter_mut().for_each(|v| *v *= s);
        self.d_bias.iter_mut().for_each(|v| *v *= s);
    }
}

/// Gradients mirroring the trainable parameters of a [`GcnModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub d_ahat: Tensor3,
    pub d_filters: Vec<Mat>,
    pub d_head: Mat,
    pub d_bias: Vec<f64>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        let mut m = self.d_ahat.max_abs().max(self.d_head.max_abs());
        for w in &self.d_filters {
            m = m.max(w.max_abs());
        }
        self.d_bias.iter().fold(m, |m, v| m.max(v.abs()))
    }
}

/// `f(sum_k A_k U^T W_k)` for a `K x n x n` basis, `s x n` signal and `s x C` filters.
pub fn gc_block(a: &Tensor3, u: &Mat, filters: &[Mat], activation: Activation) -> Result<Mat> {
    if filters.len() != a.k() {
        return shape_err(format!("{} filters for {} matrices", filters.len(), a.k()));
    }
    if u.cols() != a.rows() || a.rows() != a.cols() {
        return shape_err(format!("signal {:?} against basis {:?}", u.shape(), a.shape()));
    }
    let ut = u.transpose();
    let mut pre = Mat::zeros(a.rows(), filters.first().map_or(0, |w| w.cols()));
    for (k, w) in filters.iter().enumerate() {
        pre.add_assign(&matmul(&matmul(&a.mat(k), &ut)?, w)?)?;
    }
    Ok(pre.map(|x| activation.apply(x)))
}

pub fn model_forward(model: &GcnModel, u: &Mat, gamma_eff: f64) -> Result<ForwardTrace> {
    let (eff, a_used) = model.effective(gamma_eff)?;
    let sample = model.forward_sample(&a_used, u)?;
    Ok(ForwardTrace { eff, a_used, sample })
}

pub fn model_backward(model: &GcnModel, trace: &ForwardTrace, d_logits: &[f64]) -> Result<Gradients> {
    if trace.eff.mode != model.basis.mode || trace.a_used.shape() != model.basis.ahat.shape() {
        return Err(Error::Input("forward trace does not belong to this model".into()));
    }
    let block = model.backward_sample(&trace.sample, d_logits)?;
    model.finish_gradients(&trace.eff, block)
}

/// Max-stabilized softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `(-log softmax(logits)[label], softmax(logits) - onehot(label))`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Input(format!("label {label} out of range for {} classes", logits.len())));
    }
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|&l| (l - mx).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A trainable parameter group, for finite-difference checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Ahat,
    Filters,
    Head,
    Bias,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [ParamGroup::Ahat, ParamGroup::Filters, ParamGroup::Head, ParamGroup::Bias];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Ahat => "ahat",
            ParamGroup::Filters => "filters",
            ParamGroup::Head => "head",
            ParamGroup::Bias => "bias",
        }
    }
}

fn group_len(model: &GcnModel, group: ParamGroup) -> usize {
    match group {
        ParamGroup::Ahat => model.basis.ahat.len(),
        ParamGroup::Filters => model.filters.iter().map(|w| w.data().len()).sum(),
        ParamGroup::Head => model.head.data().len(),
        ParamGroup::Bias => model.bias.len(),
    }
}

fn param_mut(model: &mut GcnModel, group: ParamGroup, idx: usize) -> &mut f64 {
    match group {
        ParamGroup::Ahat => &mut model.basis.ahat.data_mut()[idx],
        ParamGroup::Filters => {
            let per = model.filters[0].data().len();
            &mut model.filters[idx / per].data_mut()[idx % per]
        }
        ParamGroup::Head => &mut model.head.data_mut()[idx],
        ParamGroup::Bias => &mut model.bias[idx],
    }
}

/// Flattened analytic gradient of a group, in the same order as [`finite_diff_oracle`].
pub fn group_gradient(grads: &Gradients, group: ParamGroup) -> Vec<f64> {
    match group {
        ParamGroup::Ahat => grads.d_ahat.data().to_vec(),
        ParamGroup::Filters => grads.d_filters.iter().flat_map(|w| w.data().iter().copied()).collect(),
        ParamGroup::Head => grads.d_head.data().to_vec(),
        ParamGroup::Bias => grads.d_bias.clone(),
    }
}

/// Cross-entropy of one sample at `gamma_eff`.
pub fn sample_loss(model: &GcnModel, u: &Mat, label: usize, gamma_eff: f64) -> Result<f64> {
    let trace = model_forward(model, u, gamma_eff)?;
    Ok(cross_entropy(trace.logits(), label)?.0)
}

/// Central differences `(E(θ+h) - E(θ-h)) / 2h` for every scalar of one group.
pub fn finite_diff_oracle(
    model: &GcnModel,
    u: &Mat,
    label: usize,
    gamma_eff: f64,
    group: ParamGroup,
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut probe = model.clone();
    let len = group_len(model, group);
    let mut out = Vec::with_capacity(len);
    for idx in 0..len {
        let orig = *param_mut(&mut probe, group, idx);
        *param_mut(&mut probe, group, idx) = orig + step;
        let plus = sample_loss(&probe, u, label, gamma_eff)?;
        *param_mut(&mut probe, group, idx) = orig - step;
        let minus = sample_loss(&probe, u, label, gamma_eff)?;
        *param_mut(&mut probe, group, idx) = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Group-normalized relative error: `max|a - b| / max(max|a|, max|b|, 1e-12)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-12f64, |m, v| m.max(v.abs()));
    diff / scale
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub group: ParamGroup,
    pub max_rel_error: f64,
}

/// Compares [`model_backward`] with [`finite_diff_oracle`] for every group.
/// `flip_sign` negates the analytic gradients (negative-control hook).
pub fn gradient_check(
    model: &GcnModel,
    u: &Mat,
    label: usize,
    gamma_eff: f64,
    step: f64,
    flip_sign: bool,
) -> Result<Vec<GradCheck>> {
    let trace = model_forward(model, u, gamma_eff)?;
    let (_, d_logits) = cross_entropy(trace.logits(), label)?;
    let grads = model_backward(model, &trace, &d_logits)?;
    ParamGroup::ALL
        .iter()
        .map(|&group| {
            let mut analytic = group_gradient(&grads, group);
            if flip_sign {
                analytic.iter_mut().for_each(|v| *v = -*v);
            }
            let numeric = finite_diff_oracle(model, u, label, gamma_eff, group, step)?;
            Ok(GradCheck {
                group,
                max_rel_error: relative_error(&analytic, &numeric),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::ConstraintMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(mode: ConstraintMode, seed: u64) -> (GcnModel, Mat) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = AdjacencyBasis::random(2, 3, mode, 3.0, &mut rng).unwrap();
        let model = GcnModel::init(basis, 2, 2, 3, &mut rng).unwrap();
        let u = Mat::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
        (model, u)
    }

    #[test]
    fn gc_block_identity_and_zero() {
        let u = Mat::from_rows(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 2.0]]);
        let w = Mat::from_rows(&[&[1.0, -2.0], &[0.5, 1.0]]);
        let a = Tensor3::from_mats(&[Mat::identity(3)]).unwrap();
        let out = gc_block(&a, &u, std::slice::from_ref(&w), Activation::Identity).unwrap();
        assert_eq!(out, matmul(&u.transpose(), &w).unwrap());
        let zero = Tensor3::zeros(1, 3, 3);
        assert_eq!(gc_block(&zero, &u, &[w], Activation::Relu).unwrap(), Mat::zeros(3, 2));
    }

    #[test]
    fn gc_block_sums_single_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor3::from_fn(2, 4, 4, |_, _, _| rng.random_range(-1.0..1.0));
        let u = Mat::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let ws: Vec<Mat> = (0..2).map(|_| Mat::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0))).collect();
        let both = gc_block(&a, &u, &ws, Activation::Identity).unwrap();
        let mut sum = Mat::zeros(4, 2);
        for k in 0..2 {
            let single = Tensor3::from_mats(&[a.mat(k)]).unwrap();
            sum.add_assign(&gc_block(&single, &u, &ws[k..k + 1], Activation::Identity).unwrap()).unwrap();
        }
        assert!(both.sub(&sum).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_bias_logits() {
        let (mut model, u) = toy(ConstraintMode::Orth, 1);
        model.filters.iter_mut().for_each(|w| *w = Mat::zeros(w.rows(), w.cols()));
        model.head = Mat::zeros(model.head.rows(), model.head.cols());
        model.bias = vec![0.3, -1.0, 2.0];
        let t = model_forward(&model, &u, 3.0).unwrap();
        assert_eq!(t.logits(), &[0.3, -1.0, 2.0]);
    }

    #[test]
    fn small_instance_by_hand() {
        // n=3, s=2, C=2, K=1, identity activation, mode None
        let a = Mat::from_rows(&[&[0.5, 0.0, 1.0], &[0.0, 1.0, 0.0], &[0.5, 0.0, 0.0]]);
        let basis = AdjacencyBasis::new(Tensor3::from_mats(&[a]).unwrap(), ConstraintMode::None, 0.0).unwrap();
        let w = Mat::from_rows(&[&[1.0, 0.0], &[1.0, -1.0]]);
        let u = Mat::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        // U^T = [[1,4],[2,5],[3,6]]; A U^T = [[3.5,8],[2,5],[0.5,2]]; (A U^T) W = [[11.5,-8],[7,-5],[2.5,-2]]
        let head = Mat::from_fn(6, 2, |r, c| if r == c { 1.0 } else if r == 5 && c == 1 { 2.0 } else { 0.0 });
        let model = GcnModel {
            basis,
            filters: vec![w],
            head,
            bias: vec![0.0, 1.0],
            activation: Activation::Identity,
            readout: Readout::Flatten,
            mask: None,
        };
        let t = model_forward(&model, &u, 0.0).unwrap();
        assert_eq!(t.hidden().data(), &[11.5, -8.0, 7.0, -5.0, 2.5, -2.0]);
        // logits: [11.5, -8 + 2*(-2) + 1]
        assert_eq!(t.logits(), &[11.5, -11.0]);
    }

    #[test]
    fn cross_entropy_cases() {
        let (l, g) = cross_entropy(&[0.7; 5], 2).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-14);
        assert!((g.iter().sum::<f64>()).abs() < 1e-14);
        let (l, g) = cross_entropy(&[1000.0, 0.0, 0.0], 0).unwrap();
        assert!(l < 1e-12 && g.iter().all(|v| v.abs() < 1e-12));
        let (l, _) = cross_entropy(&[0.0, 3f64.ln()], 0).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-14);
        assert!(cross_entropy(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn zero_dlogits_zero_gradients() {
        let (model, u) = toy(ConstraintMode::OrthStoch, 4);
        let t = model_forward(&model, &u, 3.0).unwrap();
        let g = model_backward(&model, &t, &[0.0; 3]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let (model, u) = toy(ConstraintMode::Stoch, 5);
        let a = model_forward(&model, &u, 2.0).unwrap();
        let b = model_forward(&model, &u, 2.0).unwrap();
        assert_eq!(a.logits(), b.logits());
    }

    #[test]
    fn finite_diff_exact_on_bias() {
        // loss is smooth in the bias; compare with the closed-form softmax - onehot
        let (model, u) = toy(ConstraintMode::None, 6);
        let t = model_forward(&model, &u, 0.0).unwrap();
        let (_, d) = cross_entropy(t.logits(), 1).unwrap();
        let num = finite_diff_oracle(&model, &u, 1, 0.0, ParamGroup::Bias, 1e-5).unwrap();
        assert!(relative_error(&d, &num) < 1e-9);
        assert!(finite_diff_oracle(&model, &u, 1, 0.0, ParamGroup::Bias, 0.0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (mut model, _) = toy(ConstraintMode::Orth, 7);
        model.mask = Some(Tensor3::filled(2, 3, 3, 1.0));
        let p = dir.path().join("model.json");
        model.save(&p, 42).unwrap();
        let (back, epoch) = GcnModel::load(&p).unwrap();
        assert_eq!(epoch, 42);
        assert_eq!(back, model);
    }
}
