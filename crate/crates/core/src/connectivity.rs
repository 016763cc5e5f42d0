//! Learnable adjacency bases and their constraint reparametrizations.
//!
//! A basis holds K free matrices `Ahat_k` (n x n). The effective matrices
//! `A_k` the convolution sees depend on the [`ConstraintMode`]:
//!
//! * `None`: `A_k = Ahat_k`.
//! * `Orth`: crispmax, i.e. for every entry (i, j) a softmax over k of
//!   `gamma * Ahat_{kij}`. With large `gamma` each entry concentrates on a
//!   single k, so `A_k ⊙ A_k'` vanishes for k != k' (ε-orthogonality).
//! * `Stoch`: per-column softmax of `gamma_s * Ahat_k`, so every column of
//!   every `A_k` sums to one.
//! * `OrthStoch`: the orthogonality stage runs first. Its output is passed to
//!   the column stage as the crispmax soft margin
//!   `M_k = Ahat_k - (1/gamma) ln mean_{r != k} exp(gamma Ahat_r)`, which is
//!   `logit(B_k) / gamma` up to a per-entry constant that cancels in the
//!   column softmax. Winning entries have margin >= δ, losing entries have
//!   margin <= -δ + ln(K-1)/gamma, so the column normalization keeps the
//!   orthogonal zero pattern and picks a single dominant row per column.
//!
//! All softmaxes subtract the maximum before exponentiating; any finite
//! `gamma` is safe. Jacobians are only ever applied as vector-Jacobian
//! products.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Mat, Tensor3};

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_SPARSITY_THRESHOLD: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    None,
    Orth,
    Stoch,
    OrthStoch,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 4] = [
        ConstraintMode::None,
        ConstraintMode::Orth,
        ConstraintMode::Stoch,
        ConstraintMode::OrthStoch,
    ];

    pub fn has_orth(self) -> bool {
        matches!(self, ConstraintMode::Orth | ConstraintMode::OrthStoch)
    }

    pub fn has_stoch(self) -> bool {
        matches!(self, ConstraintMode::Stoch | ConstraintMode::OrthStoch)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintMode::None => "none",
            ConstraintMode::Orth => "orth",
            ConstraintMode::Stoch => "stc",
            ConstraintMode::OrthStoch => "orth+stc",
        }
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "+");
        match norm.as_str() {
            "none" | "l" => Ok(ConstraintMode::None),
            "orth" | "l+orth" => Ok(ConstraintMode::Orth),
            "stc" | "stoch" | "l+stc" => Ok(ConstraintMode::Stoch),
            "orth+stc" | "orth+stoch" | "orthstoch" | "l+orth+stc" => Ok(ConstraintMode::OrthStoch),
            _ => Err(Error::Input(format!("unknown constraint mode '{s}'"))),
        }
    }
}

/// Free parameters of a K-matrix adjacency basis together with the constraint
/// settings that turn them into effective matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyBasis {
    pub ahat: Tensor3,
    pub mode: ConstraintMode,
    /// Final crispmax sharpness γ (reached at the end of annealing).
    pub gamma_max: f64,
    /// Final column-softmax sharpness.
    pub gamma_stoch: f64,
    /// When true the column sharpness follows the same schedule as γ:
    /// `gamma_s = gamma_eff * gamma_stoch / gamma_max`.
    pub anneal_stoch: bool,
    pub epsilon: f64,
    pub delta: f64,
}

impl AdjacencyBasis {
    pub fn new(ahat: Tensor3, mode: ConstraintMode, gamma_max: f64) -> Result<Self> {
        let basis = Self {
            ahat,
            mode,
            gamma_max,
            gamma_stoch: gamma_max,
            anneal_stoch: true,
            epsilon: DEFAULT_EPSILON,
            delta: DEFAULT_DELTA,
        };
        basis.validate()?;
        Ok(basis)
    }

    /// Uniform `[0, 1)` entries, then lifted so every entry has a δ-gap.
    pub fn random<R: Rng + ?Sized>(
        k: usize,
        n: usize,
        mode: ConstraintMode,
        gamma_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut ahat = Tensor3::from_fn(k, n, n, |_, _, _| rng.random::<f64>());
        enforce_delta_gap(&mut ahat, DEFAULT_DELTA);
        Self::new(ahat, mode, gamma_max)
    }

    pub fn validate(&self) -> Result<()> {
        let (k, r, c) = self.ahat.shape();
        if k == 0 || r == 0 {
            return Err(Error::Input("basis needs K >= 1 and n >= 1".into()));
        }
        if r != c {
            return Err(Error::Shape(format!("basis matrices must be square, got {r}x{c}")));
        }
        self.ahat.check_finite()?;
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Domain(format!("epsilon {} outside (0, 0.5)", self.epsilon)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Domain(format!("delta {} must be positive", self.delta)));
        }
        if !(self.gamma_max >= 0.0 && self.gamma_max.is_finite()) {
            return Err(Error::Domain(format!("gamma_max {} must be >= 0", self.gamma_max)));
        }
        if !(self.gamma_stoch >= 0.0 && self.gamma_stoch.is_finite()) {
            return Err(Error::Domain(format!("gamma_stoch {} must be >= 0", self.gamma_stoch)));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.ahat.k()
    }

    pub fn n(&self) -> usize {
        self.ahat.rows()
    }

    /// Column-stage sharpness that goes with a given crispmax sharpness.
    pub fn stoch_gamma(&self, gamma_eff: f64) -> f64 {
        if !self.anneal_stoch {
            return self.gamma_stoch;
        }
        if self.gamma_max > 0.0 {
            gamma_eff * self.gamma_stoch / self.gamma_max
        } else {
            self.gamma_stoch
        }
    }

    pub fn to_checkpoint(&self) -> BasisCheckpoint {
        BasisCheckpoint {
            format: BASIS_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            mode: self.mode,
            k: self.k(),
            n: self.n(),
            gamma_max: self.gamma_max,
            gamma_stoch: self.gamma_stoch,
            anneal_stoch: self.anneal_stoch,
            epsilon: self.epsilon,
            delta: self.delta,
            data: self.ahat.data().to_vec(),
        }
    }

    pub fn from_checkpoint(ck: BasisCheckpoint) -> Result<Self> {
        check_header(&ck.format, ck.version, BASIS_FORMAT)?;
        let ahat = Tensor3::new(ck.k, ck.n, ck.n, ck.data)?;
        let basis = Self {
            ahat,
            mode: ck.mode,
            gamma_max: ck.gamma_max,
            gamma_stoch: ck.gamma_stoch,
            anneal_stoch: ck.anneal_stoch,
            epsilon: ck.epsilon,
            delta: ck.delta,
        };
        basis.validate()?;
        Ok(basis)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: BasisCheckpoint = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        Self::from_checkpoint(ck)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;
const BASIS_FORMAT: &str = "lwgcn-basis";
const EFFECTIVE_FORMAT: &str = "lwgcn-effective-basis";

/// On-disk form of an [`AdjacencyBasis`]. Field order is fixed:
/// header, mode, K, n, sharpness values, then the row-major (k, i, j) payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisCheckpoint {
    pub format: String,
    pub version: u32,
    pub mode: ConstraintMode,
    pub k: usize,
    pub n: usize,
    pub gamma_max: f64,
    pub gamma_stoch: f64,
    pub anneal_stoch: bool,
    pub epsilon: f64,
    pub delta: f64,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectiveCheckpoint {
    pub format: String,
    pub version: u32,
    pub mode: ConstraintMode,
    pub k: usize,
    pub n: usize,
    pub gamma_eff: f64,
    pub gamma_stoch_eff: f64,
    pub data: Vec<f64>,
}

fn check_header(format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Format(format!("expected '{expected}' checkpoint, found '{format}'")));
    }
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported {expected} version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Cached stage outputs needed by [`basis_vjp`].
#[derive(Clone, Debug, PartialEq)]
enum Stages {
    Identity,
    Orth,
    Stoch,
    OrthStoch { crisp: Tensor3, margin: Tensor3 },
}

/// Effective matrices produced by [`basis_forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveBasis {
    pub a: Tensor3,
    pub mode: ConstraintMode,
    pub gamma_eff: f64,
    pub gamma_stoch_eff: f64,
    stages: Stages,
}

impl EffectiveBasis {
    /// Wraps fixed matrices (e.g. a handcrafted basis) with no constraint stages.
    pub fn fixed(a: Tensor3) -> Self {
        Self {
            a,
            mode: ConstraintMode::None,
            gamma_eff: 0.0,
            gamma_stoch_eff: 0.0,
            stages: Stages::Identity,
        }
    }

    pub fn k(&self) -> usize {
        self.a.k()
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    /// Crispmax output of the orthogonality stage, when the mode has one.
    pub fn orth_stage(&self) -> Option<&Tensor3> {
        match &self.stages {
            Stages::Orth => Some(&self.a),
            Stages::OrthStoch { crisp, .. } => Some(crisp),
            _ => None,
        }
    }

    pub fn to_checkpoint(&self) -> EffectiveCheckpoint {
        EffectiveCheckpoint {
            format: EFFECTIVE_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            mode: self.mode,
            k: self.k(),
            n: self.n(),
            gamma_eff: self.gamma_eff,
            gamma_stoch_eff: self.gamma_stoch_eff,
            data: self.a.data().to_vec(),
        }
    }

    /// Restores the matrices only; the result carries no cached stages and
    /// cannot be fed to [`basis_vjp`].
    pub fn from_checkpoint(ck: EffectiveCheckpoint) -> Result<Self> {
        check_header(&ck.format, ck.version, EFFECTIVE_FORMAT)?;
        let a = Tensor3::new(ck.k, ck.n, ck.n, ck.data)?;
        Ok(Self {
            a,
            mode: ck.mode,
            gamma_eff: ck.gamma_eff,
            gamma_stoch_eff: ck.gamma_stoch_eff,
            stages: Stages::Identity,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_checkpoint())
    }
}

fn check_gamma(gamma: f64, what: &str) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be a finite value >= 0, got {gamma}")))
    }
}

/// Entrywise softmax across the K matrices of `gamma * ahat`.
pub fn crispmax_forward(ahat: &Tensor3, gamma: f64) -> Result<Tensor3> {
    check_gamma(gamma, "gamma")?;
    ahat.check_finite()?;
    let (k, r, c) = ahat.shape();
    let plane = r * c;
    let src = ahat.data();
    let mut out = Tensor3::zeros(k, r, c);
    let dst = out.data_mut();
    let mut buf = vec![0.0; k];
    for e in 0..plane {
        let mx = (0..k).map(|kk| src[kk * plane + e]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (kk, b) in buf.iter_mut().enumerate() {
            *b = (gamma * (src[kk * plane + e] - mx)).exp();
            total += *b;
        }
        for (kk, b) in buf.iter().enumerate() {
            dst[kk * plane + e] = b / total;
        }
    }
    Ok(out)
}

/// `J_orth^T grad_a`: per entry, `gamma * A_k * (g_k - sum_k' A_k' g_k')`.
pub fn crispmax_vjp(a: &Tensor3, gamma: f64, grad_a: &Tensor3) -> Result<Tensor3> {
    a.check_same(grad_a, "crispmax_vjp")?;
    let (k, r, c) = a.shape();
    let plane = r * c;
    let (av, gv) = (a.data(), grad_a.data());
    let mut out = Tensor3::zeros(k, r, c);
    let dst = out.data_mut();
    for e in 0..plane {
        let dot: f64 = (0..k).map(|kk| av[kk * plane + e] * gv[kk * plane + e]).sum();
        for kk in 0..k {
            let o = kk * plane + e;
            dst[o] = gamma * av[o] * (gv[o] - dot);
        }
    }
    Ok(out)
}

/// Column-wise softmax of `gamma_s * ahat`; every column of the output sums to one.
pub fn stochastic_forward(ahat: &Mat, gamma_s: f64) -> Result<Mat> {
    check_gamma(gamma_s, "gamma_s")?;
    if ahat.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite entry in stochastic_forward input".into()));
    }
    let (r, c) = ahat.shape();
    let mut out = Mat::zeros(r, c);
    for j in 0..c {
        let mx = (0..r).map(|i| ahat[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..r {
            let e = (gamma_s * (ahat[(i, j)] - mx)).exp();
            out[(i, j)] = e;
            total += e;
        }
        for i in 0..r {
            out[(i, j)] /= total;
        }
    }
    Ok(out)
}

/// `J_stc^T grad_a` with the column-local Jacobian
/// `d A_ij / d Ahat_i'j = gamma_s * A_ij * (δ_ii' - A_i'j)`.
pub fn stochastic_vjp(a: &Mat, gamma_s: f64, grad_a: &Mat) -> Result<Mat> {
    if a.shape() != grad_a.shape() {
        return Err(Error::Shape(format!(
            "stochastic_vjp: {:?} vs {:?}",
            a.shape(),
            grad_a.shape()
        )));
    }
    let (r, c) = a.shape();
    let mut out = Mat::zeros(r, c);
    for j in 0..c {
        let dot: f64 = (0..r).map(|i| a[(i, j)] * grad_a[(i, j)]).sum();
        for i in 0..r {
            out[(i, j)] = gamma_s * a[(i, j)] * (grad_a[(i, j)] - dot);
        }
    }
    Ok(out)
}

/// Crispmax soft margin of each matrix over its competitors at every entry:
/// `M_k = Ahat_k - (1/gamma) ln mean_{r != k} exp(gamma Ahat_r)`.
/// At `gamma = 0` this is the limit `Ahat_k - mean_{r != k} Ahat_r`; for K = 1
/// there is no competitor and `M = Ahat`.
pub fn crisp_margin(ahat: &Tensor3, gamma: f64) -> Result<Tensor3> {
    check_gamma(gamma, "gamma")?;
    ahat.check_finite()?;
    let (k, r, c) = ahat.shape();
    let plane = r * c;
    let src = ahat.data();
    let mut out = Tensor3::zeros(k, r, c);
    if k == 1 {
        out.data_mut().copy_from_slice(src);
        return Ok(out);
    }
    let dst = out.data_mut();
    let others = (k - 1) as f64;
    for e in 0..plane {
        for kk in 0..k {
            let vals = (0..k).filter(|&q| q != kk).map(|q| src[q * plane + e]);
            let soft = if gamma == 0.0 {
                vals.sum::<f64>() / others
            } else {
                let mx = vals.clone().fold(f64::NEG_INFINITY, f64::max);
                // mean(exp(γ d)) with d <= 0, kept accurate for small γ
                let mean_m1 = vals.map(|v| (gamma * (v - mx)).exp_m1()).sum::<f64>() / others;
                mx + mean_m1.ln_1p() / gamma
            };
            dst[kk * plane + e] = src[kk * plane + e] - soft;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`crisp_margin`]:
/// `dAhat_r = dM_r - sum_{k != r} dM_k * w_r^(k)` where `w^(k)` is the softmax
/// of `gamma * Ahat` over the competitors of k (uniform at `gamma = 0`).
pub fn crisp_margin_vjp(ahat: &Tensor3, gamma: f64, grad_m: &Tensor3) -> Result<Tensor3> {
    ahat.check_same(grad_m, "crisp_margin_vjp")?;
    let (k, r, c) = ahat.shape();
    if k == 1 {
        return Ok(grad_m.clone());
    }
    let plane = r * c;
    let (src, g) = (ahat.data(), grad_m.data());
    let mut out = grad_m.clone();
    let dst = out.data_mut();
    let mut w = vec![0.0; k];
    for e in 0..plane {
        for kk in 0..k {
            let gk = g[kk * plane + e];
            if gk == 0.0 {
                continue;
            }
            if gamma == 0.0 {
                let share = 1.0 / (k - 1) as f64;
                for q in (0..k).filter(|&q| q != kk) {
                    dst[q * plane + e] -= gk * share;
                }
                continue;
            }
            let mx = (0..k)
                .filter(|&q| q != kk)
                .map(|q| src[q * plane + e])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for q in 0..k {
                w[q] = if q == kk {
                    0.0
                } else {
                    (gamma * (src[q * plane + e] - mx)).exp()
                };
                total += w[q];
            }
            for q in (0..k).filter(|&q| q != kk) {
                dst[q * plane + e] -= gk * w[q] / total;
            }
        }
    }
    Ok(out)
}

/// Applies the basis constraint mode at crispmax sharpness `gamma_eff`.
pub fn basis_forward(basis: &AdjacencyBasis, gamma_eff: f64) -> Result<EffectiveBasis> {
    check_gamma(gamma_eff, "gamma_eff")?;
    let gamma_s = basis.stoch_gamma(gamma_eff);
    let ahat = &basis.ahat;
    let (a, stages) = match basis.mode {
        ConstraintMode::None => {
            ahat.check_finite()?;
            (ahat.clone(), Stages::Identity)
        }
        ConstraintMode::Orth => (crispmax_forward(ahat, gamma_eff)?, Stages::Orth),
        ConstraintMode::Stoch => (stochastic_per_matrix(ahat, gamma_s)?, Stages::Stoch),
        ConstraintMode::OrthStoch => {
            let crisp = crispmax_forward(ahat, gamma_eff)?;
            let margin = crisp_margin(ahat, gamma_eff)?;
            let a = stochastic_per_matrix(&margin, gamma_s)?;
            (a, Stages::OrthStoch { crisp, margin })
        }
    };
    Ok(EffectiveBasis {
        a,
        mode: basis.mode,
        gamma_eff,
        gamma_stoch_eff: gamma_s,
        stages,
    })
}

fn stochastic_per_matrix(t: &Tensor3, gamma_s: f64) -> Result<Tensor3> {
    let mats = t
        .mats()
        .iter()
        .map(|m| stochastic_forward(m, gamma_s))
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_mats(&mats)
}

fn stochastic_vjp_per_matrix(a: &Tensor3, gamma_s: f64, grad: &Tensor3) -> Result<Tensor3> {
    let mut out = Tensor3::zeros(a.k(), a.rows(), a.cols());
    for k in 0..a.k() {
        let gk = stochastic_vjp(&a.mat(k), gamma_s, &grad.mat(k))?;
        out.set_mat(k, &gk)?;
    }
    Ok(out)
}

/// Gradient w.r.t. `basis.ahat` given the gradient w.r.t. the effective
/// matrices. Stage vjps are applied in reverse forward order.
pub fn basis_vjp(basis: &AdjacencyBasis, eff: &EffectiveBasis, grad_a: &Tensor3) -> Result<Tensor3> {
    if basis.mode != eff.mode {
        return Err(Error::Input(format!(
            "effective basis was built in mode {} but basis is {}",
            eff.mode, basis.mode
        )));
    }
    basis.ahat.check_same(grad_a, "basis_vjp")?;
    eff.a.check_same(grad_a, "basis_vjp")?;
    match (&eff.stages, basis.mode) {
        (Stages::Identity, ConstraintMode::None) => Ok(grad_a.clone()),
        (Stages::Orth, ConstraintMode::Orth) => crispmax_vjp(&eff.a, eff.gamma_eff, grad_a),
        (Stages::Stoch, ConstraintMode::Stoch) => {
            stochastic_vjp_per_matrix(&eff.a, eff.gamma_stoch_eff, grad_a)
        }
        (Stages::OrthStoch { .. }, ConstraintMode::OrthStoch) => {
            let d_margin = stochastic_vjp_per_matrix(&eff.a, eff.gamma_stoch_eff, grad_a)?;
            crisp_margin_vjp(&basis.ahat, eff.gamma_eff, &d_margin)
        }
        _ => Err(Error::Input(
            "effective basis carries no cached stages for this mode".into(),
        )),
    }
}

/// Smallest crispmax sharpness that guarantees ε-orthogonality for a basis
/// with per-entry gap δ:
/// `(1/δ) ln(K sqrt(1-2ε) / (1 - sqrt(1-2ε)) + 1)`.
pub fn epsilon_orth_bound(k: usize, delta: f64, epsilon: f64) -> Result<f64> {
    if k < 2 {
        return Err(Error::Domain(format!("K must be >= 2, got {k}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("delta must be > 0, got {delta}")));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    let s = (1.0 - 2.0 * epsilon).sqrt();
    Ok((k as f64 * s / (1.0 - s) + 1.0).ln() / delta)
}

/// Largest entry of `A_k ⊙ A_k'` over all k != k'.
pub fn max_cross_product(a: &Tensor3) -> f64 {
    let (k, r, c) = a.shape();
    let plane = r * c;
    let d = a.data();
    let mut worst: f64 = 0.0;
    for e in 0..plane {
        // the largest product at an entry is between its two largest values
        let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for kk in 0..k {
            let v = d[kk * plane + e];
            if v > top {
                second = top;
                top = v;
            } else if v > second {
                second = v;
            }
        }
        if k >= 2 {
            worst = worst.max(top * second);
        }
    }
    worst
}

/// Returns `(passes, max_violation)` for `A_k ⊙ A_k' <= ε` on nonnegative bases.
/// K < 2 passes trivially.
pub fn check_epsilon_orth(eff: &EffectiveBasis, epsilon: f64) -> (bool, f64) {
    if eff.k() < 2 {
        return (true, 0.0);
    }
    let worst = max_cross_product(&eff.a);
    (worst <= epsilon, worst)
}

/// Largest deviation of any column sum from one.
pub fn max_colsum_dev(a: &Tensor3) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..a.k() {
        for j in 0..a.cols() {
            let s: f64 = (0..a.rows()).map(|i| a.get(k, i, j)).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

/// Minimum over entries of (largest - runner-up) across k. Zero when any entry ties.
pub fn delta_gap(ahat: &Tensor3) -> f64 {
    let (k, r, c) = ahat.shape();
    if k < 2 {
        return f64::INFINITY;
    }
    let plane = r * c;
    let d = ahat.data();
    let mut gap = f64::INFINITY;
    for e in 0..plane {
        let (top, second) = top_two((0..k).map(|kk| d[kk * plane + e]));
        gap = gap.min(top - second);
    }
    if gap == 0.0 {
        log::warn!("adjacency basis has tied entries (delta gap 0); perturb it to restore a gap");
    }
    gap
}

fn top_two(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in vals {
        if v > top {
            second = top;
            top = v;
        } else if v > second {
            second = v;
        }
    }
    (top, second)
}

/// Raises the winning value of every entry so it leads the runner-up by at least `delta`.
pub fn enforce_delta_gap(ahat: &mut Tensor3, delta: f64) {
    let (k, r, c) = ahat.shape();
    if k < 2 {
        return;
    }
    let plane = r * c;
    let d = ahat.data_mut();
    for e in 0..plane {
        let mut best = 0;
        for kk in 1..k {
            if d[kk * plane + e] > d[best * plane + e] {
                best = kk;
            }
        }
        let second = (0..k)
            .filter(|&kk| kk != best)
            .map(|kk| d[kk * plane + e])
            .fold(f64::NEG_INFINITY, f64::max);
        let o = best * plane + e;
        if d[o] < second + delta {
            d[o] = second + delta;
        }
    }
}

/// Linear temperature schedule `gamma_max * epoch / max_epochs`, clamped at `gamma_max`.
pub fn anneal(gamma_max: f64, epoch: usize, max_epochs: usize) -> f64 {
    if max_epochs == 0 || epoch >= max_epochs {
        return gamma_max;
    }
    gamma_max * epoch as f64 / max_epochs as f64
}

/// Adds i.i.d. uniform noise in `[-magnitude, magnitude]` to every entry.
pub fn perturb<R: Rng + ?Sized>(ahat: &Tensor3, magnitude: f64, rng: &mut R) -> Tensor3 {
    if magnitude <= 0.0 {
        return ahat.clone();
    }
    let mut out = ahat.clone();
    for v in out.data_mut() {
        *v += rng.random_range(-magnitude..=magnitude);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub threshold: f64,
    pub nonzero_count: usize,
    pub total: usize,
    pub pruning_rate_percent: f64,
    pub target_rate_percent: f64,
}

/// `floor((1 - 1/m) * 100)` in exact integer arithmetic.
pub fn floor_rate(m: usize) -> u32 {
    if m == 0 {
        return 0;
    }
    (100 * (m - 1) / m) as u32
}

/// Target pruning rate implied by a constraint mode: `floor((1-1/K)*100)` for
/// orthogonality, `floor((1-1/n)*100)` with stochasticity on top, 0 otherwise.
pub fn target_rate(mode: ConstraintMode, k: usize, n: usize) -> u32 {
    match mode {
        ConstraintMode::Orth => floor_rate(k),
        ConstraintMode::OrthStoch => floor_rate(n),
        _ => 0,
    }
}

pub fn sparsity_report(eff: &EffectiveBasis, threshold: f64) -> SparsityReport {
    sparsity_of(&eff.a, eff.mode, threshold)
}

pub fn sparsity_of(a: &Tensor3, mode: ConstraintMode, threshold: f64) -> SparsityReport {
    let total = a.len();
    let nonzero_count = a.data().iter().filter(|v| v.abs() >= threshold).count();
    let pruning_rate_percent = if total == 0 {
        0.0
    } else {
        100.0 * (1.0 - nonzero_count as f64 / total as f64)
    };
    SparsityReport {
        threshold,
        nonzero_count,
        total,
        pruning_rate_percent,
        target_rate_percent: f64::from(target_rate(mode, a.k(), a.rows())),
    }
}
