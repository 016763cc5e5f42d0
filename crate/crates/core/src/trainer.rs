//! Optimization loop: Adam, the loss-speed learning-rate rule, annealing,
//! noise injection, evaluation, magnitude pruning and the ablation grid.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectivity::{
    anneal, max_colsum_dev, max_cross_product, perturb, sparsity_of, target_rate, AdjacencyBasis, ConstraintMode,
    DEFAULT_DELTA, DEFAULT_SPARSITY_THRESHOLD,
};
use crate::error::{shape_err, Error, Result};
use crate::gcn::{cross_entropy, BlockGradients, GcnModel, Gradients};
use crate::numkit::Tensor3;
use crate::skeleton::{handcrafted_adjacency, power_map_basis, Dataset, Split};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Percentage of effective-basis entries to zero, in `[0, 100)`.
    pub rate: f64,
    pub fine_tune_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lr_init: f64,
    pub lr_factor: f64,
    pub lr_bounds: (f64, f64),
    pub mode: ConstraintMode,
    pub gamma_max: f64,
    /// Uniform noise added to `Ahat` once per epoch (before the forward passes).
    pub noise_magnitude: f64,
    pub seed: u64,
    pub prune: Option<PruneConfig>,
    /// Keep the adjacency basis fixed (handcrafted baseline).
    pub freeze_basis: bool,
    /// Number of basis matrices K used when the trainer builds the model.
    pub k: usize,
    /// Output channels C of the convolution block.
    pub channels: usize,
    /// Entries with `|A| <` this count as pruned in the metrics.
    pub sparsity_threshold: f64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 2800,
            batch_size: 600,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_init: 1e-2,
            lr_factor: 0.99,
            lr_bounds: (1e-5, 1e-1),
            mode: ConstraintMode::OrthStoch,
            gamma_max: 530.0,
            noise_magnitude: DEFAULT_DELTA / 2.0,
            seed: 0,
            prune: None,
            freeze_basis: false,
            k: 4,
            channels: 16,
            sparsity_threshold: DEFAULT_SPARSITY_THRESHOLD,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lr_bounds;
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Input(format!("lr_factor {} must lie in (0, 1)", self.lr_factor)));
        }
        if !(lo > 0.0 && lo <= self.lr_init && self.lr_init <= hi) {
            return Err(Error::Input(format!("need 0 < {lo} <= lr_init {} <= {hi}", self.lr_init)));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Input("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        if !(self.gamma_max >= 0.0 && self.gamma_max.is_finite()) {
            return Err(Error::Domain(format!("gamma_max {} must be finite and >= 0", self.gamma_max)));
        }
        if !(self.noise_magnitude >= 0.0) {
            return Err(Error::Input("noise_magnitude must be >= 0".into()));
        }
        if self.k == 0 || self.channels == 0 {
            return Err(Error::Input("k and channels must be >= 1".into()));
        }
        if let Some(p) = self.prune {
            check_rate(p.rate)?;
        }
        Ok(())
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..100.0).contains(&rate) {
        return Err(Error::Domain(format!("pruning rate {rate} outside [0, 100)")));
    }
    Ok(())
}

/// Random model for `dataset` with the basis settings of `config`.
pub fn init_model(dataset: &Dataset, config: &TrainConfig) -> Result<GcnModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d6f_6465_6c00);
    let mut basis = AdjacencyBasis::random(config.k, dataset.n(), config.mode, config.gamma_max, &mut rng)?;
    if config.mode == ConstraintMode::None {
        // raw entries act as weights directly; keep columns summing to about one
        let n = dataset.n() as f64;
        basis.ahat = basis.ahat.map(|v| v / n);
    }
    GcnModel::init(basis, dataset.signal_dim(), config.channels, dataset.num_classes, &mut rng)
}

/// Model whose basis is the power map of the skeleton's handcrafted adjacency.
pub fn init_handcrafted_model(dataset: &Dataset, config: &TrainConfig) -> Result<GcnModel> {
    let mut model = init_model(dataset, config)?;
    let ahat = power_map_basis(&handcrafted_adjacency(&dataset.graph), config.k)?;
    model.basis = AdjacencyBasis::new(ahat, ConstraintMode::None, config.gamma_max)?;
    Ok(model)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update with step size `nu`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    nu: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return shape_err(format!(
            "adam: {} params, {} grads, state {}/{}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        ));
    }
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= nu * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// Learning-rate rule driven by the speed `|L_t - L_{t-1}|` of the loss:
/// a faster change shrinks `nu` by `factor`, otherwise it grows by `1/factor`.
pub fn adapt_lr(loss_history: &[f64], nu_prev: f64, factor: f64, bounds: (f64, f64)) -> f64 {
    let t = loss_history.len();
    if t < 3 {
        return nu_prev;
    }
    let speed = (loss_history[t - 1] - loss_history[t - 2]).abs();
    let prev_speed = (loss_history[t - 2] - loss_history[t - 3]).abs();
    let nu = if speed > prev_speed { nu_prev * factor } else { nu_prev / factor };
    nu.clamp(bounds.0, bounds.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub nu: f64,
    pub gamma_eff: f64,
    pub max_cross_orth: f64,
    pub max_colsum_dev: f64,
    pub pruning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_class_accuracy: f64,
    /// `None` for classes absent from the split.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub records: Vec<EpochRecord>,
    pub final_eval: Option<EvalReport>,
}

/// Mean per-class accuracy from predictions. Classes that never occur are
/// left out of the mean.
pub fn class_accuracy(predicted: &[usize], labels: &[usize], num_classes: usize) -> Result<EvalReport> {
    if predicted.len() != labels.len() {
        return shape_err(format!("{} predictions for {} labels", predicted.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Input("cannot evaluate an empty split".into()));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::Input(format!("class index out of range ({l} -> {p})")));
        }
        confusion[l][p] += 1;
    }
    let per_class: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.len() < num_classes {
        log::warn!("{} classes absent from the split; excluded from the mean", num_classes - present.len());
    }
    Ok(EvalReport {
        mean_class_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        confusion,
    })
}

/// Evaluates at the basis' final sharpness.
pub fn evaluate(model: &GcnModel, dataset: &Dataset, split: Split) -> Result<EvalReport> {
    let idx = dataset.split(split);
    if idx.is_empty() {
        return Err(Error::Input(format!("{split:?} split is empty")));
    }
    let (_, a) = model.effective(model.basis.gamma_max)?;
    let predicted = idx
        .par_iter()
        .map(|&i| model.predict(&a, &dataset.samples[i].u))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = idx.iter().map(|&i| dataset.samples[i].label).collect();
    class_accuracy(&predicted, &labels, dataset.num_classes)
}

/// Zeroes the `ceil(rate% * K n^2)` smallest-magnitude entries of the effective
/// basis at the final sharpness by installing a fixed mask. Ties go to the
/// lower flat index.
pub fn magnitude_prune(model: &GcnModel, rate: f64) -> Result<GcnModel> {
    check_rate(rate)?;
    let mut out = model.clone();
    if rate == 0.0 {
        return Ok(out);
    }
    let (_, a) = model.effective(model.basis.gamma_max)?;
    let total = a.len();
    let count = ((rate / 100.0 * total as f64).ceil() as usize).min(total);
    let mut order: Vec<usize> = (0..total).collect();
    let d = a.data();
    order.sort_by(|&x, &y| d[x].abs().total_cmp(&d[y].abs()).then(x.cmp(&y)));
    let mut mask = model.mask.clone().unwrap_or_else(|| Tensor3::filled(a.k(), a.rows(), a.cols(), 1.0));
    for &i in &order[..count] {
        mask.data_mut()[i] = 0.0;
    }
    out.mask = Some(mask);
    Ok(out)
}

fn flatten(model: &GcnModel) -> Vec<f64> {
    let mut v = model.basis.ahat.data().to_vec();
    for w in &model.filters {
        v.extend_from_slice(w.data());
    }
    v.extend_from_slice(model.head.data());
    v.extend_from_slice(&model.bias);
    v
}

fn flatten_grads(g: &Gradients, freeze_basis: bool) -> Vec<f64> {
    let mut v = if freeze_basis {
        vec![0.0; g.d_ahat.len()]
    } else {
        g.d_ahat.data().to_vec()
    };
    for w in &g.d_filters {
        v.extend_from_slice(w.data());
    }
    v.extend_from_slice(g.d_head.data());
    v.extend_from_slice(&g.d_bias);
    v
}

fn unflatten(model: &mut GcnModel, v: &[f64]) {
    let mut off = 0;
    let mut take = |dst: &mut [f64]| {
        dst.copy_from_slice(&v[off..off + dst.len()]);
        off += dst.len();
    };
    take(model.basis.ahat.data_mut());
    for w in &mut model.filters {
        take(w.data_mut());
    }
    take(model.head.data_mut());
    take(&mut model.bias);
}

struct Phase {
    epochs: usize,
    /// `None` anneals over the phase, `Some(g)` holds the sharpness fixed.
    fixed_gamma: Option<f64>,
}

/// Runs the full schedule (training, then optional prune + fine-tune) and
/// evaluates on the test split when it is non-empty.
pub fn train(dataset: &Dataset, model: &GcnModel, config: &TrainConfig) -> Result<(GcnModel, RunMetrics)> {
    config.validate()?;
    check_compatible(dataset, model)?;
    if dataset.train.is_empty() {
        return Err(Error::Input("train split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = model.clone();
    let mut records = Vec::new();
    run_phase(
        dataset,
        &mut model,
        config,
        &Phase {
            epochs: config.max_epochs,
            fixed_gamma: None,
        },
        &mut rng,
        &mut records,
    )?;
    if let Some(p) = config.prune {
        model = magnitude_prune(&model, p.rate)?;
        let gamma_max = model.basis.gamma_max;
        run_phase(
            dataset,
            &mut model,
            config,
            &Phase {
                epochs: p.fine_tune_epochs,
                fixed_gamma: Some(gamma_max),
            },
            &mut rng,
            &mut records,
        )?;
    }
    let final_eval = if dataset.test.is_empty() {
        None
    } else {
        Some(evaluate(&model, dataset, Split::Test)?)
    };
    Ok((model, RunMetrics { records, final_eval }))
}

fn check_compatible(dataset: &Dataset, model: &GcnModel) -> Result<()> {
    model.validate()?;
    if model.n() != dataset.n() || model.signal_dim() != dataset.signal_dim() {
        return shape_err(format!(
            "model expects {}x{} signals, dataset has {}x{}",
            model.signal_dim(),
            model.n(),
            dataset.signal_dim(),
            dataset.n()
        ));
    }
    if model.num_classes() != dataset.num_classes {
        return shape_err(format!("model has {} classes, dataset {}", model.num_classes(), dataset.num_classes));
    }
    Ok(())
}

fn run_phase(
    dataset: &Dataset,
    model: &mut GcnModel,
    config: &TrainConfig,
    phase: &Phase,
    rng: &mut ChaCha8Rng,
    records: &mut Vec<EpochRecord>,
) -> Result<()> {
    let mut params = flatten(model);
    let mut state = AdamState::new(params.len());
    let mut nu = config.lr_init;
    let mut history: Vec<f64> = Vec::new();
    let mut order = dataset.train.clone();
    let first_epoch = records.len();

    for e in 0..phase.epochs {
        let gamma = phase
            .fixed_gamma
            .unwrap_or_else(|| anneal(model.basis.gamma_max, e + 1, phase.epochs));
        order.shuffle(rng);
        let noise = if !config.freeze_basis && config.noise_magnitude > 0.0 {
            let zero = Tensor3::zeros(model.k(), model.n(), model.n());
            Some(perturb(&zero, config.noise_magnitude, rng))
        } else {
            None
        };

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            // forward and backward see the perturbed basis; Adam updates the clean one
            let mut noisy = model.clone();
            if let Some(z) = &noise {
                for (v, o) in noisy.basis.ahat.data_mut().iter_mut().zip(z.data()) {
                    *v += o;
                }
            }
            let (eff, a) = noisy.effective(gamma)?;
            let per_sample = batch
                .par_iter()
                .map(|&i| {
                    let s = &dataset.samples[i];
                    let trace = noisy.forward_sample(&a, &s.u)?;
                    let (mut loss, d_logits) = cross_entropy(&trace.logits, s.label)?;
                    // relu maps NaN to 0, so overflow upstream would otherwise go unnoticed
                    let finite = trace.pre_activation.data().iter().chain(&trace.logits).all(|v| v.is_finite());
                    if !finite {
                        loss = f64::NAN;
                    }
                    Ok((loss, noisy.backward_sample(&trace, &d_logits)?))
                })
                .collect::<Result<Vec<(f64, BlockGradients)>>>()?;
            let mut iter = per_sample.into_iter();
            let (mut batch_loss, mut acc) = iter.next().expect("non-empty batch");
            for (l, g) in iter {
                batch_loss += l;
                acc.add_assign(&g)?;
            }
            acc.scale(1.0 / batch.len() as f64);
            loss_sum += batch_loss;
            let grads = noisy.finish_gradients(&eff, acc)?;
            let flat = flatten_grads(&grads, config.freeze_basis);
            adam_step(&mut params, &flat, &mut state, nu, config.beta1, config.beta2, config.adam_eps)?;
            if params.iter().any(|v| !v.is_finite()) {
                return Err(diverged(model, config, first_epoch + e, "non-finite parameters after update"));
            }
            unflatten(model, &params);
        }
        let loss = loss_sum / order.len() as f64;
        if !loss.is_finite() {
            return Err(diverged(model, config, first_epoch + e, &format!("loss {loss} at gamma {gamma}, nu {nu}")));
        }
        history.push(loss);
        let nu_used = nu;
        nu = adapt_lr(&history, nu, config.lr_factor, config.lr_bounds);

        let (eff, a) = model.effective(gamma)?;
        let epoch = first_epoch + e + 1;
        records.push(EpochRecord {
            epoch,
            loss,
            nu: nu_used,
            gamma_eff: gamma,
            max_cross_orth: if eff.k() >= 2 { max_cross_product(&a) } else { 0.0 },
            max_colsum_dev: max_colsum_dev(&a),
            pruning_rate: sparsity_of(&a, eff.mode, config.sparsity_threshold).pruning_rate_percent,
        });
        log::debug!("epoch {epoch}: loss {loss:.6} nu {nu_used:.3e} gamma {gamma:.2}");
        if config.checkpoint_every > 0 && epoch.is_multiple_of(config.checkpoint_every) {
            if let Some(dir) = &config.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                model.save(&dir.join(format!("checkpoint_{epoch:06}.json")), epoch)?;
            }
        }
    }
    Ok(())
}

fn diverged(model: &GcnModel, config: &TrainConfig, epoch: usize, detail: &str) -> Error {
    let mut detail = detail.to_string();
    if let Some(dir) = &config.checkpoint_dir {
        let path = dir.join("diverged_state.json");
        match std::fs::create_dir_all(dir).map_err(Error::from).and_then(|_| model.save(&path, epoch)) {
            Ok(()) => detail.push_str(&format!("; state dumped to {}", path.display())),
            Err(e) => detail.push_str(&format!("; state dump failed: {e}")),
        }
    }
    Error::Diverged { epoch, detail }
}

pub fn write_metrics_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationMode {
    /// Frozen power map of the handcrafted skeleton adjacency.
    #[serde(rename = "H")]
    Handcrafted,
    #[serde(rename = "L")]
    Learned,
    #[serde(rename = "L+orth")]
    LearnedOrth,
    /// Unconstrained, then magnitude-pruned to the orthogonal target rate.
    #[serde(rename = "L+MP(K)")]
    PrunedToK,
    #[serde(rename = "L+orth+stc")]
    LearnedOrthStoch,
    /// Unconstrained, then magnitude-pruned to the orth+stochastic target rate.
    #[serde(rename = "L+MP(n)")]
    PrunedToN,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Handcrafted,
        AblationMode::Learned,
        AblationMode::LearnedOrth,
        AblationMode::PrunedToK,
        AblationMode::LearnedOrthStoch,
        AblationMode::PrunedToN,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationMode::Handcrafted => "H",
            AblationMode::Learned => "L",
            AblationMode::LearnedOrth => "L+orth",
            AblationMode::PrunedToK => "L+MP(K)",
            AblationMode::LearnedOrthStoch => "L+orth+stc",
            AblationMode::PrunedToN => "L+MP(n)",
        }
    }

    /// Rate the column is meant to reach, `None` for unpruned columns.
    pub fn target_rate(self, k: usize, n: usize) -> Option<u32> {
        match self {
            AblationMode::Handcrafted | AblationMode::Learned => None,
            AblationMode::LearnedOrth | AblationMode::PrunedToK => Some(target_rate(ConstraintMode::Orth, k, n)),
            AblationMode::LearnedOrthStoch | AblationMode::PrunedToN => {
                Some(target_rate(ConstraintMode::OrthStoch, k, n))
            }
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(' ', "");
        Ok(match norm.as_str() {
            "h" => AblationMode::Handcrafted,
            "l" => AblationMode::Learned,
            "l+orth" => AblationMode::LearnedOrth,
            "l+mp(k)" | "l+mp-k" => AblationMode::PrunedToK,
            "l+orth+stc" => AblationMode::LearnedOrthStoch,
            "l+mp(n)" | "l+mp-n" => AblationMode::PrunedToN,
            _ => return Err(Error::Input(format!("unknown ablation mode '{s}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub mode: AblationMode,
    pub accuracy: f64,
    /// Measured rate of the effective basis; `None` for unpruned columns.
    pub pruning_rate: Option<f64>,
    pub target_rate: Option<u32>,
}

/// Trains one model for a `(K, mode)` cell and reports its test accuracy.
pub fn run_cell(dataset: &Dataset, base: &TrainConfig, k: usize, mode: AblationMode) -> Result<(GcnModel, AblationRow)> {
    let mut cfg = base.clone();
    cfg.k = k;
    cfg.prune = None;
    cfg.freeze_basis = false;
    let target = mode.target_rate(k, dataset.n());
    let model = match mode {
        AblationMode::Handcrafted => {
            cfg.mode = ConstraintMode::None;
            cfg.freeze_basis = true;
            init_handcrafted_model(dataset, &cfg)?
        }
        AblationMode::Learned => {
            cfg.mode = ConstraintMode::None;
            init_model(dataset, &cfg)?
        }
        AblationMode::LearnedOrth => {
            cfg.mode = ConstraintMode::Orth;
            init_model(dataset, &cfg)?
        }
        AblationMode::LearnedOrthStoch => {
            cfg.mode = ConstraintMode::OrthStoch;
            init_model(dataset, &cfg)?
        }
        AblationMode::PrunedToK | AblationMode::PrunedToN => {
            cfg.mode = ConstraintMode::None;
            cfg.prune = Some(PruneConfig {
                rate: f64::from(target.unwrap_or(0)),
                fine_tune_epochs: base.prune.map_or(base.max_epochs / 10, |p| p.fine_tune_epochs),
            });
            init_model(dataset, &cfg)?
        }
    };
    let (trained, metrics) = train(dataset, &model, &cfg)?;
    let accuracy = metrics
        .final_eval
        .as_ref()
        .map(|e| e.mean_class_accuracy)
        .ok_or_else(|| Error::Input("ablation needs a non-empty test split".into()))?;
    let pruning_rate = target.map(|_| {
        let (eff, a) = trained.effective(trained.basis.gamma_max).expect("model validated during training");
        sparsity_of(&a, eff.mode, cfg.sparsity_threshold).pruning_rate_percent
    });
    Ok((
        trained,
        AblationRow {
            k,
            mode,
            accuracy,
            pruning_rate,
            target_rate: target,
        },
    ))
}

/// Every `(K, mode)` cell, K-major in the given order.
pub fn run_ablation(
    dataset: &Dataset,
    base: &TrainConfig,
    k_values: &[usize],
    modes: &[AblationMode],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(k_values.len() * modes.len());
    for &k in k_values {
        for &mode in modes {
            log::info!("ablation cell K={k} mode={mode}");
            rows.push(run_cell(dataset, base, k, mode)?.1);
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["K", "mode", "accuracy", "pruning_rate", "target_rate"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.mode.label().to_string(),
            format!("{:.4}", r.accuracy),
            r.pruning_rate.map_or("none".to_string(), |p| format!("{p:.2}")),
            r.target_rate.map_or("none".to_string(), |t| t.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adapt_lr_cases() {
        let up = adapt_lr(&[1.0, 0.5, -0.3], 0.01, 0.99, (1e-5, 1e-1));
        assert!((up - 0.0099).abs() < 1e-15);
        let down = adapt_lr(&[1.0, 0.2, -0.3], 0.0099, 0.99, (1e-5, 1e-1));
        assert!((down - 0.01).abs() < 1e-15);
        assert_eq!(adapt_lr(&[1.0, 0.5], 0.02, 0.99, (1e-5, 1e-1)), 0.02);
        let mut nu = 0.01;
        let flat = vec![0.7; 3];
        for _ in 0..1000 {
            nu = adapt_lr(&flat, nu, 0.99, (1e-5, 1e-1));
        }
        assert_eq!(nu, 1e-1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let g = [0.3, -2.0, 1e-3, 0.0];
        let mut p = [1.0; 4];
        let mut st = AdamState::new(4);
        adam_step(&mut p, &g, &mut st, 0.01, 0.9, 0.999, 1e-8).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let want = 1.0 - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - want).abs() < 1e-15, "{pi} vs {want}");
        }
        assert!(adam_step(&mut p, &g[..3], &mut st, 0.01, 0.9, 0.999, 1e-8).is_err());
    }

    #[test]
    fn class_accuracy_counting() {
        // class A: one right; class B: one right one wrong
        let r = class_accuracy(&[0, 1, 0], &[0, 1, 1], 2).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0), Some(0.5)]);
        assert!((r.mean_class_accuracy - 0.75).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![1, 0], vec![1, 1]]);
        let c = class_accuracy(&[2; 10], &[0, 0, 1, 1, 2, 2, 3, 3, 4, 4], 5).unwrap();
        assert!((c.mean_class_accuracy - 0.2).abs() < 1e-15);
        let absent = class_accuracy(&[0, 0], &[0, 0], 3).unwrap();
        assert_eq!(absent.per_class, vec![Some(1.0), None, None]);
        assert_eq!(absent.mean_class_accuracy, 1.0);
        assert!(class_accuracy(&[], &[], 2).is_err());
    }

    #[test]
    fn ablation_mode_parsing() {
        for m in AblationMode::ALL {
            assert_eq!(m.label().parse::<AblationMode>().unwrap(), m);
        }
        assert_eq!(AblationMode::LearnedOrthStoch.target_rate(8, 21), Some(95));
        assert_eq!(AblationMode::PrunedToK.target_rate(2, 21), Some(50));
        assert_eq!(AblationMode::Learned.target_rate(2, 21), None);
    }
}
