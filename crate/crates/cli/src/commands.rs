use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use lwgcn::connectivity::{
    check_epsilon_orth, epsilon_orth_bound, max_colsum_dev, max_cross_product, sparsity_of, AdjacencyBasis,
    ConstraintMode, EffectiveBasis,
};
use lwgcn::gcn::{gradient_check, model_forward, GcnModel};
use lwgcn::numkit::{Mat, Tensor3};
use lwgcn::skeleton::{Dataset, Split};
use lwgcn::trainer::{
    evaluate, init_model, train as run_training, write_ablation_csv, write_metrics_csv, EvalReport, RunMetrics,
};
use lwgcn::Error;

use crate::settings::RunSpec;
use crate::{BoundArgs, GradcheckArgs};

pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub fn usage(message: String) -> Failure {
    Failure { code: 2, message }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Diverged { .. }) { 3 } else { 2 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type Outcome = Result<u8, Failure>;

fn prepare_out(spec: &RunSpec) -> Result<(), Failure> {
    fs::create_dir_all(&spec.out_dir)?;
    fs::write(spec.out_dir.join("run_spec.txt"), spec.echo())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct Summary {
    mode: ConstraintMode,
    k: usize,
    n: usize,
    num_classes: usize,
    seed: u64,
    epochs_run: usize,
    gamma_max: f64,
    final_loss: Option<f64>,
    mean_class_accuracy: Option<f64>,
    per_class_accuracy: Option<Vec<Option<f64>>>,
    sparsity_threshold: f64,
    pruning_rate_percent: f64,
    target_rate_percent: f64,
    max_cross_orth: f64,
    epsilon: f64,
    epsilon_orth_ok: Option<bool>,
    max_colsum_dev: f64,
    masked: bool,
}

fn summarize(model: &GcnModel, metrics: &RunMetrics, spec: &RunSpec, dataset: &Dataset) -> Result<Summary, Failure> {
    let (eff, a) = model.effective(model.basis.gamma_max)?;
    let report = sparsity_of(&a, eff.mode, spec.train.sparsity_threshold);
    let cross = if a.k() >= 2 { max_cross_product(&a) } else { 0.0 };
    let orth_ok = eff.mode.has_orth().then(|| check_epsilon_orth(&EffectiveBasis::fixed(a.clone()), spec.epsilon).0);
    Ok(Summary {
        mode: model.basis.mode,
        k: model.k(),
        n: model.n(),
        num_classes: dataset.num_classes,
        seed: spec.train.seed,
        epochs_run: metrics.records.len(),
        gamma_max: model.basis.gamma_max,
        final_loss: metrics.records.last().map(|r| r.loss),
        mean_class_accuracy: metrics.final_eval.as_ref().map(|e| e.mean_class_accuracy),
        per_class_accuracy: metrics.final_eval.as_ref().map(|e| e.per_class.clone()),
        sparsity_threshold: spec.train.sparsity_threshold,
        pruning_rate_percent: report.pruning_rate_percent,
        target_rate_percent: report.target_rate_percent,
        max_cross_orth: cross,
        epsilon: spec.epsilon,
        epsilon_orth_ok: orth_ok,
        max_colsum_dev: max_colsum_dev(&a),
        masked: model.mask.is_some(),
    })
}

fn finish_run(spec: &RunSpec, dataset: &Dataset, model: &GcnModel, metrics: &RunMetrics) -> Outcome {
    let epochs = metrics.records.len();
    model.save(&spec.out_dir.join("model.json"), epochs)?;
    write_metrics_csv(&spec.out_dir.join("metrics.csv"), &metrics.records)?;
    let summary = summarize(model, metrics, spec, dataset)?;
    write_json(&spec.out_dir.join("summary.json"), &summary)?;
    match summary.mean_class_accuracy {
        Some(acc) => println!(
            "mean class accuracy {:.2}%  pruning rate {:.2}% (target {})  -> {}",
            100.0 * acc,
            summary.pruning_rate_percent,
            summary.target_rate_percent,
            spec.out_dir.display()
        ),
        None => println!("trained {epochs} epochs (no test split)  -> {}", spec.out_dir.display()),
    }
    Ok(0)
}

pub fn train(spec: &RunSpec) -> Outcome {
    if spec.k_values.len() != 1 {
        return Err(usage("train takes a single --k".into()));
    }
    let dataset = spec.data.load()?;
    prepare_out(spec)?;
    let model = init_model(&dataset, &spec.train)?;
    let (model, metrics) = run_training(&dataset, &model, &spec.train)?;
    finish_run(spec, &dataset, &model, &metrics)
}

fn load_checkpoint(spec: &RunSpec) -> Result<GcnModel, Failure> {
    let path = spec.checkpoint.as_ref().ok_or_else(|| usage("--checkpoint is required".into()))?;
    Ok(GcnModel::load(path)?.0)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    checkpoint: String,
    split: &'static str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn eval(spec: &RunSpec) -> Outcome {
    let model = load_checkpoint(spec)?;
    let dataset = spec.data.load()?;
    prepare_out(spec)?;
    let report = evaluate(&model, &dataset, Split::Test)?;
    write_json(
        &spec.out_dir.join("eval.json"),
        &EvalOutput {
            checkpoint: spec.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            split: "test",
            report: &report,
        },
    )?;
    println!("mean class accuracy {:.2}%", 100.0 * report.mean_class_accuracy);
    for (c, acc) in report.per_class.iter().enumerate() {
        match acc {
            Some(a) => println!("  class {c}: {:.2}%", 100.0 * a),
            None => println!("  class {c}: absent"),
        }
    }
    Ok(0)
}

pub fn prune(spec: &RunSpec) -> Outcome {
    let Some(prune) = spec.train.prune else {
        return Err(usage("prune needs --prune-rate".into()));
    };
    let model = load_checkpoint(spec)?;
    let dataset = spec.data.load()?;
    prepare_out(spec)?;
    let cfg = lwgcn::trainer::TrainConfig {
        max_epochs: 0,
        prune: Some(prune),
        ..spec.train.clone()
    };
    let (model, metrics) = run_training(&dataset, &model, &cfg)?;
    finish_run(spec, &dataset, &model, &metrics)
}

pub fn ablate(spec: &RunSpec) -> Outcome {
    let dataset = spec.data.load()?;
    prepare_out(spec)?;
    let mut rows = Vec::new();
    for &k in &spec.k_values {
        let mut base = spec.train.clone();
        base.gamma_max = spec.gamma_for(k);
        rows.extend(lwgcn::trainer::run_ablation(&dataset, &base, &[k], &spec.modes)?);
    }
    write_ablation_csv(&spec.out_dir.join("ablation.csv"), &rows)?;
    write_json(&spec.out_dir.join("ablation.json"), &rows)?;
    println!("{:>3}  {:<11} {:>9} {:>8} {:>7}", "K", "mode", "accuracy", "rate", "target");
    for r in &rows {
        println!(
            "{:>3}  {:<11} {:>8.2}% {:>8} {:>7}",
            r.k,
            r.mode.label(),
            100.0 * r.accuracy,
            r.pruning_rate.map_or("none".into(), |p| format!("{p:.2}%")),
            r.target_rate.map_or("none".into(), |t| t.to_string())
        );
    }
    Ok(0)
}

pub fn gradcheck(args: &GradcheckArgs) -> Outcome {
    let modes: Vec<ConstraintMode> = match &args.mode {
        Some(m) => vec![m.parse().map_err(|e: Error| usage(e.to_string()))?],
        None => ConstraintMode::ALL.to_vec(),
    };
    if args.k == 0 || args.n == 0 || args.s == 0 || args.channels == 0 || args.classes < 2 || args.seeds == 0 {
        return Err(usage("gradcheck needs k, n, s, channels, seeds >= 1 and classes >= 2".into()));
    }
    let mut failed = Vec::new();
    for mode in modes {
        let mut worst = [0.0f64; 4];
        let mut names = [""; 4];
        for i in 0..args.seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_mul(1_000_003).wrapping_add(i));
            let basis = AdjacencyBasis::random(args.k, args.n, mode, args.gamma, &mut rng)?;
            let model = GcnModel::init(basis, args.s, args.channels, args.classes, &mut rng)?;
            // finite differences are meaningless across a relu kink; redraw such inputs
            let mut u = Mat::from_fn(args.s, args.n, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
            for _ in 0..100 {
                let trace = model_forward(&model, &u, args.gamma)?;
                if trace.pre_activation().data().iter().all(|v| v.abs() > 1e3 * args.step) {
                    break;
                }
                u = Mat::from_fn(args.s, args.n, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
            }
            let label = rand::Rng::random_range(&mut rng, 0..args.classes);
            for (j, c) in gradient_check(&model, &u, label, args.gamma, args.step, args.fault)?
                .into_iter()
                .enumerate()
            {
                worst[j] = worst[j].max(c.max_rel_error);
                names[j] = c.group.name();
            }
        }
        for (name, err) in names.iter().zip(worst) {
            let ok = err <= args.tol;
            println!("{:<9} {:<6} max rel error {err:.3e} {}", mode.as_str(), name, if ok { "ok" } else { "FAIL" });
            if !ok {
                failed.push(format!("{}/{name}", mode.as_str()));
            }
        }
    }
    if failed.is_empty() {
        println!("gradient check passed (tol {:.0e})", args.tol);
        Ok(0)
    } else {
        println!("gradient check failed: {}", failed.join(", "));
        Ok(1)
    }
}

/// Random `k x n x n` basis whose winning entry leads the runner-up by exactly
/// `delta` at every position.
pub fn gapped_basis(k: usize, n: usize, delta: f64, rng: &mut ChaCha8Rng) -> Tensor3 {
    let mut t = Tensor3::from_fn(k, n, n, |_, _, _| rand::Rng::random_range(rng, -1.0..1.0));
    for i in 0..n {
        for j in 0..n {
            let win = rand::Rng::random_range(rng, 0..k);
            let second = (0..k)
                .filter(|&kk| kk != win)
                .map(|kk| t.get(kk, i, j))
                .fold(f64::NEG_INFINITY, f64::max);
            t.set(win, i, j, second + delta);
        }
    }
    t
}

pub fn bound(args: &BoundArgs) -> Outcome {
    let gamma = epsilon_orth_bound(args.k, args.delta, args.eps).map_err(|e| usage(e.to_string()))?;
    println!("gamma >= {gamma:.4}  (K = {}, delta = {}, eps = {})", args.k, args.delta, args.eps);
    if args.n == 0 {
        return Err(usage("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for _ in 0..args.trials {
        let ahat = gapped_basis(args.k, args.n, args.delta, &mut rng);
        let basis = AdjacencyBasis::new(ahat, ConstraintMode::Orth, gamma)?;
        let eff = lwgcn::connectivity::basis_forward(&basis, gamma)?;
        let (ok, v) = check_epsilon_orth(&eff, args.eps);
        worst = worst.max(v);
        failures += usize::from(!ok);
    }
    let pass = failures == 0;
    println!(
        "verification over {} random {}-gapped bases: max cross product {worst:.6} -> {}",
        args.trials,
        args.delta,
        if pass { "pass" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 1 })
}
