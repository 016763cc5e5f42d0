//! Finite-difference checks of every analytic vector-Jacobian product.
//!
//! The central-difference oracle below is written independently of the
//! library's own `finite_diff_oracle`.

use lwgcn::connectivity::*;
use lwgcn::gcn::*;
use lwgcn::numkit::{Mat, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let plus = f(&probe);
            probe[i] = x[i] - STEP;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * STEP)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(1e-12, f64::max);
    diff / scale
}

fn rand_tensor(r: &mut ChaCha8Rng, k: usize, n: usize, lo: f64, hi: f64) -> Tensor3 {
    Tensor3::from_fn(k, n, n, |_, _, _| r.random_range(lo..hi))
}

/// Smooth scalar head `sum w * A + 0.5 * sum A^2` and its gradient w.r.t. A.
fn head(weights: &[f64], a: &[f64]) -> f64 {
    a.iter().zip(weights).map(|(x, w)| w * x + 0.5 * x * x).sum()
}

fn head_grad(weights: &[f64], a: &[f64]) -> Vec<f64> {
    a.iter().zip(weights).map(|(x, w)| w + x).collect()
}

#[test]
fn crispmax_vjp_matches_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let (k, n, gamma) = (3, 4, 7.0);
    let ahat = rand_tensor(&mut r, k, n, -0.5, 0.5);
    let weights: Vec<f64> = (0..k * n * n).map(|_| r.random_range(-1.0..1.0)).collect();
    let a = crispmax_forward(&ahat, gamma).unwrap();
    let g = Tensor3::new(k, n, n, head_grad(&weights, a.data())).unwrap();
    let analytic = crispmax_vjp(&a, gamma, &g).unwrap();
    let numeric = central_diff(ahat.data(), |x| {
        let t = Tensor3::new(k, n, n, x.to_vec()).unwrap();
        head(&weights, crispmax_forward(&t, gamma).unwrap().data())
    });
    let e = rel_err(analytic.data(), &numeric);
    assert!(e <= 1e-6, "crispmax rel err {e}");
}

#[test]
fn stochastic_vjp_matches_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let n = 5;
    for gamma_s in [1.0, 3.5] {
        let ahat = Mat::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        let weights: Vec<f64> = (0..n * n).map(|_| r.random_range(-1.0..1.0)).collect();
        let a = stochastic_forward(&ahat, gamma_s).unwrap();
        let g = Mat::new(n, n, head_grad(&weights, a.data())).unwrap();
        let analytic = stochastic_vjp(&a, gamma_s, &g).unwrap();
        let numeric = central_diff(ahat.data(), |x| {
            let m = Mat::new(n, n, x.to_vec()).unwrap();
            head(&weights, stochastic_forward(&m, gamma_s).unwrap().data())
        });
        let e = rel_err(analytic.data(), &numeric);
        assert!(e <= 1e-6, "stochastic rel err {e}");
    }
}

#[test]
fn crisp_margin_vjp_matches_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(13);
    for (k, gamma) in [(2, 3.0), (3, 0.0), (4, 6.0), (1, 2.0)] {
        let n = 3;
        let ahat = rand_tensor(&mut r, k, n, -1.0, 1.0);
        let weights: Vec<f64> = (0..k * n * n).map(|_| r.random_range(-1.0..1.0)).collect();
        let m = crisp_margin(&ahat, gamma).unwrap();
        let g = Tensor3::new(k, n, n, head_grad(&weights, m.data())).unwrap();
        let analytic = crisp_margin_vjp(&ahat, gamma, &g).unwrap();
        let numeric = central_diff(ahat.data(), |x| {
            let t = Tensor3::new(k, n, n, x.to_vec()).unwrap();
            head(&weights, crisp_margin(&t, gamma).unwrap().data())
        });
        let e = rel_err(analytic.data(), &numeric);
        assert!(e <= 1e-6, "margin K={k} gamma={gamma} rel err {e}");
    }
}

/// All modes, random K <= 8 and n <= 16, random smooth heads.
#[test]
fn basis_vjp_matches_finite_differences_all_modes() {
    let mut r = ChaCha8Rng::seed_from_u64(14);
    for mode in ConstraintMode::ALL {
        for trial in 0..6 {
            let k = r.random_range(1..=8usize);
            let n = r.random_range(1..=16usize);
            // keep the product gamma * spread moderate so third derivatives stay tame
            let gamma = r.random_range(0.5..4.0);
            let ahat = rand_tensor(&mut r, k, n, -0.5, 0.5);
            let mut basis = AdjacencyBasis::new(ahat.clone(), mode, gamma).unwrap();
            basis.gamma_stoch = r.random_range(0.5..4.0);
            let weights: Vec<f64> = (0..k * n * n).map(|_| r.random_range(-1.0..1.0)).collect();
            let eff = basis_forward(&basis, gamma).unwrap();
            let g = Tensor3::new(k, n, n, head_grad(&weights, eff.a.data())).unwrap();
            let analytic = basis_vjp(&basis, &eff, &g).unwrap();
            let numeric = central_diff(ahat.data(), |x| {
                let mut b = basis.clone();
                b.ahat = Tensor3::new(k, n, n, x.to_vec()).unwrap();
                head(&weights, basis_forward(&b, gamma).unwrap().a.data())
            });
            let e = rel_err(analytic.data(), &numeric);
            assert!(e <= 1e-6, "mode {mode} trial {trial} (K={k}, n={n}) rel err {e}");
        }
    }
}

#[test]
fn orth_stoch_vjp_small_case() {
    let mut r = ChaCha8Rng::seed_from_u64(15);
    let ahat = rand_tensor(&mut r, 2, 4, 0.0, 1.0);
    let basis = AdjacencyBasis::new(ahat.clone(), ConstraintMode::OrthStoch, 5.0).unwrap();
    let eff = basis_forward(&basis, 5.0).unwrap();
    let weights: Vec<f64> = (0..32).map(|_| r.random_range(-1.0..1.0)).collect();
    let g = Tensor3::new(2, 4, 4, head_grad(&weights, eff.a.data())).unwrap();
    let analytic = basis_vjp(&basis, &eff, &g).unwrap();
    let numeric = central_diff(ahat.data(), |x| {
        let mut b = basis.clone();
        b.ahat = Tensor3::new(2, 4, 4, x.to_vec()).unwrap();
        head(&weights, basis_forward(&b, 5.0).unwrap().a.data())
    });
    assert!(rel_err(analytic.data(), &numeric) <= 1e-6);
}

#[test]
fn saturated_basis_has_vanishing_gradient() {
    // every per-entry softmax has winner mass >= 1 - 1e-9
    let mut r = ChaCha8Rng::seed_from_u64(16);
    for mode in [ConstraintMode::Orth, ConstraintMode::OrthStoch] {
        let k = 3;
        let n = 3;
        // winners laid out so every matrix wins exactly one entry per column
        let ahat = Tensor3::from_fn(k, n, n, |kk, i, j| {
            if (i + j) % k == kk {
                1.0 + 0.3 * i as f64
            } else {
                0.0
            }
        });
        let basis = AdjacencyBasis::new(ahat, mode, 200.0).unwrap();
        let eff = basis_forward(&basis, 200.0).unwrap();
        let g = rand_tensor(&mut r, k, n, -1.0, 1.0);
        let grad = basis_vjp(&basis, &eff, &g).unwrap();
        assert!(grad.max_abs() <= 1e-6, "mode {mode}: {}", grad.max_abs());
    }
}

fn desk_model(mode: ConstraintMode, seed: u64) -> (GcnModel, Mat, usize, f64) {
    // (K=3, n=5, s=4, C=3, 3 classes)
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let gamma = 2.0;
        let basis = AdjacencyBasis::random(3, 5, mode, gamma, &mut r).unwrap();
        let model = GcnModel::init(basis, 4, 3, 3, &mut r).unwrap();
        let u = Mat::from_fn(4, 5, |_, _| r.random_range(-1.0..1.0));
        let label = r.random_range(0..3);
        let t = model_forward(&model, &u, gamma).unwrap();
        // resample away from relu kinks
        if t.pre_activation().data().iter().all(|v| v.abs() >= 1e-4) {
            return (model, u, label, gamma);
        }
    }
}

#[test]
fn model_gradients_match_oracle_every_mode() {
    for mode in ConstraintMode::ALL {
        for seed in 0..20 {
            let (model, u, label, gamma) = desk_model(mode, 1000 + seed);
            let trace = model_forward(&model, &u, gamma).unwrap();
            let (_, d) = cross_entropy(trace.logits(), label).unwrap();
            let grads = model_backward(&model, &trace, &d).unwrap();
            for group in ParamGroup::ALL {
                let numeric = central_diff(&flatten(&model, group), |x| {
                    let m = unflatten(&model, group, x);
                    let t = model_forward(&m, &u, gamma).unwrap();
                    cross_entropy(t.logits(), label).unwrap().0
                });
                let e = rel_err(&group_gradient(&grads, group), &numeric);
                assert!(e <= 1e-6, "mode {mode} seed {seed} group {}: {e}", group.name());
            }
        }
    }
}

#[test]
fn library_oracle_agrees_and_sign_flip_is_caught() {
    let (model, u, label, gamma) = desk_model(ConstraintMode::OrthStoch, 7);
    let ok = gradient_check(&model, &u, label, gamma, STEP, false).unwrap();
    assert!(ok.iter().all(|c| c.max_rel_error <= 1e-6), "{ok:?}");
    let bad = gradient_check(&model, &u, label, gamma, STEP, true).unwrap();
    assert!(bad.iter().all(|c| c.max_rel_error > 1.0), "{bad:?}");
}

#[test]
fn finite_difference_step_sweep_is_v_shaped() {
    // truncation error dominates at large steps, roundoff at tiny ones
    let (model, u, label, gamma) = desk_model(ConstraintMode::Orth, 8);
    let trace = model_forward(&model, &u, gamma).unwrap();
    let (_, d) = cross_entropy(trace.logits(), label).unwrap();
    let grads = model_backward(&model, &trace, &d).unwrap();
    let analytic = group_gradient(&grads, ParamGroup::Ahat);
    let errs: Vec<f64> = [1e-2, 1e-5, 1e-11]
        .iter()
        .map(|&h| rel_err(&analytic, &finite_diff_oracle(&model, &u, label, gamma, ParamGroup::Ahat, h).unwrap()))
        .collect();
    assert!(errs[1] < errs[0] && errs[1] < errs[2], "{errs:?}");
}

#[test]
fn none_vs_orth_at_zero_gamma_differ_by_uniform_softmax_jacobian() {
    // at gamma = 0 crispmax is constant, so its Jacobian (and d_ahat) is zero,
    // while mode None passes d_A straight through
    let (mut model, u, label, _) = desk_model(ConstraintMode::None, 9);
    let t = model_forward(&model, &u, 0.0).unwrap();
    let (_, d) = cross_entropy(t.logits(), label).unwrap();
    let g_none = model_backward(&model, &t, &d).unwrap();
    assert!(g_none.d_ahat.max_abs() > 0.0);

    model.basis.mode = ConstraintMode::Orth;
    let t = model_forward(&model, &u, 0.0).unwrap();
    let (_, d) = cross_entropy(t.logits(), label).unwrap();
    let g_orth = model_backward(&model, &t, &d).unwrap();
    let numeric = finite_diff_oracle(&model, &u, label, 0.0, ParamGroup::Ahat, STEP).unwrap();
    assert!(g_orth.d_ahat.max_abs() == 0.0);
    assert!(numeric.iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn masked_model_gradients_match() {
    let (mut model, u, label, gamma) = desk_model(ConstraintMode::Orth, 10);
    let mut mask = Tensor3::filled(3, 5, 5, 1.0);
    for i in (0..mask.len()).step_by(3) {
        mask.data_mut()[i] = 0.0;
    }
    model.mask = Some(mask);
    let checks = gradient_check(&model, &u, label, gamma, STEP, false).unwrap();
    assert!(checks.iter().all(|c| c.max_rel_error <= 1e-6), "{checks:?}");
}

fn flatten(model: &GcnModel, group: ParamGroup) -> Vec<f64> {
    match group {
        ParamGroup::Ahat => model.basis.ahat.data().to_vec(),
        ParamGroup::Filters => model.filters.iter().flat_map(|w| w.data().to_vec()).collect(),
        ParamGroup::Head => model.head.data().to_vec(),
        ParamGroup::Bias => model.bias.clone(),
    }
}

fn unflatten(model: &GcnModel, group: ParamGroup, x: &[f64]) -> GcnModel {
    let mut m = model.clone();
    match group {
        ParamGroup::Ahat => m.basis.ahat.data_mut().copy_from_slice(x),
        ParamGroup::Filters => {
            let per = m.filters[0].data().len();
            for (k, w) in m.filters.iter_mut().enumerate() {
                w.data_mut().copy_from_slice(&x[k * per..(k + 1) * per]);
            }
        }
        ParamGroup::Head => m.head.data_mut().copy_from_slice(x),
        ParamGroup::Bias => m.bias.copy_from_slice(x),
    }
    m
}
