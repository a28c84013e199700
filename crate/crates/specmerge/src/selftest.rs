//! Built-in analytic invariant suite behind the `selftest` CLI subcommand.
//!
//! Runs in seconds: reduced-size versions of the decomposition, merge,
//! gradient, metric, and protocol checks. The full-scale versions live in
//! the acceptance test suite.

use crate::linalg::{reconstruct, thin_svd, Matrix};
use crate::merge::{merge_matrix, MergeConfig};
use crate::metrics::{weighted_average_accuracy, ClassTally, StepRecord};
use crate::model::{AdapterParams, BackboneSpec, ModelState};
use crate::rng::rng_from;
use crate::stream::{allocate_classes, permute_steps, step_proportions};
use crate::train::{class_priors, loss_and_gradients, ClassPriors};
use crate::stream::Sample;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

type Check = (&'static str, fn() -> Result<(), String>);

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from(seed);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::new(rows, cols, data).expect("random matrix")
}

fn svd_identities() -> Result<(), String> {
    let mut rng = rng_from(91);
    for i in 0..20 {
        let rows = rng.random_range(1..=64);
        let cols = rng.random_range(1..=96);
        let a = random_matrix(rows, cols, 1000 + i);
        let f = thin_svd(&a).map_err(|e| e.to_string())?;
        let recon = reconstruct(&f).map_err(|e| e.to_string())?;
        let err = recon.rel_frobenius_diff(&a).map_err(|e| e.to_string())?;
        if err > 1e-10 {
            return Err(format!("reconstruction error {err:e} on {rows}x{cols}"));
        }
        let utu = f.u.transpose().matmul(&f.u).map_err(|e| e.to_string())?;
        let dev = utu
            .max_abs_diff(&Matrix::identity(f.sigma.len()))
            .map_err(|e| e.to_string())?;
        if dev > 1e-10 {
            return Err(format!("orthonormality deviation {dev:e} on {rows}x{cols}"));
        }
    }
    Ok(())
}

fn merge_identities() -> Result<(), String> {
    for i in 0..10 {
        let a = random_matrix(16, 48, 2000 + i);
        let b = random_matrix(16, 48, 3000 + i);
        let cfg = MergeConfig::new(30, 10, 0.3, 0.2, 0.9).unwrap();
        let idem = merge_matrix(&a, &a, &cfg).map_err(|e| e.to_string())?;
        let err = idem.rel_frobenius_diff(&a).unwrap();
        if err > 1e-8 {
            return Err(format!("idempotence error {err:e}"));
        }

        let zero = MergeConfig::new(30, 10, 0.3, 0.0, 0.0).unwrap();
        let base = merge_matrix(&a, &b, &zero).map_err(|e| e.to_string())?;
        let err = base.rel_frobenius_diff(&a).unwrap();
        if err > 1e-8 {
            return Err(format!("zero-gate error {err:e}"));
        }

        let full = MergeConfig::new(30, 10, 0.3, 1.0, 1.0).unwrap();
        let avg = merge_matrix(&a, &b, &full).map_err(|e| e.to_string())?;
        let mut expected = Matrix::zeros(16, 48);
        for r in 0..16 {
            for c in 0..48 {
                expected.set(r, c, 0.75 * a.get(r, c) + 0.25 * b.get(r, c));
            }
        }
        let err = avg.rel_frobenius_diff(&expected).unwrap();
        if err > 1e-8 {
            return Err(format!("full-gate error {err:e}"));
        }
    }
    Ok(())
}

fn toy_model(seed: u64) -> (ModelState, Vec<usize>, Vec<Sample>, ClassPriors) {
    let backbone = BackboneSpec::new(4, 6, seed);
    let adapter = AdapterParams::init(6, 3, 1.0, seed + 1).unwrap();
    let mut state = ModelState::new(backbone, adapter).unwrap();
    let classes = vec![0, 1, 2];
    state.head.grow(&classes).unwrap();
    let mut rng = rng_from(seed + 2);
    for v in state.adapter.w_up.data_mut() {
        *v = rng.sample::<f64, _>(StandardNormal) * 0.3;
    }
    for r in 0..3 {
        for w in state.head.weight_row_mut(r) {
            *w = rng.sample::<f64, _>(StandardNormal) * 0.5;
        }
    }
    let batch: Vec<Sample> = (0..5)
        .map(|i| Sample {
            input: (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            label: i % 3,
        })
        .collect();
    let priors = class_priors(&[0, 0, 1, 2]).unwrap();
    (state, classes, batch, priors)
}

fn gradient_check() -> Result<(), String> {
    let (state, classes, batch, priors) = toy_model(40);
    let (_, grads) =
        loss_and_gradients(&state, &batch, &priors, &classes, true).map_err(|e| e.to_string())?;
    let loss_of = |s: &ModelState| {
        loss_and_gradients(s, &batch, &priors, &classes, true)
            .unwrap()
            .0
    };
    let h = 1e-5;
    let mut probes = 0;
    for idx in 0..grads.w_down.data().len() {
        let mut plus = state.clone();
        plus.adapter.w_down.data_mut()[idx] += h;
        let mut minus = state.clone();
        minus.adapter.w_down.data_mut()[idx] -= h;
        let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
        let analytic = grads.w_down.data()[idx];
        let rel = (analytic - fd).abs() / fd.abs().max(1e-8);
        if rel > 1e-4 {
            return Err(format!("w_down[{idx}] rel error {rel:e}"));
        }
        probes += 1;
    }
    for idx in 0..grads.w_up.data().len() {
        let mut plus = state.clone();
        plus.adapter.w_up.data_mut()[idx] += h;
        let mut minus = state.clone();
        minus.adapter.w_up.data_mut()[idx] -= h;
        let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
        let analytic = grads.w_up.data()[idx];
        let rel = (analytic - fd).abs() / fd.abs().max(1e-8);
        if rel > 1e-4 {
            return Err(format!("w_up[{idx}] rel error {rel:e}"));
        }
        probes += 1;
    }
    if probes == 0 {
        return Err("no coordinates probed".into());
    }
    Ok(())
}

fn balanced_softmax_degeneracy() -> Result<(), String> {
    let (state, classes, batch, _) = toy_model(50);
    let uniform = ClassPriors::uniform(&classes).unwrap();
    let (l1, g1) =
        loss_and_gradients(&state, &batch, &uniform, &classes, true).map_err(|e| e.to_string())?;
    let (l2, g2) =
        loss_and_gradients(&state, &batch, &uniform, &classes, false).map_err(|e| e.to_string())?;
    if (l1 - l2).abs() > 1e-12 {
        return Err(format!("loss gap {:e}", (l1 - l2).abs()));
    }
    let gap = g1.w_down.max_abs_diff(&g2.w_down).unwrap();
    if gap > 1e-12 {
        return Err(format!("gradient gap {gap:e}"));
    }
    Ok(())
}

fn metric_identities() -> Result<(), String> {
    let rec = |i: usize, accum: usize, acc: f64| StepRecord {
        step_index: i,
        accumulated_class_count: accum,
        accuracy: acc,
        per_class: BTreeMap::<usize, ClassTally>::new(),
    };
    let records = vec![rec(1, 3, 0.9), rec(2, 4, 0.5)];
    let wa = weighted_average_accuracy(&records, &[3, 1]).map_err(|e| e.to_string())?;
    if (wa - 0.74).abs() > 1e-15 {
        return Err(format!("hand case gave {wa}"));
    }

    let equal = vec![rec(1, 4, 0.8), rec(2, 8, 0.6), rec(3, 12, 0.7)];
    let wa = weighted_average_accuracy(&equal, &[4, 4, 4]).unwrap();
    let plain = (0.8 + 0.6 + 0.7) / 3.0;
    if (wa - plain).abs() > 1e-12 {
        return Err(format!("equal-split gap {:e}", (wa - plain).abs()));
    }
    if !(0.6..=0.8).contains(&wa) {
        return Err(format!("weighted average {wa} left the accuracy range"));
    }
    Ok(())
}

fn protocol_invariants() -> Result<(), String> {
    for rho in [1.0, 0.1, 0.01, 0.001] {
        let props = step_proportions(rho, 10).map_err(|e| e.to_string())?;
        if props[0] != 1.0 || (props[9] - rho).abs() > 1e-15 {
            return Err(format!("endpoints wrong for rho={rho}"));
        }
        let counts = allocate_classes(&props, 40).map_err(|e| e.to_string())?;
        if counts.iter().sum::<usize>() != 40 || counts.contains(&0) {
            return Err(format!("allocation invalid for rho={rho}: {counts:?}"));
        }
        let permuted = permute_steps(&counts, 7);
        let mut a = counts.clone();
        let mut b = permuted.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err("permutation changed the multiset".into());
        }
    }
    Ok(())
}

/// Every check with its name, in execution order.
pub fn checks() -> Vec<Check> {
    vec![
        ("svd reconstruction and orthonormality", svd_identities),
        ("merge identities (idempotence, zero gate, full gate)", merge_identities),
        ("analytic gradients vs central differences", gradient_check),
        ("balanced softmax degeneracy under uniform priors", balanced_softmax_degeneracy),
        ("weighted accuracy identities", metric_identities),
        ("stream protocol invariants", protocol_invariants),
    ]
}

/// Runs all checks, printing one line each; returns false if any failed.
pub fn run_all() -> bool {
    let mut ok = true;
    for (name, check) in checks() {
        match check() {
            Ok(()) => println!("[PASS] {name}"),
            Err(msg) => {
                println!("[FAIL] {name}: {msg}");
                ok = false;
            }
        }
    }
    ok
}
