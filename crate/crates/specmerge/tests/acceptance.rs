//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS] criterion N` line. Tolerances and runtime budgets are pinned
//! here, not configurable.

use specmerge::harness::{emit_results, run_ablation, run_continual, RunConfig, Variant};
use specmerge::linalg::{reconstruct, thin_svd, Matrix};
use specmerge::merge::{class_count_weights, merge_matrix, MergeConfig};
use specmerge::metrics::{weighted_average_accuracy, ClassTally, StepRecord};
use specmerge::model::{AdapterParams, BackboneSpec, ModelState};
use specmerge::rng::rng_from;
use specmerge::stream::{allocate_classes, build_stream, permute_steps, step_proportions, Sample, StreamParams};
use specmerge::train::{class_priors, loss_and_gradients, ClassPriors};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;
use std::time::Instant;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from(seed);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

#[test]
fn criterion_1_svd_correctness() {
    let start = Instant::now();
    let mut shape_rng = rng_from(0xC1);
    let mut worst_recon: f64 = 0.0;
    let mut worst_ortho: f64 = 0.0;
    for i in 0..200u64 {
        let rows = shape_rng.random_range(1..=128);
        let cols = shape_rng.random_range(1..=256);
        let a = random_matrix(rows, cols, 10_000 + i);
        let f = thin_svd(&a).unwrap();
        let recon_err = reconstruct(&f).unwrap().rel_frobenius_diff(&a).unwrap();
        let r = f.sigma.len();
        let id = Matrix::identity(r);
        let ortho = f
            .u
            .transpose()
            .matmul(&f.u)
            .unwrap()
            .max_abs_diff(&id)
            .unwrap()
            .max(f.vt.matmul(&f.vt.transpose()).unwrap().max_abs_diff(&id).unwrap());
        assert!(
            recon_err <= 1e-10,
            "matrix {i} ({rows}x{cols}): reconstruction error {recon_err:e}"
        );
        assert!(
            ortho <= 1e-10,
            "matrix {i} ({rows}x{cols}): orthonormality deviation {ortho:e}"
        );
        worst_recon = worst_recon.max(recon_err);
        worst_ortho = worst_ortho.max(ortho);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 60, "runtime {elapsed:?} exceeds 60 s");
    println!(
        "[PASS] criterion 1: svd correctness over 200 matrices (worst recon {worst_recon:.2e}, worst ortho {worst_ortho:.2e}, {:.1} s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_2_merge_identities() {
    let start = Instant::now();
    let cfg = MergeConfig::new(30, 10, 0.3, 0.2, 0.9).unwrap();
    let zero_gate = MergeConfig::new(30, 10, 0.3, 0.0, 0.0).unwrap();
    let full_gate = MergeConfig::new(30, 10, 0.3, 1.0, 1.0).unwrap();
    let (w_b, w_t) = class_count_weights(30, 10).unwrap();
    for i in 0..100u64 {
        // Alternate between the two adapter projection shapes.
        let (rows, cols) = if i % 2 == 0 { (16, 48) } else { (48, 16) };
        let a = random_matrix(rows, cols, 20_000 + 2 * i);
        let b = random_matrix(rows, cols, 20_001 + 2 * i);

        let idem = merge_matrix(&a, &a, &cfg).unwrap();
        let err = idem.rel_frobenius_diff(&a).unwrap();
        assert!(err <= 1e-8, "pair {i}: idempotence error {err:e}");

        let recovered = merge_matrix(&a, &b, &zero_gate).unwrap();
        let err = recovered.rel_frobenius_diff(&a).unwrap();
        assert!(err <= 1e-8, "pair {i}: zero-gate error {err:e}");

        let collapsed = merge_matrix(&a, &b, &full_gate).unwrap();
        let mut expected = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                expected.set(r, c, w_b * a.get(r, c) + w_t * b.get(r, c));
            }
        }
        let err = collapsed.rel_frobenius_diff(&expected).unwrap();
        assert!(err <= 1e-8, "pair {i}: full-gate error {err:e}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 30, "runtime {elapsed:?} exceeds 30 s");
    println!(
        "[PASS] criterion 2: merge identities (idempotence, zero gate, full gate) over 100 pairs ({:.1} s)",
        elapsed.as_secs_f64()
    );
}

struct Toy {
    state: ModelState,
    classes: Vec<usize>,
    batch: Vec<Sample>,
    priors: ClassPriors,
}

fn toy_instance(seed: u64) -> Toy {
    let backbone = BackboneSpec::new(4, 6, seed);
    let adapter = AdapterParams::init(6, 3, 1.0, seed + 1).unwrap();
    let mut state = ModelState::new(backbone, adapter).unwrap();
    let classes = vec![0, 1, 2];
    state.head.grow(&classes).unwrap();
    let mut rng = rng_from(seed + 2);
    for v in state.adapter.w_up.data_mut() {
        *v = rng.sample::<f64, _>(StandardNormal) * 0.4;
    }
    for (i, v) in state.adapter.ln_gain.iter_mut().enumerate() {
        *v = 1.0 + 0.05 * i as f64;
    }
    for r in 0..3 {
        for w in state.head.weight_row_mut(r) {
            *w = rng.sample::<f64, _>(StandardNormal) * 0.5;
        }
        state.head.bias_mut()[r] = rng.sample::<f64, _>(StandardNormal) * 0.1;
    }
    let batch: Vec<Sample> = (0..6)
        .map(|i| Sample {
            input: (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            label: i % 3,
        })
        .collect();
    let priors = class_priors(&[0, 0, 0, 1, 1, 2]).unwrap();
    Toy {
        state,
        classes,
        batch,
        priors,
    }
}

/// All trainable coordinates of the toy, addressable for perturbation.
#[derive(Clone, Copy)]
enum Coord {
    WDown(usize),
    WUp(usize),
    LnGain(usize),
    LnBias(usize),
    HeadWeight(usize, usize),
    HeadBias(usize),
}

fn perturb(state: &ModelState, coord: Coord, delta: f64) -> ModelState {
    let mut s = state.clone();
    match coord {
        Coord::WDown(i) => s.adapter.w_down.data_mut()[i] += delta,
        Coord::WUp(i) => s.adapter.w_up.data_mut()[i] += delta,
        Coord::LnGain(i) => s.adapter.ln_gain[i] += delta,
        Coord::LnBias(i) => s.adapter.ln_bias[i] += delta,
        Coord::HeadWeight(r, i) => s.head.weight_row_mut(r)[i] += delta,
        Coord::HeadBias(r) => s.head.bias_mut()[r] += delta,
    }
    s
}

#[test]
fn criterion_3_gradient_correctness() {
    let start = Instant::now();
    let mut pick = rng_from(0xC3);
    let mut probed = 0usize;
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for instance in 0..8u64 {
        let toy = toy_instance(30_000 + instance);
        let (_, grads) =
            loss_and_gradients(&toy.state, &toy.batch, &toy.priors, &toy.classes, true).unwrap();
        let loss_of = |s: &ModelState| {
            loss_and_gradients(s, &toy.batch, &toy.priors, &toy.classes, true)
                .unwrap()
                .0
        };
        let all_coords: Vec<(Coord, f64)> = {
            let mut v = Vec::new();
            for i in 0..18 {
                v.push((Coord::WDown(i), grads.w_down.data()[i]));
                v.push((Coord::WUp(i), grads.w_up.data()[i]));
            }
            for i in 0..6 {
                v.push((Coord::LnGain(i), grads.ln_gain[i]));
                v.push((Coord::LnBias(i), grads.ln_bias[i]));
            }
            for r in 0..3 {
                for i in 0..6 {
                    v.push((Coord::HeadWeight(r, i), grads.head_weight[r][i]));
                }
                v.push((Coord::HeadBias(r), grads.head_bias[r]));
            }
            v
        };
        // Random probes with replacement across this instance's coordinates.
        for _ in 0..64 {
            let (coord, analytic) = all_coords[pick.random_range(0..all_coords.len())];
            let plus = loss_of(&perturb(&toy.state, coord, h));
            let minus = loss_of(&perturb(&toy.state, coord, -h));
            let fd = (plus - minus) / (2.0 * h);
            let rel = (analytic - fd).abs() / fd.abs().max(1e-8);
            assert!(
                rel <= 1e-4,
                "instance {instance}: rel error {rel:e} (analytic {analytic}, fd {fd})"
            );
            worst = worst.max(rel);
            probed += 1;
        }
    }
    assert!(probed >= 500, "only {probed} coordinates probed");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 30, "runtime {elapsed:?} exceeds 30 s");
    println!(
        "[PASS] criterion 3: {probed} gradient coordinates within 1e-4 of central differences (worst {worst:.2e}, {:.1} s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_4_balanced_softmax_degeneracy() {
    let mut worst: f64 = 0.0;
    for instance in 0..10u64 {
        let toy = toy_instance(40_000 + instance);
        let uniform = ClassPriors::uniform(&toy.classes).unwrap();
        let (l_bsm, g_bsm) =
            loss_and_gradients(&toy.state, &toy.batch, &uniform, &toy.classes, true).unwrap();
        let (l_ce, g_ce) =
            loss_and_gradients(&toy.state, &toy.batch, &uniform, &toy.classes, false).unwrap();
        let mut gap = (l_bsm - l_ce).abs();
        gap = gap.max(g_bsm.w_down.max_abs_diff(&g_ce.w_down).unwrap());
        gap = gap.max(g_bsm.w_up.max_abs_diff(&g_ce.w_up).unwrap());
        for (a, b) in g_bsm.ln_gain.iter().zip(&g_ce.ln_gain) {
            gap = gap.max((a - b).abs());
        }
        for (a, b) in g_bsm.head_bias.iter().zip(&g_ce.head_bias) {
            gap = gap.max((a - b).abs());
        }
        for (ra, rb) in g_bsm.head_weight.iter().zip(&g_ce.head_weight) {
            for (a, b) in ra.iter().zip(rb) {
                gap = gap.max((a - b).abs());
            }
        }
        assert!(gap <= 1e-12, "instance {instance}: gap {gap:e}");
        worst = worst.max(gap);
    }
    println!(
        "[PASS] criterion 4: balanced softmax with uniform priors matches cross-entropy (worst gap {worst:.2e})"
    );
}

fn record(step: usize, accum: usize, acc: f64) -> StepRecord {
    StepRecord {
        step_index: step,
        accumulated_class_count: accum,
        accuracy: acc,
        per_class: BTreeMap::<usize, ClassTally>::new(),
    }
}

#[test]
fn criterion_5_metric_identities() {
    // Equal splits reduce the weighted average to the plain average.
    let mut rng = rng_from(0xC5);
    for _ in 0..50 {
        let t = rng.random_range(1..12);
        let per = rng.random_range(1..9);
        let records: Vec<StepRecord> = (0..t)
            .map(|i| record(i + 1, per * (i + 1), rng.random_range(0.0..1.0)))
            .collect();
        let counts = vec![per; t];
        let wa = weighted_average_accuracy(&records, &counts).unwrap();
        let a_bar = records.iter().map(|r| r.accuracy).sum::<f64>() / t as f64;
        assert!((wa - a_bar).abs() <= 1e-12, "equal-split gap {:e}", (wa - a_bar).abs());
    }

    // Hand-derived case.
    let records = vec![record(1, 3, 0.9), record(2, 4, 0.5)];
    let wa = weighted_average_accuracy(&records, &[3, 1]).unwrap();
    assert!(
        (wa - 0.74).abs() <= 1e-15,
        "hand case gave {wa}, expected 0.74"
    );

    // Convex-combination bounds on random instances.
    for _ in 0..200 {
        let t = rng.random_range(1..12);
        let counts: Vec<usize> = (0..t).map(|_| rng.random_range(1..15)).collect();
        let records: Vec<StepRecord> = (0..t)
            .map(|i| record(i + 1, counts[..=i].iter().sum(), rng.random_range(0.0..1.0)))
            .collect();
        let wa = weighted_average_accuracy(&records, &counts).unwrap();
        let lo = records.iter().map(|r| r.accuracy).fold(f64::INFINITY, f64::min);
        let hi = records.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
        assert!(wa >= lo - 1e-12 && wa <= hi + 1e-12, "wa {wa} outside [{lo}, {hi}]");
    }
    println!("[PASS] criterion 5: weighted-average identities (equal-split equality, 0.74 hand case, convex bounds)");
}

#[test]
fn criterion_6_protocol_correctness() {
    for rho in [1.0, 0.1, 0.01, 0.001] {
        for total in [40usize, 186] {
            let props = step_proportions(rho, 10).unwrap();
            assert_eq!(props[0], 1.0, "rho {rho}: s_1 != 1");
            assert!(
                (props[9] - rho).abs() <= 1e-15,
                "rho {rho}: s_T = {} != rho",
                props[9]
            );
            let counts = allocate_classes(&props, total).unwrap();
            assert_eq!(counts.iter().sum::<usize>(), total, "rho {rho}: sum mismatch");
            assert!(counts.iter().all(|c| *c >= 1), "rho {rho}: empty step");

            let permuted = permute_steps(&counts, 17);
            let mut a = counts.clone();
            let mut b = permuted.clone();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b, "rho {rho}: permutation changed the multiset");

            let params = StreamParams {
                total_classes: total,
                num_steps: 10,
                rho,
                ..StreamParams::default()
            };
            let (protocol, _) = build_stream(&params, 23).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for step in &protocol.steps {
                for c in &step.class_ids {
                    assert!(seen.insert(*c), "rho {rho}: class {c} in two steps");
                }
            }
            assert_eq!(seen.len(), total, "rho {rho}: classes not covered");
        }
    }
    println!("[PASS] criterion 6: protocol correctness for rho in {{1.0, 0.1, 0.01, 0.001}}");
}

#[test]
fn criterion_7_directional_ablation() {
    let start = Instant::now();
    let cfg = RunConfig::default();
    assert_eq!(
        (cfg.total_classes, cfg.num_steps, cfg.rho, cfg.class_rho),
        (40, 10, 0.01, 0.01),
        "default stream drifted from the pinned configuration"
    );
    assert_eq!(cfg.seed_list.len(), 5);
    let results = run_ablation(&cfg).unwrap();
    let mean = |v: Variant| {
        results
            .iter()
            .find(|r| r.variant == v)
            .unwrap()
            .aggregate
            .mean_a_final
    };
    let (base, sm, sm_ccw, full) = (
        mean(Variant::Base),
        mean(Variant::Sm),
        mean(Variant::SmCcw),
        mean(Variant::Full),
    );
    assert!(
        full > base,
        "mean A_T: full {full:.4} must exceed base {base:.4}"
    );
    assert!(
        sm_ccw >= sm,
        "mean A_T: sm_ccw {sm_ccw:.4} must be >= sm {sm:.4}"
    );
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() <= 300,
        "runtime {elapsed:?} exceeds 5 minutes"
    );
    println!(
        "[PASS] criterion 7: directional ablation (base {base:.4}, sm {sm:.4}, sm_ccw {sm_ccw:.4}, full {full:.4}; {:.1} s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_8_deterministic_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        total_classes: 12,
        num_steps: 4,
        rho: 0.1,
        class_rho: 0.1,
        n_max: 25,
        test_per_class: 10,
        epochs: 3,
        seed_list: vec![3, 4],
        ..RunConfig::default()
    };

    cfg.output_dir = std::path::PathBuf::from("out");
    let mut payloads = Vec::new();
    for name in ["first", "second"] {
        let target = dir.path().join(name);
        let results = run_ablation(&cfg).unwrap();
        emit_results(&results, &cfg, &target).unwrap();
        let mut files: Vec<_> = std::fs::read_dir(&target)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        let blob: Vec<(String, Vec<u8>)> = files
            .iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().to_string(),
                    std::fs::read(p).unwrap(),
                )
            })
            .collect();
        payloads.push(blob);
    }
    assert_eq!(payloads[0].len(), payloads[1].len());
    let csv_count = payloads[0]
        .iter()
        .filter(|(name, _)| name.ends_with(".csv"))
        .count();
    assert!(csv_count >= 11, "expected per-seed and summary CSVs, got {csv_count}");
    for ((name_a, bytes_a), (name_b, bytes_b)) in payloads[0].iter().zip(&payloads[1]) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between executions");
    }
    println!(
        "[PASS] criterion 8: two ablate executions produced byte-identical outputs ({} files)",
        payloads[0].len()
    );
}

#[test]
fn criterion_9_single_adapter_inference() {
    for (total, steps) in [(4usize, 1usize), (8, 4), (40, 10)] {
        for variant in Variant::ALL {
            let cfg = RunConfig {
                total_classes: total,
                num_steps: steps,
                rho: 0.1,
                class_rho: 0.1,
                n_max: 20,
                test_per_class: 5,
                epochs: 2,
                variant,
                ..RunConfig::default()
            };
            let out = run_continual(&cfg, 9).unwrap();
            assert_eq!(out.adapter_counts.len(), steps);
            assert!(
                out.adapter_counts.iter().all(|c| *c == 1),
                "T={steps}, {variant}: adapter counts {:?}",
                out.adapter_counts
            );
        }
    }
    println!("[PASS] criterion 9: exactly one adapter parameter set at every evaluation point (T = 1, 4, 10; all variants)");
}
