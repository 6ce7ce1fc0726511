//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with a custom harness so the lines are always printed. Positional
//! arguments that parse as numbers select criteria; others are ignored.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{probe, randn, rng};
use rand::Rng;
use tfcns::data::{decode_tensor, encode_tensor, generate_synthetic, SegmentationPair, SyntheticSpec};
use tfcns::layers::*;
use tfcns::loss::{combined_loss_parts, cross_entropy_loss, dice_loss};
use tfcns::metrics::{dice_score, hd95, jaccard_score};
use tfcns::model::{decode_checkpoint, encode_checkpoint, CheckpointMeta, ModelConfig, TfcnsModel};
use tfcns::tensor::{
    grad_check, grad_check_many, grad_check_params, Element, ParamBuilder, ParamStore, Session, Tape, Tensor, Var,
};
use tfcns::training::{
    evaluate, lr_at, run_ablation, sgd_step, train, AblationAxis, OptimizerState, TrainConfig, TRAIN_LOG,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: tfcns::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn build<L>(
    seed: u64,
    f: impl FnOnce(&mut ParamBuilder<'_, f64>) -> tfcns::Result<L>,
) -> Result<(ParamStore<f64>, L), String> {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let layer = lib(f(&mut ParamBuilder::new(&mut store, &mut r)))?;
    Ok((store, layer))
}

fn eval<'a>(store: &'a ParamStore<f64>) -> impl Fn(&dyn for<'t> Fn(&Session<'t, f64>) -> tfcns::Result<Var<'t, f64>>) -> Tensor<f64> + 'a {
    move |f| {
        let tape = Tape::no_grad();
        let s = Session::new(&tape, store, false, 0);
        f(&s).unwrap().value()
    }
}

fn zero_params(store: &mut ParamStore<f64>, pred: impl Fn(&str) -> bool) {
    let ids: Vec<_> = store.ids().filter(|&id| pred(&store.get(id).name)).collect();
    assert!(!ids.is_empty(), "no parameter matched");
    for id in ids {
        let shape = store.get(id).value.shape().to_vec();
        store.set_value(id, Tensor::zeros(&shape).unwrap()).unwrap();
    }
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- 1

const OP_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;
const EPS: f64 = 1e-5;

fn crit_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name, err: f64| worst.push((name, err));

    let conv_in = [randn(&[2, 2, 5, 5], 1), randn(&[3, 2, 3, 3], 2), randn(&[3], 3)];
    record("conv2d pad 1", lib(grad_check_many(
        |v| probe(v[0].conv2d(v[1], Some(v[2]), 1, 1)?, 4),
        &conv_in,
        EPS,
    ))?);
    record("conv2d stride 2", lib(grad_check_many(
        |v| probe(v[0].conv2d(v[1], Some(v[2]), 2, 0)?, 5),
        &conv_in,
        EPS,
    ))?);
    record("conv_transpose2d", lib(grad_check_many(
        |v| probe(v[0].conv_transpose2d(v[1], Some(v[2]), 2)?, 6),
        &[randn(&[2, 3, 3, 3], 7), randn(&[3, 2, 2, 2], 8), randn(&[2], 9)],
        EPS,
    ))?);
    record("linear", lib(grad_check_many(
        |v| probe(v[0].matmul(v[1])?.add(v[2])?, 10),
        &[randn(&[2, 3, 4], 11), randn(&[4, 5], 12), randn(&[5], 13)],
        EPS,
    ))?);
    record("layer_norm", lib(grad_check_many(
        |v| probe(v[0].layer_norm(v[1], v[2], 1e-6)?, 14),
        &[randn(&[2, 3, 6], 15), randn(&[6], 16), randn(&[6], 17)],
        EPS,
    ))?);
    record("gelu", lib(grad_check(|x| probe(x.gelu()?, 18), &randn(&[40], 19), EPS))?);
    record("softmax", lib(grad_check(|x| probe(x.softmax(2)?, 20), &randn(&[2, 3, 5], 21), EPS))?);

    let target = Tensor::from_fn(&[2, 4, 4], |i| ((i * 7 + i / 5) % 3) as u8).unwrap();
    let logits = randn(&[2, 3, 4, 4], 22);
    record("dice loss", lib(grad_check(|x| dice_loss(x, &target), &logits, EPS))?);
    record("cross-entropy loss", lib(grad_check(|x| cross_entropy_loss(x, &target), &logits, EPS))?);
    record("combined loss", lib(grad_check(|x| Ok(combined_loss_parts(x, &target)?.total), &logits, EPS))?);

    let params = |store: &ParamStore<f64>, f: &(dyn for<'t> Fn(&Session<'t, f64>) -> tfcns::Result<Var<'t, f64>> + Sync)| {
        lib(grad_check_params(store, f, EPS, None)).map(|r| r.max_rel_err)
    };
    let attn_cfg = MhsaConfig { embed_dim: 8, n_heads: 2, attn_dropout_p: 0.0, dropout_p: 0.0 };
    let (store, mhsa) = build(30, |b| MhsaBlock::new(b, attn_cfg))?;
    let z = randn(&[1, 3, 8], 31);
    record("mhsa block", params(&store, &|s| probe(mhsa.forward(s, s.tape().constant(z.clone()))?, 32))?);

    let mlp_cfg = ResMlpConfig { embed_dim: 8, hidden_dim: 16, dropout_p: 0.0 };
    let (store, mlp) = build(33, |b| ResMlp::new(b, mlp_cfg))?;
    let z = randn(&[1, 2, 8], 34);
    record("resmlp block", params(&store, &|s| probe(mlp.forward(s, s.tape().constant(z.clone()))?, 35))?);

    let (store, block) = build(36, |b| DenseBlock::new(b, DenseBlockConfig::new(2, 2, 2)))?;
    let x = randn(&[1, 2, 4, 4], 37);
    record("dense block", params(&store, &|s| probe(block.forward(s, s.tape().constant(x.clone()))?, 38))?);

    let (store, down) = build(39, |b| TransitionDown::new(b, 3, 3))?;
    let x = randn(&[1, 3, 4, 4], 40);
    record("transition down", params(&store, &|s| probe(down.forward(s, s.tape().constant(x.clone()))?, 41))?);

    let (store, up) = build(42, |b| TransitionUp::new(b, 3, 2))?;
    let x = randn(&[1, 3, 3, 3], 43);
    record("transition up", params(&store, &|s| probe(up.forward(s, s.tape().constant(x.clone()))?, 44))?);

    for (order, name) in [(GateOrder::Fused, "clab (fused)"), (GateOrder::SpatialFirst, "clab (spatial first)")] {
        let cfg = ClabConfig { n_branches: 2, kernels: 3, order, ..ClabConfig::new(4) };
        let (store, clab) = build(45, |b| Clab::new(b, cfg))?;
        let x = randn(&[1, 4, 6, 6], 46);
        record(name, params(&store, &|s| probe(clab.forward(s, s.tape().constant(x.clone()))?, 47))?);
    }

    for (name, err) in &worst {
        ensure(*err < OP_TOL, || format!("{name}: relative error {err:.2e} ≥ {OP_TOL:e}"))?;
    }
    let op_worst = worst.iter().map(|w| w.1).fold(0.0, f64::max);

    let cfg = ModelConfig {
        num_classes: 2,
        input_size: 16,
        patch_size: 8,
        first_conv_channels: 4,
        growth_rate: 2,
        layers_per_block: vec![1],
        embed_dim: 8,
        transformer_layers: 1,
        n_heads: 2,
        resmlp_hidden: 8,
        dropout_p: 0.0,
        seed: 7,
        ..ModelConfig::default()
    };
    let model = lib(TfcnsModel::<f64>::new(&cfg))?;
    let x = randn(&[1, 1, 16, 16], 48);
    let report = lib(grad_check_params(
        &model.params,
        |s| probe(model.forward(s, s.tape().constant(x.clone()))?, 49),
        EPS,
        None,
    ))?;
    ensure(report.max_rel_err < MODEL_TOL, || format!("tiny model: {report:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} ops/blocks, worst {op_worst:.1e}; tiny model {} params, all {} coords, worst {:.1e}",
        worst.len(),
        report.params_checked,
        report.coords_checked,
        report.max_rel_err
    ))
}

// ---------------------------------------------------------------- 2

const COLLAPSE_TOL: f64 = 1e-12;

fn crit_collapses() -> Outcome {
    let attn_cfg = MhsaConfig { embed_dim: 8, n_heads: 2, attn_dropout_p: 0.0, dropout_p: 0.0 };
    let (mut store, mhsa) = build(50, |b| MhsaBlock::new(b, attn_cfg))?;
    zero_params(&mut store, |n| n.starts_with("out."));
    let z = randn(&[2, 5, 8], 51);
    let y = eval(&store)(&|s| mhsa.forward(s, s.tape().constant(z.clone())));
    let d_attn = max_diff(&y, &z);
    ensure(d_attn <= COLLAPSE_TOL, || format!("mhsa with zero output projection moved input by {d_attn:e}"))?;

    let mlp_cfg = ResMlpConfig { embed_dim: 8, hidden_dim: 16, dropout_p: 0.0 };
    let (mut store, mlp) = build(52, |b| ResMlp::new(b, mlp_cfg))?;
    zero_params(&mut store, |n| n.starts_with("fc3."));
    let y = eval(&store)(&|s| mlp.forward(s, s.tape().constant(z.clone())));
    let d_mlp = max_diff(&y, &z);
    ensure(d_mlp <= COLLAPSE_TOL, || format!("resmlp with zero L3 moved input by {d_mlp:e}"))?;

    let (mut store, mlp) = build(53, |b| ResMlp::new(b, mlp_cfg))?;
    zero_params(&mut store, |n| n == "alpha" || n == "fc2.bias");
    let normed = randn(&[2, 5, 8], 54);
    let inner = eval(&store)(&|s| mlp.inner(s, s.tape().constant(normed.clone())));
    let d_alpha = max_diff(&inner, &normed);
    ensure(d_alpha <= COLLAPSE_TOL, || format!("alpha = 0 inner term differs from z'' by {d_alpha:e}"))?;

    // Stacked: zero both sublayer outputs in every layer; only the final LN acts.
    let (mut store, stack) = build(55, |b| RlTransformer::new(b, 2, attn_cfg, mlp_cfg, false))?;
    zero_params(&mut store, |n| n.contains(".attn.out.") || n.contains(".mlp.fc3."));
    let y = eval(&store)(&|s| stack.forward(s, s.tape().constant(z.clone())));
    let ln = eval(&store)(&|s| stack.final_norm.forward(s, s.tape().constant(z.clone())));
    let d_stack = max_diff(&y, &ln);
    ensure(d_stack <= COLLAPSE_TOL, || format!("zeroed encoder differs from final LN by {d_stack:e}"))?;
    Ok(format!(
        "mhsa {d_attn:e}, resmlp {d_mlp:e}, alpha=0 {d_alpha:e}, 2-layer encoder {d_stack:e} (tol {COLLAPSE_TOL:e})"
    ))
}

// ---------------------------------------------------------------- 3

fn crit_shape_contract() -> Outcome {
    let start = Instant::now();
    let mut seen = Vec::new();
    for (p, tokens) in [(8, 785), (16, 197), (32, 50)] {
        let cfg = ModelConfig { input_size: 224, patch_size: p, ..ModelConfig::default() };
        let model = lib(TfcnsModel::<f32>::new(&cfg))?;
        let x = Tensor::<f32>::uniform(&[1, 1, 224, 224], 0.0, 1.0, &mut rng(p as u64)).unwrap();
        let tape = Tape::no_grad();
        let s = Session::new(&tape, &model.params, false, 0);
        let trace = lib(model.trace(&s, tape.constant(x)))?;
        let logits = trace.logits.shape();
        ensure(logits == [1, cfg.num_classes, 224, 224], || format!("P={p}: logits {logits:?}"))?;
        for a in &trace.attention {
            let shape = a.shape();
            ensure(shape == [1, cfg.n_heads, tokens, tokens], || format!("P={p}: attention {shape:?}, expected {tokens} tokens"))?;
        }
        ensure(cfg.seq_len() == tokens, || format!("P={p}: seq_len {}", cfg.seq_len()))?;
        ensure(trace.logits.value().all_finite(), || format!("P={p}: non-finite logits"))?;
        seen.push(format!("P={p}→{tokens}"));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("224² logits for {} in {:.1}s", seen.join(", "), elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 4

fn crit_clab() -> Outcome {
    let mut n_gates = 0usize;
    for (i, &(c, n, k, h, w)) in [(4, 2, 3, 6, 6), (8, 4, 4, 5, 7), (3, 1, 1, 4, 4), (6, 3, 2, 8, 3)].iter().enumerate() {
        for order in [GateOrder::Fused, GateOrder::SpatialFirst] {
            let cfg = ClabConfig { n_branches: n, kernels: k, order, ..ClabConfig::new(c) };
            let (store, clab) = build(60 + i as u64, |b| Clab::new(b, cfg))?;
            let x = Tensor::randn(&[2, c, h, w], 3.0, &mut rng(70 + i as u64)).unwrap();
            let tape = Tape::no_grad();
            let s = Session::new(&tape, &store, false, 0);
            let (y, a) = lib(clab.forward_with_gate(&s, tape.constant(x.clone())))?;
            let (y, a) = (y.value(), a.value());
            ensure(y.shape() == x.shape(), || format!("output {:?} for input {:?}", y.shape(), x.shape()))?;
            ensure(a.data().iter().all(|&g| g > 0.0 && g < 1.0), || format!("{order:?}: gate outside (0,1)"))?;
            ensure(
                y.data().iter().zip(x.data()).all(|(&yv, &xv)| yv.abs() < xv.abs() || xv == 0.0),
                || format!("{order:?}: |Y| ≥ |x| somewhere"),
            )?;
            n_gates += a.numel();
        }
    }

    let (mut store, clab) = build(80, |b| Clab::new(b, ClabConfig::new(6)))?;
    zero_params(&mut store, |n| n.starts_with("gate_"));
    let x = randn(&[2, 6, 5, 5], 81);
    let y = eval(&store)(&|s| clab.forward(s, s.tape().constant(x.clone())));
    let half = x.map(|v| 0.5 * v);
    ensure(y == half, || format!("zero gate: max deviation from 0.5·x {:e}", max_diff(&y, &half)))?;

    let mut worst: f64 = 0.0;
    for order in [GateOrder::Fused, GateOrder::SpatialFirst] {
        let cfg = ClabConfig { n_branches: 2, kernels: 3, order, ..ClabConfig::new(4) };
        let (store, clab) = build(82, |b| Clab::new(b, cfg))?;
        let x = randn(&[1, 4, 6, 6], 83);
        let r = lib(grad_check_params(&store, |s| probe(clab.forward(s, s.tape().constant(x.clone()))?, 84), EPS, None))?;
        ensure(r.max_rel_err < OP_TOL, || format!("{order:?} grad check: {r:?}"))?;
        worst = worst.max(r.max_rel_err);
    }
    Ok(format!("8 shape/order cases, {n_gates} gate values in (0,1), zero gate = 0.5·x exactly, grad err {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

/// Foreground pixels of `class` with a 4-neighbour (or the image edge)
/// outside the class.
fn oracle_boundary(m: &Tensor<u8>, class: u8) -> Vec<(i64, i64)> {
    let (h, w) = (m.shape()[0] as i64, m.shape()[1] as i64);
    let at = |y: i64, x: i64| y >= 0 && x >= 0 && y < h && x < w && m.data()[(y * w + x) as usize] == class;
    let mut pts = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if at(y, x) && !(at(y - 1, x) && at(y + 1, x) && at(y, x - 1) && at(y, x + 1)) {
                pts.push((y, x));
            }
        }
    }
    pts
}

fn oracle_hd95(p: &Tensor<u8>, r: &Tensor<u8>, class: u8) -> Option<f64> {
    let (bp, br) = (oracle_boundary(p, class), oracle_boundary(r, class));
    if bp.is_empty() || br.is_empty() {
        return None;
    }
    let mut d: Vec<f64> = Vec::with_capacity(bp.len() + br.len());
    for (from, to) in [(&bp, &br), (&br, &bp)] {
        for &(y, x) in from.iter() {
            let best = to.iter().map(|&(v, u)| (y - v) * (y - v) + (x - u) * (x - u)).min().unwrap();
            d.push((best as f64).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let pos = 0.95 * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(d[lo] + (d[hi] - d[lo]) * (pos - lo as f64))
}

fn crit_metrics() -> Outcome {
    let mut r = rng(90);
    let mut compared = 0;
    for case in 0..1500 {
        let (h, w) = (r.random_range(1..=16), r.random_range(1..=16));
        let density: f64 = r.random_range(0.02..0.9);
        let mut draw = || {
            Tensor::from_fn(&[h, w], |_| if r.random_bool(density) { r.random_range(1..3u8) } else { 0 }).unwrap()
        };
        let (p, q) = (draw(), draw());
        for class in 1..3u8 {
            let fast = hd95(&p, &q, class, 1.0).ok();
            let slow = oracle_hd95(&p, &q, class);
            ensure(fast == slow, || format!("case {case} ({h}×{w}) class {class}: {fast:?} vs oracle {slow:?}"))?;
            compared += 1;
        }
    }

    let mut p = Tensor::<u8>::zeros(&[10, 10]).unwrap();
    let mut q = p.clone();
    p.data_mut()[2 * 10 + 3] = 1;
    q.data_mut()[(2 + 3) * 10 + 3 + 4] = 1;
    let single = lib(hd95(&p, &q, 1, 1.0))?;
    ensure((single - 5.0).abs() <= 1e-9, || format!("3-4-5 case gave {single}"))?;

    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let mut draw = || Tensor::from_fn(&[9, 11], |_| r.random_range(0..3u8)).unwrap();
        let (p, q) = (draw(), draw());
        for class in 0..3u8 {
            let d = lib(dice_score(&p, &q, class))? / 100.0;
            let j = lib(jaccard_score(&p, &q, class))? / 100.0;
            worst = worst.max((j - d / (2.0 - d)).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("J = D/(2−D) off by {worst:e}"))?;
    Ok(format!("hd95 = all-pairs oracle on {compared} mask/class pairs; 3-4-5 → {single}; J=D/(2−D) within {worst:.1e}"))
}

// ---------------------------------------------------------------- 6

fn crit_loss() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut r = rng(100 + seed);
        let (b, k, h, w) = (r.random_range(1..3), r.random_range(2..6), r.random_range(1..6), r.random_range(1..6));
        let logits = Tensor::<f64>::randn(&[b, k, h, w], 2.0, &mut r).unwrap();
        let target = Tensor::from_fn(&[b, h, w], |_| r.random_range(0..k as u8)).unwrap();
        let tape = Tape::no_grad();
        let parts = lib(combined_loss_parts(tape.constant(logits.clone()), &target))?;
        let (total, dice, ce) = (
            parts.total.value().item().unwrap(),
            parts.dice.value().item().unwrap(),
            parts.ce.value().item().unwrap(),
        );
        let dice_alone = lib(dice_loss(tape.constant(logits.clone()), &target))?.value().item().unwrap();
        let ce_alone = lib(cross_entropy_loss(tape.constant(logits), &target))?.value().item().unwrap();
        ensure(dice == dice_alone && ce == ce_alone, || "loss parts differ from the standalone losses".into())?;
        worst = worst.max((total - (0.5 * dice + 0.5 * ce)).abs());
    }
    ensure(worst <= 1e-12, || format!("combined vs 0.5·Dice + 0.5·CE off by {worst:e}"))?;

    let mut ce_worst: f64 = 0.0;
    for k in 2..=9usize {
        let tape = Tape::no_grad();
        let logits = tape.constant(Tensor::full(&[2, k, 3, 4], 0.7).unwrap());
        let target = Tensor::from_fn(&[2, 3, 4], |i| (i % k) as u8).unwrap();
        let ce = lib(cross_entropy_loss(logits, &target))?.value().item().unwrap();
        ce_worst = ce_worst.max((ce - (k as f64).ln()).abs());
    }
    ensure(ce_worst <= 1e-9, || format!("uniform-logit CE differs from ln K by {ce_worst:e}"))?;
    Ok(format!("50 random cases within {worst:.1e}; uniform CE = ln K for K=2..9 within {ce_worst:.1e}"))
}

// ---------------------------------------------------------------- 7

fn crit_optimizer() -> Outcome {
    let mut store = ParamStore::new();
    lib(store.add("w", Tensor::from_vec(&[1], vec![1.0f64]).unwrap(), true))?;
    let mut state = lib(OptimizerState::new(&store))?;
    let cfg = TrainConfig { lr: 0.1, momentum: 0.9, weight_decay: 0.0, ..TrainConfig::default() };
    let g = [Tensor::from_vec(&[1], vec![1.0]).unwrap()];
    let mut trajectory = Vec::new();
    for _ in 0..2 {
        lib(sgd_step(&mut store, &g, &mut state, &cfg))?;
        trajectory.push((state.momentum[0].data()[0], store.by_name("w").unwrap().value.data()[0]));
    }
    let expected = [(1.0, 0.9), (1.9, 0.71)];
    for (&(v, w), &(ve, we)) in trajectory.iter().zip(&expected) {
        ensure((v - ve).abs() <= 1e-12 && (w - we).abs() <= 1e-12, || format!("got {trajectory:?}, expected {expected:?}"))?;
    }

    let cfg = TrainConfig::default();
    let (before, at) = (lr_at(29_999, &cfg), lr_at(30_000, &cfg));
    ensure(before == cfg.lr && at == cfg.lr * cfg.lr_decay_factor, || format!("lr {before} → {at} at 30000"))?;
    ensure(lr_at(0, &cfg) == cfg.lr && lr_at(10_000_000, &cfg) == at, || "schedule is not a single step".into())?;
    Ok(format!("trajectory {trajectory:?}; lr {before} at 29999 → {at} at 30000"))
}

// ---------------------------------------------------------------- 8

fn desk_config() -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        num_classes: 4,
        input_size: 32,
        patch_size: 8,
        embed_dim: 32,
        transformer_layers: 2,
        n_heads: 4,
        resmlp_hidden: 64,
        first_conv_channels: 16,
        growth_rate: 8,
        layers_per_block: vec![2],
        dropout_p: 0.0,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        lr: 0.05,
        batch_size: 8,
        augment_rotate: false,
        augment_flip: false,
        ..TrainConfig::default()
    };
    (model, train)
}

fn crit_learning_signal() -> Outcome {
    let start = Instant::now();
    let (model_cfg, train_cfg) = desk_config();
    let data = lib(generate_synthetic(&SyntheticSpec::new(8, 32, model_cfg.num_classes, 1)))?;
    let mut model = lib(TfcnsModel::<f32>::new(&model_cfg))?;
    let mut state = lib(OptimizerState::new(&model.params))?;
    let mut reached = None;
    let mut dice = 0.0;
    for budget in (50..=500).step_by(50) {
        let cfg = TrainConfig { iterations: budget, ..train_cfg.clone() };
        lib(train(&mut model, &mut state, &data, &[], &cfg, None))?;
        dice = lib(evaluate(&model, &data))?.dice_avg;
        if dice > 95.0 {
            reached = Some(budget);
            break;
        }
    }
    let elapsed = start.elapsed();
    let at = reached.ok_or_else(|| format!("train dice {dice:.2} after 500 iterations"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;

    let mut frozen = lib(TfcnsModel::<f32>::new(&model_cfg))?;
    let before = frozen.params.clone();
    let mut state = lib(OptimizerState::new(&frozen.params))?;
    let cfg = TrainConfig { lr: 0.0, iterations: 5, ..train_cfg };
    lib(train(&mut frozen, &mut state, &data, &[], &cfg, None))?;
    let unchanged = frozen
        .params
        .iter()
        .zip(before.iter())
        .all(|(a, b)| a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure(unchanged, || "lr = 0 changed parameters".into())?;
    Ok(format!(
        "train dice {dice:.2} after {at} iterations ({:.0}s, lr {}); lr=0 leaves params bit-identical",
        elapsed.as_secs_f64(),
        train_cfg.lr
    ))
}

// ---------------------------------------------------------------- 9

fn tiny_base(input: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        num_classes: 3,
        input_size: input,
        patch_size: 8,
        first_conv_channels: 8,
        growth_rate: 4,
        layers_per_block: vec![1],
        embed_dim: 16,
        transformer_layers: 1,
        n_heads: 2,
        resmlp_hidden: 16,
        dropout_p: 0.0,
        seed,
        ..ModelConfig::default()
    }
}

fn crit_ablation() -> Outcome {
    let quick = TrainConfig { iterations: 1, batch_size: 2, ..TrainConfig::default() };
    let data32 = lib(generate_synthetic(&SyntheticSpec::new(2, 32, 3, 0)))?;
    let expected = [
        (AblationAxis::Patch, "Patch_Size", vec!["8", "16", "32"]),
        (AblationAxis::Mlp, "MLP", vec!["ResMLP", "MLP"]),
        (AblationAxis::Skip, "Skip_Attention", vec!["None", "CUAB-like", "CLAB"]),
    ];
    for (axis, column, rows) in &expected {
        let table = lib(run_ablation(*axis, &tiny_base(32, 0), &quick, &data32, &[]))?;
        let tsv = table.to_tsv();
        let mut lines = tsv.lines();
        let header = lines.next().unwrap_or_default();
        ensure(header == format!("{column}\tDice\tHd95\tJaccard"), || format!("{axis}: header {header:?}"))?;
        let labels: Vec<&str> = lines.clone().map(|l| l.split('\t').next().unwrap()).collect();
        ensure(labels == *rows, || format!("{axis}: rows {labels:?}"))?;
        ensure(lines.all(|l| l.split('\t').count() == 4), || format!("{axis}: ragged rows"))?;
    }

    // Direction of the skip-gate comparison, reported only.
    let mut wins = 0;
    let mut margins = Vec::new();
    let cfg = TrainConfig {
        lr: 0.02,
        iterations: 60,
        batch_size: 4,
        augment_rotate: false,
        augment_flip: false,
        ..TrainConfig::default()
    };
    for seed in 0..10u64 {
        let data = lib(generate_synthetic(&SyntheticSpec::new(6, 16, 3, 1000 + seed)))?;
        let (train_set, test_set): (Vec<SegmentationPair>, Vec<SegmentationPair>) = (data[..4].to_vec(), data[4..].to_vec());
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let table = lib(run_ablation(AblationAxis::Skip, &tiny_base(16, seed), &cfg, &train_set, &test_set))?;
        let dice = |label: &str| table.rows.iter().find(|r| r.label == label).unwrap().report.dice_avg;
        let (none, clab) = (dice("None"), dice("CLAB"));
        wins += (clab >= none) as usize;
        margins.push(clab - none);
    }
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    Ok(format!(
        "row/column sets match for patch, mlp and skip; informational: CLAB ≥ None in {wins}/10 seeds (mean dice margin {mean:+.2}, {} ≥ 7)",
        if wins >= 7 { "meets" } else { "does not meet" }
    ))
}

// ---------------------------------------------------------------- 10

fn round_trip<T: Element>(t: &Tensor<T>) -> bool {
    decode_tensor::<T>(&encode_tensor(t)).map(|back| back == *t).unwrap_or(false)
}

fn crit_determinism() -> Outcome {
    let data = lib(generate_synthetic(&SyntheticSpec::new(4, 16, 3, 5)))?;
    let cfg = TrainConfig { iterations: 8, batch_size: 2, eval_every: 4, seed: 9, ..TrainConfig::default() };
    let base = ModelConfig { dropout_p: 0.2, ..tiny_base(16, 3) };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut logs = Vec::new();
    for dir in &dirs {
        let mut model = lib(TfcnsModel::<f32>::new(&base))?;
        let mut state = lib(OptimizerState::new(&model.params))?;
        lib(train(&mut model, &mut state, &data, &data, &cfg, Some(dir.path())))?;
        logs.push(std::fs::read(dir.path().join(TRAIN_LOG)).map_err(|e| e.to_string())?);
    }
    ensure(logs[0] == logs[1] && !logs[0].is_empty(), || "training logs differ between identical runs".into())?;

    let model = lib(TfcnsModel::<f32>::new(&tiny_base(16, 4)))?;
    let meta = CheckpointMeta { iteration: 3, rng_seed: 9, best_dice: Some(50.0) };
    let bytes = lib(encode_checkpoint(&model, None, &meta))?;
    let restored = lib(lib(decode_checkpoint::<f32>(&bytes))?.to_model())?;
    ensure(lib(encode_checkpoint(&restored, None, &meta))? == bytes, || "re-encoded checkpoint differs".into())?;
    let x = Tensor::<f32>::uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng(6)).unwrap();
    let (a, b) = (lib(model.infer(&x))?, lib(restored.infer(&x))?);
    let same = a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    ensure(same, || "restored model forward differs".into())?;

    let mut r = rng(7);
    let mut checked = 0;
    for rank in 0..=4usize {
        for _ in 0..4 {
            let shape: Vec<usize> = (0..rank).map(|_| r.random_range(1..5)).collect();
            let n: usize = shape.iter().product();
            let ok = round_trip(&Tensor::<f32>::from_fn(&shape, |_| r.random::<f32>() - 0.5).unwrap())
                && round_trip(&Tensor::<f64>::from_fn(&shape, |_| r.random::<f64>() * 1e300).unwrap())
                && round_trip(&Tensor::<u8>::from_fn(&shape, |_| r.random()).unwrap())
                && round_trip(&Tensor::<i32>::from_fn(&shape, |_| r.random()).unwrap());
            ensure(ok, || format!("TNSR round trip failed for shape {shape:?} ({n} elements)"))?;
            checked += 4;
        }
    }
    let specials = Tensor::<f32>::from_vec(&[4], vec![f32::NAN, -0.0, f32::INFINITY, f32::MIN_POSITIVE]).unwrap();
    let back = lib(decode_tensor::<f32>(&encode_tensor(&specials)))?;
    ensure(
        back.data().iter().zip(specials.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
        || "special floats not preserved bitwise".into(),
    )?;
    Ok(format!(
        "train logs identical ({} bytes); checkpoint re-encode and forward bit-identical; {checked} TNSR round trips over 4 dtypes, ranks 0-4",
        logs[0].len()
    ))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient correctness", crit_gradients),
        (2, "residual collapses", crit_collapses),
        (3, "shape contract", crit_shape_contract),
        (4, "CLAB properties", crit_clab),
        (5, "metric oracles", crit_metrics),
        (6, "loss composition", crit_loss),
        (7, "optimizer", crit_optimizer),
        (8, "small-scale learning signal", crit_learning_signal),
        (9, "ablation harness", crit_ablation),
        (10, "determinism and round trips", crit_determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id:>2} ({name}, {secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id:>2} ({name}, {secs:.1}s): {why}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
