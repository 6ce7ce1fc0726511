use std::path::{Path, PathBuf};

use tfcns::data::{
    generate_synthetic, load_dataset, read_tensor, save_dataset, split, write_cam_overlay, write_heatmap,
    write_mask_image, write_tensor, SegmentationPair, SyntheticSpec, DEFAULT_PALETTE,
};
use tfcns::model::{load_checkpoint, ModelConfig, TfcnsModel};
use tfcns::training::{self, run_ablation, AblationAxis, OptimizerState};
use tfcns::{Error, Result, Tensor};

use crate::run_config::RunConfig;
use crate::Common;

pub const EFFECTIVE_CONFIG: &str = "config.txt";
pub const EVAL_TABLE: &str = "eval.tsv";
pub const PREDICTION_IMAGE: &str = "prediction.ppm";
pub const PREDICTION_MASK: &str = "prediction.msk.tnsr";
pub const CAM_HEATMAP: &str = "cam_heatmap.ppm";
pub const CAM_OVERLAY: &str = "cam_overlay.ppm";
pub const CAM_TENSOR: &str = "cam.tnsr";

/// Defaults, then the config file, then `--set`, then the dedicated flags.
fn build_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for pair in &common.set {
        cfg.apply_override(pair)?;
    }
    if let Some(seed) = common.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.paths.out_dir = out.clone();
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.paths.out_dir);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::write(dir.join(EFFECTIVE_CONFIG), cfg.to_text())?;
    Ok(())
}

fn synthetic_cases(cfg: &RunConfig, model: &ModelConfig) -> Result<Vec<SegmentationPair>> {
    generate_synthetic(&SyntheticSpec::new(
        cfg.paths.synthetic_cases,
        model.input_size,
        model.num_classes,
        cfg.paths.synthetic_seed,
    ))
}

/// The configured dataset, or a synthetic one shaped for `model`.
fn load_cases(cfg: &RunConfig, model: &ModelConfig) -> Result<Vec<SegmentationPair>> {
    if cfg.paths.dataset_dir.is_empty() {
        synthetic_cases(cfg, model)
    } else {
        load_dataset(&cfg.paths.dataset_dir)
    }
}

fn load_model(cfg: &RunConfig, flag: Option<String>) -> Result<TfcnsModel<f32>> {
    let path = flag.unwrap_or_else(|| cfg.paths.checkpoint.clone());
    if path.is_empty() {
        return Err(Error::ConfigInvalid("no checkpoint given (use --checkpoint or the checkpoint key)".into()));
    }
    load_checkpoint::<f32>(&path)
        .map_err(|e| match e {
            Error::Io(io) => Error::Dataset(format!("cannot read checkpoint {path}: {io}")),
            other => other,
        })?
        .to_model()
}

/// Reads an `H×W` or `C×H×W` image as a batch of one.
fn load_image(model: &TfcnsModel<f32>, path: &Path) -> Result<Tensor<f32>> {
    let image = read_tensor::<f32>(path).map_err(|e| match e {
        Error::Io(io) => Error::Dataset(format!("cannot read image {}: {io}", path.display())),
        other => other,
    })?;
    let shape = image.shape().to_vec();
    let batched = match shape.as_slice() {
        [h, w] => image.reshape(&[1, 1, *h, *w])?,
        [c, h, w] => image.reshape(&[1, *c, *h, *w])?,
        _ => image,
    };
    let s = model.cfg.input_size;
    model.check_input(batched.shape()).map_err(|_| {
        Error::Dataset(format!(
            "image {} has shape {shape:?}, checkpoint expects {}×{s}×{s}",
            path.display(),
            model.cfg.in_channels
        ))
    })?;
    Ok(batched)
}

pub fn train(common: &Common, lr: Option<f64>) -> Result<()> {
    let mut cfg = build_config(common)?;
    if let Some(lr) = lr {
        cfg.train.lr = lr;
    }
    let (mut model, mut state) = if cfg.paths.checkpoint.is_empty() {
        cfg.validate()?;
        let model = TfcnsModel::<f32>::new(&cfg.model)?;
        let state = OptimizerState::new(&model.params)?;
        (model, state)
    } else {
        let ck = load_checkpoint::<f32>(&cfg.paths.checkpoint)?;
        cfg.model = ck.config.clone();
        cfg.validate()?;
        let model = ck.to_model()?;
        let momentum = match ck.momentum_for(&model)? {
            Some(m) => m,
            None => OptimizerState::new(&model.params)?.momentum,
        };
        let state = OptimizerState {
            momentum,
            iteration: ck.meta.iteration,
        };
        (model, state)
    };
    let cases = load_cases(&cfg, &cfg.model)?;
    let (train_set, held_out) = split(&cases, cfg.paths.train_fraction, cfg.paths.split_seed)?;
    let dir = out_dir(&cfg)?;
    echo_config(&cfg, &dir)?;
    let eval_set = if held_out.is_empty() { &train_set } else { &held_out };
    let summary = training::train(&mut model, &mut state, &train_set, eval_set, &cfg.train, Some(&dir))?;
    if let Some(last) = summary.evals.last() {
        let table = last.report.to_tsv(&cfg.paths.method, &[]);
        std::fs::write(dir.join(EVAL_TABLE), &table)?;
        print!("{table}");
    }
    eprintln!(
        "trained to iteration {} ({} parameters), outputs in {}",
        state.iteration,
        model.num_parameters(),
        dir.display()
    );
    Ok(())
}

pub fn eval(common: &Common, checkpoint: Option<String>) -> Result<()> {
    let cfg = build_config(common)?;
    let model = load_model(&cfg, checkpoint)?;
    let cases = load_cases(&cfg, &model.cfg)?;
    let report = training::evaluate(&model, &cases)?;
    let table = report.to_tsv(&cfg.paths.method, &[]);
    let dir = out_dir(&cfg)?;
    std::fs::write(dir.join(EVAL_TABLE), &table)?;
    print!("{table}");
    Ok(())
}

pub fn predict(common: &Common, checkpoint: Option<String>, image: &Path) -> Result<()> {
    let cfg = build_config(common)?;
    let model = load_model(&cfg, checkpoint)?;
    let x = load_image(&model, image)?;
    let mask = model.predict(&x)?;
    let s = model.cfg.input_size;
    let mask = mask.reshape(&[s, s])?;
    let dir = out_dir(&cfg)?;
    write_mask_image(dir.join(PREDICTION_IMAGE), &mask, &DEFAULT_PALETTE)?;
    write_tensor(dir.join(PREDICTION_MASK), &mask)?;
    Ok(())
}

pub fn cam(common: &Common, checkpoint: Option<String>, image: &Path, class: usize, threshold: f64) -> Result<()> {
    let cfg = build_config(common)?;
    let model = load_model(&cfg, checkpoint)?;
    let x = load_image(&model, image)?;
    let s = model.cfg.input_size;
    let heat = model.class_activation_map(&x, class)?.reshape(&[s, s])?;
    let dir = out_dir(&cfg)?;
    write_heatmap(dir.join(CAM_HEATMAP), &heat)?;
    write_cam_overlay(dir.join(CAM_OVERLAY), &x, &heat, threshold)?;
    write_tensor(dir.join(CAM_TENSOR), &heat)?;
    Ok(())
}

pub fn ablate(common: &Common, axis: AblationAxis) -> Result<()> {
    let cfg = build_config(common)?;
    cfg.validate()?;
    let cases = load_cases(&cfg, &cfg.model)?;
    let (train_set, test_set) = split(&cases, cfg.paths.train_fraction, cfg.paths.split_seed)?;
    let table = run_ablation(axis, &cfg.model, &cfg.train, &train_set, &test_set)?;
    let dir = out_dir(&cfg)?;
    echo_config(&cfg, &dir)?;
    let tsv = table.to_tsv();
    std::fs::write(dir.join(format!("ablation_{axis}.tsv")), &tsv)?;
    print!("{tsv}");
    Ok(())
}

pub fn synth(common: &Common) -> Result<()> {
    let cfg = build_config(common)?;
    cfg.validate()?;
    let cases = synthetic_cases(&cfg, &cfg.model)?;
    let dir = out_dir(&cfg)?;
    save_dataset(&dir, &cases)?;
    eprintln!("wrote {} cases to {}", cases.len(), dir.display());
    Ok(())
}
