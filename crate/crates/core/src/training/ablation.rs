use std::fmt::{self, Write};
use std::str::FromStr;

use crate::data::SegmentationPair;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{MlpVariant, ModelConfig, SkipAttention, TfcnsModel};
use crate::par;
use crate::training::{evaluate, train, OptimizerState, TrainConfig};

/// The single setting varied across an ablation's rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Patch sizes 8, 16, 32.
    Patch,
    /// Residual MLP against the plain MLP.
    Mlp,
    /// No gate, spatial-first gate, fused gate.
    Skip,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Patch => "patch",
            AblationAxis::Mlp => "mlp",
            AblationAxis::Skip => "skip",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch" => Ok(AblationAxis::Patch),
            "mlp" => Ok(AblationAxis::Mlp),
            "skip" => Ok(AblationAxis::Skip),
            _ => Err(Error::ConfigInvalid(format!("ablation axis {s:?} is not patch|mlp|skip"))),
        }
    }
}

impl AblationAxis {
    pub fn column(self) -> &'static str {
        match self {
            AblationAxis::Patch => "Patch_Size",
            AblationAxis::Mlp => "MLP",
            AblationAxis::Skip => "Skip_Attention",
        }
    }

    /// Row labels and their configs derived from `base`.
    pub fn grid(self, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
        let with = |f: &dyn Fn(&mut ModelConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            AblationAxis::Patch => [8, 16, 32]
                .into_iter()
                .map(|p| (p.to_string(), with(&|c| c.patch_size = p)))
                .collect(),
            AblationAxis::Mlp => vec![
                ("ResMLP".into(), with(&|c| c.mlp_variant = MlpVariant::ResMlp)),
                ("MLP".into(), with(&|c| c.mlp_variant = MlpVariant::PlainMlp)),
            ],
            AblationAxis::Skip => vec![
                ("None".into(), with(&|c| c.skip_attention = SkipAttention::None)),
                ("CUAB-like".into(), with(&|c| c.skip_attention = SkipAttention::CuabLike)),
                ("CLAB".into(), with(&|c| c.skip_attention = SkipAttention::Clab)),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub n_params: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub column: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// `<column>, Dice, Hd95, Jaccard`, tab separated, two decimals.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\tDice\tHd95\tJaccard\n", self.column);
        for r in &self.rows {
            let hd = r.report.hd95_avg.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}"));
            writeln!(s, "{}\t{:.2}\t{hd}\t{:.2}", r.label, r.report.dice_avg, r.report.jaccard_avg).unwrap();
        }
        s
    }
}

/// Trains and evaluates every row under the same training config and
/// seeds, rows in parallel. An empty `test_set` evaluates on `train_set`.
pub fn run_ablation(
    axis: AblationAxis,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[SegmentationPair],
    test_set: &[SegmentationPair],
) -> Result<AblationTable> {
    let grid = axis.grid(base);
    for (_, cfg) in &grid {
        cfg.validate()?;
    }
    let eval_set = if test_set.is_empty() { train_set } else { test_set };
    let rows = par::map_slice(&grid, |(label, cfg)| -> Result<AblationRow> {
        let mut model = TfcnsModel::<f32>::new(cfg)?;
        let mut state = OptimizerState::new(&model.params)?;
        train(&mut model, &mut state, train_set, &[], train_cfg, None)?;
        Ok(AblationRow {
            label: label.clone(),
            n_params: model.num_parameters(),
            report: evaluate(&model, eval_set)?,
        })
    });
    Ok(AblationTable {
        column: axis.column().to_string(),
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}
