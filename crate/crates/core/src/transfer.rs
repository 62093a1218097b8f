//! Moving IMP masks between networks that differ only in output width, and
//! comparing transferred tickets against IMP run natively on the target.

use alloc::vec::Vec;

use crate::imp::{self, ImpTrace};
use crate::nn::{self, Mask, NetworkSpec, ParamState, TrainConfig};
use crate::tasks::TaskBinding;
use crate::{Error, Result};

/// Zero-indexed output rows dropped when shrinking a 4-row output mask to 2
/// rows: the second and fourth rows.
pub const DEFAULT_DROPPED_ROWS: [usize; 2] = [1, 3];

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LayerRule {
    Identity,
    /// Repeat every row in place: rows `[r0, r1] → [r0, r0, r1, r1]`.
    /// Dropping the odd rows afterwards restores the source.
    DuplicateRows,
    /// Drop the listed rows.
    TruncateRows(Vec<usize>),
}

impl LayerRule {
    fn apply(&self, bits: &[bool], rows: usize, cols: usize) -> Result<(Vec<bool>, usize)> {
        match self {
            LayerRule::Identity => Ok((bits.to_vec(), rows)),
            LayerRule::DuplicateRows => {
                let mut out = Vec::with_capacity(2 * bits.len());
                for row in bits.chunks(cols) {
                    out.extend_from_slice(row);
                    out.extend_from_slice(row);
                }
                Ok((out, 2 * rows))
            }
            LayerRule::TruncateRows(drop) => {
                if drop.iter().any(|&r| r >= rows) {
                    return Err(Error::InvalidArgument("dropped row out of range"));
                }
                let kept: Vec<usize> = (0..rows).filter(|r| !drop.contains(r)).collect();
                if kept.is_empty() {
                    return Err(Error::InvalidArgument("truncation drops every row"));
                }
                let out = kept
                    .iter()
                    .flat_map(|&r| bits[r * cols..(r + 1) * cols].iter().copied())
                    .collect();
                Ok((out, kept.len()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaskTransferPlan {
    pub source: NetworkSpec,
    pub target: NetworkSpec,
    pub rules: Vec<LayerRule>,
}

impl MaskTransferPlan {
    pub fn new(source: NetworkSpec, target: NetworkSpec, rules: Vec<LayerRule>) -> Result<Self> {
        if rules.len() != source.num_layers() || source.num_layers() != target.num_layers() {
            return Err(Error::ShapeMismatch {
                what: "transfer plan layers",
                expected: source.num_layers(),
                found: rules.len(),
            });
        }
        let plan = Self {
            source,
            target,
            rules,
        };
        // Probe with an all-ones mask so shape errors surface at construction.
        plan.apply(&Mask::ones(&plan.source))?;
        Ok(plan)
    }

    /// Identity on hidden layers; the output layer is duplicated when the
    /// target has twice the rows, truncated by [`DEFAULT_DROPPED_ROWS`] when it
    /// has half of four, and copied when equal.
    pub fn between(source: &NetworkSpec, target: &NetworkSpec) -> Result<Self> {
        let n = source.num_layers();
        let mut rules: Vec<LayerRule> = (0..n).map(|_| LayerRule::Identity).collect();
        let (s, t) = (source.output_dim, target.output_dim);
        rules[n - 1] = if s == t {
            LayerRule::Identity
        } else if t == 2 * s {
            LayerRule::DuplicateRows
        } else if s == 4 && t == 2 {
            LayerRule::TruncateRows(DEFAULT_DROPPED_ROWS.to_vec())
        } else {
            return Err(Error::ShapeMismatch {
                what: "output rows",
                expected: 2 * s,
                found: t,
            });
        };
        Self::new(source.clone(), target.clone(), rules)
    }

    pub fn apply(&self, mask: &Mask) -> Result<Mask> {
        let src_shapes = self.source.layer_shapes();
        if mask.shapes() != src_shapes.as_slice() {
            return Err(Error::ShapeMismatch {
                what: "source mask",
                expected: self.source.weight_count(),
                found: mask.len(),
            });
        }
        let mut bits = Vec::with_capacity(self.target.weight_count());
        let mut shapes = Vec::with_capacity(src_shapes.len());
        for (l, (&(rows, cols), rule)) in src_shapes.iter().zip(&self.rules).enumerate() {
            let (b, r) = rule.apply(mask.layer_bits(l), rows, cols)?;
            bits.extend(b);
            shapes.push((r, cols));
        }
        if shapes != self.target.layer_shapes() {
            return Err(Error::ShapeMismatch {
                what: "transferred mask",
                expected: self.target.weight_count(),
                found: bits.len(),
            });
        }
        Mask::from_bits(shapes, bits)
    }
}

fn map_output_layer(mask: &Mask, rule: LayerRule) -> Result<Mask> {
    let last = mask
        .num_layers()
        .checked_sub(1)
        .ok_or(Error::ShapeMismatch {
            what: "mask layers",
            expected: 1,
            found: 0,
        })?;
    let mut bits = mask.bits()[..mask.layer_offset(last)].to_vec();
    let mut shapes = mask.shapes().to_vec();
    let (rows, cols) = shapes[last];
    let (out, new_rows) = rule.apply(mask.layer_bits(last), rows, cols)?;
    bits.extend(out);
    shapes[last] = (new_rows, cols);
    Mask::from_bits(shapes, bits)
}

/// Output-layer rows `[r0, r1] → [r0, r0, r1, r1]`; other layers copied.
pub fn duplicate_output_mask(mask: &Mask) -> Result<Mask> {
    map_output_layer(mask, LayerRule::DuplicateRows)
}

/// Drops `drop_rows` from the output layer; other layers copied.
pub fn truncate_output_mask(mask: &Mask, drop_rows: &[usize]) -> Result<Mask> {
    map_output_layer(mask, LayerRule::TruncateRows(drop_rows.to_vec()))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransferRow {
    pub source_iter: usize,
    /// Density of the transferred mask on the target network.
    pub density: f64,
    /// `None` when training on the target failed.
    pub transferred_loss: Option<f64>,
    pub native_density: Option<f64>,
    pub native_loss: Option<f64>,
    pub winning: bool,
}

/// Trains `target_init` rewound under `mask` and returns the final loss.
pub fn transferred_loss(
    target_init: &ParamState,
    mask: &Mask,
    target_task: &TaskBinding,
    train: &TrainConfig,
) -> Result<f64> {
    let start = imp::rewind(target_init, mask)?;
    Ok(nn::train(&start, mask, target_task, train)?.final_loss)
}

/// Index of the native record whose density is closest to `density`.
pub fn nearest_density(native: &ImpTrace, density: f64) -> Option<usize> {
    native
        .records
        .iter()
        .enumerate()
        .min_by(|a, b| {
            libm::fabs(a.1.density - density).total_cmp(&libm::fabs(b.1.density - density))
        })
        .map(|(i, _)| i)
}

/// Assembles a comparison row from a transferred training result.
pub fn comparison_row(
    source_iter: usize,
    mask: &Mask,
    loss: Option<f64>,
    native: &ImpTrace,
    tolerance_factor: f64,
) -> TransferRow {
    let density = imp::density(mask);
    let paired = nearest_density(native, density).map(|i| &native.records[i]);
    let baseline = native.full_model_loss();
    let winning = match (loss, baseline) {
        (Some(l), Some(b)) => l <= tolerance_factor * b,
        _ => false,
    };
    TransferRow {
        source_iter,
        density,
        transferred_loss: loss,
        native_density: paired.map(|r| r.density),
        native_loss: paired.map(|r| r.final_loss),
        winning,
    }
}

/// For every source round: transfer its mask, rewind and train the target,
/// and pair the result with the native IMP record of nearest density.
/// Training failures leave `transferred_loss` empty instead of aborting.
pub fn transfer_experiment(
    source: &ImpTrace,
    target_task: &TaskBinding,
    target_init: &ParamState,
    plan: &MaskTransferPlan,
    train: &TrainConfig,
    native: &ImpTrace,
    tolerance_factor: f64,
) -> Result<Vec<TransferRow>> {
    if source.masks.len() != source.records.len() || source.masks.is_empty() {
        return Err(Error::InvalidArgument("source trace must retain its masks"));
    }
    if target_init.spec() != &plan.target {
        return Err(Error::ShapeMismatch {
            what: "target network",
            expected: plan.target.param_count(),
            found: target_init.len(),
        });
    }
    source
        .records
        .iter()
        .zip(&source.masks)
        .map(|(record, mask)| {
            let mapped = plan.apply(mask)?;
            let loss = transferred_loss(target_init, &mapped, target_task, train).ok();
            Ok(comparison_row(
                record.iteration,
                &mapped,
                loss,
                native,
                tolerance_factor,
            ))
        })
        .collect()
}
