//! The iterative magnitude pruning loop: train, prune the smallest fraction
//! of surviving weights, rewind survivors to their initial values, repeat.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::nn::{self, Mask, ParamState, TrainConfig};
use crate::rg;
use crate::tasks::TaskBinding;
use crate::{Error, Result};

/// Which weights a pruning step may remove.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PruneScope {
    #[default]
    FullModel,
    SingleLayer(usize),
}

impl PruneScope {
    fn contains(self, layer: usize) -> bool {
        match self {
            PruneScope::FullModel => true,
            PruneScope::SingleLayer(l) => l == layer,
        }
    }

    fn validate(self, num_layers: usize) -> Result<()> {
        match self {
            PruneScope::SingleLayer(l) if l >= num_layers => {
                Err(Error::InvalidConfig("prune scope layer out of range"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImpConfig {
    /// Fraction of surviving in-scope weights removed per round, in (0, 1).
    pub prune_fraction: f64,
    /// Number of prune/rewind/retrain rounds after the initial training.
    pub iterations: usize,
    pub scope: PruneScope,
    pub train: TrainConfig,
    /// Seed used to draw the initialization; echoed into the trace.
    pub seed: u64,
}

impl ImpConfig {
    pub fn validate(&self, init: &ParamState) -> Result<()> {
        if !(self.prune_fraction > 0.0 && self.prune_fraction < 1.0) {
            return Err(Error::InvalidConfig("prune fraction must lie in (0, 1)"));
        }
        self.scope.validate(init.num_layers())?;
        if self.iterations >= init.weight_count() {
            return Err(Error::InvalidConfig(
                "iteration count must be below the weight count",
            ));
        }
        self.train.validate()
    }
}

/// One IMP round: the mask used for training and what came out of it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImpRecord {
    pub iteration: usize,
    /// Surviving fraction of in-scope weights.
    pub density: f64,
    pub final_loss: f64,
    /// Per-layer share of surviving weight magnitude after training.
    pub magnitude_fractions: Vec<f64>,
    pub surviving: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpTrace {
    pub records: Vec<ImpRecord>,
    /// Mask trained in each round; empty when the trace was loaded without
    /// masks.
    pub masks: Vec<Mask>,
    pub init_fingerprint: u64,
    pub config: ImpConfig,
}

impl ImpTrace {
    pub fn densities(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.density).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.final_loss).collect()
    }

    pub fn full_model_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.final_loss)
    }

    pub fn num_layers(&self) -> usize {
        self.records
            .first()
            .map_or(0, |r| r.magnitude_fractions.len())
    }
}

/// Fraction of weights still unpruned. Biases are not counted.
pub fn density(mask: &Mask) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.surviving() as f64 / mask.len() as f64
}

/// Density restricted to the weights `scope` can prune.
pub fn scope_density(mask: &Mask, scope: PruneScope) -> f64 {
    match scope {
        PruneScope::FullModel => density(mask),
        PruneScope::SingleLayer(l) => {
            let n = mask.layer_bits(l).len();
            if n == 0 {
                0.0
            } else {
                mask.surviving_in_layer(l) as f64 / n as f64
            }
        }
    }
}

/// Rounds of pruning at fraction `x` needed to bring density to `target` or
/// below under exact geometric decay: `⌈ln target / ln(1 − x)⌉`.
pub fn iterations_to_density(x: f64, target: f64) -> Result<usize> {
    if !(x > 0.0 && x < 1.0) || !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidArgument("need x ∈ (0,1) and target ∈ (0,1]"));
    }
    let n = libm::ceil(libm::log(target) / libm::log(1.0 - x) - 1e-12);
    Ok(n.max(0.0) as usize)
}

/// Number of weights one step removes from `surviving` in-scope weights.
pub fn prune_count(surviving: usize, x: f64) -> usize {
    let c = libm::floor(x * surviving as f64) as usize;
    if c == 0 && surviving > 1 {
        1
    } else {
        c
    }
}

/// Clears the bits of the `⌊x·s⌋` smallest-magnitude surviving in-scope
/// weights (at least one when `s > 1`). Ties go to the lower index first.
pub fn prune_step(trained: &ParamState, mask: &Mask, x: f64, scope: PruneScope) -> Result<Mask> {
    mask.check_against(trained)?;
    scope.validate(trained.num_layers())?;
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::InvalidArgument("prune fraction must lie in (0, 1)"));
    }
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for l in 0..trained.num_layers() {
        if !scope.contains(l) {
            continue;
        }
        let base = mask.layer_offset(l);
        for (j, (&w, &bit)) in trained
            .weights(l)
            .iter()
            .zip(mask.layer_bits(l))
            .enumerate()
        {
            if bit {
                candidates.push((libm::fabs(w), base + j));
            }
        }
    }
    let s = candidates.len();
    if s < 2 {
        let layer = match scope {
            PruneScope::SingleLayer(l) => l,
            PruneScope::FullModel => 0,
        };
        return Err(Error::LayerCollapse { layer });
    }
    let count = prune_count(s, x);
    // Candidates are already in index order; a stable sort keeps ties that way.
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut bits = mask.bits().to_vec();
    for &(_, idx) in &candidates[..count] {
        bits[idx] = false;
    }
    let next = Mask::from_bits(mask.shapes().to_vec(), bits)?;
    if let Some(layer) = (0..next.num_layers()).find(|&l| next.surviving_in_layer(l) == 0) {
        return Err(Error::LayerCollapse { layer });
    }
    Ok(next)
}

/// Survivors take their initial values, pruned weights become zero, biases
/// are reset to their initial values.
pub fn rewind(init: &ParamState, mask: &Mask) -> Result<ParamState> {
    init.masked(mask)
}

/// Runs `config.iterations` rounds of IMP from `init`, producing
/// `iterations + 1` records. Round 0 trains the unpruned network.
pub fn run_imp(init: &ParamState, task: &TaskBinding, config: &ImpConfig) -> Result<ImpTrace> {
    config.validate(init)?;
    let wrap = |iteration: usize| {
        move |e: Error| Error::ImpRound {
            iteration,
            source: Box::new(e),
        }
    };
    let mut mask = Mask::ones(init.spec());
    let mut records = Vec::with_capacity(config.iterations + 1);
    let mut masks = Vec::with_capacity(config.iterations + 1);
    for iteration in 0..=config.iterations {
        let start = rewind(init, &mask).map_err(wrap(iteration))?;
        let outcome = nn::train(&start, &mask, task, &config.train).map_err(wrap(iteration))?;
        let magnitude_fractions =
            rg::magnitude_fractions(&outcome.params, &mask).map_err(wrap(iteration))?;
        records.push(ImpRecord {
            iteration,
            density: scope_density(&mask, config.scope),
            final_loss: outcome.final_loss,
            magnitude_fractions,
            surviving: (0..mask.num_layers())
                .map(|l| mask.surviving_in_layer(l))
                .collect(),
        });
        let next = if iteration < config.iterations {
            Some(
                prune_step(&outcome.params, &mask, config.prune_fraction, config.scope)
                    .map_err(wrap(iteration))?,
            )
        } else {
            None
        };
        masks.push(mask);
        match next {
            Some(m) => mask = m,
            None => break,
        }
    }
    Ok(ImpTrace {
        records,
        masks,
        init_fingerprint: init.fingerprint(),
        config: *config,
    })
}

/// Rounds whose retrained loss is at most `tolerance_factor` times the
/// full-model loss, as `(iteration, density)`.
pub fn identify_winning_tickets(
    trace: &ImpTrace,
    full_model_loss: f64,
    tolerance_factor: f64,
) -> Result<Vec<(usize, f64)>> {
    if trace.records.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if !(tolerance_factor >= 1.0) {
        return Err(Error::InvalidArgument("tolerance factor must be ≥ 1"));
    }
    let threshold = tolerance_factor * full_model_loss;
    Ok(trace
        .records
        .iter()
        .filter(|r| r.final_loss <= threshold)
        .map(|r| (r.iteration, r.density))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, Activation, NetworkSpec};
    use alloc::vec;

    fn toy_params(weights: &[f64]) -> (ParamState, Mask) {
        // One layer 1 → n with no hidden layers.
        let spec = NetworkSpec::new(1, vec![], weights.len(), Activation::Tanh).unwrap();
        let mut flat = weights.to_vec();
        flat.extend(core::iter::repeat(0.0).take(weights.len()));
        let p = ParamState::from_flat(&spec, flat).unwrap();
        let m = Mask::ones(&spec);
        (p, m)
    }

    #[test]
    fn prunes_ten_percent_of_hundred() {
        let w: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let (p, m) = toy_params(&w);
        let next = prune_step(&p, &m, 0.10, PruneScope::FullModel).unwrap();
        assert_eq!(next.surviving(), 90);
        assert!(next.bits()[..10].iter().all(|&b| !b));
    }

    #[test]
    fn prunes_smallest_magnitudes() {
        let w = [0.5, -0.1, 0.9, 0.2, -0.7, 1.0, 0.3, -0.8, 0.6, 0.4];
        let (p, m) = toy_params(&w);
        let next = prune_step(&p, &m, 0.2, PruneScope::FullModel).unwrap();
        let cleared: Vec<usize> = (0..10).filter(|&i| !next.bits()[i]).collect();
        assert_eq!(cleared, vec![1, 3]);
    }

    #[test]
    fn minimum_one_weight_pruned() {
        assert_eq!(prune_count(50, 0.01), 1);
        assert_eq!(prune_count(1, 0.5), 0);
        assert_eq!(prune_count(2500, 0.01), 25);
    }

    #[test]
    fn collapse_is_reported() {
        let (p, m) = toy_params(&[0.3]);
        assert_eq!(
            prune_step(&p, &m, 0.5, PruneScope::FullModel),
            Err(Error::LayerCollapse { layer: 0 })
        );
    }

    #[test]
    fn single_layer_scope_leaves_others_untouched() {
        let spec = NetworkSpec::new(1, vec![6, 6], 2, Activation::Tanh).unwrap();
        let p = init_network(&spec, 1).unwrap();
        let m = Mask::ones(&spec);
        let next = prune_step(&p, &m, 0.25, PruneScope::SingleLayer(1)).unwrap();
        assert_eq!(next.surviving_in_layer(0), 6);
        assert_eq!(next.surviving_in_layer(1), 36 - 9);
        assert_eq!(next.surviving_in_layer(2), 12);
        assert!(prune_step(&p, &m, 0.25, PruneScope::SingleLayer(3)).is_err());
    }

    #[test]
    fn rewind_cases() {
        let spec = NetworkSpec::new(1, vec![4], 2, Activation::Tanh).unwrap();
        let init = init_network(&spec, 8).unwrap();
        assert_eq!(rewind(&init, &Mask::ones(&spec)).unwrap(), init);
        let zero = rewind(&init, &Mask::zeros(&spec)).unwrap();
        for l in 0..2 {
            assert!(zero.weights(l).iter().all(|&w| w == 0.0));
            assert_eq!(zero.bias(l), init.bias(l));
        }
    }

    #[test]
    fn density_values() {
        let spec = NetworkSpec::hnn(2);
        assert_eq!(density(&Mask::ones(&spec)), 1.0);
        assert_eq!(density(&Mask::zeros(&spec)), 0.0);
        let mut bits = vec![true; 2650];
        bits[..265].iter_mut().for_each(|b| *b = false);
        let m = Mask::from_bits(spec.layer_shapes(), bits).unwrap();
        assert!((density(&m) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn closed_form_iteration_counts() {
        assert_eq!(iterations_to_density(0.01, 0.1).unwrap(), 230);
        assert_eq!(iterations_to_density(0.05, 0.1).unwrap(), 45);
        assert_eq!(iterations_to_density(0.10, 0.1).unwrap(), 22);
        assert!(0.9f64.powi(22) <= 0.1 && 0.9f64.powi(21) > 0.1);
    }

    fn trace_with_losses(losses: &[f64]) -> ImpTrace {
        ImpTrace {
            records: losses
                .iter()
                .enumerate()
                .map(|(i, &l)| ImpRecord {
                    iteration: i,
                    density: 0.9f64.powi(i as i32),
                    final_loss: l,
                    magnitude_fractions: vec![1.0],
                    surviving: vec![1],
                })
                .collect(),
            masks: Vec::new(),
            init_fingerprint: 0,
            config: ImpConfig {
                prune_fraction: 0.1,
                iterations: losses.len() - 1,
                scope: PruneScope::FullModel,
                train: TrainConfig::new(1, 1e-3, 2),
                seed: 0,
            },
        }
    }

    #[test]
    fn winning_ticket_selection() {
        let t = trace_with_losses(&[1.0, 0.5, 0.8]);
        assert_eq!(identify_winning_tickets(&t, 1.0, 1.0).unwrap().len(), 3);
        let t = trace_with_losses(&[10.0, 10.0]);
        assert!(identify_winning_tickets(&t, 1.0, 1.0).unwrap().is_empty());
        assert!(identify_winning_tickets(&t, 1.0, 0.5).is_err());
        let mut empty = t.clone();
        empty.records.clear();
        assert_eq!(
            identify_winning_tickets(&empty, 1.0, 1.0),
            Err(Error::EmptyTrace)
        );
    }
}
