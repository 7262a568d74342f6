//! Ensemble statistics over widget populations and the executable
//! collision-lifting reduction.
//!
//! The reduction turns any collision on the composed function into a
//! collision on the gate: equal seeds make the original inputs collide on
//! the first gate; distinct seeds make the two seed-plus-output strings
//! collide on the second. A truncated toy gate makes collisions findable
//! by birthday search so the reduction can be exercised end to end.

use crate::gate::{gate, Digest256, GateSpec};
use crate::pipeline::{hashcore_traced, widget_stage, HashCoreConfig, PipelineError};
use crate::profile::{perturb, COUNT_CATEGORIES};
use crate::seedmap::{split_seed, Prng};
use crate::widgetgen::generate_widget;
use crate::widgetvm::execute;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

pub const HISTOGRAM_BINS: usize = 20;

/// Summary statistics for one metric over the ensemble.
#[derive(Clone, Debug, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub histogram_edges: Vec<f64>,
    pub histogram_counts: Vec<u64>,
}

impl MetricSummary {
    fn from_samples(samples: &[f64]) -> MetricSummary {
        assert!(!samples.is_empty());
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let span = if max > min { max - min } else { 1.0 };
        let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
            .map(|i| min + span * i as f64 / HISTOGRAM_BINS as f64)
            .collect();
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &x in samples {
            let mut bin = ((x - min) / span * HISTOGRAM_BINS as f64) as usize;
            if bin >= HISTOGRAM_BINS {
                bin = HISTOGRAM_BINS - 1;
            }
            counts[bin] += 1;
        }
        MetricSummary {
            mean,
            stddev: var.sqrt(),
            min,
            max,
            histogram_edges: edges,
            histogram_counts: counts,
        }
    }
}

/// Aggregate statistics over a population of widgets.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleReport {
    pub n: usize,
    pub profile_name: String,
    pub output_len: MetricSummary,
    pub branch_fraction: MetricSummary,
    pub predictor_hit_rate: MetricSummary,
    /// Dynamic mix fraction per category: ialu, imul, falu, load, store.
    pub mix_fractions: BTreeMap<String, MetricSummary>,
    /// Mean perturbed target fraction per category across the ensemble.
    pub target_fractions: BTreeMap<String, f64>,
    /// The profile's branch fraction before noise.
    pub base_branch_fraction: f64,
}

impl EnsembleReport {
    /// Aligned-column text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "ensemble report: {} samples, profile '{}'", self.n, self.profile_name).unwrap();
        writeln!(
            out,
            "{:<22} {:>12} {:>12} {:>12} {:>12}",
            "metric", "mean", "stddev", "min", "max"
        )
        .unwrap();
        let mut row = |name: &str, s: &MetricSummary| {
            writeln!(
                out,
                "{:<22} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                name, s.mean, s.stddev, s.min, s.max
            )
            .unwrap();
        };
        row("output_len", &self.output_len);
        row("branch_fraction", &self.branch_fraction);
        row("predictor_hit_rate", &self.predictor_hit_rate);
        for c in COUNT_CATEGORIES {
            row(
                &format!("mix_{}", c.name()),
                &self.mix_fractions[c.name()],
            );
        }
        writeln!(out, "\ntarget fractions (mean perturbed):").unwrap();
        for c in COUNT_CATEGORIES {
            writeln!(out, "  {:<8} {:.6}", c.name(), self.target_fractions[c.name()]).unwrap();
        }
        writeln!(out, "  base branch fraction {:.6}", self.base_branch_fraction).unwrap();
        out
    }
}

/// Generate and execute `n` seed-derived widgets and aggregate their
/// metrics. Equal `(cfg, n, trial_seed)` give bit-identical reports.
pub fn ensemble(
    cfg: &HashCoreConfig,
    n: usize,
    trial_seed: u64,
) -> Result<EnsembleReport, PipelineError> {
    assert!(n >= 1, "ensemble needs at least one sample");
    let mut rng = Prng::new(trial_seed);

    let mut output_len = Vec::with_capacity(n);
    let mut branch_fraction = Vec::with_capacity(n);
    let mut hit_rate = Vec::with_capacity(n);
    let mut mix: [Vec<f64>; 5] = Default::default();
    let mut target: [f64; 5] = [0.0; 5];

    for _ in 0..n {
        let mut seed_bytes = [0u8; 32];
        rng.fill_bytes(&mut seed_bytes);
        let fields = split_seed(&Digest256(seed_bytes));
        let pp = perturb(&cfg.profile, &fields)?;
        let w = generate_widget(&pp, fields.bbv_seed, fields.mem_seed)?;
        let out = execute(&w)?;
        let m = &out.metrics;

        output_len.push(out.output.len() as f64);
        let total = m.total_dynamic() as f64;
        branch_fraction.push(m.dyn_counts[5] as f64 / total);
        hit_rate.push(m.predictor_hit_rate());
        let iter_total = pp.iteration_total() as f64;
        for (i, c) in COUNT_CATEGORIES.iter().enumerate() {
            mix[i].push(m.dyn_counts[i] as f64 / total);
            target[i] += pp.counts.get(*c) as f64 / iter_total;
        }
    }

    let mut mix_fractions = BTreeMap::new();
    let mut target_fractions = BTreeMap::new();
    for (i, c) in COUNT_CATEGORIES.iter().enumerate() {
        mix_fractions.insert(c.name().to_string(), MetricSummary::from_samples(&mix[i]));
        target_fractions.insert(c.name().to_string(), target[i] / n as f64);
    }

    let base_total = cfg.profile.base_counts.total() + cfg.profile.branch_count;
    Ok(EnsembleReport {
        n,
        profile_name: cfg.profile.name.clone(),
        output_len: MetricSummary::from_samples(&output_len),
        branch_fraction: MetricSummary::from_samples(&branch_fraction),
        predictor_hit_rate: MetricSummary::from_samples(&hit_rate),
        mix_fractions,
        target_fractions,
        base_branch_fraction: cfg.profile.branch_count as f64 / base_total as f64,
    })
}

/// A pair of distinct inputs mapping to equal digests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollisionPair {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
    pub level: CollisionLevel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollisionLevel {
    /// Collision on the composed function.
    OnH,
    /// Collision on the gate.
    OnG,
}

/// Lift a collision on the composed function to a collision on the gate.
///
/// `widget_fn` maps a hash seed to the widget output stream. Returns
/// `None` when the given pair is not a collision on the composed function;
/// no random fallback pair is emitted.
pub fn lift_collision<F>(
    gate_spec: GateSpec,
    mut widget_fn: F,
    x0: &[u8],
    x1: &[u8],
) -> Option<CollisionPair>
where
    F: FnMut(&Digest256) -> Vec<u8>,
{
    if x0 == x1 {
        return None;
    }
    let s0 = gate(gate_spec, x0);
    let s1 = gate(gate_spec, x1);
    let compose = |s: &Digest256, wout: &[u8]| {
        let mut v = s.as_bytes().to_vec();
        v.extend_from_slice(wout);
        v
    };
    let h0 = gate(gate_spec, &compose(&s0, &widget_fn(&s0)));
    let h1 = gate(gate_spec, &compose(&s1, &widget_fn(&s1)));
    if h0 != h1 {
        return None;
    }
    if s0 == s1 {
        // the first gate already collided on the original inputs
        Some(CollisionPair {
            a: x0.to_vec(),
            b: x1.to_vec(),
            level: CollisionLevel::OnG,
        })
    } else {
        // the second gate collided on the two seed-plus-output strings
        Some(CollisionPair {
            a: compose(&s0, &widget_fn(&s0)),
            b: compose(&s1, &widget_fn(&s1)),
            level: CollisionLevel::OnG,
        })
    }
}

/// Birthday-search for a collision on the composed function under a
/// truncated gate. Inputs are sequential counters from `start`;
/// evaluation order is part of the contract.
pub fn find_toy_collision(
    cfg: &HashCoreConfig,
    start: u64,
    budget: u64,
) -> Result<Option<CollisionPair>, PipelineError> {
    let GateSpec::Truncated { bits } = cfg.gate_spec else {
        panic!("toy collision search requires a truncated gate");
    };
    assert!(bits <= 32, "truncation above 32 bits is not tractable");

    let mut seen: HashMap<Digest256, u64> = HashMap::new();
    for i in start..start.saturating_add(budget) {
        let input = i.to_le_bytes().to_vec();
        let (digest, _) = hashcore_traced(cfg, &input)?;
        if let Some(&prev) = seen.get(&digest) {
            return Ok(Some(CollisionPair {
                a: prev.to_le_bytes().to_vec(),
                b: input,
                level: CollisionLevel::OnH,
            }));
        }
        seen.insert(digest, i);
    }
    Ok(None)
}

/// Verify that a pair really collides on the gate.
pub fn check_gate_collision(gate_spec: GateSpec, pair: &CollisionPair) -> bool {
    pair.a != pair.b && gate(gate_spec, &pair.a) == gate(gate_spec, &pair.b)
}

/// Single-bit avalanche statistics: flip one random input bit per trial
/// and count differing digest bits.
pub fn avalanche(
    cfg: &HashCoreConfig,
    n_trials: usize,
    trial_seed: u64,
) -> Result<(f64, f64), PipelineError> {
    assert!(n_trials >= 1);
    let mut rng = Prng::new(trial_seed);
    let mut flips = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let mut input = [0u8; 32];
        rng.fill_bytes(&mut input);
        let bit = rng.next_below(256) as usize;
        let mut flipped = input;
        flipped[bit / 8] ^= 1 << (bit % 8);

        let d0 = hashcore_traced(cfg, &input)?.0;
        let d1 = hashcore_traced(cfg, &flipped)?.0;
        let diff: u32 = d0
            .as_bytes()
            .iter()
            .zip(d1.as_bytes())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum();
        flips.push(diff as f64);
    }
    let n = flips.len() as f64;
    let mean = flips.iter().sum::<f64>() / n;
    let var = flips.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Convenience wrapper: the widget stage of a config as a seed-to-output
/// closure for [`lift_collision`].
pub fn widget_fn_of(cfg: &HashCoreConfig) -> impl FnMut(&Digest256) -> Vec<u8> + '_ {
    move |seed| widget_stage(cfg, seed).expect("widget stage failed on a gate output")
}
