//! Target CPU performance profiles and seed-derived perturbation.
//!
//! A `PerformanceProfile` describes the instruction mix, branch behavior,
//! memory access pattern, and dependency structure a generated program
//! should exhibit. Applying seed noise turns one profile into a family of
//! program specifications: counts only ever grow (noise is strictly
//! non-negative), the branch taken-rate shifts symmetrically, and the
//! dynamic instruction budget scales with the mean count noise.

use crate::seedmap::SeedFields;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Instruction count categories, excluding branches.
pub const COUNT_CATEGORIES: [Category; 5] = [
    Category::Ialu,
    Category::Imul,
    Category::Falu,
    Category::Load,
    Category::Store,
];

/// Instruction category, matching the seed-field noise channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Ialu,
    Imul,
    Falu,
    Load,
    Store,
    Branch,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Ialu => "ialu",
            Category::Imul => "imul",
            Category::Falu => "falu",
            Category::Load => "load",
            Category::Store => "store",
            Category::Branch => "branch",
        }
    }
}

/// Per-category instruction counts for one loop iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryCounts {
    pub ialu: u64,
    pub imul: u64,
    pub falu: u64,
    pub load: u64,
    pub store: u64,
}

impl CategoryCounts {
    pub fn get(&self, c: Category) -> u64 {
        match c {
            Category::Ialu => self.ialu,
            Category::Imul => self.imul,
            Category::Falu => self.falu,
            Category::Load => self.load,
            Category::Store => self.store,
            Category::Branch => panic!("branch count is tracked separately"),
        }
    }

    pub fn set(&mut self, c: Category, v: u64) {
        match c {
            Category::Ialu => self.ialu = v,
            Category::Imul => self.imul = v,
            Category::Falu => self.falu = v,
            Category::Load => self.load = v,
            Category::Store => self.store = v,
            Category::Branch => panic!("branch count is tracked separately"),
        }
    }

    pub fn total(&self) -> u64 {
        self.ialu + self.imul + self.falu + self.load + self.store
    }
}

/// Non-negative weights over memory stride classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrideWeights {
    /// sequential, 8-byte stride
    pub seq: u32,
    /// cache-line, 64-byte stride
    pub line: u32,
    /// page, 4096-byte stride
    pub page: u32,
    /// unconstrained (8-byte aligned)
    pub random: u32,
}

impl StrideWeights {
    pub fn total(&self) -> u64 {
        self.seq as u64 + self.line as u64 + self.page as u64 + self.random as u64
    }
}

/// Target performance profile before seed noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceProfile {
    pub name: String,
    pub base_counts: CategoryCounts,
    /// Conditional branches per iteration, one per basic block.
    pub branch_count: u64,
    pub branch_taken_rate: f64,
    pub block_count: u64,
    /// Bytes, power of two, at least 4096.
    pub memory_footprint: u64,
    pub stride_weights: StrideWeights,
    /// Mean producer-to-consumer distance in instructions, at least 1.
    pub dep_distance_mean: f64,
    /// Total dynamic instructions before noise scaling.
    pub base_instruction_budget: u64,
}

/// Count-noise scale: perturbed counts inflate by at most 25%.
pub const NOISE_ALPHA_NUM: u64 = 1;
pub const NOISE_ALPHA_DEN: u64 = 4;
/// Taken-rate shift width: the branch field moves the rate by up to ±0.05.
pub const BRANCH_BETA: f64 = 0.10;

/// The built-in integer-heavy profile used as the production default.
pub fn default_profile() -> PerformanceProfile {
    PerformanceProfile {
        name: "default-int".to_string(),
        base_counts: CategoryCounts {
            ialu: 46,
            imul: 4,
            falu: 2,
            load: 22,
            store: 10,
        },
        branch_count: 16,
        branch_taken_rate: 0.60,
        block_count: 16,
        memory_footprint: 1 << 20,
        stride_weights: StrideWeights {
            seq: 4,
            line: 3,
            page: 1,
            random: 2,
        },
        dep_distance_mean: 4.0,
        base_instruction_budget: 400_000,
    }
}

/// One violated profile invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid profile: {}", .0.iter().map(|v| v.0.as_str()).collect::<Vec<_>>().join("; "))]
pub struct ProfileError(pub Vec<Violation>);

/// Check every profile invariant, returning all violations.
pub fn validate_profile(p: &PerformanceProfile) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if p.branch_count != p.block_count {
        v.push(Violation(format!(
            "branch_count ({}) must equal block_count ({})",
            p.branch_count, p.block_count
        )));
    }
    if p.block_count < 2 {
        v.push(Violation(format!("block_count must be >= 2, got {}", p.block_count)));
    }
    if p.base_counts.total() + p.branch_count < p.block_count {
        v.push(Violation(
            "total instructions per iteration must be at least block_count".to_string(),
        ));
    }
    if p.memory_footprint < 4096 || !p.memory_footprint.is_power_of_two() {
        v.push(Violation(
            "memory_footprint must be a power of two >= 4096".to_string(),
        ));
    } else if p.memory_footprint > 1 << 31 {
        // address masks are packed into 32 bits of the instruction immediate
        v.push(Violation("memory_footprint must be <= 2^31".to_string()));
    }
    if p.stride_weights.total() == 0 {
        v.push(Violation("stride_weights must not all be zero".to_string()));
    }
    if !(p.branch_taken_rate > 0.0 && p.branch_taken_rate < 1.0) {
        v.push(Violation(format!(
            "branch_taken_rate must be in (0, 1), got {}",
            p.branch_taken_rate
        )));
    }
    if !(p.dep_distance_mean >= 1.0) {
        v.push(Violation(format!(
            "dep_distance_mean must be >= 1, got {}",
            p.dep_distance_mean
        )));
    }
    if p.base_instruction_budget == 0 {
        v.push(Violation("base_instruction_budget must be positive".to_string()));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Profile after seed noise has been applied.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedProfile {
    pub base: PerformanceProfile,
    /// Perturbed per-category counts; never below the base counts.
    pub counts: CategoryCounts,
    /// Perturbed taken-rate, clamped to [0.05, 0.95].
    pub taken_rate: f64,
    /// Perturbed total dynamic instruction budget.
    pub instruction_budget: u64,
    pub origin_fields: SeedFields,
}

impl PerturbedProfile {
    /// Static instructions per iteration, branches included.
    pub fn iteration_total(&self) -> u64 {
        self.counts.total() + self.base.branch_count
    }
}

/// Apply seed noise to a valid profile.
///
/// Count noise is `floor(base * noise / 2^34)` per category, so counts
/// inflate by 0-25% and never shrink. The instruction budget scales by the
/// mean of the five noise fields over the same band. All arithmetic is
/// integer-exact so every platform agrees.
pub fn perturb(p: &PerformanceProfile, f: &SeedFields) -> Result<PerturbedProfile, ProfileError> {
    validate_profile(p).map_err(ProfileError)?;

    let noise = f.count_noise();
    let mut counts = p.base_counts;
    for (i, c) in COUNT_CATEGORIES.iter().enumerate() {
        let base = p.base_counts.get(*c);
        // floor(base * alpha * n / 2^32) with alpha = 1/4
        let bump = ((base as u128 * noise[i] as u128 * NOISE_ALPHA_NUM as u128)
            / (NOISE_ALPHA_DEN as u128 * (1u128 << 32))) as u64;
        counts.set(*c, base + bump);
    }

    let shift = BRANCH_BETA * (f.branch_field as f64 / 4294967296.0 - 0.5);
    let taken_rate = (p.branch_taken_rate + shift).clamp(0.05, 0.95);

    let noise_sum: u128 = noise.iter().map(|&n| n as u128).sum();
    // floor(D_base * (1 + alpha * mean(n)/2^32)) = D_base + floor(D_base * sum(n) / (5 * 4 * 2^32))
    let budget_bump = ((p.base_instruction_budget as u128 * noise_sum * NOISE_ALPHA_NUM as u128)
        / (5 * NOISE_ALPHA_DEN as u128 * (1u128 << 32))) as u64;

    Ok(PerturbedProfile {
        base: p.clone(),
        counts,
        taken_rate,
        instruction_budget: p.base_instruction_budget + budget_bump,
        origin_fields: *f,
    })
}

/// Parse a profile document. Unknown keys are rejected.
pub fn parse_profile(text: &str) -> Result<PerformanceProfile, ProfileError> {
    let p: PerformanceProfile = serde_json::from_str(text)
        .map_err(|e| ProfileError(vec![Violation(format!("parse error: {e}"))]))?;
    validate_profile(&p).map_err(ProfileError)?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::Digest256;
    use crate::seedmap::{split_seed, Prng};

    fn zero_fields() -> SeedFields {
        split_seed(&Digest256([0u8; 32]))
    }

    fn fields_all(v: u8) -> SeedFields {
        split_seed(&Digest256([v; 32]))
    }

    #[test]
    fn default_profile_totals() {
        let p = default_profile();
        assert_eq!(p.base_counts.total(), 84);
        assert_eq!(p.base_counts.total() + p.branch_count, 100);
        assert!((p.branch_count as f64 / 100.0 - 0.16).abs() < 1e-12);
        assert!(validate_profile(&p).is_ok());
    }

    #[test]
    fn validate_catches_bad_footprint() {
        let mut p = default_profile();
        p.memory_footprint = 3000;
        let v = validate_profile(&p).unwrap_err();
        assert!(v.iter().any(|x| x.0.contains("power of two")));
    }

    #[test]
    fn validate_catches_closed_taken_rate() {
        let mut p = default_profile();
        p.branch_taken_rate = 1.0;
        assert!(validate_profile(&p).is_err());
        p.branch_taken_rate = 0.0;
        assert!(validate_profile(&p).is_err());
    }

    #[test]
    fn perturb_zero_noise() {
        let p = default_profile();
        let pp = perturb(&p, &zero_fields()).unwrap();
        assert_eq!(pp.counts, p.base_counts);
        assert_eq!(pp.instruction_budget, p.base_instruction_budget);
        // branch field 0 shifts the rate down by beta/2
        assert!((pp.taken_rate - 0.55).abs() < 1e-12);
    }

    #[test]
    fn perturb_max_noise() {
        let p = default_profile();
        let pp = perturb(&p, &fields_all(0xFF)).unwrap();
        // 46 + floor(46 * (2^32-1) / 2^34) = 57
        assert_eq!(pp.counts.ialu, 57);
        assert_eq!(pp.counts.imul, 4); // floor(4 * ~0.25) = 0 bump at this magnitude: 4*(2^32-1)/2^34 < 1
        // budget: 400000 + floor(400000 * 5*(2^32-1) / (20 * 2^32)) = 499999
        assert_eq!(pp.instruction_budget, 499_999);
        assert!((pp.taken_rate - 0.65).abs() < 1e-9);
    }

    #[test]
    fn perturb_never_shrinks_counts() {
        let p = default_profile();
        let mut rng = Prng::new(0xBEEF);
        for _ in 0..10_000 {
            let mut b = [0u8; 32];
            rng.fill_bytes(&mut b);
            let pp = perturb(&p, &split_seed(&Digest256(b))).unwrap();
            for c in COUNT_CATEGORIES {
                assert!(pp.counts.get(c) >= p.base_counts.get(c));
            }
            assert!(pp.instruction_budget >= p.base_instruction_budget);
            assert!(pp.taken_rate >= 0.05 && pp.taken_rate <= 0.95);
        }
    }

    #[test]
    fn branch_fraction_never_rises() {
        let p = default_profile();
        let base_frac = p.branch_count as f64 / (p.base_counts.total() + p.branch_count) as f64;
        let mut rng = Prng::new(7);
        for _ in 0..1000 {
            let mut b = [0u8; 32];
            rng.fill_bytes(&mut b);
            let pp = perturb(&p, &split_seed(&Digest256(b))).unwrap();
            let frac = p.branch_count as f64 / pp.iteration_total() as f64;
            assert!(frac <= base_frac + 1e-12);
        }
    }

    #[test]
    fn perturb_deterministic() {
        let p = default_profile();
        let f = fields_all(0xA5);
        assert_eq!(perturb(&p, &f).unwrap(), perturb(&p, &f).unwrap());
    }

    #[test]
    fn perturb_rejects_invalid_profile() {
        let mut p = default_profile();
        p.memory_footprint = 5;
        assert!(perturb(&p, &zero_fields()).is_err());
    }

    #[test]
    fn profile_json_round_trip() {
        let p = default_profile();
        let text = serde_json::to_string_pretty(&p).unwrap();
        assert_eq!(parse_profile(&text).unwrap(), p);
    }

    #[test]
    fn profile_json_rejects_unknown_keys() {
        let mut v: serde_json::Value =
            serde_json::to_value(default_profile()).unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("bogus".to_string(), 1.into());
        let text = serde_json::to_string(&v).unwrap();
        assert!(parse_profile(&text).is_err());
    }
}
