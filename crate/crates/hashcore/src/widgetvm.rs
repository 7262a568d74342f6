//! Deterministic widget execution.
//!
//! Semantics are bit-exact across platforms: integer ops wrap modulo 2^64,
//! FP ops are IEEE-754 binary64 round-to-nearest-even with NaN/Inf operands
//! sanitized to 1.0 before each op, and memory moves are 8-octet
//! little-endian at mask-aligned addresses. Every `snapshot_interval`
//! dynamic instructions the full register file (16 int + 8 fp, 192 octets)
//! is appended to the output stream. Execution halts at the first block
//! boundary at or past the instruction budget, so every widget is total.

use crate::gate::{gate, Digest256, GateSpec};
use crate::profile::Category;
use crate::seedmap::Prng;
use crate::widgetgen::{static_validate, Instruction, Opcode, WidgetProgram, FP_REGS, INT_REGS};
use std::sync::atomic::{AtomicU64, Ordering};

/// Entries in the modeled branch-predictor table.
pub const PREDICTOR_ENTRIES: usize = 1024;
/// Octets per register snapshot: 16 int + 8 fp registers, 8 octets each.
pub const SNAPSHOT_BYTES: usize = (INT_REGS as usize + FP_REGS as usize) * 8;

static EXECUTE_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of widget executions so far in this process. Test instrumentation.
#[doc(hidden)]
pub fn execute_call_count() -> u64 {
    EXECUTE_CALLS.load(Ordering::Relaxed)
}

/// Modeled dynamic performance metrics. No semantic effect on the output.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DynamicMetrics {
    /// Dynamic counts indexed as [ialu, imul, falu, load, store, branch].
    pub dyn_counts: [u64; 6],
    pub branches_taken: u64,
    pub predictor_hits: u64,
    pub predictor_lookups: u64,
    pub snapshots_emitted: u64,
    pub blocks_covered: u64,
    pub mem_reads: u64,
    pub mem_writes: u64,
}

impl DynamicMetrics {
    pub fn total_dynamic(&self) -> u64 {
        self.dyn_counts.iter().sum()
    }

    pub fn dyn_count(&self, c: Category) -> u64 {
        let i = match c {
            Category::Ialu => 0,
            Category::Imul => 1,
            Category::Falu => 2,
            Category::Load => 3,
            Category::Store => 4,
            Category::Branch => 5,
        };
        self.dyn_counts[i]
    }

    pub fn taken_fraction(&self) -> f64 {
        if self.predictor_lookups == 0 {
            return 0.0;
        }
        self.branches_taken as f64 / self.predictor_lookups as f64
    }

    pub fn predictor_hit_rate(&self) -> f64 {
        if self.predictor_lookups == 0 {
            return 0.0;
        }
        self.predictor_hits as f64 / self.predictor_lookups as f64
    }
}

/// Snapshot stream plus the metrics collected during execution.
#[derive(Clone, Debug, PartialEq)]
pub struct WidgetOutput {
    pub output: Vec<u8>,
    pub metrics: DynamicMetrics,
}

#[derive(Debug, thiserror::Error)]
pub enum VmError {
    #[error("program failed static validation: {}", .0.join("; "))]
    InvalidProgram(Vec<String>),
}

/// Execute a validated widget program.
pub fn execute(w: &WidgetProgram) -> Result<WidgetOutput, VmError> {
    execute_with_patch(w, None)
}

/// Execute with a single-octet XOR patch applied to the initial memory
/// image. `patch = (offset, mask)`. Test hook for output-dependence checks;
/// production callers pass through [`execute`].
pub fn execute_with_patch(
    w: &WidgetProgram,
    patch: Option<(usize, u8)>,
) -> Result<WidgetOutput, VmError> {
    static_validate(w).map_err(VmError::InvalidProgram)?;
    EXECUTE_CALLS.fetch_add(1, Ordering::Relaxed);

    // Initial state: memory first, then int regs, then fp regs, all from
    // one PRNG stream seeded by mem_seed.
    let mut prng = Prng::from_seed32(w.mem_seed);
    let mut memory = vec![0u8; w.memory_footprint as usize];
    prng.fill_bytes(&mut memory);
    if let Some((offset, mask)) = patch {
        let idx = offset % memory.len();
        memory[idx] ^= mask;
    }
    let mut int_regs = [0u64; INT_REGS as usize];
    for r in int_regs.iter_mut() {
        *r = prng.next_u64();
    }
    let mut fp_regs = [0f64; FP_REGS as usize];
    for r in fp_regs.iter_mut() {
        // exponent 0x3FF, mantissa from the draw's low 52 bits: value in [1, 2)
        let bits = (0x3FFu64 << 52) | (prng.next_u64() & ((1u64 << 52) - 1));
        *r = f64::from_bits(bits);
    }

    let mut metrics = DynamicMetrics::default();
    let mut predictor = [2u8; PREDICTOR_ENTRIES]; // weakly taken
    let mut visited = vec![false; w.blocks.len()];
    let mut output = Vec::new();
    let mut dyn_count: u64 = 0;
    let mut block_id = w.entry as usize;

    loop {
        let block = &w.blocks[block_id];
        if !visited[block_id] {
            visited[block_id] = true;
        }

        for ins in &block.body {
            step(ins, &mut int_regs, &mut fp_regs, &mut memory, &mut metrics);
            dyn_count += 1;
            if dyn_count % w.snapshot_interval == 0 {
                snapshot(&int_regs, &fp_regs, &mut output, &mut metrics);
            }
        }

        // Terminator: data-dependent branch with predictor bookkeeping.
        let t = &block.terminator;
        let taken = (int_regs[t.src1 as usize] & (crate::widgetgen::BRANCH_MODULUS - 1)) < t.imm;
        metrics.dyn_counts[5] += 1;
        metrics.predictor_lookups += 1;
        if taken {
            metrics.branches_taken += 1;
        }
        let entry = &mut predictor[block_id % PREDICTOR_ENTRIES];
        let predicted_taken = *entry >= 2;
        if predicted_taken == taken {
            metrics.predictor_hits += 1;
        }
        if taken {
            *entry = (*entry + 1).min(3);
        } else {
            *entry = entry.saturating_sub(1);
        }
        dyn_count += 1;
        if dyn_count % w.snapshot_interval == 0 {
            snapshot(&int_regs, &fp_regs, &mut output, &mut metrics);
        }

        if dyn_count >= w.instruction_budget {
            break;
        }
        block_id = if taken {
            block.taken_target as usize
        } else {
            block.fallthrough_target as usize
        };
    }

    metrics.blocks_covered = visited.iter().filter(|&&v| v).count() as u64;
    Ok(WidgetOutput { output, metrics })
}

#[inline]
fn sanitize(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        1.0
    }
}

#[inline]
fn step(
    ins: &Instruction,
    int_regs: &mut [u64; INT_REGS as usize],
    fp_regs: &mut [f64; FP_REGS as usize],
    memory: &mut [u8],
    metrics: &mut DynamicMetrics,
) {
    match ins.opcode {
        Opcode::Iadd => {
            int_regs[ins.dst as usize] =
                int_regs[ins.src1 as usize].wrapping_add(int_regs[ins.src2 as usize]);
            metrics.dyn_counts[0] += 1;
        }
        Opcode::Isub => {
            int_regs[ins.dst as usize] =
                int_regs[ins.src1 as usize].wrapping_sub(int_regs[ins.src2 as usize]);
            metrics.dyn_counts[0] += 1;
        }
        Opcode::Ixor => {
            int_regs[ins.dst as usize] =
                int_regs[ins.src1 as usize] ^ int_regs[ins.src2 as usize];
            metrics.dyn_counts[0] += 1;
        }
        Opcode::Irot => {
            int_regs[ins.dst as usize] =
                int_regs[ins.src1 as usize].rotate_left((ins.imm % 64) as u32);
            metrics.dyn_counts[0] += 1;
        }
        Opcode::Imul => {
            int_regs[ins.dst as usize] =
                int_regs[ins.src1 as usize].wrapping_mul(int_regs[ins.src2 as usize]);
            metrics.dyn_counts[1] += 1;
        }
        Opcode::Fadd => {
            fp_regs[ins.dst as usize] =
                sanitize(fp_regs[ins.src1 as usize]) + sanitize(fp_regs[ins.src2 as usize]);
            metrics.dyn_counts[2] += 1;
        }
        Opcode::Fsub => {
            fp_regs[ins.dst as usize] =
                sanitize(fp_regs[ins.src1 as usize]) - sanitize(fp_regs[ins.src2 as usize]);
            metrics.dyn_counts[2] += 1;
        }
        Opcode::Fmul => {
            fp_regs[ins.dst as usize] =
                sanitize(fp_regs[ins.src1 as usize]) * sanitize(fp_regs[ins.src2 as usize]);
            metrics.dyn_counts[2] += 1;
        }
        Opcode::Fdiv => {
            let num = sanitize(fp_regs[ins.src1 as usize]);
            let mut den = sanitize(fp_regs[ins.src2 as usize]);
            if den == 0.0 {
                den = f64::from_bits(den.to_bits() | 1);
            }
            fp_regs[ins.dst as usize] = num / den;
            metrics.dyn_counts[2] += 1;
        }
        Opcode::Load => {
            let addr = ((int_regs[ins.src1 as usize] ^ ins.addr_offset()) & ins.addr_mask()) as usize;
            int_regs[ins.dst as usize] =
                u64::from_le_bytes(memory[addr..addr + 8].try_into().unwrap());
            metrics.dyn_counts[3] += 1;
            metrics.mem_reads += 1;
        }
        Opcode::Store => {
            let addr = ((int_regs[ins.src1 as usize] ^ ins.addr_offset()) & ins.addr_mask()) as usize;
            memory[addr..addr + 8].copy_from_slice(&int_regs[ins.src2 as usize].to_le_bytes());
            metrics.dyn_counts[4] += 1;
            metrics.mem_writes += 1;
        }
        Opcode::Cbr => unreachable!("CBR only appears as a block terminator"),
    }
}

#[inline]
fn snapshot(
    int_regs: &[u64; INT_REGS as usize],
    fp_regs: &[f64; FP_REGS as usize],
    output: &mut Vec<u8>,
    metrics: &mut DynamicMetrics,
) {
    for r in int_regs {
        output.extend_from_slice(&r.to_le_bytes());
    }
    for r in fp_regs {
        output.extend_from_slice(&r.to_bits().to_le_bytes());
    }
    metrics.snapshots_emitted += 1;
}

/// True iff re-executing the widget reproduces the expected output digest.
pub fn replay_check(w: &WidgetProgram, expected: &Digest256) -> Result<bool, VmError> {
    let out = execute(w)?;
    Ok(gate(GateSpec::Full, &out.output) == *expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::Digest256;
    use crate::profile::{default_profile, perturb};
    use crate::seedmap::split_seed;
    use crate::widgetgen::{generate_widget, BasicBlock, WidgetProgram};

    fn default_widget(seed: [u8; 32]) -> WidgetProgram {
        let f = split_seed(&Digest256(seed));
        let pp = perturb(&default_profile(), &f).unwrap();
        generate_widget(&pp, f.bbv_seed, f.mem_seed).unwrap()
    }

    /// Two-block toy program: each block zeroes r0 then branches on it.
    fn toy_zeroing_program(budget: u64, interval: u64) -> WidgetProgram {
        let make_block = |id: u32, taken: u32, fall: u32| BasicBlock {
            id,
            body: vec![Instruction {
                opcode: Opcode::Ixor,
                dst: 0,
                src1: 0,
                src2: 0,
                imm: 0,
            }],
            terminator: Instruction {
                opcode: Opcode::Cbr,
                dst: 0,
                src1: 0,
                src2: 0,
                imm: 1 << 19,
            },
            taken_target: taken,
            fallthrough_target: fall,
            taken_bias: 0.5,
        };
        let mut w = WidgetProgram {
            blocks: vec![make_block(0, 0, 1), make_block(1, 1, 0)],
            entry: 0,
            memory_footprint: 4096,
            mem_seed: 0,
            instruction_budget: budget,
            snapshot_interval: interval,
            initial_registers: 0,
            program_digest: Digest256([0u8; 32]),
        };
        w.program_digest = w.compute_digest();
        w
    }

    #[test]
    fn toy_program_forces_r0_zero_in_snapshots() {
        let w = toy_zeroing_program(8, 2);
        let out = execute(&w).unwrap();
        assert!(out.metrics.snapshots_emitted >= 2);
        for snap in out.output.chunks(SNAPSHOT_BYTES) {
            let r0 = u64::from_le_bytes(snap[..8].try_into().unwrap());
            assert_eq!(r0, 0);
        }
    }

    #[test]
    fn snapshot_count_matches_completed_instructions() {
        let w = default_widget([5u8; 32]);
        let out = execute(&w).unwrap();
        let completed = out.metrics.total_dynamic();
        assert!(completed >= w.instruction_budget);
        assert_eq!(out.metrics.snapshots_emitted, completed / w.snapshot_interval);
        assert_eq!(
            out.output.len(),
            out.metrics.snapshots_emitted as usize * SNAPSHOT_BYTES
        );
    }

    #[test]
    fn default_profile_zero_noise_output_size() {
        let w = default_widget([0u8; 32]);
        assert_eq!(w.instruction_budget, 400_000);
        let out = execute(&w).unwrap();
        assert_eq!(out.metrics.snapshots_emitted, 130);
        assert_eq!(out.output.len(), 130 * 192);
    }

    #[test]
    fn execution_is_deterministic() {
        let w = default_widget([9u8; 32]);
        let a = execute(&w).unwrap();
        let b = execute(&w).unwrap();
        assert_eq!(a.output, b.output);
        assert_eq!(a.metrics, b.metrics);
    }

    /// Load-heavy profile over a tiny memory image: every word is read
    /// many times during a run, so a flipped octet is observed with
    /// probability ≈ 1. (At the default profile the image is larger than
    /// the dynamic read set, and a store can overwrite the flipped octet
    /// before any load sees it, so full sensitivity is not expected there.)
    fn read_saturating_widget(seed: [u8; 32]) -> WidgetProgram {
        let profile = crate::profile::PerformanceProfile {
            name: "read-saturating".to_string(),
            base_counts: crate::profile::CategoryCounts {
                ialu: 12,
                imul: 2,
                falu: 2,
                load: 24,
                store: 0,
            },
            branch_count: 8,
            branch_taken_rate: 0.6,
            block_count: 8,
            memory_footprint: 4096,
            stride_weights: crate::profile::StrideWeights {
                seq: 2,
                line: 1,
                page: 0,
                random: 1,
            },
            dep_distance_mean: 4.0,
            base_instruction_budget: 100_000,
        };
        let f = split_seed(&Digest256(seed));
        let pp = perturb(&profile, &f).unwrap();
        generate_widget(&pp, f.bbv_seed, f.mem_seed).unwrap()
    }

    #[test]
    fn memory_patch_changes_output() {
        let w = read_saturating_widget([13u8; 32]);
        let clean = execute(&w).unwrap();
        let mut changed = 0;
        for i in 0..20 {
            let offset = (i * 181 + 7) % w.memory_footprint as usize;
            let patched = execute_with_patch(&w, Some((offset, 0x80))).unwrap();
            if patched.output != clean.output {
                changed += 1;
            }
        }
        assert!(changed >= 19, "only {changed}/20 patches changed the output");
    }

    #[test]
    fn memory_patch_default_profile_sensitivity() {
        let w = default_widget([13u8; 32]);
        let clean = execute(&w).unwrap();
        let changed = (0..10)
            .filter(|i| {
                let offset = i * 104_729 % w.memory_footprint as usize;
                let patched = execute_with_patch(&w, Some((offset, 0x80))).unwrap();
                patched.output != clean.output
            })
            .count();
        assert!(changed >= 1, "no patch changed the output");
    }

    #[test]
    fn replay_check_round_trip() {
        let w = default_widget([21u8; 32]);
        let out = execute(&w).unwrap();
        let expected = gate(GateSpec::Full, &out.output);
        assert!(replay_check(&w, &expected).unwrap());
        let mut tampered = expected;
        tampered.0[0] ^= 1;
        assert!(!replay_check(&w, &tampered).unwrap());
    }

    #[test]
    fn metric_conservation() {
        let w = default_widget([2u8; 32]);
        let out = execute(&w).unwrap();
        let m = &out.metrics;
        assert_eq!(m.predictor_lookups, m.dyn_counts[5]);
        assert!(m.predictor_hits <= m.predictor_lookups);
        assert!(m.branches_taken <= m.predictor_lookups);
        assert_eq!(m.mem_reads, m.dyn_counts[3]);
        assert_eq!(m.mem_writes, m.dyn_counts[4]);
        // dynamic mix fractions stay within one block's contribution of
        // static fractions (branch skipping visits a near-uniform subset)
        let (static_counts, static_branches) = w.static_counts();
        let per_lap = static_counts.total() + static_branches;
        let max_block: u64 = w.blocks.iter().map(|b| b.len() as u64).max().unwrap();
        let tolerance = max_block as f64 / per_lap as f64;
        let total = m.total_dynamic() as f64;
        for (i, c) in crate::profile::COUNT_CATEGORIES.iter().enumerate() {
            let dyn_frac = m.dyn_counts[i] as f64 / total;
            let stat_frac = static_counts.get(*c) as f64 / per_lap as f64;
            assert!(
                (dyn_frac - stat_frac).abs() <= tolerance,
                "category {} mix diverged: dynamic {:.4} vs static {:.4}",
                c.name(),
                dyn_frac,
                stat_frac
            );
        }
    }

    #[test]
    fn all_blocks_covered() {
        let w = default_widget([7u8; 32]);
        let out = execute(&w).unwrap();
        assert_eq!(out.metrics.blocks_covered, w.blocks.len() as u64);
    }

    #[test]
    fn invalid_program_rejected() {
        let mut w = default_widget([1u8; 32]);
        w.blocks[0].taken_target = 99;
        assert!(matches!(execute(&w), Err(VmError::InvalidProgram(_))));
    }
}
