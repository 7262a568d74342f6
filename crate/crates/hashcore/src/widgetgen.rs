//! Synthetic-ISA program generation.
//!
//! A widget is a statically terminating register-machine program generated
//! deterministically from a perturbed profile and two 32-bit seeds: one for
//! program structure, one for memory addressing constants. The static
//! instruction mix equals the perturbed counts exactly, control flow is a
//! single outer loop over the block sequence with a skip-of-one branch at
//! each block end, and every memory address is in-bounds by construction
//! (mask + align baked into the instruction immediate).

use crate::gate::{gate, Digest256, GateSpec};
use crate::profile::{Category, CategoryCounts, PerturbedProfile, COUNT_CATEGORIES};
use crate::seedmap::Prng;
use std::fmt::Write as _;

pub const INT_REGS: u8 = 16;
pub const FP_REGS: u8 = 8;
/// Register snapshots are taken every this many dynamic instructions.
pub const SNAPSHOT_INTERVAL: u64 = 3072;
/// Branch thresholds compare register values modulo 2^20.
pub const BRANCH_MODULUS: u64 = 1 << 20;

pub const SERIAL_MAGIC: &[u8; 4] = b"HCW1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Iadd = 0,
    Isub = 1,
    Ixor = 2,
    Irot = 3,
    Imul = 4,
    Fadd = 5,
    Fsub = 6,
    Fmul = 7,
    Fdiv = 8,
    Load = 9,
    Store = 10,
    Cbr = 11,
}

impl Opcode {
    pub fn from_u8(v: u8) -> Option<Opcode> {
        use Opcode::*;
        Some(match v {
            0 => Iadd,
            1 => Isub,
            2 => Ixor,
            3 => Irot,
            4 => Imul,
            5 => Fadd,
            6 => Fsub,
            7 => Fmul,
            8 => Fdiv,
            9 => Load,
            10 => Store,
            11 => Cbr,
            _ => return None,
        })
    }

    pub fn from_name(s: &str) -> Option<Opcode> {
        use Opcode::*;
        Some(match s {
            "IADD" => Iadd,
            "ISUB" => Isub,
            "IXOR" => Ixor,
            "IROT" => Irot,
            "IMUL" => Imul,
            "FADD" => Fadd,
            "FSUB" => Fsub,
            "FMUL" => Fmul,
            "FDIV" => Fdiv,
            "LOAD" => Load,
            "STORE" => Store,
            "CBR" => Cbr,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use Opcode::*;
        match self {
            Iadd => "IADD",
            Isub => "ISUB",
            Ixor => "IXOR",
            Irot => "IROT",
            Imul => "IMUL",
            Fadd => "FADD",
            Fsub => "FSUB",
            Fmul => "FMUL",
            Fdiv => "FDIV",
            Load => "LOAD",
            Store => "STORE",
            Cbr => "CBR",
        }
    }

    pub fn category(self) -> Category {
        use Opcode::*;
        match self {
            Iadd | Isub | Ixor | Irot => Category::Ialu,
            Imul => Category::Imul,
            Fadd | Fsub | Fmul | Fdiv => Category::Falu,
            Load => Category::Load,
            Store => Category::Store,
            Cbr => Category::Branch,
        }
    }

    /// True for opcodes whose register operands live in the FP file.
    pub fn uses_fp_file(self) -> bool {
        matches!(self, Opcode::Fadd | Opcode::Fsub | Opcode::Fmul | Opcode::Fdiv)
    }

    /// True for opcodes that write a register.
    pub fn writes_register(self) -> bool {
        !matches!(self, Opcode::Store | Opcode::Cbr)
    }
}

/// One synthetic-ISA instruction.
///
/// `imm` usage by opcode: IROT rotate amount (mod 64); CBR taken threshold
/// (compared against `src1` mod 2^20); LOAD/STORE address word with the
/// footprint mask in the low 32 bits and the addressing constant in the
/// high 32 bits. Zero otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Instruction {
    pub opcode: Opcode,
    pub dst: u8,
    pub src1: u8,
    pub src2: u8,
    pub imm: u64,
}

impl Instruction {
    /// Address mask for LOAD/STORE (low 32 bits of `imm`).
    pub fn addr_mask(&self) -> u64 {
        self.imm & 0xFFFF_FFFF
    }

    /// Addressing constant for LOAD/STORE (high 32 bits of `imm`).
    pub fn addr_offset(&self) -> u64 {
        self.imm >> 32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasicBlock {
    pub id: u32,
    /// Straight-line body; never contains CBR.
    pub body: Vec<Instruction>,
    /// Block terminator; always CBR.
    pub terminator: Instruction,
    pub taken_target: u32,
    pub fallthrough_target: u32,
    pub taken_bias: f64,
}

impl BasicBlock {
    pub fn len(&self) -> usize {
        self.body.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WidgetProgram {
    pub blocks: Vec<BasicBlock>,
    pub entry: u32,
    pub memory_footprint: u64,
    pub mem_seed: u32,
    pub instruction_budget: u64,
    pub snapshot_interval: u64,
    /// Register/memory initialization rule id; 0 is the only defined rule.
    pub initial_registers: u8,
    pub program_digest: Digest256,
}

impl WidgetProgram {
    /// Static per-category instruction counts, branches included.
    pub fn static_counts(&self) -> (CategoryCounts, u64) {
        let mut counts = CategoryCounts {
            ialu: 0,
            imul: 0,
            falu: 0,
            load: 0,
            store: 0,
        };
        let mut branches = 0u64;
        for block in &self.blocks {
            for ins in block.body.iter().chain(std::iter::once(&block.terminator)) {
                match ins.opcode.category() {
                    Category::Branch => branches += 1,
                    c => counts.set(c, counts.get(c) + 1),
                }
            }
        }
        (counts, branches)
    }

    /// Canonical byte serialization; the program-digest preimage.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.blocks.iter().map(|b| b.len() * 12 + 24).sum::<usize>());
        out.extend_from_slice(SERIAL_MAGIC);
        out.extend_from_slice(&self.entry.to_le_bytes());
        out.extend_from_slice(&self.memory_footprint.to_le_bytes());
        out.extend_from_slice(&self.mem_seed.to_le_bytes());
        out.extend_from_slice(&self.instruction_budget.to_le_bytes());
        out.extend_from_slice(&self.snapshot_interval.to_le_bytes());
        out.push(self.initial_registers);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for block in &self.blocks {
            out.extend_from_slice(&block.id.to_le_bytes());
            out.extend_from_slice(&block.taken_target.to_le_bytes());
            out.extend_from_slice(&block.fallthrough_target.to_le_bytes());
            out.extend_from_slice(&block.taken_bias.to_bits().to_le_bytes());
            out.extend_from_slice(&(block.body.len() as u32).to_le_bytes());
            for ins in block.body.iter().chain(std::iter::once(&block.terminator)) {
                out.push(ins.opcode as u8);
                out.push(ins.dst);
                out.push(ins.src1);
                out.push(ins.src2);
                out.extend_from_slice(&ins.imm.to_le_bytes());
            }
        }
        out
    }

    pub fn compute_digest(&self) -> Digest256 {
        gate(GateSpec::Full, &self.canonical_bytes())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WidgetError {
    #[error("invalid widget program: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("listing parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

struct GenState {
    prng_a: Prng,
    prng_b: Prng,
    int_rr: u8,
    fp_rr: u8,
    /// Write history: (register, written by an accumulating op).
    int_writes: Vec<(u8, bool)>,
    fp_writes: Vec<(u8, bool)>,
    dep_window: u64,
}

impl GenState {
    /// Pick a source register written 1..=dep_window instructions back in
    /// the given file's write history, clamped to the oldest write.
    fn dep_source(&mut self, fp: bool) -> u8 {
        let history = if fp { &self.fp_writes } else { &self.int_writes };
        if history.is_empty() {
            return 0;
        }
        let back = 1 + self.prng_a.next_below(self.dep_window) as usize;
        let back = back.min(history.len());
        history[history.len() - back].0
    }

    /// Like dep_source for the int file, but prefer registers whose write
    /// inside the window was an accumulating op: those registers carry
    /// state across laps, so routing branch conditions and address bases
    /// through them keeps control flow and the memory working set from
    /// settling into short cycles.
    fn carrying_dep_source(&mut self) -> u8 {
        let lo = self.int_writes.len().saturating_sub(self.dep_window as usize);
        let carriers: Vec<u8> = self.int_writes[lo..]
            .iter()
            .filter(|(_, acc)| *acc)
            .map(|(reg, _)| *reg)
            .collect();
        if carriers.is_empty() {
            return self.dep_source(false);
        }
        let pick = self.prng_a.next_below(carriers.len() as u64) as usize;
        carriers[pick]
    }

    fn record_write(&mut self, fp: bool, reg: u8, acc: bool) {
        if fp {
            self.fp_writes.push((reg, acc));
        } else {
            self.int_writes.push((reg, acc));
        }
    }
}

/// Generate a widget program. Equal inputs always produce equal programs.
pub fn generate_widget(
    pp: &PerturbedProfile,
    bbv_seed: u32,
    mem_seed: u32,
) -> Result<WidgetProgram, WidgetError> {
    let block_count = pp.base.block_count as usize;
    let footprint = pp.base.memory_footprint;
    let mut st = GenState {
        prng_a: Prng::from_seed32(bbv_seed),
        prng_b: Prng::from_seed32(mem_seed),
        int_rr: 0,
        fp_rr: 0,
        int_writes: Vec::new(),
        fp_writes: Vec::new(),
        dep_window: (2.0 * pp.base.dep_distance_mean).ceil().max(1.0) as u64,
    };

    // Per-block quota for each category: even split, remainder blocks
    // chosen by a partial Fisher-Yates over block indices.
    let mut quota = vec![[0u64; 5]; block_count];
    for (ci, c) in COUNT_CATEGORIES.iter().enumerate() {
        let total = pp.counts.get(*c);
        let each = total / block_count as u64;
        let rem = (total % block_count as u64) as usize;
        for q in quota.iter_mut() {
            q[ci] = each;
        }
        if rem > 0 {
            let mut idx: Vec<usize> = (0..block_count).collect();
            for i in 0..rem {
                let j = i + st.prng_a.next_below((block_count - i) as u64) as usize;
                idx.swap(i, j);
            }
            for &b in &idx[..rem] {
                quota[b][ci] += 1;
            }
        }
    }

    // Every block body must be non-empty: move one instruction from the
    // fullest block's most-populous category into each empty block.
    loop {
        let Some(empty) = quota.iter().position(|q| q.iter().sum::<u64>() == 0) else {
            break;
        };
        let (donor, _) = quota
            .iter()
            .enumerate()
            .max_by_key(|(i, q)| (q.iter().sum::<u64>(), std::cmp::Reverse(*i)))
            .unwrap();
        if quota[donor].iter().sum::<u64>() < 2 {
            return Err(WidgetError::Invalid(vec![
                "profile too sparse to populate every block".to_string(),
            ]));
        }
        let (cat, _) = quota[donor]
            .iter()
            .enumerate()
            .max_by_key(|(i, &n)| (n, std::cmp::Reverse(*i)))
            .unwrap();
        quota[donor][cat] -= 1;
        quota[empty][cat] += 1;
    }

    let cbr_imm = (pp.taken_rate * BRANCH_MODULUS as f64).floor() as u64;

    let mut blocks = Vec::with_capacity(block_count);
    for b in 0..block_count {
        // Category slot list in fixed order, shuffled by the structure PRNG.
        let mut slots: Vec<usize> = Vec::new();
        for (ci, &n) in quota[b].iter().enumerate() {
            slots.extend(std::iter::repeat(ci).take(n as usize));
        }
        for i in (1..slots.len()).rev() {
            let j = st.prng_a.next_below(i as u64 + 1) as usize;
            slots.swap(i, j);
        }

        let mut body = Vec::with_capacity(slots.len());
        for &ci in &slots {
            body.push(emit_instruction(&mut st, COUNT_CATEGORIES[ci], footprint, &pp.base.stride_weights));
        }

        // The branch must test a value produced inside this block: a source
        // register last written in some other block arrives conditioned on
        // the branch outcomes that led here (it may even be the exact value
        // an earlier branch already tested), which skews the taken rate.
        //
        // Moreover the tested register should be an IADD accumulator:
        // r += s sweeps the low branch bits even when its input settles,
        // whereas r = s - r and r = s ^ r fall into period-2 orbits that
        // pin the branch one way. Anchor the branch on a surviving
        // IADD-accumulator, rewriting another Integer-ALU instruction into
        // one (category counts unchanged) when the block lacks it.
        let mut overwritten = [false; INT_REGS as usize];
        let mut add_acc: Option<usize> = None;
        let mut other_acc: Option<usize> = None;
        let mut rot: Option<usize> = None;
        let mut fresh_any: Option<u8> = None;
        for (i, ins) in body.iter().enumerate().rev() {
            if ins.opcode.writes_register() && !ins.opcode.uses_fp_file() {
                let d = ins.dst as usize;
                if !overwritten[d] {
                    overwritten[d] = true;
                    fresh_any.get_or_insert(ins.dst);
                    match ins.opcode {
                        Opcode::Iadd if ins.src2 == ins.dst => {
                            add_acc.get_or_insert(i);
                        }
                        Opcode::Isub | Opcode::Ixor if ins.src2 == ins.dst => {
                            other_acc.get_or_insert(i);
                        }
                        Opcode::Irot if ins.src1 != ins.dst => {
                            rot.get_or_insert(i);
                        }
                        _ => {}
                    }
                }
            }
        }
        let branch_src = if let Some(i) = add_acc {
            body[i].dst
        } else if let Some(i) = other_acc {
            body[i].opcode = Opcode::Iadd;
            body[i].dst
        } else if let Some(i) = rot {
            body[i].opcode = Opcode::Iadd;
            body[i].src2 = body[i].dst;
            body[i].imm = 0;
            body[i].dst
        } else {
            match fresh_any {
                Some(reg) => reg,
                None => st.carrying_dep_source(),
            }
        };
        let terminator = Instruction {
            opcode: Opcode::Cbr,
            dst: 0,
            src1: branch_src,
            src2: 0,
            imm: cbr_imm,
        };
        blocks.push(BasicBlock {
            id: b as u32,
            body,
            terminator,
            taken_target: ((b + 2) % block_count) as u32,
            fallthrough_target: ((b + 1) % block_count) as u32,
            taken_bias: pp.taken_rate,
        });
    }

    let mut program = WidgetProgram {
        blocks,
        entry: 0,
        memory_footprint: footprint,
        mem_seed,
        instruction_budget: pp.instruction_budget,
        snapshot_interval: SNAPSHOT_INTERVAL,
        initial_registers: 0,
        program_digest: Digest256([0u8; 32]),
    };
    program.program_digest = program.compute_digest();

    static_validate(&program).map_err(WidgetError::Invalid)?;
    Ok(program)
}

fn emit_instruction(
    st: &mut GenState,
    category: Category,
    footprint: u64,
    strides: &crate::profile::StrideWeights,
) -> Instruction {
    let opcode = match category {
        Category::Ialu => [Opcode::Iadd, Opcode::Isub, Opcode::Ixor, Opcode::Irot]
            [st.prng_a.next_below(4) as usize],
        Category::Imul => Opcode::Imul,
        Category::Falu => [Opcode::Fadd, Opcode::Fsub, Opcode::Fmul, Opcode::Fdiv]
            [st.prng_a.next_below(4) as usize],
        Category::Load => Opcode::Load,
        Category::Store => Opcode::Store,
        Category::Branch => unreachable!("branches are block terminators"),
    };
    let fp = opcode.uses_fp_file();
    let file_size = if fp { FP_REGS } else { INT_REGS };

    let dst = if opcode.writes_register() {
        let rr = if fp { &mut st.fp_rr } else { &mut st.int_rr };
        let reg = *rr % file_size;
        *rr = rr.wrapping_add(1);
        reg
    } else {
        0
    };
    // Memory address bases chain through carrying registers (see
    // carrying_dep_source); everything else through the plain window.
    let mut src1 = match opcode {
        Opcode::Load | Opcode::Store => st.carrying_dep_source(),
        _ => st.dep_source(fp),
    };
    if opcode == Opcode::Load && src1 == dst {
        // a self-addressed load (r <- mem[f(r)]) is a pointer chase through
        // a fixed table: it decouples from the rest of the dataflow and
        // collapses onto a short cycle that entrains the whole widget
        src1 = (src1 + 1) % file_size;
    }
    let mut src2 = st.prng_a.next_below(file_size as u64) as u8;
    let mut acc = false;
    match opcode {
        Opcode::Iadd | Opcode::Isub | Opcode::Ixor if src1 != dst => {
            // accumulate into the destination so the register file carries
            // state from lap to lap; without this the end-of-lap file
            // degenerates to a function of the lap's branch path and the
            // trajectory falls into a short limit cycle
            src2 = dst;
            acc = true;
        }
        _ => {
            if src2 == src1 {
                // a static self-operand (x-x, x^x, x/x) recomputes the same
                // constant every lap and freezes downstream dataflow
                src2 = (src2 + 1) % file_size;
            }
        }
    }

    let imm = match opcode {
        Opcode::Irot => st.prng_a.next_below(64),
        Opcode::Load | Opcode::Store => {
            let stride = pick_stride(&mut st.prng_b, strides);
            let offset = stride * st.prng_b.next_below(footprint / stride);
            (offset << 32) | (footprint - 8)
        }
        _ => 0,
    };

    if opcode.writes_register() {
        st.record_write(fp, dst, acc);
    }
    Instruction {
        opcode,
        dst,
        src1,
        src2,
        imm,
    }
}

fn pick_stride(prng: &mut Prng, w: &crate::profile::StrideWeights) -> u64 {
    let total = w.total();
    let draw = prng.next_below(total);
    if draw < w.seq as u64 {
        8
    } else if draw < (w.seq + w.line) as u64 {
        64
    } else if draw < (w.seq + w.line + w.page) as u64 {
        4096
    } else {
        8 // random class: any 8-aligned offset
    }
}

/// Check every structural invariant of a widget program.
pub fn static_validate(w: &WidgetProgram) -> Result<(), Vec<String>> {
    let mut errs = Vec::new();
    let n = w.blocks.len() as u32;
    if n < 2 {
        errs.push("program must have at least 2 blocks".to_string());
    }
    if w.entry != 0 {
        errs.push(format!("entry must be block 0, got {}", w.entry));
    }
    if w.memory_footprint < 4096 || !w.memory_footprint.is_power_of_two() {
        errs.push("memory_footprint must be a power of two >= 4096".to_string());
    }
    if w.instruction_budget == 0 {
        errs.push("instruction_budget must be positive".to_string());
    }
    if w.snapshot_interval == 0 {
        errs.push("snapshot_interval must be positive".to_string());
    }
    if w.initial_registers != 0 {
        errs.push(format!(
            "unknown initial-register rule {}",
            w.initial_registers
        ));
    }
    for (i, block) in w.blocks.iter().enumerate() {
        let i = i as u32;
        if block.id != i {
            errs.push(format!("block {} has id {}", i, block.id));
        }
        if block.body.is_empty() {
            errs.push(format!("block {i} has an empty body"));
        }
        if block.taken_target != (i + 2) % n || block.fallthrough_target != (i + 1) % n {
            errs.push(format!(
                "block {i} breaks the skip-of-one topology (taken={}, fall={})",
                block.taken_target, block.fallthrough_target
            ));
        }
        for (j, ins) in block.body.iter().enumerate() {
            if ins.opcode == Opcode::Cbr {
                errs.push(format!("block {i} has CBR mid-block at position {j}"));
                continue;
            }
            validate_instruction(ins, w.memory_footprint, &mut errs, i, j);
        }
        let t = &block.terminator;
        if t.opcode != Opcode::Cbr {
            errs.push(format!("block {i} terminator is {}", t.opcode.name()));
        } else {
            if t.src1 >= INT_REGS {
                errs.push(format!("block {i} CBR src1 out of range"));
            }
            if t.imm >= BRANCH_MODULUS {
                errs.push(format!("block {i} CBR threshold exceeds modulus"));
            }
        }
        if !(0.0..=1.0).contains(&block.taken_bias) {
            errs.push(format!("block {i} taken_bias out of [0,1]"));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

fn validate_instruction(
    ins: &Instruction,
    footprint: u64,
    errs: &mut Vec<String>,
    block: u32,
    pos: usize,
) {
    let file_size = if ins.opcode.uses_fp_file() {
        FP_REGS
    } else {
        INT_REGS
    };
    if ins.dst >= file_size || ins.src1 >= file_size || ins.src2 >= file_size {
        errs.push(format!(
            "block {block} pos {pos}: register index out of range for {}",
            ins.opcode.name()
        ));
    }
    if matches!(ins.opcode, Opcode::Load | Opcode::Store) {
        if ins.addr_mask() != footprint - 8 {
            errs.push(format!(
                "block {block} pos {pos}: {} mask {:#x} does not match footprint",
                ins.opcode.name(),
                ins.addr_mask()
            ));
        }
        if ins.addr_offset() >= footprint || ins.addr_offset() % 8 != 0 {
            errs.push(format!(
                "block {block} pos {pos}: {} offset out of range or unaligned",
                ins.opcode.name()
            ));
        }
    }
}

/// Render a program as a stable, re-parseable text listing.
pub fn emit_listing(w: &WidgetProgram) -> String {
    let mut out = String::new();
    writeln!(out, "widget HCW1").unwrap();
    writeln!(out, "entry {}", w.entry).unwrap();
    writeln!(out, "footprint {}", w.memory_footprint).unwrap();
    writeln!(out, "mem_seed {}", w.mem_seed).unwrap();
    writeln!(out, "budget {}", w.instruction_budget).unwrap();
    writeln!(out, "interval {}", w.snapshot_interval).unwrap();
    writeln!(out, "initreg {}", w.initial_registers).unwrap();
    writeln!(out, "blocks {}", w.blocks.len()).unwrap();
    for block in &w.blocks {
        writeln!(
            out,
            "block {} taken={} fall={} bias=0x{:016X}",
            block.id,
            block.taken_target,
            block.fallthrough_target,
            block.taken_bias.to_bits()
        )
        .unwrap();
        for ins in block.body.iter().chain(std::iter::once(&block.terminator)) {
            let p = if ins.opcode.uses_fp_file() { 'f' } else { 'r' };
            writeln!(
                out,
                "  {} {p}{} {p}{} {p}{} {:#x}",
                ins.opcode.name(),
                ins.dst,
                ins.src1,
                ins.src2,
                ins.imm
            )
            .unwrap();
        }
    }
    out
}

/// Parse a listing back into a program. Round-trips with [`emit_listing`].
pub fn parse_listing(text: &str) -> Result<WidgetProgram, WidgetError> {
    let perr = |line: usize, msg: String| WidgetError::Parse { line, msg };
    let mut lines = text.lines().enumerate();

    let mut header = |key: &str| -> Result<String, WidgetError> {
        let (i, line) = lines
            .next()
            .ok_or_else(|| perr(0, format!("missing header line '{key}'")))?;
        let rest = line
            .strip_prefix(key)
            .ok_or_else(|| perr(i + 1, format!("expected '{key} ...'")))?;
        Ok(rest.trim().to_string())
    };

    if header("widget")? != "HCW1" {
        return Err(perr(1, "unsupported widget format".to_string()));
    }
    let entry: u32 = header("entry")?.parse().map_err(|e| perr(2, format!("{e}")))?;
    let footprint: u64 = header("footprint")?.parse().map_err(|e| perr(3, format!("{e}")))?;
    let mem_seed: u32 = header("mem_seed")?.parse().map_err(|e| perr(4, format!("{e}")))?;
    let budget: u64 = header("budget")?.parse().map_err(|e| perr(5, format!("{e}")))?;
    let interval: u64 = header("interval")?.parse().map_err(|e| perr(6, format!("{e}")))?;
    let initreg: u8 = header("initreg")?.parse().map_err(|e| perr(7, format!("{e}")))?;
    let block_count: usize = header("blocks")?.parse().map_err(|e| perr(8, format!("{e}")))?;

    let mut blocks = Vec::with_capacity(block_count);
    let mut current: Option<BasicBlock> = None;
    let mut pending: Vec<Instruction> = Vec::new();

    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("block ") {
            if let Some(mut b) = current.take() {
                finish_block(&mut b, &mut pending, i).map(|_| blocks.push(b))?;
            }
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(perr(i + 1, "malformed block header".to_string()));
            }
            let id: u32 = parts[0].parse().map_err(|e| perr(i + 1, format!("{e}")))?;
            let taken: u32 = parts[1]
                .strip_prefix("taken=")
                .ok_or_else(|| perr(i + 1, "expected taken=".to_string()))?
                .parse()
                .map_err(|e| perr(i + 1, format!("{e}")))?;
            let fall: u32 = parts[2]
                .strip_prefix("fall=")
                .ok_or_else(|| perr(i + 1, "expected fall=".to_string()))?
                .parse()
                .map_err(|e| perr(i + 1, format!("{e}")))?;
            let bias_bits = parts[3]
                .strip_prefix("bias=0x")
                .ok_or_else(|| perr(i + 1, "expected bias=0x".to_string()))?;
            let bias = f64::from_bits(
                u64::from_str_radix(bias_bits, 16).map_err(|e| perr(i + 1, format!("{e}")))?,
            );
            current = Some(BasicBlock {
                id,
                body: Vec::new(),
                terminator: Instruction {
                    opcode: Opcode::Cbr,
                    dst: 0,
                    src1: 0,
                    src2: 0,
                    imm: 0,
                },
                taken_target: taken,
                fallthrough_target: fall,
                taken_bias: bias,
            });
        } else {
            if current.is_none() {
                return Err(perr(i + 1, "instruction outside a block".to_string()));
            }
            pending.push(parse_instruction(line, i + 1)?);
        }
    }
    if let Some(mut b) = current.take() {
        finish_block(&mut b, &mut pending, usize::MAX)?;
        blocks.push(b);
    }

    let mut program = WidgetProgram {
        blocks,
        entry,
        memory_footprint: footprint,
        mem_seed,
        instruction_budget: budget,
        snapshot_interval: interval,
        initial_registers: initreg,
        program_digest: Digest256([0u8; 32]),
    };
    program.program_digest = program.compute_digest();
    Ok(program)
}

fn finish_block(
    b: &mut BasicBlock,
    pending: &mut Vec<Instruction>,
    line: usize,
) -> Result<(), WidgetError> {
    let term = pending.pop().ok_or(WidgetError::Parse {
        line,
        msg: format!("block {} has no instructions", b.id),
    })?;
    b.terminator = term;
    b.body = std::mem::take(pending);
    Ok(())
}

fn parse_instruction(line: &str, lineno: usize) -> Result<Instruction, WidgetError> {
    let perr = |msg: String| WidgetError::Parse { line: lineno, msg };
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 5 {
        return Err(perr("expected 'OPC dst src1 src2 imm'".to_string()));
    }
    let opcode = Opcode::from_name(parts[0]).ok_or_else(|| perr(format!("unknown opcode {}", parts[0])))?;
    let reg = |s: &str| -> Result<u8, WidgetError> {
        s.trim_start_matches(['r', 'f'])
            .parse()
            .map_err(|e| perr(format!("bad register '{s}': {e}")))
    };
    let imm = if let Some(hex) = parts[4].strip_prefix("0x") {
        u64::from_str_radix(hex, 16).map_err(|e| perr(format!("bad imm: {e}")))?
    } else {
        parts[4].parse().map_err(|e| perr(format!("bad imm: {e}")))?
    };
    Ok(Instruction {
        opcode,
        dst: reg(parts[1])?,
        src1: reg(parts[2])?,
        src2: reg(parts[3])?,
        imm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::Digest256;
    use crate::profile::{default_profile, perturb};
    use crate::seedmap::split_seed;

    fn make_pp(seed_bytes: [u8; 32]) -> crate::profile::PerturbedProfile {
        perturb(&default_profile(), &split_seed(&Digest256(seed_bytes))).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let pp = make_pp([3u8; 32]);
        let a = generate_widget(&pp, 11, 22).unwrap();
        let b = generate_widget(&pp, 11, 22).unwrap();
        assert_eq!(a.program_digest, b.program_digest);
        assert_eq!(a, b);
    }

    #[test]
    fn static_counts_match_perturbed_counts() {
        for seed in [[0u8; 32], [1u8; 32], [0xFFu8; 32], [0x5Au8; 32]] {
            let pp = make_pp(seed);
            let w = generate_widget(&pp, pp.origin_fields.bbv_seed, pp.origin_fields.mem_seed).unwrap();
            let (counts, branches) = w.static_counts();
            assert_eq!(counts, pp.counts);
            assert_eq!(branches, pp.base.block_count);
        }
    }

    #[test]
    fn degenerate_single_category_mix() {
        let mut p = default_profile();
        p.base_counts = crate::profile::CategoryCounts {
            ialu: 32,
            imul: 0,
            falu: 0,
            load: 0,
            store: 0,
        };
        let pp = perturb(&p, &split_seed(&Digest256([0u8; 32]))).unwrap();
        let w = generate_widget(&pp, 0, 0).unwrap();
        for b in &w.blocks {
            for ins in &b.body {
                assert_eq!(ins.opcode.category(), Category::Ialu);
            }
        }
    }

    #[test]
    fn sparse_profile_still_fills_every_block() {
        let mut p = default_profile();
        // 16 blocks but only 8+8 non-branch instructions; fix-up must spread them
        p.base_counts = crate::profile::CategoryCounts {
            ialu: 8,
            imul: 8,
            falu: 0,
            load: 0,
            store: 0,
        };
        let pp = perturb(&p, &split_seed(&Digest256([0u8; 32]))).unwrap();
        let w = generate_widget(&pp, 9, 9).unwrap();
        assert!(w.blocks.iter().all(|b| !b.body.is_empty()));
        let (counts, _) = w.static_counts();
        assert_eq!(counts, pp.counts);
    }

    #[test]
    fn listing_round_trip() {
        let pp = make_pp([7u8; 32]);
        let w = generate_widget(&pp, 42, 43).unwrap();
        let listing = emit_listing(&w);
        let reparsed = parse_listing(&listing).unwrap();
        assert_eq!(reparsed.program_digest, w.program_digest);
        assert_eq!(reparsed, w);
    }

    #[test]
    fn listing_line_count() {
        let pp = make_pp([1u8; 32]);
        let w = generate_widget(&pp, 1, 2).unwrap();
        let listing = emit_listing(&w);
        let ins_lines = listing.lines().filter(|l| l.starts_with("  ")).count();
        let expected: usize = w.blocks.iter().map(|b| b.len()).sum();
        assert_eq!(ins_lines, expected);
    }

    #[test]
    fn different_seeds_differ() {
        let pp = make_pp([9u8; 32]);
        let a = generate_widget(&pp, 1, 1).unwrap();
        let b = generate_widget(&pp, 2, 1).unwrap();
        assert_ne!(a.program_digest, b.program_digest);
        assert_ne!(emit_listing(&a), emit_listing(&b));
    }

    #[test]
    fn validate_rejects_mid_block_cbr() {
        let pp = make_pp([4u8; 32]);
        let mut w = generate_widget(&pp, 5, 6).unwrap();
        w.blocks[0].body[0] = w.blocks[0].terminator;
        let errs = static_validate(&w).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("CBR mid-block")));
    }

    #[test]
    fn validate_rejects_bad_mask() {
        let pp = make_pp([4u8; 32]);
        let mut w = generate_widget(&pp, 5, 6).unwrap();
        let pos = w.blocks.iter().position(|b| {
            b.body.iter().any(|i| matches!(i.opcode, Opcode::Load | Opcode::Store))
        });
        if let Some(bi) = pos {
            let ii = w.blocks[bi]
                .body
                .iter()
                .position(|i| matches!(i.opcode, Opcode::Load | Opcode::Store))
                .unwrap();
            w.blocks[bi].body[ii].imm = (w.memory_footprint * 2 - 8) | (w.blocks[bi].body[ii].imm & !0xFFFF_FFFF);
            let errs = static_validate(&w).unwrap_err();
            assert!(errs.iter().any(|e| e.contains("mask")));
        }
    }

    #[test]
    fn serialization_starts_with_magic() {
        let pp = make_pp([2u8; 32]);
        let w = generate_widget(&pp, 0, 0).unwrap();
        let bytes = w.canonical_bytes();
        assert_eq!(&bytes[..4], b"HCW1");
        assert_eq!(w.program_digest, w.compute_digest());
    }
}
