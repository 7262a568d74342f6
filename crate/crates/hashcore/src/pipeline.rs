//! The composed hash function and the proof-of-work loop around it.
//!
//! One evaluation is: gate the input to get the hash seed, derive a widget
//! from the seed fields, execute it, then gate the seed concatenated with
//! the widget output. Verification is exactly one evaluation.

use crate::gate::{gate, Digest256, GateSpec};
use crate::profile::{perturb, validate_profile, PerformanceProfile, ProfileError};
use crate::seedmap::{split_seed, SeedFields};
use crate::widgetgen::{generate_widget, WidgetError};
use crate::widgetvm::{execute, VmError};

#[derive(Clone, Debug)]
pub struct HashCoreConfig {
    pub gate_spec: GateSpec,
    pub profile: PerformanceProfile,
    /// When false, the widget stage is skipped and the second gate hashes
    /// the seed alone. Test hook; production configurations keep it on.
    pub widget_enabled: bool,
    /// Snapshot-interval override; `None` keeps the generator default.
    pub snapshot_interval: Option<u64>,
}

impl HashCoreConfig {
    pub fn new(gate_spec: GateSpec, profile: PerformanceProfile) -> Result<Self, ProfileError> {
        validate_profile(&profile).map_err(ProfileError)?;
        Ok(HashCoreConfig {
            gate_spec,
            profile,
            widget_enabled: true,
            snapshot_interval: None,
        })
    }

    pub fn production() -> Self {
        HashCoreConfig {
            gate_spec: GateSpec::Full,
            profile: crate::profile::default_profile(),
            widget_enabled: true,
            snapshot_interval: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Widget(#[from] WidgetError),
    #[error(transparent)]
    Vm(#[from] VmError),
}

/// Per-stage record of one evaluation.
#[derive(Clone, Debug)]
pub struct PipelineTrace {
    pub input_len: usize,
    pub hash_seed: Digest256,
    pub seed_fields: SeedFields,
    pub program_digest: Digest256,
    pub output_len: usize,
    pub final_digest: Digest256,
}

/// The widget stage on its own: seed in, output stream out.
///
/// This is the function the collision reduction treats as a black box.
pub fn widget_stage(cfg: &HashCoreConfig, seed: &Digest256) -> Result<Vec<u8>, PipelineError> {
    if !cfg.widget_enabled {
        return Ok(Vec::new());
    }
    let fields = split_seed(seed);
    let pp = perturb(&cfg.profile, &fields)?;
    let w = build_widget(cfg, &pp, &fields)?;
    Ok(execute(&w)?.output)
}

fn build_widget(
    cfg: &HashCoreConfig,
    pp: &crate::profile::PerturbedProfile,
    fields: &SeedFields,
) -> Result<crate::widgetgen::WidgetProgram, PipelineError> {
    let mut w = generate_widget(pp, fields.bbv_seed, fields.mem_seed)?;
    if let Some(k) = cfg.snapshot_interval {
        w.snapshot_interval = k;
        w.program_digest = w.compute_digest();
    }
    Ok(w)
}

/// One full evaluation.
pub fn hashcore(cfg: &HashCoreConfig, input: &[u8]) -> Result<Digest256, PipelineError> {
    Ok(hashcore_traced(cfg, input)?.0)
}

/// One full evaluation plus the per-stage trace.
pub fn hashcore_traced(
    cfg: &HashCoreConfig,
    input: &[u8],
) -> Result<(Digest256, PipelineTrace), PipelineError> {
    let seed = gate(cfg.gate_spec, input);
    let fields = split_seed(&seed);
    let (program_digest, widget_output) = if cfg.widget_enabled {
        let pp = perturb(&cfg.profile, &fields)?;
        let w = build_widget(cfg, &pp, &fields)?;
        let out = execute(&w)?;
        (w.program_digest, out.output)
    } else {
        (Digest256([0u8; 32]), Vec::new())
    };

    let mut preimage = Vec::with_capacity(32 + widget_output.len());
    preimage.extend_from_slice(seed.as_bytes());
    preimage.extend_from_slice(&widget_output);
    let final_digest = gate(cfg.gate_spec, &preimage);

    let trace = PipelineTrace {
        input_len: input.len(),
        hash_seed: seed,
        seed_fields: fields,
        program_digest,
        output_len: widget_output.len(),
        final_digest,
    };
    Ok((final_digest, trace))
}

/// Candidate input for a nonce: header bytes then the nonce, 8 octets
/// little-endian.
pub fn mining_input(header: &[u8], nonce: u64) -> Vec<u8> {
    let mut input = Vec::with_capacity(header.len() + 8);
    input.extend_from_slice(header);
    input.extend_from_slice(&nonce.to_le_bytes());
    input
}

/// True iff the digest, read as a big-endian 256-bit unsigned, is below
/// the target.
pub fn below_target(digest: &Digest256, target: &[u8; 32]) -> bool {
    digest.as_bytes() < target
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MineResult {
    Found { nonce: u64, attempts: u64 },
    Exhausted { attempts: u64 },
}

/// Scan nonces sequentially from `start_nonce`; return the first one whose
/// digest falls below the target.
pub fn mine(
    cfg: &HashCoreConfig,
    header: &[u8],
    target: &[u8; 32],
    start_nonce: u64,
    max_iters: u64,
) -> Result<MineResult, PipelineError> {
    assert!(max_iters >= 1, "max_iters must be at least 1");
    let mut attempts = 0u64;
    for i in 0..max_iters {
        let nonce = start_nonce.wrapping_add(i);
        attempts += 1;
        let digest = hashcore(cfg, &mining_input(header, nonce))?;
        if below_target(&digest, target) {
            return Ok(MineResult::Found { nonce, attempts });
        }
    }
    Ok(MineResult::Exhausted { attempts })
}

/// Recompute one evaluation and compare against the target.
pub fn verify(
    cfg: &HashCoreConfig,
    header: &[u8],
    nonce: u64,
    target: &[u8; 32],
) -> Result<bool, PipelineError> {
    let digest = hashcore(cfg, &mining_input(header, nonce))?;
    Ok(below_target(&digest, target))
}
