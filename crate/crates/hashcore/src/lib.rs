//! A proof-of-work function whose inner workload is a pseudo-randomly
//! generated synthetic program.
//!
//! One evaluation gates the input with SHA-256 to obtain a 256-bit hash
//! seed, carves the seed into noise fields that perturb a target CPU
//! performance profile, generates a register-machine program matching the
//! perturbed instruction mix, executes it deterministically while emitting
//! register snapshots, and gates the seed concatenated with the snapshot
//! stream to produce the final digest. Collision resistance reduces to
//! that of the gate; the reduction is executable at desk scale via a
//! truncated test gate.

pub mod analysis;
pub mod gate;
pub mod pipeline;
pub mod profile;
pub mod seedmap;
pub mod widgetgen;
pub mod widgetvm;

pub use gate::{gate as hash_gate, Digest256, GateSpec};
pub use pipeline::{hashcore, hashcore_traced, mine, verify, HashCoreConfig, MineResult};
pub use profile::{default_profile, PerformanceProfile, PerturbedProfile};
pub use seedmap::{split_seed, Prng, SeedFields};
pub use widgetgen::{generate_widget, WidgetProgram};
pub use widgetvm::{execute, WidgetOutput};
