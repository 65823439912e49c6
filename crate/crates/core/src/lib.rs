//! Fault injection for simulated mixed-precision tensor-core GEMM.
//!
//! The crate simulates warp-level HMMA operations on FP16, BF16 and TF32
//! inputs with binary32 accumulation, plants bit-flip faults in individual
//! dot-product terms, classifies the effect on whole workloads and
//! evaluates exponent-only correction guards for BF16.
//!
//! Layers, bottom up:
//!
//! * [`fp_codec`]: bit-exact encode/decode and bit flips.
//! * [`hmma`]: fragment layout and execution of one HMMA op.
//! * [`gemm`]: tiled GEMM as a stream of HMMA ops, with an interception hook.
//! * [`fault`]: site sampling and the write-back injection.
//! * [`guard`]: BoundCheck, RangeCheck-max and RangeCheck-flip.
//! * [`workload`]: random GEMMs and a small MLP classifier.
//! * [`campaign`]: trial orchestration, classification and statistics.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod campaign;
pub mod cli;
pub mod config;
pub mod fault;
pub mod fp_codec;
pub mod gemm;
pub mod guard;
pub mod hmma;
pub mod matrix;
pub mod record;
pub mod verify;
pub mod workload;

pub use fp_codec::{decode, encode, Encoded, FpFormat};
pub use gemm::{run_gemm, GemmProblem};
pub use guard::GuardKind;
pub use hmma::{execute_hmma, FragmentMap, HmmaShape};
