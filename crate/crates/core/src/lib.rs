//! Probabilistic super-replication of clock states.
//!
//! The crate covers the full numerical pipeline for replicating N copies of a
//! clock state `e^{-itH}|ψ⟩` into M approximate copies:
//!
//! - [`spectra`]: exact energy grids, N-copy total-energy laws, partitions and
//!   the anchor shift aligning `Spec(H^(N))` inside `Spec(H^(M))`;
//! - [`filters`]: diagonal probabilistic filters (super-replication, windowed,
//!   identity) and their success probabilities;
//! - [`replication`]: exact worst-case fidelities, the deterministic baseline
//!   and the lower/upper bounds;
//! - [`qcore`]: small dense Hilbert-space metrology (QFI, probabilistic QFI,
//!   Cramér–Rao bounds, twirling, instrument decomposition);
//! - [`scaling`]: sweeps over N with `M = ⌈c N^α⌉` and exponent fits.
//!
//! Probabilities are carried in log space throughout, so quantities like
//! `C(1000, 500) / 2^1000` never underflow.

// NaN must fail these positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod filters;
pub mod fmt;
pub mod logspace;
pub mod qcore;
pub mod replication;
pub mod scaling;
pub mod spectra;

pub use error::{Error, ErrorKind, Result};
pub use filters::{
    build_super_filter, build_windowed_filter, identity_filter, success_probability, Filter,
    FilterKind, Window,
};
pub use replication::{
    deterministic_fidelity, exact_fidelity, fidelity_lower_bound, lemma1_upper_bound,
    pyes_decay_rate, windowed_fidelity_bound, BoundReport, ReplicationInstance,
    ReplicationResult,
};
pub use scaling::{
    fit_exponent, run_sweep, ExponentFit, FilterPolicy, FitColumn, FitTransform, SweepDataset,
    SweepGrid, SweepRow, SweepSpec,
};
pub use spectra::{
    anchor_shift, enumerate_partitions, multinomial_weight, n_copy_distribution,
    normalize_spectrum, AnchorPair, EnergyDistribution, Limits, Partition, Spectrum,
};
