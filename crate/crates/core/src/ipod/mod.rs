//! Streaming incremental POD in a weighted space.
//!
//! Snapshots arrive one at a time. Each one is projected onto the current
//! M-orthonormal basis `V`; the residual norm `p` decides what happens next:
//!
//! * `p < tol_p`: the snapshot is treated as linearly dependent on `V`. Its
//!   coefficients are appended to a pending block and `p` is charged to the
//!   p-truncation ledger `e_p`. Nothing else changes.
//! * otherwise the pending block (if any) is folded in with one small SVD of
//!   `[Σ B]`, whose left rotation is kept aside and only applied to `V` at the
//!   next basis extension. The normalized residual extends the basis and the
//!   bordered triangle `[[Σ, b], [0, p]]` is diagonalized. If its smallest
//!   singular value falls below `tol_sv` that direction is dropped and its
//!   magnitude is charged to `e_sv`.
//!
//! `e_p + e_sv` bounds the Hilbert-Schmidt distance between the stream and
//! its compressed representation.

mod container;
mod state;

pub use state::{IpodState, IpodTolerances, UpdateKind, UpdateReport, DEPENDENCE_FLOOR};
