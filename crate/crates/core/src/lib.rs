//! Exact-propagation simulator of a CNOT gate executed on the two active
//! qubits of a charge-qubit quantum computer with static internal flaws.
//!
//! The register is coupled to N idle self-interacting qubits (the bath);
//! all 2^(2+N) amplitudes are integrated exactly through the nine-segment
//! pulse sequence realizing the gate. Diagnostics quantify non-unitary
//! errors (purity), total errors (fidelity against the bath-free gate),
//! bath chaos (level-spacing statistics, Loschmidt echo), and the coherent
//! shift (canonical averages and variances of the bath coupling operators).

pub mod campaign;
pub mod diagnostics;
mod error;
pub mod hilbert;
pub mod model;
pub mod propagate;
pub mod spectral;

pub use error::{Error, Result};
