//! State-vector and operator algebra over a tensor product of qubits.
//!
//! Operators are weighted tensor products of single-qubit Pauli factors
//! applied matrix-free: a Pauli string maps a basis index to a single basis
//! index (bit flips for X/Y) times a phase (Z/Y), so applying a sum of
//! strings to a state costs O(terms * dim) with no stored matrices.
//!
//! Bit ordering is frozen: qubit 1 is the most significant bit of the basis
//! index, qubit `n` the least significant. All outputs depend on this
//! convention and it must not change.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Single-qubit Pauli factor (identity is represented by absence).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
}

/// Layout of the joint register ⊗ bath Hilbert space.
///
/// Qubit labels are 1-based: `1..=n_system` are the active register,
/// `n_system+1..=n_system+n_bath` are the idle bath qubits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QubitIndexing {
    pub n_system: u16,
    pub n_bath: u16,
}

impl QubitIndexing {
    pub fn new(n_system: u16, n_bath: u16) -> Self {
        Self { n_system, n_bath }
    }

    pub fn n_total(&self) -> u16 {
        self.n_system + self.n_bath
    }

    /// Joint dimension 2^(n_system + n_bath).
    pub fn dim(&self) -> usize {
        1 << self.n_total()
    }

    pub fn system_dim(&self) -> usize {
        1 << self.n_system
    }

    pub fn bath_dim(&self) -> usize {
        1 << self.n_bath
    }

    /// First bath qubit label.
    pub fn bath_first(&self) -> u16 {
        self.n_system + 1
    }

    /// Last bath qubit label.
    pub fn bath_last(&self) -> u16 {
        self.n_system + self.n_bath
    }
}

/// Bit position of a 1-based qubit label in an `n`-qubit basis index.
#[inline]
pub fn bit_of(label: u16, n_qubits: u16) -> u32 {
    debug_assert!(label >= 1 && label <= n_qubits);
    (n_qubits - label) as u32
}

/// A weighted tensor product of single-qubit Pauli factors.
///
/// `factors` is sorted by qubit label and holds no duplicates; a label
/// absent from the list carries the identity. The coefficient is real, so
/// every string is Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliString {
    pub coeff: f64,
    factors: Vec<(u16, Pauli)>,
}

impl PauliString {
    pub fn new(coeff: f64, factors: &[(u16, Pauli)]) -> Result<Self> {
        let mut f = factors.to_vec();
        f.sort_by_key(|&(q, _)| q);
        for w in f.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Config(format!(
                    "duplicate qubit label {} in Pauli string",
                    w[0].0
                )));
            }
        }
        if let Some(&(q, _)) = f.first() {
            if q == 0 {
                return Err(Error::Config("qubit labels are 1-based".into()));
            }
        }
        Ok(Self { coeff, factors: f })
    }

    pub fn single(coeff: f64, qubit: u16, p: Pauli) -> Self {
        Self::new(coeff, &[(qubit, p)]).expect("single factor is always valid")
    }

    pub fn two(coeff: f64, q1: u16, p1: Pauli, q2: u16, p2: Pauli) -> Self {
        Self::new(coeff, &[(q1, p1), (q2, p2)]).expect("distinct labels expected")
    }

    pub fn factors(&self) -> &[(u16, Pauli)] {
        &self.factors
    }

    pub fn max_label(&self) -> u16 {
        self.factors.last().map_or(0, |&(q, _)| q)
    }

    /// Shift every qubit label by `offset` (used to restrict bath operators
    /// to the bath-local space).
    pub fn shifted(&self, offset: i32) -> Result<Self> {
        let mut f = Vec::with_capacity(self.factors.len());
        for &(q, p) in &self.factors {
            let nq = q as i32 + offset;
            if nq < 1 {
                return Err(Error::Config(format!(
                    "label shift {offset} pushes qubit {q} out of range"
                )));
            }
            f.push((nq as u16, p));
        }
        Ok(Self {
            coeff: self.coeff,
            factors: f,
        })
    }

    /// Bit masks for applying this string to `n_qubits`-qubit basis states:
    /// `(flip, zy, y_phase)` where `flip` has a bit for every X/Y factor,
    /// `zy` for every Z/Y factor, and `y_phase = i^{#Y}`.
    pub(crate) fn masks(&self, n_qubits: u16) -> Result<(usize, usize, C64)> {
        let mut flip = 0usize;
        let mut zy = 0usize;
        let mut n_y = 0u32;
        for &(q, p) in &self.factors {
            if q > n_qubits {
                return Err(Error::Config(format!(
                    "qubit label {q} outside the {n_qubits}-qubit indexing range"
                )));
            }
            let bit = 1usize << bit_of(q, n_qubits);
            match p {
                Pauli::X => flip |= bit,
                Pauli::Y => {
                    flip |= bit;
                    zy |= bit;
                    n_y += 1;
                }
                Pauli::Z => zy |= bit,
            }
        }
        let y_phase = match n_y % 4 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        };
        Ok((flip, zy, y_phase))
    }
}

/// A Hamiltonian or coupling operator as a sum of Pauli strings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OperatorSum {
    terms: Vec<PauliString>,
}

impl OperatorSum {
    pub fn new() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn from_terms(terms: Vec<PauliString>) -> Self {
        Self { terms }
    }

    pub fn push(&mut self, term: PauliString) {
        self.terms.push(term);
    }

    pub fn terms(&self) -> &[PauliString] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_label(&self) -> u16 {
        self.terms.iter().map(|t| t.max_label()).max().unwrap_or(0)
    }

    /// Sum of two operators (term lists concatenated).
    pub fn plus(&self, other: &OperatorSum) -> OperatorSum {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        OperatorSum { terms }
    }

    pub fn scaled(&self, factor: f64) -> OperatorSum {
        let terms = self
            .terms
            .iter()
            .map(|t| PauliString {
                coeff: t.coeff * factor,
                factors: t.factors.clone(),
            })
            .collect();
        OperatorSum { terms }
    }

    /// Relabel all qubits by a constant offset.
    pub fn shifted(&self, offset: i32) -> Result<OperatorSum> {
        let terms = self
            .terms
            .iter()
            .map(|t| t.shifted(offset))
            .collect::<Result<Vec<_>>>()?;
        Ok(OperatorSum { terms })
    }
}

/// Complex amplitudes over 2^n basis states; qubit 1 is the most
/// significant bit of the basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: u16,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn zeros(n_qubits: u16) -> Self {
        Self {
            n_qubits,
            amps: vec![C64::new(0.0, 0.0); 1 << n_qubits],
        }
    }

    pub fn basis(n_qubits: u16, index: usize) -> Self {
        let mut s = Self::zeros(n_qubits);
        s.amps[index] = C64::new(1.0, 0.0);
        s
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let d = amps.len();
        if d == 0 || !d.is_power_of_two() {
            return Err(Error::Shape(format!(
                "state length {d} is not a power of two"
            )));
        }
        Ok(Self {
            n_qubits: d.trailing_zeros() as u16,
            amps,
        })
    }

    /// Product state `sys ⊗ bath` (system occupies the most significant bits).
    pub fn product(sys: &StateVector, bath: &StateVector) -> Self {
        let nb = bath.dim();
        let mut amps = Vec::with_capacity(sys.dim() * nb);
        for a in &sys.amps {
            for b in &bath.amps {
                amps.push(a * b);
            }
        }
        Self {
            n_qubits: sys.n_qubits + bath.n_qubits,
            amps,
        }
    }

    pub fn n_qubits(&self) -> u16 {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.amps {
            *a *= factor;
        }
    }
}

/// Apply `op` to `psi`, returning `Σ_terms coeff · (Pauli factors) |psi⟩`.
pub fn apply_operator(op: &OperatorSum, psi: &StateVector) -> Result<StateVector> {
    let n = psi.n_qubits();
    let mut out = StateVector::zeros(n);
    for term in op.terms() {
        let (flip, zy, y_phase) = term.masks(n)?;
        let pref = y_phase * term.coeff;
        let src = psi.amplitudes();
        let dst = out.amplitudes_mut();
        for (i, &a) in src.iter().enumerate() {
            let sign = if (i & zy).count_ones() & 1 == 1 {
                -1.0
            } else {
                1.0
            };
            dst[i ^ flip] += pref * sign * a;
        }
    }
    Ok(out)
}

/// Expectation value ⟨psi|op|psi⟩ with the imaginary residual exposed.
///
/// For real-coefficient strings the operator is Hermitian and the residual
/// is pure round-off.
pub fn expectation_state_full(op: &OperatorSum, psi: &StateVector) -> Result<(f64, f64)> {
    let applied = apply_operator(op, psi)?;
    let v = psi.inner(&applied);
    Ok((v.re, v.im.abs()))
}

/// Expectation value ⟨psi|op|psi⟩ (real part; imaginary residual is round-off).
pub fn expectation_state(op: &OperatorSum, psi: &StateVector) -> Result<f64> {
    expectation_state_full(op, psi).map(|(re, _)| re)
}

/// Ensemble expectation Σ_n w_n ⟨psi_n|op|psi_n⟩.
pub fn expectation_ensemble(op: &OperatorSum, ensemble: &[(f64, StateVector)]) -> Result<f64> {
    let mut acc = 0.0;
    for (w, psi) in ensemble {
        acc += w * expectation_state(op, psi)?;
    }
    Ok(acc)
}

/// Complex square matrix; 4×4 for the register, up to d×d in oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl DensityMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn from_entries(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::Shape(format!(
                "density matrix data length {} != {dim}x{dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        let d = psi.dim();
        let mut m = Self::zeros(d);
        let a = psi.amplitudes();
        for r in 0..d {
            for c in 0..d {
                m.data[r * d + c] = a[r] * a[c].conj();
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim + col]
    }

    #[inline]
    pub fn entry_mut(&mut self, row: usize, col: usize) -> &mut C64 {
        &mut self.data[row * self.dim + col]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.entry(i, i)).sum()
    }

    /// max_{r,c} |ρ_{rc} − ρ_{cr}^*|.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for c in 0..=r {
                let e = (self.entry(r, c) - self.entry(c, r).conj()).norm();
                worst = worst.max(e);
            }
        }
        worst
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        use ndarray_linalg::Eigh;
        let mut m = ndarray::Array2::<C64>::zeros((self.dim, self.dim));
        for r in 0..self.dim {
            for c in 0..self.dim {
                m[(r, c)] = self.entry(r, c);
            }
        }
        let (vals, _) = m
            .eigh(ndarray_linalg::UPLO::Lower)
            .map_err(|e| Error::Solver(format!("density eigenvalues: {e}")))?;
        Ok(vals.to_vec())
    }

    /// Checks the Hermiticity/trace/positivity invariants.
    pub fn validate(&self) -> Result<()> {
        let h = self.hermiticity_error();
        if h > 1e-10 {
            return Err(Error::Contract(format!(
                "density matrix not Hermitian: residual {h:.3e}"
            )));
        }
        let t = self.trace();
        if (t.re - 1.0).abs() > 1e-10 || t.im.abs() > 1e-10 {
            return Err(Error::Contract(format!(
                "density matrix trace {t} != 1"
            )));
        }
        let min = self
            .eigenvalues()?
            .first()
            .copied()
            .unwrap_or(0.0);
        if min < -1e-10 {
            return Err(Error::Contract(format!(
                "density matrix has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    }
}

/// Register reduced density ρ_S = Σ_n w_n Tr_B |Ψ_n⟩⟨Ψ_n| of a weighted
/// pure-state ensemble on the joint space.
pub fn partial_trace_bath(
    ensemble: &[(f64, StateVector)],
    idx: &QubitIndexing,
) -> Result<DensityMatrix> {
    let wsum: f64 = ensemble.iter().map(|(w, _)| w).sum();
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::Normalization(format!(
            "ensemble weights sum to {wsum:.12}, expected 1"
        )));
    }
    if ensemble.iter().any(|(w, _)| *w < 0.0) {
        return Err(Error::Normalization("negative ensemble weight".into()));
    }
    let ds = idx.system_dim();
    let db = idx.bath_dim();
    let mut rho = DensityMatrix::zeros(ds);
    for (w, psi) in ensemble {
        if psi.dim() != idx.dim() {
            return Err(Error::Shape(format!(
                "state dim {} != joint dim {}",
                psi.dim(),
                idx.dim()
            )));
        }
        let a = psi.amplitudes();
        for r in 0..ds {
            for c in 0..ds {
                let mut acc = C64::new(0.0, 0.0);
                let (ra, ca) = (&a[r * db..(r + 1) * db], &a[c * db..(c + 1) * db]);
                for (x, y) in ra.iter().zip(ca) {
                    acc += x * y.conj();
                }
                *rho.entry_mut(r, c) += *w * acc;
            }
        }
    }
    Ok(rho)
}

/// Tr(op ρ); real part with the imaginary residual exposed.
pub fn expectation_density_full(op: &OperatorSum, rho: &DensityMatrix) -> Result<(f64, f64)> {
    let d = rho.dim();
    if !d.is_power_of_two() {
        return Err(Error::Shape(format!("density dim {d} not a power of two")));
    }
    let n = d.trailing_zeros() as u16;
    let mut acc = C64::new(0.0, 0.0);
    for term in op.terms() {
        let (flip, zy, y_phase) = term.masks(n)?;
        let pref = y_phase * term.coeff;
        // Tr(P ρ) = Σ_j phase(j) ρ[j, j^flip]
        let mut t = C64::new(0.0, 0.0);
        for j in 0..d {
            let sign = if (j & zy).count_ones() & 1 == 1 {
                -1.0
            } else {
                1.0
            };
            t += sign * rho.entry(j, j ^ flip);
        }
        acc += pref * t;
    }
    Ok((acc.re, acc.im.abs()))
}

/// Tr(op ρ), real part.
pub fn expectation_density(op: &OperatorSum, rho: &DensityMatrix) -> Result<f64> {
    expectation_density_full(op, rho).map(|(re, _)| re)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn x_flips_basis_state() {
        let op = OperatorSum::from_terms(vec![PauliString::single(1.0, 1, Pauli::X)]);
        let psi = StateVector::basis(1, 0);
        let out = apply_operator(&op, &psi).unwrap();
        assert_eq!(out.amplitudes()[0], c(0.0, 0.0));
        assert_eq!(out.amplitudes()[1], c(1.0, 0.0));
    }

    #[test]
    fn z_phases_one_state() {
        let op = OperatorSum::from_terms(vec![PauliString::single(1.0, 1, Pauli::Z)]);
        let psi = StateVector::basis(1, 1);
        let out = apply_operator(&op, &psi).unwrap();
        assert_eq!(out.amplitudes()[1], c(-1.0, 0.0));
    }

    #[test]
    fn xx_flips_both_qubits() {
        let op = OperatorSum::from_terms(vec![PauliString::two(
            1.0,
            1,
            Pauli::X,
            2,
            Pauli::X,
        )]);
        let psi = StateVector::basis(2, 0b00);
        let out = apply_operator(&op, &psi).unwrap();
        assert_eq!(out.amplitudes()[0b11], c(1.0, 0.0));
        assert!(out.amplitudes()[0b00].norm() < 1e-15);
    }

    #[test]
    fn y_action_phases() {
        // Y|0> = i|1>, Y|1> = -i|0>
        let op = OperatorSum::from_terms(vec![PauliString::single(1.0, 1, Pauli::Y)]);
        let out0 = apply_operator(&op, &StateVector::basis(1, 0)).unwrap();
        assert!((out0.amplitudes()[1] - c(0.0, 1.0)).norm() < 1e-15);
        let out1 = apply_operator(&op, &StateVector::basis(1, 1)).unwrap();
        assert!((out1.amplitudes()[0] - c(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn pauli_involution() {
        let op = OperatorSum::from_terms(vec![PauliString::new(
            1.0,
            &[(1, Pauli::X), (2, Pauli::Y), (3, Pauli::Z)],
        )
        .unwrap()]);
        let mut psi = StateVector::zeros(3);
        for (i, a) in psi.amplitudes_mut().iter_mut().enumerate() {
            *a = c(0.1 * i as f64 + 0.3, 0.05 * i as f64 - 0.2);
        }
        let twice = apply_operator(&op, &apply_operator(&op, &psi).unwrap()).unwrap();
        for (a, b) in psi.amplitudes().iter().zip(twice.amplitudes()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn label_out_of_range_is_config_error() {
        let op = OperatorSum::from_terms(vec![PauliString::single(1.0, 3, Pauli::X)]);
        let psi = StateVector::basis(2, 0);
        match apply_operator(&op, &psi) {
            Err(Error::Config(_)) => {}
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn expectation_trivial_cases() {
        let z = OperatorSum::from_terms(vec![PauliString::single(1.0, 1, Pauli::Z)]);
        let x = OperatorSum::from_terms(vec![PauliString::single(1.0, 1, Pauli::X)]);
        let zero = StateVector::basis(1, 0);
        assert!((expectation_state(&z, &zero).unwrap() - 1.0).abs() < 1e-15);
        assert!(expectation_state(&x, &zero).unwrap().abs() < 1e-15);
    }

    #[test]
    fn product_state_partial_trace_is_pure() {
        // (|0>+|1>)/sqrt2 on the register qubit times a bath basis state
        let sys = StateVector::from_amplitudes(vec![
            c(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            c(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        ])
        .unwrap();
        let bath = StateVector::basis(2, 3);
        let joint = StateVector::product(&sys, &bath);
        let idx = QubitIndexing::new(1, 2);
        let rho = partial_trace_bath(&[(1.0, joint)], &idx).unwrap();
        assert!((rho.entry(0, 0).re - 0.5).abs() < 1e-14);
        assert!((rho.entry(0, 1).re - 0.5).abs() < 1e-14);
        rho.validate().unwrap();
    }

    #[test]
    fn bell_trace_is_maximally_mixed() {
        // (|0...0> + |1...1>)/sqrt2 entangles qubit 1 with the rest
        let n = 4u16;
        let d = 1usize << n;
        let mut amps = vec![c(0.0, 0.0); d];
        amps[0] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        amps[d - 1] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let psi = StateVector::from_amplitudes(amps).unwrap();
        let idx = QubitIndexing::new(1, n - 1);
        let rho = partial_trace_bath(&[(1.0, psi)], &idx).unwrap();
        assert!((rho.entry(0, 0).re - 0.5).abs() < 1e-14);
        assert!((rho.entry(1, 1).re - 0.5).abs() < 1e-14);
        assert!(rho.entry(0, 1).norm() < 1e-14);
    }

    #[test]
    fn weight_sum_violation_is_normalization_error() {
        let psi = StateVector::basis(3, 0);
        let idx = QubitIndexing::new(1, 2);
        match partial_trace_bath(&[(0.7, psi)], &idx) {
            Err(Error::Normalization(_)) => {}
            other => panic!("expected Normalization error, got {other:?}"),
        }
    }

    #[test]
    fn trace_preservation() {
        let idx = QubitIndexing::new(2, 2);
        let mut s1 = StateVector::zeros(4);
        let mut s2 = StateVector::zeros(4);
        for (i, a) in s1.amplitudes_mut().iter_mut().enumerate() {
            *a = c((i as f64).sin() + 0.2, (i as f64).cos());
        }
        for (i, a) in s2.amplitudes_mut().iter_mut().enumerate() {
            *a = c(0.5 - 0.03 * i as f64, 0.1 * i as f64);
        }
        let n1 = s1.norm();
        let n2 = s2.norm();
        s1.scale(1.0 / n1);
        s2.scale(1.0 / n2);
        let ens = [(0.25, s1), (0.75, s2)];
        let rho = partial_trace_bath(&ens, &idx).unwrap();
        let expect: f64 = ens.iter().map(|(w, s)| w * s.norm_sqr()).sum();
        assert!((rho.trace().re - expect).abs() < 1e-10);
    }
}
