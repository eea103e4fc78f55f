//! Bath eigenanalysis: low-energy eigenpairs, the canonical thermal
//! ensemble with cutoff n_cut, spectral unfolding, and nearest-neighbor
//! spacing statistics.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, LeastSquaresSvd, UPLO, SVD};

use crate::error::{Error, Result};
use crate::hilbert::{apply_operator, OperatorSum, Pauli, QubitIndexing, StateVector};

/// Dense real-symmetric matrix of an X/Z Pauli-string operator on
/// `n_qubits` qubits (1-based local labels).
///
/// Y factors would make entries complex; the bath Hamiltonians handled
/// here are X/Z only, so they are rejected.
pub fn dense_real_symmetric(op: &OperatorSum, n_qubits: u16) -> Result<Array2<f64>> {
    let d = 1usize << n_qubits;
    let mut m = Array2::<f64>::zeros((d, d));
    for term in op.terms() {
        if term.factors().iter().any(|&(_, p)| p == Pauli::Y) {
            return Err(Error::Config(
                "real-symmetric build requires X/Z factors only".into(),
            ));
        }
        let (flip, zy, _) = term.masks(n_qubits)?;
        for i in 0..d {
            let sign = if (i & zy).count_ones() & 1 == 1 {
                -1.0
            } else {
                1.0
            };
            m[(i ^ flip, i)] += term.coeff * sign;
        }
    }
    Ok(m)
}

/// Ascending eigenpairs of a bath Hamiltonian, with deterministic
/// ordering and sign conventions.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    energies: Vec<f64>,
    states: Vec<StateVector>,
    /// Full bath dimension 2^N (the solution may hold fewer pairs).
    bath_dim: usize,
}

impl EigenSolution {
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn bath_dim(&self) -> usize {
        self.bath_dim
    }

    pub fn is_complete(&self) -> bool {
        self.energies.len() == self.bath_dim
    }

    /// Residuals and orthonormality check; O(k²·dim), intended for tests
    /// and small k.
    pub fn validate(&self, h_local: &OperatorSum) -> Result<()> {
        for (n, (e, phi)) in self.energies.iter().zip(&self.states).enumerate() {
            let h_phi = apply_operator(h_local, phi)?;
            let mut res = 0.0f64;
            for (a, b) in h_phi.amplitudes().iter().zip(phi.amplitudes()) {
                res += (a - e * b).norm_sqr();
            }
            if res.sqrt() > 1e-8 {
                return Err(Error::Solver(format!(
                    "eigenpair {n} residual {:.3e} exceeds 1e-8",
                    res.sqrt()
                )));
            }
        }
        for i in 0..self.states.len() {
            for j in 0..i {
                if self.states[i].inner(&self.states[j]).norm() > 1e-8 {
                    return Err(Error::Solver(format!(
                        "eigenstates {j} and {i} are not orthogonal"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exact diagonalization of the bath Hamiltonian, returning the `k`
/// lowest eigenpairs.
///
/// `h_bath` carries global labels; it is restricted to the bath-local
/// space defined by `idx`. Ordering ties are broken by the index of the
/// largest-magnitude amplitude, and each vector's sign is fixed so that
/// component is positive.
pub fn eigendecompose_bath(
    h_bath: &OperatorSum,
    idx: &QubitIndexing,
    k: usize,
) -> Result<EigenSolution> {
    let d = idx.bath_dim();
    if k > d {
        return Err(Error::Config(format!(
            "requested {k} eigenpairs from a dimension-{d} bath"
        )));
    }
    let local = h_bath.shifted(-(idx.n_system as i32))?;
    if local.max_label() > idx.n_bath {
        return Err(Error::Config(
            "bath Hamiltonian acts outside the bath qubits".into(),
        ));
    }
    let m = dense_real_symmetric(&local, idx.n_bath)?;
    let (vals, vecs) = m
        .eigh(UPLO::Lower)
        .map_err(|e| Error::Solver(format!("bath eigendecomposition failed: {e}")))?;

    let mut order: Vec<usize> = (0..d).collect();
    let argmax = |col: usize| -> usize {
        let mut best = 0usize;
        let mut best_v = -1.0f64;
        for r in 0..d {
            let v = vecs[(r, col)].abs();
            if v > best_v {
                best_v = v;
                best = r;
            }
        }
        best
    };
    let anchors: Vec<usize> = (0..d).map(argmax).collect();
    order.sort_by(|&a, &b| {
        vals[a]
            .partial_cmp(&vals[b])
            .unwrap()
            .then(anchors[a].cmp(&anchors[b]))
    });

    let mut energies = Vec::with_capacity(k);
    let mut states = Vec::with_capacity(k);
    for &col in order.iter().take(k) {
        let sign = if vecs[(anchors[col], col)] < 0.0 {
            -1.0
        } else {
            1.0
        };
        let amps = (0..d)
            .map(|r| num_complex::Complex64::new(sign * vecs[(r, col)], 0.0))
            .collect();
        energies.push(vals[col]);
        states.push(StateVector::from_amplitudes(amps)?);
    }
    Ok(EigenSolution {
        energies,
        states,
        bath_dim: d,
    })
}

/// Boltzmann-weighted mixture over the n_cut lowest bath eigenstates.
#[derive(Debug, Clone)]
pub struct ThermalEnsemble {
    pub n_cut: usize,
    pub kt: f64,
    /// Positive, descending, sum to 1.
    weights: Vec<f64>,
    energies: Vec<f64>,
    states: Vec<StateVector>,
    /// exp(−(E_{n_cut}−E_1)/kT): magnitude of the first discarded weight
    /// relative to the ground state, for audit.
    pub truncation_estimate: f64,
    /// Fraction of total weight held by state n_cut+1, when known.
    pub next_weight_fraction: Option<f64>,
}

impl ThermalEnsemble {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    /// (weight, state) pairs, e.g. for building joint initial conditions.
    pub fn members(&self) -> impl Iterator<Item = (f64, &StateVector)> {
        self.weights.iter().copied().zip(self.states.iter())
    }

    /// True when the first discarded state would carry more than `tol`
    /// of the total weight.
    pub fn truncation_exceeds(&self, tol: f64) -> bool {
        self.next_weight_fraction.map_or(false, |f| f > tol)
    }
}

/// Build the thermal ensemble from the lowest `n_cut` eigenpairs.
pub fn thermal_ensemble(es: &EigenSolution, kt: f64, n_cut: usize) -> Result<ThermalEnsemble> {
    if kt <= 0.0 {
        return Err(Error::Config(format!("kT must be positive, got {kt}")));
    }
    if n_cut == 0 || n_cut > es.len() {
        return Err(Error::Config(format!(
            "n_cut = {n_cut} outside 1..={} available eigenpairs",
            es.len()
        )));
    }
    let e0 = es.energies()[0];
    let boltz: Vec<f64> = es.energies()[..n_cut]
        .iter()
        .map(|e| (-(e - e0) / kt).exp())
        .collect();
    let q: f64 = boltz.iter().sum();
    let weights: Vec<f64> = boltz.iter().map(|b| b / q).collect();
    let truncation_estimate = (-(es.energies()[n_cut - 1] - e0) / kt).exp();
    let next_weight_fraction = if es.len() > n_cut {
        let next = (-(es.energies()[n_cut] - e0) / kt).exp();
        Some(next / (q + next))
    } else {
        None
    };
    Ok(ThermalEnsemble {
        n_cut,
        kt,
        weights,
        energies: es.energies()[..n_cut].to_vec(),
        states: es.states()[..n_cut].to_vec(),
        truncation_estimate,
        next_weight_fraction,
    })
}

/// An unfolded spectrum: raw energies, the fitted smooth staircase, and
/// the mean-one spacing sequence.
#[derive(Debug, Clone)]
pub struct UnfoldedSpectrum {
    pub raw: Vec<f64>,
    pub degree: usize,
    /// Polynomial coefficients in the normalized variable
    /// u = 2(E−Emin)/(Emax−Emin) − 1 (constant term first).
    pub coefficients: Vec<f64>,
    pub unfolded: Vec<f64>,
    pub spacings: Vec<f64>,
}

/// Fit the staircase N(E) = Σ_i Θ(E−E_i) with a least-squares polynomial
/// N̄ and return the unfolded energies Ē_i = N̄(E_i).
///
/// The fit runs in a normalized variable on [−1, 1], which makes the
/// result exactly invariant under affine transformations of the input
/// energies.
pub fn unfold_spectrum(energies: &[f64], degree: usize) -> Result<UnfoldedSpectrum> {
    let n = energies.len();
    if n < 50 {
        return Err(Error::Config(format!(
            "unfolding needs at least 50 energies, got {n}"
        )));
    }
    if degree < 3 {
        return Err(Error::Config(format!("unfolding degree {degree} < 3")));
    }
    if energies.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("energies must be nondecreasing".into()));
    }
    let (emin, emax) = (energies[0], energies[n - 1]);
    if emax - emin <= 0.0 {
        return Err(Error::Fit("degenerate spectrum: zero energy span".into()));
    }
    let us: Vec<f64> = energies
        .iter()
        .map(|e| 2.0 * (e - emin) / (emax - emin) - 1.0)
        .collect();

    let mut v = Array2::<f64>::zeros((n, degree + 1));
    for (r, &u) in us.iter().enumerate() {
        let mut p = 1.0;
        for c in 0..=degree {
            v[(r, c)] = p;
            p *= u;
        }
    }
    // staircase midpoint value at each jump
    let y = Array1::from_iter((0..n).map(|i| i as f64 + 0.5));

    let (_, sv, _) = v
        .svd(false, false)
        .map_err(|e| Error::Solver(format!("unfolding SVD failed: {e}")))?;
    let (smax, smin) = (sv[0], sv[sv.len() - 1]);
    if smin <= 0.0 || smax / smin > 1e12 {
        return Err(Error::Fit(format!(
            "staircase fit ill-conditioned (condition {:.3e}); lower the degree",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let sol = v
        .least_squares(&y)
        .map_err(|e| Error::Solver(format!("unfolding least squares failed: {e}")))?;
    let coefficients = sol.solution.to_vec();

    let eval = |u: f64| {
        let mut acc = 0.0;
        let mut p = 1.0;
        for &c in &coefficients {
            acc += c * p;
            p *= u;
        }
        acc
    };
    let unfolded: Vec<f64> = us.iter().map(|&u| eval(u)).collect();
    for w in unfolded.windows(2) {
        if w[1] < w[0] - 1e-9 {
            return Err(Error::Fit(
                "fitted staircase is not monotone over the data; lower the degree".into(),
            ));
        }
    }
    let spacings: Vec<f64> = unfolded.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let mean = spacings.iter().sum::<f64>() / spacings.len() as f64;
    if (mean - 1.0).abs() > 0.02 {
        return Err(Error::Fit(format!(
            "unfolded mean spacing {mean:.4} deviates from 1 by more than 0.02"
        )));
    }
    Ok(UnfoldedSpectrum {
        raw: energies.to_vec(),
        degree,
        coefficients,
        unfolded,
        spacings,
    })
}

/// Closed-form spacing cumulative distributions.
pub fn poisson_cdf(s: f64) -> f64 {
    1.0 - (-s).exp()
}

pub fn wigner_dyson_cdf(s: f64) -> f64 {
    1.0 - (-std::f64::consts::PI * s * s / 4.0).exp()
}

/// Histogram plus Kolmogorov–Smirnov distances of the spacing sample
/// against the Poisson and Wigner–Dyson forms.
#[derive(Debug, Clone)]
pub struct SpacingStatistics {
    /// 20 bins over [0, 4]: (s_lo, s_hi, density). The density integrates
    /// to 1 over the in-range sample.
    pub histogram: Vec<(f64, f64, f64)>,
    pub ks_poisson: f64,
    pub ks_wigner_dyson: f64,
    pub n_spacings: usize,
}

pub const SPACING_BINS: usize = 20;
pub const SPACING_RANGE: f64 = 4.0;

fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &s) in sorted.iter().enumerate() {
        let f = cdf(s);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}

pub fn spacing_statistics(us: &UnfoldedSpectrum) -> Result<SpacingStatistics> {
    spacing_statistics_of(&us.spacings)
}

/// Same as [`spacing_statistics`] but on a raw spacing sample.
pub fn spacing_statistics_of(spacings: &[f64]) -> Result<SpacingStatistics> {
    if spacings.len() < 50 {
        return Err(Error::Config(format!(
            "spacing statistics need at least 50 spacings, got {}",
            spacings.len()
        )));
    }
    let width = SPACING_RANGE / SPACING_BINS as f64;
    let mut counts = [0usize; SPACING_BINS];
    let mut in_range = 0usize;
    for &s in spacings {
        if (0.0..SPACING_RANGE).contains(&s) {
            let b = ((s / width) as usize).min(SPACING_BINS - 1);
            counts[b] += 1;
            in_range += 1;
        }
    }
    let histogram = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let lo = b as f64 * width;
            let density = if in_range > 0 {
                c as f64 / (in_range as f64 * width)
            } else {
                0.0
            };
            (lo, lo + width, density)
        })
        .collect();
    let mut sorted = spacings.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SpacingStatistics {
        histogram,
        ks_poisson: ks_distance(&sorted, poisson_cdf),
        ks_wigner_dyson: ks_distance(&sorted, wigner_dyson_cdf),
        n_spacings: spacings.len(),
    })
}
