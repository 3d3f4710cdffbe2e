//! Dense Hilbert-space metrology for clock states `e^{-itH}|ψ⟩`.
//!
//! Matrices are small (`d <= 64`), so matrix functions go through the
//! Hermitian eigendecomposition and inverses through the SVD pseudo-inverse.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::neumaier_sum;
use crate::spectra::Spectrum;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Largest Hilbert-space dimension accepted.
pub const MAX_DIM: usize = 64;
/// Singular values at or below this are treated as zero by pseudo-inverses.
pub const PINV_CUTOFF: f64 = 1e-12;
/// Eigenvalues closer than this are treated as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-10;

const HERMITIAN_TOL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-12;
const CONTRACTION_TOL: f64 = 1e-10;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn max_abs_entry(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues ascending.
fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// `V f(Λ) V†` for Hermitian `m`.
fn hermitian_function(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (values, vectors) = hermitian_eigen(m);
    let diag = CMatrix::from_diagonal(&CVector::from_iterator(
        values.len(),
        values.iter().map(|&v| c(f(v))),
    ));
    &vectors * diag * vectors.adjoint()
}

fn pseudo_inverse(m: &CMatrix) -> Result<CMatrix> {
    m.clone()
        .pseudo_inverse(PINV_CUTOFF)
        .map_err(|e| Error::Numeric(format!("pseudo-inverse failed: {e}")))
}

/// Groups of indices into an ascending eigenvalue list whose neighbours
/// differ by at most [`DEGENERACY_GAP`].
fn degenerate_groups(values: &[f64]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if v - values[*g.last().unwrap()] <= DEGENERACY_GAP => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// A Hamiltonian together with the probe state it rotates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SystemFile", into = "SystemFile")]
pub struct QuantumSystem {
    hamiltonian: CMatrix,
    psi: CVector,
    energies: Vec<f64>,
    eigenvectors: CMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub dim: usize,
    /// Row-major entries as `[re, im]` pairs.
    pub hamiltonian: Vec<[f64; 2]>,
    pub psi: Vec<[f64; 2]>,
}

impl TryFrom<SystemFile> for QuantumSystem {
    type Error = Error;

    fn try_from(f: SystemFile) -> Result<Self> {
        let d = f.dim;
        if f.hamiltonian.len() != d * d || f.psi.len() != d {
            return Err(Error::Validation(format!(
                "dim {d} needs {} Hamiltonian entries and {d} amplitudes, got {} and {}",
                d * d,
                f.hamiltonian.len(),
                f.psi.len()
            )));
        }
        let h = CMatrix::from_row_iterator(
            d,
            d,
            f.hamiltonian.iter().map(|&[re, im]| Complex64::new(re, im)),
        );
        let psi = CVector::from_iterator(d, f.psi.iter().map(|&[re, im]| Complex64::new(re, im)));
        QuantumSystem::new(h, psi)
    }
}

impl From<QuantumSystem> for SystemFile {
    fn from(s: QuantumSystem) -> Self {
        let d = s.dim();
        let mut hamiltonian = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let z = s.hamiltonian[(i, j)];
                hamiltonian.push([z.re, z.im]);
            }
        }
        SystemFile {
            dim: d,
            hamiltonian,
            psi: s.psi.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl QuantumSystem {
    pub fn new(hamiltonian: CMatrix, psi: CVector) -> Result<Self> {
        let d = psi.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::Validation(format!("dimension must lie in 1..={MAX_DIM}, got {d}")));
        }
        if hamiltonian.shape() != (d, d) {
            return Err(Error::Validation(format!(
                "Hamiltonian is {:?}, state has dimension {d}",
                hamiltonian.shape()
            )));
        }
        if hamiltonian.iter().chain(psi.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Validation("non-finite matrix or state entry".into()));
        }
        let asym = max_abs_entry(&(&hamiltonian - hamiltonian.adjoint()));
        if asym > HERMITIAN_TOL {
            return Err(Error::Validation(format!(
                "Hamiltonian is not Hermitian (max |H - H†| = {asym:e})"
            )));
        }
        let norm = psi.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Validation(format!("state norm is {norm}, expected 1")));
        }
        let (energies, eigenvectors) = hermitian_eigen(&hamiltonian);
        Ok(Self {
            hamiltonian,
            psi,
            energies,
            eigenvectors,
        })
    }

    /// Diagonal Hamiltonian carrying the spectrum's energies, probed by
    /// `Σ sqrt(p_k) |k⟩`.
    pub fn from_spectrum(s: &Spectrum) -> Result<Self> {
        let energies = s.energies_f64();
        let d = energies.len();
        let h = CMatrix::from_diagonal(&CVector::from_iterator(d, energies.iter().map(|&e| c(e))));
        let psi = CVector::from_iterator(d, s.probs().iter().map(|p| c(p.sqrt())));
        let psi = psi.unscale(psi.norm());
        Self::new(h, psi)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SystemFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::try_from(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("system serializes")
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn psi(&self) -> &CVector {
        &self.psi
    }

    /// Eigenvalues of `H`, ascending.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Eigenvectors of `H` as columns, matching [`Self::energies`].
    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    pub fn spectral_width(&self) -> f64 {
        self.energies[self.energies.len() - 1] - self.energies[0]
    }

    /// `e^{-itH}` built from the eigendecomposition.
    pub fn evolution(&self, t: f64) -> CMatrix {
        let d = self.dim();
        let phases = CVector::from_iterator(
            d,
            self.energies.iter().map(|&e| Complex64::from_polar(1.0, -e * t)),
        );
        &self.eigenvectors * CMatrix::from_diagonal(&phases) * self.eigenvectors.adjoint()
    }
}

/// `e^{-itH}|ψ⟩`.
pub fn clock_state(sys: &QuantumSystem, t: f64) -> CVector {
    let coeffs = sys.eigenvectors.adjoint() * &sys.psi;
    let rotated = CVector::from_iterator(
        sys.dim(),
        coeffs
            .iter()
            .zip(&sys.energies)
            .map(|(a, &e)| a * Complex64::from_polar(1.0, -e * t)),
    );
    &sys.eigenvectors * rotated
}

fn expectation(v: &CVector, op: &CMatrix) -> Complex64 {
    v.dotc(&(op * v))
}

/// `4 Var(H)` in `e^{-itH}|ψ⟩`.
pub fn qfi(sys: &QuantumSystem, t: f64) -> f64 {
    let psi_t = clock_state(sys, t);
    let h_psi = &sys.hamiltonian * &psi_t;
    let mean = psi_t.dotc(&h_psi).re;
    let second = h_psi.norm_squared();
    (4.0 * (second - mean * mean)).max(0.0)
}

/// A probabilistic filter `M_yes`, a contraction on the system space.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOperator {
    matrix: CMatrix,
}

impl FilterOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Validation(format!(
                "filter must be square, got {:?}",
                matrix.shape()
            )));
        }
        let gram = matrix.adjoint() * &matrix;
        let (values, _) = hermitian_eigen(&gram);
        let top = values.last().copied().unwrap_or(0.0);
        if top > 1.0 + CONTRACTION_TOL {
            return Err(Error::Validation(format!(
                "filter is not a contraction: largest eigenvalue of M†M is {top}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: CMatrix::identity(dim, dim),
        }
    }

    /// Filter diagonal in the eigenbasis of `H`; `values[k]` multiplies the
    /// `k`-th eigenvector (eigenvalues ascending).
    pub fn diagonal_in_eigenbasis(sys: &QuantumSystem, values: &[f64]) -> Result<Self> {
        if values.len() != sys.dim() {
            return Err(Error::Validation(format!(
                "need {} filter values, got {}",
                sys.dim(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + CONTRACTION_TOL) {
            return Err(Error::Validation("filter values must lie in [-1, 1]".into()));
        }
        let u = &sys.eigenvectors;
        let diag = CMatrix::from_diagonal(&CVector::from_iterator(
            values.len(),
            values.iter().map(|&v| c(v)),
        ));
        Self::new(u * diag * u.adjoint())
    }

    /// `ε|ψ_{t0}⟩⟨ψ_{t0}| + |ψ⊥⟩⟨ψ⊥|` with `ψ⊥ ∝ (H - ⟨H⟩)|ψ_{t0}⟩`: leaves
    /// the state at `t0` alone and stretches its derivative by `1/ε`.
    pub fn epsilon_filter(sys: &QuantumSystem, t0: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Validation(format!("epsilon must lie in (0, 1], got {eps}")));
        }
        let psi = clock_state(sys, t0);
        let mean = expectation(&psi, &sys.hamiltonian);
        let perp = &sys.hamiltonian * &psi - &psi * mean;
        let norm = perp.norm();
        if norm <= PINV_CUTOFF {
            return Err(Error::Validation(
                "state is an eigenvector of H; no orthogonal direction to amplify".into(),
            ));
        }
        let perp = perp.unscale(norm);
        let m = &psi * psi.adjoint() * c(eps) + &perp * perp.adjoint();
        Self::new(m)
    }

    /// Diagonal filter that keeps only the extreme energy eigenspaces and
    /// balances them, turning the probe into `(|E_max⟩ + |E_min⟩)/√2`.
    pub fn noon(sys: &QuantumSystem) -> Result<Self> {
        let groups = degenerate_groups(&sys.energies);
        if groups.len() < 2 {
            return Err(Error::Validation("H has a single eigenvalue".into()));
        }
        let coeffs = sys.eigenvectors.adjoint() * &sys.psi;
        let weight = |g: &[usize]| g.iter().map(|&i| coeffs[i].norm_sqr()).sum::<f64>().sqrt();
        let lo = &groups[0];
        let hi = &groups[groups.len() - 1];
        let (a_lo, a_hi) = (weight(lo), weight(hi));
        if a_lo <= PINV_CUTOFF || a_hi <= PINV_CUTOFF {
            return Err(Error::Validation(
                "probe has no weight on an extreme eigenspace".into(),
            ));
        }
        let floor = a_lo.min(a_hi);
        let mut values = vec![0.0; sys.dim()];
        for &i in lo {
            values[i] = floor / a_lo;
        }
        for &i in hi {
            values[i] = floor / a_hi;
        }
        Self::diagonal_in_eigenbasis(sys, &values)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn check_dim(&self, sys: &QuantumSystem) -> Result<()> {
        if self.dim() != sys.dim() {
            return Err(Error::Validation(format!(
                "filter has dimension {}, system {}",
                self.dim(),
                sys.dim()
            )));
        }
        Ok(())
    }
}

/// Filtered state `M|ψ_t⟩/‖M|ψ_t⟩‖` and the norm `‖M|ψ_t⟩‖`.
pub fn filtered_state(sys: &QuantumSystem, flt: &FilterOperator, t: f64) -> Result<(CVector, f64)> {
    flt.check_dim(sys)?;
    let raw = flt.matrix() * clock_state(sys, t);
    let norm = raw.norm();
    if norm <= PINV_CUTOFF {
        return Err(Error::Numeric("state annihilated by filter".into()));
    }
    Ok((raw.unscale(norm), norm))
}

/// The `t`-independent pieces of `K_t`: `M H M⁺` and `[H, M†M]`.
struct GeneratorParts<'a> {
    sys: &'a QuantumSystem,
    m: &'a CMatrix,
    conjugated: CMatrix,
    commutator: CMatrix,
}

impl<'a> GeneratorParts<'a> {
    fn new(sys: &'a QuantumSystem, flt: &'a FilterOperator) -> Result<Self> {
        flt.check_dim(sys)?;
        let m = flt.matrix();
        let h = &sys.hamiltonian;
        let gram = m.adjoint() * m;
        Ok(Self {
            sys,
            m,
            conjugated: m * h * pseudo_inverse(m)?,
            commutator: h * &gram - &gram * h,
        })
    }

    /// `(φ_t, ‖M|ψ_t⟩‖, scalar part of K_t)`.
    fn at(&self, t: f64) -> Result<(CVector, f64, Complex64)> {
        let psi_t = clock_state(self.sys, t);
        let raw = self.m * &psi_t;
        let norm = raw.norm();
        if norm <= PINV_CUTOFF {
            return Err(Error::Numeric("state annihilated by filter".into()));
        }
        let shift = expectation(&psi_t, &self.commutator) / (2.0 * norm * norm);
        Ok((raw.unscale(norm), norm, shift))
    }

    fn qfi(&self, t: f64) -> Result<(f64, f64)> {
        let (phi, norm, shift) = self.at(t)?;
        let k_phi = &self.conjugated * &phi + &phi * shift;
        let q = 4.0 * (k_phi.norm_squared() - phi.dotc(&k_phi).norm_sqr());
        Ok((if q < 1e-15 { 0.0 } else { q }, norm))
    }
}

/// Generator `K_t` of the filtered family, `i d|φ_t⟩/dt = K_t|φ_t⟩`:
///
/// ```text
/// K_t = M H M⁺ + ⟨ψ_t|[H, M†M]|ψ_t⟩ / (2‖M|ψ_t⟩‖²)
/// ```
pub fn prob_generator(sys: &QuantumSystem, flt: &FilterOperator, t: f64) -> Result<CMatrix> {
    let parts = GeneratorParts::new(sys, flt)?;
    let (_, _, shift) = parts.at(t)?;
    let mut k = parts.conjugated;
    for i in 0..k.nrows() {
        k[(i, i)] += shift;
    }
    Ok(k)
}

/// Quantum Fisher information of the filtered family at `t`,
/// `4(⟨K†K⟩ - |⟨K⟩|²)` in `|φ_t⟩`. Values below `1e-15` are returned as 0.
pub fn prob_qfi(sys: &QuantumSystem, flt: &FilterOperator, t: f64) -> Result<f64> {
    GeneratorParts::new(sys, flt)?.qfi(t).map(|(q, _)| q)
}

/// Cramér-Rao bound `1/Q` of the filtered family; infinite when the
/// information vanishes.
pub fn prob_crb(sys: &QuantumSystem, flt: &FilterOperator, t: f64) -> Result<f64> {
    let q = prob_qfi(sys, flt, t)?;
    Ok(if q == 0.0 { f64::INFINITY } else { 1.0 / q })
}

const MIN_QUADRATURE: usize = 64;
const MAX_QUADRATURE: usize = 1 << 20;

/// Checks that every pair of populated energies closes its phase after
/// `period`.
fn check_period(sys: &QuantumSystem, period: f64) -> Result<()> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::Validation(format!("period must be positive, got {period}")));
    }
    let coeffs = sys.eigenvectors.adjoint() * &sys.psi;
    let populated: Vec<f64> = sys
        .energies
        .iter()
        .zip(coeffs.iter())
        .filter(|(_, a)| a.norm_sqr() > 1e-24)
        .map(|(&e, _)| e)
        .collect();
    let base = populated[0];
    for &e in &populated[1..] {
        let turns = (e - base) * period / std::f64::consts::TAU;
        if (turns - turns.round()).abs() > 1e-8 * turns.abs().max(1.0) {
            return Err(Error::Validation(format!(
                "energy gap {} is not commensurate with period {period}",
                e - base
            )));
        }
    }
    Ok(())
}

/// `∫ p(t|yes) Q_t^prob dt` over one period with `p(t|yes) ∝ ‖M|ψ_t⟩‖²`.
///
/// Trapezoid rule on the periodic integrand, starting from
/// `quadrature_points` nodes and doubling until the relative change drops
/// below `1e-8`.
pub fn avg_qfi_uniform(
    sys: &QuantumSystem,
    flt: &FilterOperator,
    period: f64,
    quadrature_points: usize,
) -> Result<f64> {
    check_period(sys, period)?;
    if quadrature_points < MIN_QUADRATURE {
        return Err(Error::Validation(format!(
            "need at least {MIN_QUADRATURE} quadrature points, got {quadrature_points}"
        )));
    }
    let parts = GeneratorParts::new(sys, flt)?;
    let sample = |t: f64| -> Result<(f64, f64)> {
        match parts.qfi(t) {
            Ok((q, norm)) => Ok((norm * norm, norm * norm * q)),
            Err(Error::Numeric(_)) => Ok((0.0, 0.0)),
            Err(e) => Err(e),
        }
    };
    let mut n = quadrature_points.next_power_of_two().max(MIN_QUADRATURE);
    let mut weights = Vec::new();
    let mut values = Vec::new();
    for k in 0..n {
        let (w, wq) = sample(period * k as f64 / n as f64)?;
        weights.push(w);
        values.push(wq);
    }
    let mut previous = neumaier_sum(values.iter().copied()) / neumaier_sum(weights.iter().copied());
    while n < MAX_QUADRATURE {
        for k in 0..n {
            let (w, wq) = sample(period * (2 * k + 1) as f64 / (2 * n) as f64)?;
            weights.push(w);
            values.push(wq);
        }
        n *= 2;
        let current = neumaier_sum(values.iter().copied()) / neumaier_sum(weights.iter().copied());
        if !current.is_finite() {
            return Err(Error::Numeric("filter annihilates every clock state".into()));
        }
        if (current - previous).abs() <= 1e-8 * current.abs().max(1e-300) {
            return Ok(current);
        }
        previous = current;
    }
    Err(Error::Numeric(format!(
        "average QFI did not converge with {MAX_QUADRATURE} points"
    )))
}

/// Heisenberg-limited variance floor `1/(N²(E_max - E_min)²)`.
pub fn hl_variance_bound(s: &Spectrum, n_copies: u64) -> Result<f64> {
    if n_copies == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    let width = s.e_max() - s.e_min();
    let n = n_copies as f64;
    Ok(1.0 / (n * n * width * width))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSample {
    pub weight: f64,
    pub variance: f64,
    pub qfi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvgCrb {
    pub lower_bound: f64,
    pub average_variance: f64,
    pub holds: bool,
}

/// Averaged Cramér-Rao bound: `Σ w V >= 1 / Σ w Q`.
pub fn avg_crb(samples: &[VarianceSample]) -> Result<AvgCrb> {
    if samples.is_empty() {
        return Err(Error::Validation("no samples".into()));
    }
    for s in samples {
        if !(s.weight >= 0.0) || !(s.variance > 0.0) || !(s.qfi > 0.0) {
            return Err(Error::Validation(format!(
                "need weight >= 0 and V, Q > 0, got {s:?}"
            )));
        }
    }
    let total = neumaier_sum(samples.iter().map(|s| s.weight));
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("weights sum to {total}, expected 1")));
    }
    let avg_q = neumaier_sum(samples.iter().map(|s| s.weight * s.qfi));
    let avg_v = neumaier_sum(samples.iter().map(|s| s.weight * s.variance));
    let lower_bound = 1.0 / avg_q;
    Ok(AvgCrb {
        lower_bound,
        average_variance: avg_v,
        holds: avg_v >= lower_bound * (1.0 - 1e-12),
    })
}

/// Gaussian twirl of `P`: in the eigenbasis of `H` each entry
/// `⟨E|P|E'⟩` is multiplied by `exp(-σ²(E - E')²/2)`. Eigenvalues within
/// `1e-10` count as equal, so blocks inside a degenerate eigenspace are
/// left untouched.
pub fn gaussian_twirl(p: &CMatrix, sys: &QuantumSystem, sigma: f64) -> Result<CMatrix> {
    let d = sys.dim();
    if p.shape() != (d, d) {
        return Err(Error::Validation(format!(
            "operator is {:?}, system has dimension {d}",
            p.shape()
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!("sigma must be >= 0, got {sigma}")));
    }
    let asym = max_abs_entry(&(p - p.adjoint()));
    if asym > CONTRACTION_TOL {
        return Err(Error::Validation("operator is not Hermitian".into()));
    }
    let (values, _) = hermitian_eigen(p);
    if values[0] < -CONTRACTION_TOL {
        return Err(Error::Validation(format!(
            "operator is not positive: smallest eigenvalue {}",
            values[0]
        )));
    }

    let mut level = vec![0.0; d];
    for g in degenerate_groups(&sys.energies) {
        let mean = g.iter().map(|&i| sys.energies[i]).sum::<f64>() / g.len() as f64;
        for i in g {
            level[i] = mean;
        }
    }
    let u = &sys.eigenvectors;
    let mut in_eig = u.adjoint() * p * u;
    for i in 0..d {
        for j in 0..d {
            let gap = level[i] - level[j];
            if gap != 0.0 {
                in_eig[(i, j)] *= (-0.5 * sigma * sigma * gap * gap).exp();
            }
        }
    }
    Ok(u * in_eig * u.adjoint())
}

/// `diag(P)` in the eigenbasis of `H`, the `σ → ∞` limit of the twirl.
pub fn eigenbasis_diagonal(p: &CMatrix, sys: &QuantumSystem) -> Result<CMatrix> {
    gaussian_twirl(p, sys, 0.0).map(|_| ())?;
    let d = sys.dim();
    let mut level = vec![0usize; d];
    for (k, g) in degenerate_groups(&sys.energies).into_iter().enumerate() {
        for i in g {
            level[i] = k;
        }
    }
    let u = &sys.eigenvectors;
    let mut in_eig = u.adjoint() * p * u;
    for i in 0..d {
        for j in 0..d {
            if level[i] != level[j] {
                in_eig[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(u * in_eig * u.adjoint())
}

/// A CP map split into a pure filter followed by a channel:
/// `P(ρ) = C(m ρ m†)`.
#[derive(Debug, Clone)]
pub struct InstrumentDecomposition {
    pub m_op: CMatrix,
    pub channel_kraus: Vec<CMatrix>,
}

impl InstrumentDecomposition {
    /// Choi matrix of `ρ ↦ C(m ρ m†)`.
    pub fn reconstructed_choi(&self) -> CMatrix {
        let composed: Vec<CMatrix> = self.channel_kraus.iter().map(|k| k * &self.m_op).collect();
        choi_matrix(&composed)
    }
}

/// `Σ_{ab} |a⟩⟨b| ⊗ Φ(|a⟩⟨b|)` for `Φ(ρ) = Σ K ρ K†`.
pub fn choi_matrix(kraus: &[CMatrix]) -> CMatrix {
    let (d_out, d_in) = kraus[0].shape();
    let mut choi = CMatrix::zeros(d_in * d_out, d_in * d_out);
    for k in kraus {
        for a in 0..d_in {
            for b in 0..d_in {
                let col_a = k.column(a);
                let col_b = k.column(b);
                for i in 0..d_out {
                    for j in 0..d_out {
                        choi[(a * d_out + i, b * d_out + j)] += col_a[i] * col_b[j].conj();
                    }
                }
            }
        }
    }
    choi
}

/// Max entry of `Σ K†K - I`.
pub fn trace_preservation_error(kraus: &[CMatrix]) -> f64 {
    let d = kraus[0].ncols();
    let mut sum = CMatrix::zeros(d, d);
    for k in kraus {
        sum += k.adjoint() * k;
    }
    max_abs_entry(&(sum - CMatrix::identity(d, d)))
}

/// Splits the CP map with Kraus operators `kraus_list` into
/// `m_op = sqrt(Σ K†K)` and a trace-preserving channel with Kraus operators
/// `K_i m_op⁺`, completed on the kernel of `m_op`. Directions where
/// `Σ K†K` is at most `1e-12` count as kernel.
pub fn decompose_instrument(kraus_list: &[CMatrix]) -> Result<InstrumentDecomposition> {
    let first = kraus_list
        .first()
        .ok_or_else(|| Error::Validation("empty Kraus list".into()))?;
    let (d_out, d_in) = first.shape();
    if kraus_list.iter().any(|k| k.shape() != (d_out, d_in)) {
        return Err(Error::Validation("Kraus operators differ in shape".into()));
    }
    if d_in > MAX_DIM || d_out > MAX_DIM {
        return Err(Error::Validation(format!("dimensions above {MAX_DIM}")));
    }
    let mut gram = CMatrix::zeros(d_in, d_in);
    for k in kraus_list {
        gram += k.adjoint() * k;
    }
    let gram = (&gram + gram.adjoint()) * c(0.5);
    let (values, vectors) = hermitian_eigen(&gram);
    let top = values[values.len() - 1];
    if top > 1.0 + CONTRACTION_TOL {
        return Err(Error::Validation(format!(
            "invalid instrument: Σ K†K has eigenvalue {top} > 1"
        )));
    }

    // The cutoff applies to Σ K†K itself: its round-off sits near 1e-16,
    // which would leave square roots of order 1e-8 in the support.
    let in_support: Vec<bool> = values.iter().map(|&v| v > PINV_CUTOFF).collect();
    let diag = |f: &dyn Fn(usize) -> f64| {
        CMatrix::from_diagonal(&CVector::from_iterator(d_in, (0..d_in).map(|i| c(f(i)))))
    };
    let m_op = &vectors * diag(&|i| values[i].max(0.0).sqrt()) * vectors.adjoint();
    let m_inv = &vectors
        * diag(&|i| if in_support[i] { 1.0 / values[i].sqrt() } else { 0.0 })
        * vectors.adjoint();

    let mut channel_kraus: Vec<CMatrix> = kraus_list.iter().map(|k| k * &m_inv).collect();
    let kernel: Vec<CVector> = (0..d_in)
        .filter(|&i| !in_support[i])
        .map(|i| vectors.column(i).into_owned())
        .collect();
    if !kernel.is_empty() {
        if d_out == d_in {
            let mut proj = CMatrix::zeros(d_in, d_in);
            for v in &kernel {
                proj += v * v.adjoint();
            }
            channel_kraus.push(proj);
        } else {
            for v in &kernel {
                let mut op = CMatrix::zeros(d_out, d_in);
                op.row_mut(0).copy_from(&v.adjoint());
                channel_kraus.push(op);
            }
        }
    }
    Ok(InstrumentDecomposition {
        m_op,
        channel_kraus,
    })
}

/// Positive square root of a positive semidefinite Hermitian matrix.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    hermitian_function(m, |v| v.max(0.0).sqrt())
}
