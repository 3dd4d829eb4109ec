//! Kraus families, pure states on projective space, density matrices and
//! the elementary kernel/channel arithmetic shared by the rest of the crate.
//!
//! Matrices are dense and row-major. States are unit vectors whose phase is
//! fixed so that the entry of largest modulus is real and non-negative (ties
//! go to the lowest index); two representatives of the same ray therefore
//! compare equal bit for bit after canonicalization.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::linalg;

pub type C64 = Complex64;

/// Branch weights below this are treated as the measure-zero event `W x = 0`.
pub const ZERO_BRANCH_FLOOR: f64 = 1e-300;

/// Default tolerance on `‖Σ A_i* A_i − Id‖`.
pub const DEFAULT_STOCHASTIC_TOL: f64 = 1e-10;

const C_ZERO: C64 = C64::new(0.0, 0.0);
const C_ONE: C64 = C64::new(1.0, 0.0);

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![C_ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = C_ONE;
        }
        m
    }

    /// Builds a matrix from row-major data of length `dim * dim`.
    pub fn from_row_major(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: data.len() });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("matrix entries must be finite".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: Vec<Vec<C64>>) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            data.extend(row);
        }
        Self::from_row_major(dim, data)
    }

    /// Real diagonal matrix.
    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m.set(i, i, C64::new(e, 0.0));
        }
        m
    }

    /// Outer product `u v*`.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        assert_eq!(u.len(), v.len());
        let dim = u.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = u[i] * v[j].conj();
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.data[row * self.dim + col] = value;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<C64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut m = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m.data[j * d + i] = self.data[i * d + j].conj();
            }
        }
        m
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matrix dimensions differ");
        let d = self.dim;
        let mut m = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == C_ZERO {
                    continue;
                }
                for j in 0..d {
                    m.data[i * d + j] += a * rhs.data[k * d + j];
                }
            }
        }
        m
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matrix dimensions differ");
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Self { dim: self.dim, data }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matrix dimensions differ");
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Self { dim: self.dim, data }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|z| z * factor).collect() }
    }

    pub fn mul_vec_into(&self, x: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let row = &self.data[i * d..(i + 1) * d];
            *o = row.iter().zip(x).fold(C_ZERO, |acc, (a, b)| acc + a * b);
        }
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C_ZERO; self.dim];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `(M + M*) / 2`.
    pub fn hermitian_part(&self) -> Self {
        self.add(&self.adjoint()).scale(C64::new(0.5, 0.0))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = self.dim;
        (0..d).all(|i| (0..d).all(|j| (self.get(i, j) - self.get(j, i).conj()).norm() <= tol))
    }

    /// Spectral norm of a hermitian matrix (largest |eigenvalue|).
    pub fn hermitian_norm(&self) -> f64 {
        linalg::hermitian_eigen(&self.hermitian_part())
            .0
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
    }

    /// True if `M = c·Id` within `tol` (entrywise, after removing the trace part).
    pub fn is_scalar(&self, tol: f64) -> bool {
        let c = self.trace() / self.dim as f64;
        let d = self.dim;
        (0..d).all(|i| {
            (0..d).all(|j| {
                let target = if i == j { c } else { C_ZERO };
                (self.get(i, j) - target).norm() <= tol
            })
        })
    }
}

/// A finitely supported Kraus measure `μ = Σ_i δ_{A_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr", into = "FamilyRepr")]
pub struct KrausFamily {
    dim: usize,
    operators: Vec<ComplexMatrix>,
    tolerance: f64,
}

/// Outcome of [`KrausFamily::validate_stochasticity`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticityReport {
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl KrausFamily {
    /// Checks structure only (non-empty, all operators `d×d`, `d ≥ 1`).
    /// Stochasticity is reported by [`validate_stochasticity`](Self::validate_stochasticity).
    pub fn new(operators: Vec<ComplexMatrix>) -> Result<Self> {
        let first = operators.first().ok_or(Error::EmptyFamily)?;
        let dim = first.dim();
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if let Some(bad) = operators.iter().find(|a| a.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: bad.dim() });
        }
        Ok(Self { dim, operators, tolerance: DEFAULT_STOCHASTIC_TOL })
    }

    /// Like [`new`](Self::new) but rejects families failing the stochasticity check.
    pub fn stochastic(operators: Vec<ComplexMatrix>) -> Result<Self> {
        let family = Self::new(operators)?;
        family.ensure_stochastic()?;
        Ok(family)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }

    pub fn operator(&self, index: usize) -> &ComplexMatrix {
        &self.operators[index]
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// `Σ_i A_i* A_i`.
    pub fn effect_sum(&self) -> ComplexMatrix {
        self.operators
            .iter()
            .fold(ComplexMatrix::zeros(self.dim), |acc, a| acc.add(&a.adjoint().mul(a)))
    }

    pub fn validate_stochasticity(&self) -> StochasticityReport {
        let residual = self.effect_sum().sub(&ComplexMatrix::identity(self.dim)).hermitian_norm();
        StochasticityReport { residual, tolerance: self.tolerance, pass: residual <= self.tolerance }
    }

    pub fn ensure_stochastic(&self) -> Result<()> {
        let report = self.validate_stochasticity();
        if report.pass {
            Ok(())
        } else {
            Err(Error::NonStochastic { residual: report.residual, tolerance: report.tolerance })
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Serialize, Deserialize)]
struct FamilyRepr {
    dim: usize,
    operators: Vec<Vec<Vec<[f64; 2]>>>,
}

impl TryFrom<FamilyRepr> for KrausFamily {
    type Error = Error;

    fn try_from(repr: FamilyRepr) -> Result<Self> {
        let mut ops = Vec::with_capacity(repr.operators.len());
        for rows in repr.operators {
            if rows.len() != repr.dim {
                return Err(Error::DimensionMismatch { expected: repr.dim, found: rows.len() });
            }
            let rows = rows
                .into_iter()
                .map(|r| r.into_iter().map(|[re, im]| C64::new(re, im)).collect())
                .collect();
            ops.push(ComplexMatrix::from_rows(rows)?);
        }
        KrausFamily::new(ops)
    }
}

impl From<KrausFamily> for FamilyRepr {
    fn from(family: KrausFamily) -> Self {
        let operators = family
            .operators
            .iter()
            .map(|m| m.rows().into_iter().map(|r| r.into_iter().map(|z| [z.re, z.im]).collect()).collect())
            .collect();
        FamilyRepr { dim: family.dim, operators }
    }
}

pub(crate) type Amplitudes = SmallVec<[C64; 4]>;

/// A point of complex projective space, stored as its canonical unit representative.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectiveState {
    amps: Amplitudes,
}

impl ProjectiveState {
    /// Normalizes and canonicalizes a non-zero vector.
    pub fn from_vector(v: &[C64]) -> Result<Self> {
        let norm_sq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if !(norm_sq > ZERO_BRANCH_FLOOR) || !norm_sq.is_finite() {
            return Err(Error::ZeroBranch { weight: norm_sq });
        }
        Ok(Self::from_unnormalized(v, norm_sq))
    }

    pub fn from_real(v: &[f64]) -> Result<Self> {
        let z: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_vector(&z)
    }

    /// Basis vector `e_k`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut amps: Amplitudes = SmallVec::from_elem(C_ZERO, dim);
        amps[k] = C_ONE;
        Self { amps }
    }

    /// Unitarily invariant random state (normalized complex Gaussian vector).
    pub fn random<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        loop {
            let v: Vec<C64> = (0..dim)
                .map(|_| C64::new(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal)))
                .collect();
            if let Ok(x) = Self::from_vector(&v) {
                return x;
            }
        }
    }

    pub(crate) fn from_unnormalized(v: &[C64], norm_sq: f64) -> Self {
        let inv = 1.0 / norm_sq.sqrt();
        let mut best = 0;
        let mut best_mod = -1.0;
        for (i, z) in v.iter().enumerate() {
            let m = z.norm_sqr();
            if m > best_mod {
                best_mod = m;
                best = i;
            }
        }
        let pivot = v[best];
        let phase = if pivot == C_ZERO { C_ONE } else { pivot.conj() / pivot.norm() };
        let factor = phase * inv;
        let mut amps: Amplitudes = v.iter().map(|z| z * factor).collect();
        // The pivot is real and non-negative by construction; drop rounding residue.
        amps[best] = C64::new(amps[best].norm(), 0.0);
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    /// `⟨x, y⟩ = Σ conj(x_k) y_k` on the canonical representatives.
    pub fn inner(&self, other: &Self) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    /// `d(x̂, ŷ) = √(1 − |⟨x, y⟩|²)`.
    ///
    /// Evaluated through `‖x‖²‖y‖² − |⟨x, y⟩|² = Σ_{i<j} |x_i y_j − x_j y_i|²`,
    /// which has no cancellation for nearly parallel states.
    pub fn distance(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim(), "state dimensions differ");
        let (x, y) = (&self.amps, &other.amps);
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                s += (x[i] * y[j] - x[j] * y[i]).norm_sqr();
            }
        }
        s.min(1.0).sqrt()
    }

    /// `|⟨e_k, x⟩|²`.
    pub fn population(&self, k: usize) -> f64 {
        self.amps[k].norm_sqr()
    }

    /// Grid key used for memoization: each real coordinate rounded to `resolution`.
    pub fn grid_key(&self, resolution: f64) -> StateKey {
        let scale = 1.0 / resolution;
        StateKey(
            self.amps
                .iter()
                .flat_map(|z| [(z.re * scale).round() as i64, (z.im * scale).round() as i64])
                .collect(),
        )
    }

    /// Bitwise key of the canonical representative.
    pub fn exact_key(&self) -> StateKey {
        StateKey(
            self.amps
                .iter()
                .flat_map(|z| [z.re.to_bits() as i64, z.im.to_bits() as i64])
                .collect(),
        )
    }
}

impl fmt::Display for ProjectiveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, z) in self.amps.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:.6}{:+.6}i", z.re, z.im)?;
        }
        write!(f, "]")
    }
}

/// Hashable key identifying a state (exactly or on a grid).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(SmallVec<[i64; 8]>);

/// `d(x̂, ŷ)`; see [`ProjectiveState::distance`].
pub fn metric_distance(x: &ProjectiveState, y: &ProjectiveState) -> f64 {
    x.distance(y)
}

/// Applies `v` to `x̂`, returning `(v·x̂, ‖v x‖²)`.
pub fn apply_kraus(v: &ComplexMatrix, x: &ProjectiveState) -> Result<(ProjectiveState, f64)> {
    if v.dim() != x.dim() {
        return Err(Error::DimensionMismatch { expected: v.dim(), found: x.dim() });
    }
    let mut out: Amplitudes = SmallVec::from_elem(C_ZERO, x.dim());
    v.mul_vec_into(x.amplitudes(), &mut out);
    let weight: f64 = out.iter().map(|z| z.norm_sqr()).sum();
    if !(weight >= ZERO_BRANCH_FLOOR) {
        return Err(Error::ZeroBranch { weight });
    }
    Ok((ProjectiveState::from_unnormalized(&out, weight), weight))
}

/// All branches `(i, A_i·x̂, ‖A_i x‖²)` of the kernel at `x̂`, skipping vanishing ones.
pub fn branches(family: &KrausFamily, x: &ProjectiveState) -> Vec<(usize, ProjectiveState, f64)> {
    family
        .operators()
        .iter()
        .enumerate()
        .filter_map(|(i, a)| apply_kraus(a, x).ok().map(|(y, w)| (i, y, w)))
        .collect()
}

/// A finite outcome word `(i_1, …, i_n)`; indices are zero-based operator positions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Word(pub Vec<usize>);

impl Word {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn concat(&self, other: &Word) -> Word {
        Word(self.0.iter().chain(&other.0).copied().collect())
    }

    /// All `count^len` words of a given length, in lexicographic order.
    pub fn all_of_length(count: usize, len: usize) -> Vec<Word> {
        let mut words = vec![Word::empty()];
        for _ in 0..len {
            words = words
                .into_iter()
                .flat_map(|w| {
                    (0..count).map(move |i| {
                        let mut v = w.0.clone();
                        v.push(i);
                        Word(v)
                    })
                })
                .collect();
        }
        words
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, ")")
    }
}

/// `W = A_{i_n} ⋯ A_{i_1}` rescaled to unit largest entry, with the log of the removed scale.
///
/// The true product is `exp(log_scale) · W`. A word whose product vanishes
/// returns the zero matrix and `log_scale = −∞`.
pub fn word_product(family: &KrausFamily, word: &Word) -> Result<(ComplexMatrix, f64)> {
    let mut product = ComplexMatrix::identity(family.dim());
    let mut log_scale = 0.0;
    for &i in word.indices() {
        if i >= family.len() {
            return Err(Error::InvalidIndex { index: i, count: family.len() });
        }
        product = family.operator(i).mul(&product);
        let s = product.max_abs();
        if s == 0.0 {
            return Ok((ComplexMatrix::zeros(family.dim()), f64::NEG_INFINITY));
        }
        product = product.scale(C64::new(1.0 / s, 0.0));
        log_scale += s.ln();
    }
    Ok((product, log_scale))
}

/// Density matrix: hermitian, positive semidefinite, unit trace.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    pub const TOL: f64 = 1e-10;

    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_hermitian(Self::TOL) {
            return Err(Error::InvalidParameter("density matrix must be hermitian".into()));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > Self::TOL || tr.im.abs() > Self::TOL {
            return Err(Error::InvalidParameter(format!("density matrix trace {tr} is not 1")));
        }
        let (eig, _) = linalg::hermitian_eigen(&matrix.hermitian_part());
        if eig.iter().any(|&l| l < -Self::TOL) {
            return Err(Error::InvalidParameter("density matrix has a negative eigenvalue".into()));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn new_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    /// `Id / d`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self { matrix: ComplexMatrix::identity(dim).scale(C64::new(1.0 / dim as f64, 0.0)) }
    }

    /// `Σ_k w_k π_{x̂_k}` for non-negative weights summing to one.
    pub fn mixture(states: &[(ProjectiveState, f64)]) -> Result<Self> {
        let dim = states.first().map(|(s, _)| s.dim()).ok_or(Error::EmptyFamily)?;
        let mut m = ComplexMatrix::zeros(dim);
        for (s, w) in states {
            m = m.add(&projector_of(s).matrix.scale(C64::new(*w, 0.0)));
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::hermitian_eigen(&self.matrix.hermitian_part()).0
    }

    /// Number of eigenvalues above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        self.eigenvalues().iter().filter(|&&l| l > tol).count()
    }

    /// Trace norm `‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &Self) -> f64 {
        let diff = self.matrix.sub(&other.matrix).hermitian_part();
        linalg::hermitian_eigen(&diff).0.iter().map(|l| l.abs()).sum()
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = self
            .matrix
            .rows()
            .into_iter()
            .map(|r| r.into_iter().map(|z| [z.re, z.im]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

/// `φ(ρ) = Σ_i A_i ρ A_i*`.
pub fn channel_apply(family: &KrausFamily, rho: &DensityMatrix) -> DensityMatrix {
    let out = family
        .operators()
        .iter()
        .fold(ComplexMatrix::zeros(family.dim()), |acc, a| acc.add(&a.mul(rho.matrix()).mul(&a.adjoint())));
    DensityMatrix::new_unchecked(out)
}

/// Orthogonal projector onto `C·x`.
pub fn projector_of(x: &ProjectiveState) -> DensityMatrix {
    DensityMatrix::new_unchecked(ComplexMatrix::outer(x.amplitudes(), x.amplitudes()))
}
