//! Dense numerical kernel: states, Hermitian and unitary operators,
//! eigendecomposition, Kronecker products and seeded projective measurement.
//!
//! Composite registers use the convention that the system register is the
//! slow (left) tensor factor: joint index = `system * ancilla_dim + ancilla`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{out_of_range, Error, Result};

pub type C64 = Complex64;
pub type Matrix = DMatrix<C64>;

/// The simulator's random stream. ChaCha8 is portable and reproducible.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

const NORM_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-10;
const PROJECTOR_TOL: f64 = 1e-9;
const DEGENERACY_REL_TOL: f64 = 1e-9;

/// A normalized pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    amps: Vec<C64>,
}

impl State {
    /// Wraps an amplitude vector that must already be normalized (within 1e-10).
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::Precondition("state dimension must be positive".into()));
        }
        let norm = l2_norm(&amps);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        let mut s = Self { amps };
        s.renormalize();
        Ok(s)
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn from_unnormalized(amps: Vec<C64>) -> Result<Self> {
        let norm = l2_norm(&amps);
        if amps.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotNormalized(norm));
        }
        let mut s = Self { amps };
        s.renormalize();
        Ok(s)
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: index,
            });
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { amps })
    }

    /// Equal superposition of all basis states.
    pub fn uniform(dim: usize) -> Self {
        let a = C64::new(1.0 / (dim as f64).sqrt(), 0.0);
        Self {
            amps: vec![a; dim],
        }
    }

    /// Haar-random state.
    pub fn random(dim: usize, rng: &mut SimRng) -> Self {
        loop {
            let amps: Vec<C64> = (0..dim).map(|_| gaussian_c64(rng)).collect();
            if let Ok(s) = Self::from_unnormalized(amps) {
                return s;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.amps)
    }

    pub(crate) fn from_raw(amps: Vec<C64>) -> Self {
        Self { amps }
    }

    pub(crate) fn renormalize(&mut self) {
        let n = l2_norm(&self.amps);
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amps.iter_mut().for_each(|a| *a *= inv);
        }
    }

    /// Multiplies by the global phase `e^{i theta}`.
    pub fn with_phase(mut self, theta: f64) -> Self {
        let p = C64::from_polar(1.0, theta);
        self.amps.iter_mut().for_each(|a| *a *= p);
        self
    }

    /// Applies an operator in place.
    pub fn apply(&mut self, op: &dyn Operator) -> Result<()> {
        check_dim(op.dim(), self.dim())?;
        op.apply(&mut self.amps);
        self.renormalize();
        Ok(())
    }

    pub fn apply_adjoint(&mut self, op: &dyn Operator) -> Result<()> {
        check_dim(op.dim(), self.dim())?;
        op.apply_adjoint(&mut self.amps);
        self.renormalize();
        Ok(())
    }

    /// Probability of finding `other` when measuring this state: `|<other|self>|^2`.
    pub fn fidelity(&self, other: &State) -> Result<f64> {
        Ok(inner_product(other, self)?.norm_sqr())
    }

    pub fn as_column(&self) -> Matrix {
        Matrix::from_column_slice(self.dim(), 1, &self.amps)
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn l2_norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn gaussian_c64(rng: &mut SimRng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// `<a|b>`, conjugate-linear in the first argument.
pub fn inner_product(a: &State, b: &State) -> Result<C64> {
    check_dim(a.dim(), b.dim())?;
    Ok(raw_inner(a.amplitudes(), b.amplitudes()))
}

pub(crate) fn raw_inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// A linear map on a finite-dimensional register, applied in place.
///
/// Structured operators (phase estimation, boosted discriminators) act on
/// registers far too large to materialize, so everything downstream of the
/// kernel talks to this trait rather than to matrices.
pub trait Operator: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, amps: &mut [C64]);
    fn apply_adjoint(&self, amps: &mut [C64]);

    /// Materializes the operator column by column.
    fn to_matrix(&self) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(d, d);
        let mut col = vec![C64::new(0.0, 0.0); d];
        for j in 0..d {
            col.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
            col[j] = C64::new(1.0, 0.0);
            self.apply(&mut col);
            for (i, c) in col.iter().enumerate() {
                m[(i, j)] = *c;
            }
        }
        m
    }
}

fn matvec_in_place(m: &Matrix, amps: &mut [C64]) {
    let v = Matrix::from_column_slice(amps.len(), 1, amps);
    let out = m * v;
    amps.copy_from_slice(out.as_slice());
}

fn adjoint_matvec_in_place(m: &Matrix, amps: &mut [C64]) {
    let v = Matrix::from_column_slice(amps.len(), 1, amps);
    let out = m.ad_mul(&v);
    amps.copy_from_slice(out.as_slice());
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Dense Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOp {
    m: Matrix,
}

impl HermitianOp {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let dev = max_abs(&(&m - m.adjoint()));
        if dev > HERMITIAN_TOL * max_abs(&m).max(1.0) {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self { m })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        let d: Vec<C64> = diag.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::new(Matrix::from_diagonal(&nalgebra::DVector::from_vec(d)))
    }

    /// GUE-distributed random Hermitian matrix.
    pub fn random(dim: usize, rng: &mut SimRng) -> Self {
        let a = Matrix::from_fn(dim, dim, |_, _| gaussian_c64(rng));
        Self {
            m: (&a + a.adjoint()) * C64::new(0.5, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> Result<f64> {
        let spec = eig_hermitian(self)?;
        Ok(spec
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, e| acc.max(e.abs())))
    }

    /// `a * self + b * other`; Hermitian by construction for real scalars.
    pub fn linear_combination(&self, a: f64, other: &HermitianOp, b: f64) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        let m = self.m.map(|z| z * a) + other.m.map(|z| z * b);
        Ok(Self { m })
    }

    pub fn shifted(&self, shift: f64) -> Self {
        let mut m = self.m.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += C64::new(shift, 0.0);
        }
        Self { m }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            m: self.m.map(|z| z * factor),
        }
    }
}

/// Dense unitary matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryOp {
    m: Matrix,
}

impl UnitaryOp {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let dev = unitarity_defect(&m);
        if dev > UNITARY_TOL {
            return Err(Error::NotUnitary(dev));
        }
        Ok(Self { m })
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix) -> Self {
        Self { m }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: Matrix::identity(dim, dim),
        }
    }

    /// Haar-random unitary from the QR decomposition of a Ginibre matrix.
    pub fn random(dim: usize, rng: &mut SimRng) -> Self {
        let a = Matrix::from_fn(dim, dim, |_, _| gaussian_c64(rng));
        let qr = a.qr();
        let (q, r) = qr.unpack();
        let mut q = q;
        for j in 0..dim {
            let d = r[(j, j)];
            let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
            for i in 0..dim {
                q[(i, j)] *= ph;
            }
        }
        Self { m: q }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn adjoint(&self) -> Self {
        Self {
            m: self.m.adjoint(),
        }
    }

    /// Operator product `self * other` (other acts first).
    pub fn compose(&self, other: &UnitaryOp) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self { m: &self.m * &other.m })
    }

    /// Max-entry deviation of `U^dagger U` from the identity.
    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect(&self.m)
    }
}

pub(crate) fn unitarity_defect(m: &Matrix) -> f64 {
    let d = m.nrows();
    max_abs(&(m.ad_mul(m) - Matrix::identity(d, d)))
}

impl Operator for UnitaryOp {
    fn dim(&self) -> usize {
        self.m.nrows()
    }

    fn apply(&self, amps: &mut [C64]) {
        matvec_in_place(&self.m, amps);
    }

    fn apply_adjoint(&self, amps: &mut [C64]) {
        adjoint_matvec_in_place(&self.m, amps);
    }

    fn to_matrix(&self) -> Matrix {
        self.m.clone()
    }
}

/// Kronecker product. The receiver is the slow (left) factor.
pub trait Tensor: Sized {
    fn tensor(&self, other: &Self) -> Self;
}

impl Tensor for State {
    fn tensor(&self, other: &Self) -> Self {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Self { amps }
    }
}

impl Tensor for UnitaryOp {
    fn tensor(&self, other: &Self) -> Self {
        Self {
            m: self.m.kronecker(&other.m),
        }
    }
}

impl Tensor for HermitianOp {
    fn tensor(&self, other: &Self) -> Self {
        Self {
            m: self.m.kronecker(&other.m),
        }
    }
}

/// Full eigendecomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<State>,
    pub degeneracy_tol: f64,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn ground_state(&self) -> &State {
        &self.eigenvectors[0]
    }

    /// `E_1 - E_0`, or `+inf` for a one-dimensional space.
    pub fn gap(&self) -> f64 {
        if self.eigenvalues.len() < 2 {
            return f64::INFINITY;
        }
        self.eigenvalues[1] - self.eigenvalues[0]
    }

    pub fn ground_is_degenerate(&self) -> bool {
        self.gap() <= self.degeneracy_tol
    }

    /// Index ranges of eigenvalue clusters that are degenerate within tolerance.
    pub fn levels(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for j in 1..=self.eigenvalues.len() {
            if j == self.eigenvalues.len()
                || self.eigenvalues[j] - self.eigenvalues[j - 1] > self.degeneracy_tol
            {
                out.push(start..j);
                start = j;
            }
        }
        out
    }

    /// `sum_j E_j |v_j><v_j|`.
    pub fn reconstruct(&self) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(d, d);
        for (e, v) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            let col = v.as_column();
            m += (&col * col.adjoint()) * C64::new(*e, 0.0);
        }
        m
    }

    /// Matrix whose columns are the eigenvectors.
    pub fn eigenvector_matrix(&self) -> Matrix {
        let d = self.dim();
        Matrix::from_fn(d, d, |i, j| self.eigenvectors[j].amplitudes()[i])
    }

    /// `exp(-i 2 pi H t)` assembled from this decomposition.
    pub fn evolution(&self, t: f64) -> UnitaryOp {
        let v = self.eigenvector_matrix();
        let phases = nalgebra::DVector::from_iterator(
            self.dim(),
            self.eigenvalues
                .iter()
                .map(|e| C64::from_polar(1.0, -2.0 * PI * e * t)),
        );
        let m = &v * Matrix::from_diagonal(&phases) * v.adjoint();
        UnitaryOp::from_matrix_unchecked(m)
    }
}

/// Fixes the global phase so the largest-magnitude component is real
/// positive; ties go to the lowest index.
fn fix_phase(v: &mut [C64]) {
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|z| z.norm() >= max - 1e-12)
        .unwrap_or(0);
    let ph = v[pivot].conj() / v[pivot].norm();
    v.iter_mut().for_each(|z| *z *= ph);
}

fn lexicographic(a: &[C64], b: &[C64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        for (p, q) in [(x.re, y.re), (x.im, y.im)] {
            if (p - q).abs() > 1e-12 {
                return p.partial_cmp(&q).unwrap_or(Ordering::Equal);
            }
        }
    }
    Ordering::Equal
}

/// Eigendecomposition with deterministic ordering and phase convention.
pub fn eig_hermitian(h: &HermitianOp) -> Result<SpectralData> {
    let d = h.dim();
    let eig = SymmetricEigen::try_new(h.matrix().clone(), f64::EPSILON, 1000 * d.max(1))
        .ok_or(Error::NoConvergence)?;

    let mut pairs: Vec<(f64, Vec<C64>)> = (0..d)
        .map(|j| {
            let mut v: Vec<C64> = eig.eigenvectors.column(j).iter().copied().collect();
            let n = l2_norm(&v);
            v.iter_mut().for_each(|z| *z /= n);
            fix_phase(&mut v);
            (eig.eigenvalues[j], v)
        })
        .collect();
    if pairs.iter().any(|(e, _)| !e.is_finite()) {
        return Err(Error::NoConvergence);
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    let norm = pairs
        .iter()
        .fold(0.0_f64, |acc, (e, _)| acc.max(e.abs()));
    let tol = DEGENERACY_REL_TOL * norm;

    // Within a degenerate cluster the order follows the phase-fixed vectors.
    let mut start = 0;
    for j in 1..=d {
        if j == d || pairs[j].0 - pairs[j - 1].0 > tol {
            pairs[start..j].sort_by(|a, b| lexicographic(&a.1, &b.1));
            start = j;
        }
    }

    let (eigenvalues, eigenvectors) = pairs
        .into_iter()
        .map(|(e, v)| (e, State::from_raw(v)))
        .unzip();
    Ok(SpectralData {
        eigenvalues,
        eigenvectors,
        degeneracy_tol: tol,
    })
}

/// `exp(-i 2 pi H t)` via exact eigendecomposition.
pub fn evolve_unitary(h: &HermitianOp, t: f64) -> Result<UnitaryOp> {
    if !(t >= 0.0) {
        return Err(out_of_range("t", t, "t >= 0"));
    }
    Ok(eig_hermitian(h)?.evolution(t))
}

/// Outcome of a projective measurement.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub outcome: usize,
    pub state: State,
    pub probability: f64,
}

/// Draws an index with probability proportional to `weights`.
pub(crate) fn sample_index(weights: &[f64], rng: &mut SimRng) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// Rank-one projector `|v><v|`.
pub fn projector(v: &State) -> Matrix {
    let c = v.as_column();
    &c * c.adjoint()
}

/// Ideal von Neumann measurement with an explicit complete set of
/// orthogonal projectors.
pub fn measure_projective(
    s: &State,
    projectors: &[Matrix],
    rng: &mut SimRng,
) -> Result<Measurement> {
    let d = s.dim();
    if projectors.is_empty() {
        return Err(Error::InvalidProjectors("empty projector set".into()));
    }
    let mut sum = Matrix::zeros(d, d);
    for p in projectors {
        if p.nrows() != d || p.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.nrows(),
            });
        }
        if max_abs(&(p * p - p)) > PROJECTOR_TOL || max_abs(&(p - p.adjoint())) > PROJECTOR_TOL {
            return Err(Error::InvalidProjectors("not an orthogonal projector".into()));
        }
        sum += p;
    }
    if max_abs(&(sum - Matrix::identity(d, d))) > PROJECTOR_TOL {
        return Err(Error::InvalidProjectors("projectors do not sum to identity".into()));
    }
    for i in 0..projectors.len() {
        for j in (i + 1)..projectors.len() {
            if max_abs(&(&projectors[i] * &projectors[j])) > PROJECTOR_TOL {
                return Err(Error::InvalidProjectors(format!(
                    "projectors {i} and {j} are not orthogonal"
                )));
            }
        }
    }

    let col = s.as_column();
    let images: Vec<Matrix> = projectors.iter().map(|p| p * &col).collect();
    let probs: Vec<f64> = images.iter().map(|v| v.norm_squared()).collect();
    let k = sample_index(&probs, rng);
    let state = State::from_unnormalized(images[k].as_slice().to_vec())?;
    Ok(Measurement {
        outcome: k,
        state,
        probability: probs[k],
    })
}

/// Measures the observable whose spectral decomposition is `spec`.
/// Outcomes index the degenerate levels of [`SpectralData::levels`];
/// outcome 0 is the ground level.
pub fn measure_spectral(s: &State, spec: &SpectralData, rng: &mut SimRng) -> Result<Measurement> {
    check_dim(spec.dim(), s.dim())?;
    let coeffs: Vec<C64> = spec
        .eigenvectors
        .iter()
        .map(|v| raw_inner(v.amplitudes(), s.amplitudes()))
        .collect();
    let levels = spec.levels();
    let probs: Vec<f64> = levels
        .iter()
        .map(|r| coeffs[r.clone()].iter().map(|c| c.norm_sqr()).sum())
        .collect();
    let k = sample_index(&probs, rng);
    let mut out = vec![C64::new(0.0, 0.0); s.dim()];
    for j in levels[k].clone() {
        for (o, a) in out.iter_mut().zip(spec.eigenvectors[j].amplitudes()) {
            *o += coeffs[j] * a;
        }
    }
    Ok(Measurement {
        outcome: k,
        state: State::from_unnormalized(out)?,
        probability: probs[k],
    })
}
