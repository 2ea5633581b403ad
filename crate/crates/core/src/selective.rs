//! Approximate selective rotations of unknown ground states.
//!
//! A discriminator `B` acts on `system (x) ancilla` and maps ground-state
//! inputs `|E_0>|e>` mostly into a marked subspace of the ancilla, excited
//! inputs mostly outside it. Phase estimation provides a concrete `B`;
//! fixed-point search boosts any `B` into a sharper one.
//!
//! Register layout: joint index = `system * 2^l + ancilla`.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::fpqs::{build_sequence, QuerySequence, RotationProvider, SelectiveRotation, Token, DEFAULT_ANGLE};
use crate::qcore::{
    check_dim, eig_hermitian, sample_index, HermitianOp, Matrix, Operator, SimRng, SpectralData,
    State, UnitaryOp, C64,
};

pub const MAX_ANCILLA_QUBITS: u32 = 12;
pub const MIN_SEPARATION: f64 = 8.0;
const BOOST_CONDITION: f64 = 0.2;

/// Phase-estimation register: `l` qubits and evolution time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AncillaConfig {
    pub l: u32,
    pub t: f64,
}

impl AncillaConfig {
    pub fn new(l: u32, t: f64) -> Result<Self> {
        if !(1..=MAX_ANCILLA_QUBITS).contains(&l) {
            return Err(out_of_range("l", l as f64, "1 <= l <= 12"));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(out_of_range("t", t, "t > 0"));
        }
        Ok(Self { l, t })
    }

    /// `t = 1 / (2 pi Gamma)`, the largest time that keeps every shifted
    /// eigenphase inside one period.
    pub fn with_default_time(l: u32, gamma: f64) -> Result<Self> {
        Self::new(l, default_time(gamma))
    }

    pub fn dim(&self) -> usize {
        1 << self.l
    }

    /// `2^l g t`: ground/excited peak separation in ancilla units.
    pub fn separation(&self, gap: f64) -> f64 {
        self.dim() as f64 * gap * self.t
    }

    /// Checks `t <= 1/(2 pi Gamma)` and `2^l g t >= 8`.
    pub fn validate(&self, gamma: f64, gap: f64) -> Result<()> {
        if self.t > default_time(gamma) * (1.0 + 1e-12) {
            return Err(out_of_range("t", self.t, "t <= 1/(2 pi Gamma)"));
        }
        let sep = self.separation(gap);
        if sep < MIN_SEPARATION {
            return Err(out_of_range("2^l g t", sep, "2^l g t >= 8"));
        }
        Ok(())
    }
}

pub fn default_time(gamma: f64) -> f64 {
    1.0 / (2.0 * PI * gamma)
}

/// A contiguous block of ancilla indices `start, start+1, ..., start+width`
/// taken mod `2^l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedSet {
    pub start: u64,
    pub width: u64,
    pub modulus: u64,
}

impl MarkedSet {
    pub fn new(start: i64, width: u64, l: u32) -> Result<Self> {
        let modulus = 1u64 << l;
        if width >= modulus {
            return Err(out_of_range("width", width as f64, "width < 2^l"));
        }
        Ok(Self {
            start: start.rem_euclid(modulus as i64) as u64,
            width,
            modulus,
        })
    }

    /// `[center - half, center + half]` mod `2^l`.
    pub fn centered(center: i64, half: u64, l: u32) -> Result<Self> {
        Self::new(center - half as i64, 2 * half, l)
    }

    /// Window for a ground peak known to lie within `slack` of `anchor`,
    /// leaving equal room on both sides toward the nearest excited peak
    /// (at least `separation` above the ground peak).
    pub fn for_anchor(anchor: i64, slack: u64, separation: f64, l: u32) -> Result<Self> {
        let h = ((separation - 2.0 * slack as f64) / 2.0).floor();
        if h < 1.0 {
            return Err(Error::Precondition(format!(
                "marked window collapses: separation {separation:.3} leaves no room around slack {slack}"
            )));
        }
        Self::centered(anchor, slack + h as u64, l)
    }

    pub fn contains(&self, k: u64) -> bool {
        (k % self.modulus + self.modulus - self.start) % self.modulus <= self.width
    }

    pub fn len(&self) -> usize {
        self.width as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn members(&self) -> impl Iterator<Item = u64> + '_ {
        (0..=self.width).map(move |i| (self.start + i) % self.modulus)
    }

    /// Indicator over `0..2^l`.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.modulus).map(|k| self.contains(k)).collect()
    }
}

/// Shared, thread-safe application counter.
#[derive(Debug, Clone, Default)]
pub struct CostCounter(Arc<AtomicU64>);

impl CostCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

/// Wraps an operator and counts every application of it or its adjoint.
pub struct CountingOp {
    inner: Arc<dyn Operator>,
    counter: CostCounter,
}

impl CountingOp {
    pub fn new(inner: Arc<dyn Operator>, counter: CostCounter) -> Self {
        Self { inner, counter }
    }

    pub fn counter(&self) -> &CostCounter {
        &self.counter
    }
}

impl Operator for CountingOp {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, amps: &mut [C64]) {
        self.counter.add(1);
        self.inner.apply(amps);
    }

    fn apply_adjoint(&self, amps: &mut [C64]) {
        self.counter.add(1);
        self.inner.apply_adjoint(amps);
    }
}

/// Dense `F` with `F|z> = 2^{-l/2} sum_k e^{2 pi i k z / 2^l} |k>`.
pub fn qft(l: u32) -> Result<UnitaryOp> {
    if !(1..=MAX_ANCILLA_QUBITS).contains(&l) {
        return Err(out_of_range("l", l as f64, "1 <= l <= 12"));
    }
    let a = 1usize << l;
    let norm = 1.0 / (a as f64).sqrt();
    let m = Matrix::from_fn(a, a, |k, z| {
        let phase = 2.0 * PI * ((k * z) % a) as f64 / a as f64;
        C64::from_polar(norm, phase)
    });
    Ok(UnitaryOp::from_matrix_unchecked(m))
}

/// Dense `sum_z U^z (x) |z><z|` on `system (x) ancilla`.
pub fn controlled_power(u: &UnitaryOp, l: u32) -> Result<UnitaryOp> {
    if !(1..=MAX_ANCILLA_QUBITS).contains(&l) {
        return Err(out_of_range("l", l as f64, "1 <= l <= 12"));
    }
    let d = u.dim();
    let a = 1usize << l;
    let mut out = Matrix::zeros(d * a, d * a);
    let mut power = Matrix::identity(d, d);
    for z in 0..a {
        for i in 0..d {
            for j in 0..d {
                out[(i * a + z, j * a + z)] = power[(i, j)];
            }
        }
        power = u.matrix() * power;
    }
    Ok(UnitaryOp::from_matrix_unchecked(out))
}

/// The phase-estimation operator `(I (x) F) C_U` with
/// `U = exp(-i 2 pi (H + shift) t)`, applied without materializing it.
pub struct PeaOperator {
    sys_dim: usize,
    anc_dim: usize,
    l: u32,
    t: f64,
    energies: Vec<f64>,
    v: Matrix,
    v_conj: Matrix,
    v_t: Matrix,
    phases: Vec<C64>,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
}

impl PeaOperator {
    pub fn new(h: &HermitianOp, cfg: AncillaConfig, shift: f64) -> Result<Self> {
        Self::from_spectrum(&eig_hermitian(h)?, cfg, shift)
    }

    /// Builds the operator from a precomputed decomposition of `H`.
    pub fn from_spectrum(spec: &SpectralData, cfg: AncillaConfig, shift: f64) -> Result<Self> {
        let cfg = AncillaConfig::new(cfg.l, cfg.t)?;
        let d = spec.dim();
        let a = cfg.dim();
        let energies: Vec<f64> = spec.eigenvalues.iter().map(|e| e + shift).collect();
        let mut phases = Vec::with_capacity(a * d);
        // Column-major A x d, matching the coefficient matrix layout.
        for e in &energies {
            for z in 0..a {
                phases.push(C64::from_polar(1.0, -2.0 * PI * e * cfg.t * z as f64));
            }
        }
        let v = spec.eigenvector_matrix();
        let mut planner = FftPlanner::new();
        Ok(Self {
            sys_dim: d,
            anc_dim: a,
            l: cfg.l,
            t: cfg.t,
            v_conj: v.map(|z| z.conj()),
            v_t: v.transpose(),
            v,
            energies,
            phases,
            inverse: planner.plan_fft_inverse(a),
            forward: planner.plan_fft_forward(a),
        })
    }

    pub fn sys_dim(&self) -> usize {
        self.sys_dim
    }

    pub fn anc_dim(&self) -> usize {
        self.anc_dim
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    /// Shifted eigenvalues, ascending.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `2^l E'_j t`: where eigenstate `j` peaks in the ancilla register.
    pub fn peak(&self, j: usize) -> f64 {
        self.anc_dim as f64 * self.energies[j] * self.t
    }

    /// Nearest ancilla index to the peak of eigenstate `j`, mod `2^l`.
    pub fn nearest_index(&self, j: usize) -> i64 {
        (self.peak(j).round() as i64).rem_euclid(self.anc_dim as i64)
    }

    /// Eigenvector matrix of the underlying Hamiltonian (columns).
    pub fn eigenvectors(&self) -> &Matrix {
        &self.v
    }

    fn controlled(&self, amps: &mut [C64], adjoint: bool) {
        let (a, d) = (self.anc_dim, self.sys_dim);
        let m = Matrix::from_column_slice(a, d, amps);
        let mut c = m * &self.v_conj;
        for (x, p) in c.iter_mut().zip(&self.phases) {
            *x *= if adjoint { p.conj() } else { *p };
        }
        let out = c * &self.v_t;
        amps.copy_from_slice(out.as_slice());
    }

    fn ancilla_fft(&self, amps: &mut [C64], fft: &Arc<dyn Fft<f64>>) {
        fft.process(amps);
        let norm = 1.0 / (self.anc_dim as f64).sqrt();
        amps.iter_mut().for_each(|x| *x *= norm);
    }
}

impl Operator for PeaOperator {
    fn dim(&self) -> usize {
        self.sys_dim * self.anc_dim
    }

    fn apply(&self, amps: &mut [C64]) {
        self.controlled(amps, false);
        self.ancilla_fft(amps, &self.inverse);
    }

    fn apply_adjoint(&self, amps: &mut [C64]) {
        self.ancilla_fft(amps, &self.forward);
        self.controlled(amps, true);
    }
}

/// Phase-estimation operator with energies shifted by `|H|`, so all
/// shifted eigenvalues are nonnegative.
pub fn pea_operator(h: &HermitianOp, cfg: AncillaConfig) -> Result<PeaOperator> {
    let shift = h.spectral_norm()?;
    PeaOperator::new(h, cfg, shift)
}

/// Closed-form ancilla amplitudes of phase estimation on an eigenstate
/// whose peak sits at `x = 2^l E' t`.
pub fn pea_amplitudes(x: f64, l: u32) -> Vec<C64> {
    let a = 1usize << l;
    (0..a)
        .map(|k| {
            let theta = 2.0 * PI * (k as f64 - x) / a as f64;
            let mut s = C64::new(0.0, 0.0);
            for z in 0..a {
                s += C64::from_polar(1.0, theta * z as f64);
            }
            s / a as f64
        })
        .collect()
}

/// Probability mass of `amps` within distance `c` of `center` (mod len).
pub fn mass_near(amps: &[C64], center: i64, c: u64) -> f64 {
    let a = amps.len() as i64;
    (-(c as i64)..=c as i64)
        .map(|d| amps[(center + d).rem_euclid(a) as usize].norm_sqr())
        .sum()
}

/// Upper bounds on the discriminator error for a given separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaBounds {
    pub separation: f64,
    pub eta0: f64,
    pub eta_excited: f64,
    pub eta: f64,
}

/// `eta_0 <= 1/(2^{l+1} g t)` and `eta_j <= 1/sqrt(2^l g t)`.
pub fn eta_bounds(cfg: AncillaConfig, gap: f64) -> Result<EtaBounds> {
    let sep = cfg.separation(gap);
    if sep < MIN_SEPARATION {
        return Err(out_of_range("2^l g t", sep, "2^l g t >= 8"));
    }
    let eta0 = 1.0 / (2.0 * sep);
    let eta_excited = 1.0 / sep.sqrt();
    Ok(EtaBounds {
        separation: sep,
        eta0,
        eta_excited,
        eta: eta0.max(eta_excited),
    })
}

/// Measured discriminator quality.
///
/// `gamma[j] = |Pi_A B (|E_j>|e>)|`; `eta0 = 1 - gamma[0]`;
/// `eta_j = gamma[j]` for excited `j`; `mu[j] = 1 + gamma[j]^2 (e^{iw} - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxQuality {
    pub eta0: f64,
    pub eta_excited_max: f64,
    pub eta: f64,
    pub gamma: Vec<f64>,
    pub mu: Vec<C64>,
}

pub fn measure_quality(
    b: &dyn Operator,
    eigenvectors: &[State],
    marked: &MarkedSet,
    omega: f64,
) -> Result<ApproxQuality> {
    let d = eigenvectors.first().map(State::dim).unwrap_or(0);
    let a = marked.modulus as usize;
    check_dim(d * a, b.dim())?;
    let mask = marked.mask();
    let e = State::uniform(a);
    let gamma: Vec<f64> = eigenvectors
        .iter()
        .map(|v| {
            let mut joint = crate::qcore::Tensor::tensor(v, &e).into_amplitudes();
            b.apply(&mut joint);
            joint
                .iter()
                .enumerate()
                .filter(|(i, _)| mask[i % a])
                .map(|(_, x)| x.norm_sqr())
                .sum::<f64>()
                .sqrt()
                .min(1.0)
        })
        .collect();
    let rot = C64::from_polar(1.0, omega) - 1.0;
    let mu = gamma.iter().map(|g| 1.0 + rot * g * g).collect();
    let eta0 = 1.0 - gamma[0];
    let eta_excited_max = gamma[1..].iter().copied().fold(0.0, f64::max);
    Ok(ApproxQuality {
        eta0,
        eta_excited_max,
        eta: eta0.max(eta_excited_max),
        gamma,
        mu,
    })
}

/// Diagonal phase `e^{i w}` on joint basis states whose ancilla index is in
/// (or, with `complement`, outside) the marked set.
pub(crate) fn subspace_phase(amps: &mut [C64], mask: &[bool], omega: f64, complement: bool) {
    let a = mask.len();
    let p = C64::from_polar(1.0, omega);
    for (i, x) in amps.iter_mut().enumerate() {
        if mask[i % a] != complement {
            *x *= p;
        }
    }
}

/// Selective rotation of the ancilla state `|e>` on every system row.
fn rotate_e(amps: &mut [C64], a: usize, omega: f64) {
    let k = (C64::from_polar(1.0, omega) - 1.0) / a as f64;
    for row in amps.chunks_mut(a) {
        let s: C64 = row.iter().sum();
        let add = k * s;
        row.iter_mut().for_each(|x| *x += add);
    }
}

/// Amplitudes of `|e>` on the ancilla, one per system index.
fn project_e(amps: &[C64], a: usize) -> Vec<C64> {
    let norm = 1.0 / (a as f64).sqrt();
    amps.chunks(a).map(|row| row.iter().sum::<C64>() * norm).collect()
}

fn attach_e(psi: &State, a: usize) -> Vec<C64> {
    let e = 1.0 / (a as f64).sqrt();
    let mut out = Vec::with_capacity(psi.dim() * a);
    for x in psi.amplitudes() {
        out.extend(std::iter::repeat_n(x * e, a));
    }
    out
}

/// Success branch of the approximate rotation: probability and (if
/// nonzero) the normalized system state.
pub fn selective_branch(
    psi: &State,
    b: &dyn Operator,
    marked: &MarkedSet,
    omega: f64,
) -> Result<(f64, Option<State>)> {
    let a = marked.modulus as usize;
    check_dim(psi.dim() * a, b.dim())?;
    let mut joint = attach_e(psi, a);
    b.apply(&mut joint);
    subspace_phase(&mut joint, &marked.mask(), omega, false);
    b.apply_adjoint(&mut joint);
    let w = project_e(&joint, a);
    let p: f64 = w.iter().map(|x| x.norm_sqr()).sum();
    let state = if p > 0.0 { State::from_unnormalized(w).ok() } else { None };
    Ok((p, state))
}

/// Attach `|e>`, apply `B`, phase the marked ancilla states by `w`, apply
/// `B^dagger`, then measure whether the ancilla is back in `|e>`.
///
/// On success returns the system state. On failure returns the normalized
/// joint post-measurement state (dimension `sys * 2^l`) for diagnostics.
pub fn approx_selective(
    psi: &State,
    b: &dyn Operator,
    marked: &MarkedSet,
    omega: f64,
    rng: &mut SimRng,
) -> Result<(bool, State)> {
    let a = marked.modulus as usize;
    check_dim(psi.dim() * a, b.dim())?;
    let mut joint = attach_e(psi, a);
    b.apply(&mut joint);
    subspace_phase(&mut joint, &marked.mask(), omega, false);
    b.apply_adjoint(&mut joint);
    let w = project_e(&joint, a);
    let p: f64 = w.iter().map(|x| x.norm_sqr()).sum();
    let u: f64 = rng.random();
    if u < p {
        return Ok((true, State::from_unnormalized(w)?));
    }
    let norm = 1.0 / (a as f64).sqrt();
    for (row, wi) in joint.chunks_mut(a).zip(&w) {
        let sub = wi * norm;
        row.iter_mut().for_each(|x| *x -= sub);
    }
    Ok((false, State::from_unnormalized(joint)?))
}

fn admissible_level(q: u64) -> Result<u32> {
    (1..=crate::fpqs::MAX_LEVEL)
        .find(|&n| crate::fpqs::query_count(n) == q)
        .ok_or_else(|| out_of_range("q", q as f64, "q = 3^n - 1 with n >= 1"))
}

/// Fixed-point boosted discriminator.
///
/// Runs `V_n` with `R_alpha = B R_e B^dagger` (applied to the output of
/// `B`) and `R_beta` a pi/3 phase on the marked subspace (first level) or
/// on its complement (second level). One application uses `q + 1`
/// applications of the inner operator.
pub struct BoostedOp {
    inner: Arc<dyn Operator>,
    mask: Vec<bool>,
    seq: QuerySequence,
    toward_unmarked: bool,
    q: u64,
    base_eta: f64,
}

impl BoostedOp {
    pub fn q(&self) -> u64 {
        self.q
    }

    /// Inner-operator applications per application of this operator.
    pub fn inner_cost(&self) -> u64 {
        self.q + 1
    }

    fn token(&self, t: Token, amps: &mut [C64]) {
        let a = self.mask.len();
        let sign = if t.is_dagger() { -1.0 } else { 1.0 };
        if t.is_alpha() {
            self.inner.apply_adjoint(amps);
            rotate_e(amps, a, sign * DEFAULT_ANGLE);
            self.inner.apply(amps);
        } else {
            subspace_phase(amps, &self.mask, sign * DEFAULT_ANGLE, self.toward_unmarked);
        }
    }
}

impl Operator for BoostedOp {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, amps: &mut [C64]) {
        self.inner.apply(amps);
        for &t in self.seq.steps() {
            self.token(t, amps);
        }
    }

    fn apply_adjoint(&self, amps: &mut [C64]) {
        for &t in self.seq.steps().iter().rev() {
            self.token(t.adjoint(), amps);
        }
        self.inner.apply_adjoint(amps);
    }
}

/// `B(q)`: drives ground-state inputs toward the marked subspace.
/// Requires `(q + 1) eta_excited^2 <= 0.2`.
pub fn boosted_b(
    b: Arc<dyn Operator>,
    marked: &MarkedSet,
    q: u64,
    eta_excited: f64,
) -> Result<BoostedOp> {
    let n = admissible_level(q)?;
    let cond = (q + 1) as f64 * eta_excited * eta_excited;
    if cond > BOOST_CONDITION {
        return Err(Error::Precondition(format!(
            "boost condition (q+1) eta^2 <= {BOOST_CONDITION} violated: {cond:.4}"
        )));
    }
    if b.dim() % marked.modulus as usize != 0 {
        return Err(Error::DimensionMismatch {
            expected: marked.modulus as usize,
            found: b.dim(),
        });
    }
    Ok(BoostedOp {
        inner: b,
        mask: marked.mask(),
        seq: build_sequence(n)?,
        toward_unmarked: false,
        q,
        base_eta: eta_excited,
    })
}

/// `B(q, q')`: boosts `B(q)` again, this time driving excited-state inputs
/// toward the unmarked subspace.
pub fn boosted_b2(b_q: Arc<BoostedOp>, marked: &MarkedSet, q_prime: u64) -> Result<BoostedOp> {
    let n = admissible_level(q_prime)?;
    Ok(BoostedOp {
        mask: marked.mask(),
        seq: build_sequence(n)?,
        toward_unmarked: true,
        q: q_prime,
        base_eta: b_q.base_eta,
        inner: b_q,
    })
}

/// Applications of the base discriminator per application of `B(q, q')`.
pub fn boosted_cost(q: u64, q_prime: u64) -> u64 {
    (q + 1) * (q_prime + 1)
}

/// Block-diagonal discriminator `B = sum_j |j><j| (x) B_j` in the
/// computational system basis, with `B_j |e> = gamma_j |m_j> + sqrt(1 -
/// gamma_j^2) |u_j>`, where `|m_j>` is a random unit vector supported on the
/// marked set and `|u_j>` one supported off it.
pub struct BlockB {
    blocks: Vec<Matrix>,
    anc_dim: usize,
}

impl BlockB {
    pub fn synthetic(marked: &MarkedSet, gammas: &[f64], rng: &mut SimRng) -> Result<Self> {
        let a = marked.modulus as usize;
        let mask = marked.mask();
        if mask.iter().all(|&m| m) {
            return Err(Error::Precondition("marked set covers the whole register".into()));
        }
        let l = a.trailing_zeros();
        let f_adj = qft(l)?.matrix().adjoint();
        let blocks = gammas
            .iter()
            .map(|&g| {
                if !(0.0..=1.0).contains(&g) {
                    return Err(out_of_range("gamma", g, "0 <= gamma <= 1"));
                }
                let m = State::random(a, rng);
                let u = State::random(a, rng);
                let restrict = |s: &State, inside: bool| {
                    let v: Vec<C64> = s
                        .amplitudes()
                        .iter()
                        .enumerate()
                        .map(|(k, x)| if mask[k] == inside { *x } else { C64::new(0.0, 0.0) })
                        .collect();
                    State::from_unnormalized(v)
                };
                let (m, u) = (restrict(&m, true)?, restrict(&u, false)?);
                let target: Vec<C64> = m
                    .amplitudes()
                    .iter()
                    .zip(u.amplitudes())
                    .map(|(x, y)| g * x + (1.0 - g * g).sqrt() * y)
                    .collect();
                let q = unitary_with_first_column(&target, rng);
                // F^dagger |e> = |0>, Q |0> = target.
                Ok(q * &f_adj)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks, anc_dim: a })
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }
}

fn unitary_with_first_column(v: &[C64], rng: &mut SimRng) -> Matrix {
    let n = v.len();
    let mut m = Matrix::from_fn(n, n, |_, _| crate::qcore::gaussian_c64(rng));
    for (i, x) in v.iter().enumerate() {
        m[(i, 0)] = *x;
    }
    let (mut q, r) = m.qr().unpack();
    let ph = r[(0, 0)] / r[(0, 0)].norm();
    for i in 0..n {
        q[(i, 0)] *= ph;
    }
    q
}

impl Operator for BlockB {
    fn dim(&self) -> usize {
        self.blocks.len() * self.anc_dim
    }

    fn apply(&self, amps: &mut [C64]) {
        for (row, b) in amps.chunks_mut(self.anc_dim).zip(&self.blocks) {
            let v = Matrix::from_column_slice(self.anc_dim, 1, row);
            row.copy_from_slice((b * v).as_slice());
        }
    }

    fn apply_adjoint(&self, amps: &mut [C64]) {
        for (row, b) in amps.chunks_mut(self.anc_dim).zip(&self.blocks) {
            let v = Matrix::from_column_slice(self.anc_dim, 1, row);
            row.copy_from_slice(b.ad_mul(&v).as_slice());
        }
    }
}

/// Runs phase estimation on `state (x) |e>`, measures the ancilla in the
/// computational basis and collapses the system onto the outcome's branch.
pub fn pea_sample(state: &mut State, pea: &dyn Operator, rng: &mut SimRng) -> Result<u64> {
    let d = state.dim();
    if d == 0 || pea.dim() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: pea.dim(),
        });
    }
    let a = pea.dim() / d;
    let mut joint = attach_e(state, a);
    pea.apply(&mut joint);
    let mut marginal = vec![0.0; a];
    for (i, x) in joint.iter().enumerate() {
        marginal[i % a] += x.norm_sqr();
    }
    let z = sample_index(&marginal, rng);
    let branch: Vec<C64> = (0..d).map(|s| joint[s * a + z]).collect();
    *state = State::from_unnormalized(branch)?;
    Ok(z as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorEstimate {
    pub anchor: i64,
    pub samples: Vec<i64>,
}

/// Median on the circle `Z / modulus`: centre on the sample with the
/// smallest total circular distance, then take the median offset.
pub fn circular_median(samples: &[i64], modulus: i64) -> Option<i64> {
    let dist = |x: i64, y: i64| {
        let d = (x - y).rem_euclid(modulus);
        d.min(modulus - d)
    };
    let centre = *samples
        .iter()
        .min_by_key(|&&c| (samples.iter().map(|&x| dist(c, x)).sum::<i64>(), c))?;
    let mut offs: Vec<i64> = samples
        .iter()
        .map(|&x| {
            let d = (x - centre).rem_euclid(modulus);
            if d > modulus / 2 { d - modulus } else { d }
        })
        .collect();
    offs.sort_unstable();
    Some((centre + offs[(offs.len() - 1) / 2]).rem_euclid(modulus))
}

/// Locates the ground peak by repeated phase estimation on a state that is
/// (approximately) the ground state. Each repeat is one PEA run and leaves
/// the system on the measured branch.
pub fn estimate_anchor(
    state: &mut State,
    pea: &dyn Operator,
    repeats: usize,
    rng: &mut SimRng,
) -> Result<AnchorEstimate> {
    if repeats == 0 {
        return Err(Error::AnchorEstimation("at least one repeat is required".into()));
    }
    let a = (pea.dim() / state.dim()) as i64;
    let samples = (0..repeats)
        .map(|_| pea_sample(state, pea, rng).map(|z| z as i64))
        .collect::<Result<Vec<_>>>()?;
    let anchor = circular_median(&samples, a)
        .ok_or_else(|| Error::AnchorEstimation("no samples".into()))?;
    Ok(AnchorEstimate { anchor, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Exact,
    Pea,
    PeaBoosted,
}

impl std::fmt::Display for OracleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OracleMode::Exact => "exact",
            OracleMode::Pea => "pea",
            OracleMode::PeaBoosted => "pea_boosted",
        })
    }
}

impl std::str::FromStr for OracleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(OracleMode::Exact),
            "pea" => Ok(OracleMode::Pea),
            "pea_boosted" => Ok(OracleMode::PeaBoosted),
            other => Err(Error::Parse(format!("unknown oracle mode {other:?}"))),
        }
    }
}

/// Boost levels `(q, q')`, each of the form `3^n - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boost {
    pub q: u64,
    pub q_prime: u64,
}

impl Boost {
    pub fn validate(&self) -> Result<()> {
        admissible_level(self.q)?;
        admissible_level(self.q_prime)?;
        Ok(())
    }
}

/// Phase-estimation parameters shared by every step of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeaSetup {
    pub cfg: AncillaConfig,
    /// Constant energy shift added before phase estimation.
    pub shift: f64,
    /// Minimum gap of the family.
    pub gap: f64,
    pub boost: Option<Boost>,
}

/// PEA operators and marked windows for the two ground states of a step.
#[derive(Clone)]
pub struct PeaContext {
    pub setup: PeaSetup,
    pub alpha_op: Arc<PeaOperator>,
    pub beta_op: Arc<PeaOperator>,
    pub alpha_marked: MarkedSet,
    pub beta_marked: MarkedSet,
}

impl PeaContext {
    /// Windows from an anchor for `H_s`: the ground peak of `H_s` is taken
    /// to lie within 2 of `anchor`, that of `H_{s+delta}` within `2 + drift`.
    pub fn from_anchor(
        setup: PeaSetup,
        alpha_op: Arc<PeaOperator>,
        beta_op: Arc<PeaOperator>,
        anchor: i64,
        drift: u64,
    ) -> Result<Self> {
        let sep = setup.cfg.separation(setup.gap);
        Ok(Self {
            alpha_marked: MarkedSet::for_anchor(anchor, 2, sep, setup.cfg.l)?,
            beta_marked: MarkedSet::for_anchor(anchor, 2 + drift, sep, setup.cfg.l)?,
            setup,
            alpha_op,
            beta_op,
        })
    }
}

enum Rotor {
    Exact(SelectiveRotation),
    Approx { b: Arc<dyn Operator>, marked: MarkedSet },
}

/// Maps fixed-point tokens to rotations about the ground states of `H_s`
/// (alpha) and `H_{s+delta}` (beta).
///
/// In PEA modes a rotation can fail its ancilla post-selection; the oracle
/// then reports [`RotationProvider::failed`] and refuses further tokens.
pub struct StepOracle<'r> {
    alpha: Rotor,
    beta: Rotor,
    rng: &'r mut SimRng,
    failed: bool,
}

fn pea_discriminator(
    pea: &Arc<PeaOperator>,
    setup: &PeaSetup,
    boost: Option<Boost>,
    marked: &MarkedSet,
    counter: &CostCounter,
) -> Result<Arc<dyn Operator>> {
    let inner: Arc<dyn Operator> = pea.clone();
    let base: Arc<dyn Operator> = Arc::new(CountingOp::new(inner, counter.clone()));
    match boost {
        None => Ok(base),
        Some(bst) => {
            let eta = eta_bounds(setup.cfg, setup.gap)?.eta_excited;
            let bq = Arc::new(boosted_b(base, marked, bst.q, eta)?);
            Ok(Arc::new(boosted_b2(bq, marked, bst.q_prime)?))
        }
    }
}

/// Builds the token provider for one step.
///
/// Exact mode rotates about the eigensolver's ground states. PEA modes need
/// a [`PeaContext`]; `counter` then receives one tick per application of a
/// phase-estimation operator or its adjoint.
pub fn make_oracle<'r>(
    mode: OracleMode,
    alpha: &SpectralData,
    beta: &SpectralData,
    pea: Option<&PeaContext>,
    counter: &CostCounter,
    rng: &'r mut SimRng,
) -> Result<StepOracle<'r>> {
    check_dim(alpha.dim(), beta.dim())?;
    let (alpha, beta) = match mode {
        OracleMode::Exact => (
            Rotor::Exact(SelectiveRotation::pi_over_3(alpha.ground_state().clone())),
            Rotor::Exact(SelectiveRotation::pi_over_3(beta.ground_state().clone())),
        ),
        OracleMode::Pea | OracleMode::PeaBoosted => {
            let ctx = pea.ok_or_else(|| Error::Precondition("PEA oracle needs an anchor and ancilla setup".into()))?;
            check_dim(alpha.dim(), ctx.alpha_op.sys_dim())?;
            let boost = match mode {
                OracleMode::PeaBoosted => Some(
                    ctx.setup
                        .boost
                        .ok_or_else(|| Error::Precondition("boosted oracle needs (q, q')".into()))?,
                ),
                _ => None,
            };
            (
                Rotor::Approx {
                    b: pea_discriminator(&ctx.alpha_op, &ctx.setup, boost, &ctx.alpha_marked, counter)?,
                    marked: ctx.alpha_marked,
                },
                Rotor::Approx {
                    b: pea_discriminator(&ctx.beta_op, &ctx.setup, boost, &ctx.beta_marked, counter)?,
                    marked: ctx.beta_marked,
                },
            )
        }
    };
    Ok(StepOracle {
        alpha,
        beta,
        rng,
        failed: false,
    })
}

impl RotationProvider for StepOracle<'_> {
    fn rotate(&mut self, token: Token, state: &mut State) -> Result<()> {
        if self.failed {
            return Err(Error::Precondition("rotation after failed post-selection".into()));
        }
        let rotor = if token.is_alpha() { &self.alpha } else { &self.beta };
        match rotor {
            Rotor::Exact(r) => {
                if token.is_dagger() {
                    state.apply_adjoint(r)
                } else {
                    state.apply(r)
                }
            }
            Rotor::Approx { b, marked } => {
                let omega = if token.is_dagger() { -DEFAULT_ANGLE } else { DEFAULT_ANGLE };
                let (ok, out) = approx_selective(state, b.as_ref(), marked, omega, self.rng)?;
                if ok {
                    *state = out;
                } else {
                    self.failed = true;
                }
                Ok(())
            }
        }
    }

    fn failed(&self) -> bool {
        self.failed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{rng_from_seed, Tensor};

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn qft_small_cases() {
        let f = qft(1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let m = f.matrix();
        assert!(close(m[(0, 0)], C64::new(r, 0.0), 1e-15));
        assert!(close(m[(1, 1)], C64::new(-r, 0.0), 1e-15));
        let f3 = qft(3).unwrap();
        assert!(f3.unitarity_defect() < 1e-12);
        let mut zero = State::basis(8, 0).unwrap();
        zero.apply(&f3).unwrap();
        assert_eq!(zero.amplitudes().len(), 8);
        for x in zero.amplitudes() {
            assert!(close(*x, C64::new(1.0 / 8f64.sqrt(), 0.0), 1e-15));
        }
        assert!(qft(13).is_err());
    }

    #[test]
    fn controlled_power_blocks() {
        let mut rng = rng_from_seed(1);
        let u = UnitaryOp::random(2, &mut rng);
        let c = controlled_power(&u, 2).unwrap();
        assert!(c.unitarity_defect() < 1e-10);
        // z = 0 block is the identity.
        assert!(close(c.matrix()[(0, 0)], C64::new(1.0, 0.0), 1e-15));
        assert!(close(c.matrix()[(0, 4)], C64::new(0.0, 0.0), 1e-15));
        // z = 3 block is U^3.
        let u3 = u.matrix() * u.matrix() * u.matrix();
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(c.matrix()[(i * 4 + 3, j * 4 + 3)], u3[(i, j)], 1e-12));
            }
        }
    }

    #[test]
    fn pea_structured_matches_dense_product() {
        let mut rng = rng_from_seed(2);
        let h = HermitianOp::random(3, &mut rng);
        let cfg = AncillaConfig::new(3, 0.05).unwrap();
        let shift = 1.7;
        let pea = PeaOperator::new(&h, cfg, shift).unwrap();
        let u = crate::qcore::evolve_unitary(&h.shifted(shift), cfg.t).unwrap();
        let dense = UnitaryOp::identity(3)
            .tensor(&qft(3).unwrap())
            .compose(&controlled_power(&u, 3).unwrap())
            .unwrap();
        let m = pea.to_matrix();
        assert!((m - dense.matrix()).iter().all(|z| z.norm() < 1e-10));
        let mut v = State::random(24, &mut rng);
        let orig = v.clone();
        v.apply(&pea).unwrap();
        v.apply_adjoint(&pea).unwrap();
        for (x, y) in v.amplitudes().iter().zip(orig.amplitudes()) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn pea_eigenstate_output_matches_closed_form() {
        let mut rng = rng_from_seed(3);
        let h = HermitianOp::random(4, &mut rng);
        let cfg = AncillaConfig::with_default_time(6, 2.0 * h.spectral_norm().unwrap()).unwrap();
        let pea = pea_operator(&h, cfg).unwrap();
        let spec = eig_hermitian(&h).unwrap();
        for j in 0..4 {
            let mut joint = spec.eigenvectors[j].tensor(&State::uniform(64));
            joint.apply(&pea).unwrap();
            let phi = pea_amplitudes(pea.peak(j), 6);
            let expected = spec.eigenvectors[j].tensor(&State::from_unnormalized(phi).unwrap());
            for (x, y) in joint.amplitudes().iter().zip(expected.amplitudes()) {
                assert!(close(*x, *y, 1e-10));
            }
        }
    }

    #[test]
    fn pea_integer_peak_is_exact() {
        let cfg = AncillaConfig::new(4, 0.01).unwrap();
        // E t 2^l = 3 and 9.
        let e = [3.0 / (16.0 * 0.01), 9.0 / (16.0 * 0.01)];
        let h = HermitianOp::from_real_diagonal(&e).unwrap();
        let pea = PeaOperator::new(&h, cfg, 0.0).unwrap();
        let mut joint = State::basis(2, 0).unwrap().tensor(&State::uniform(16));
        joint.apply(&pea).unwrap();
        assert!((joint.amplitudes()[3].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marked_set_wraps() {
        let m = MarkedSet::new(14, 3, 4).unwrap();
        assert!(m.contains(14) && m.contains(15) && m.contains(0) && m.contains(1));
        assert!(!m.contains(2) && !m.contains(13));
        assert_eq!(m.members().collect::<Vec<_>>(), vec![14, 15, 0, 1]);
        let c = MarkedSet::centered(0, 2, 4).unwrap();
        assert_eq!(c.members().collect::<Vec<_>>(), vec![14, 15, 0, 1, 2]);
        assert!(MarkedSet::new(0, 16, 4).is_err());
        assert!(MarkedSet::for_anchor(5, 3, 6.0, 6).is_err());
        let w = MarkedSet::for_anchor(20, 2, 16.0, 6).unwrap();
        assert_eq!((w.start, w.width), (12, 16));
    }

    #[test]
    fn eta_bound_values() {
        let cfg = AncillaConfig::new(4, 1.0).unwrap();
        let b = eta_bounds(cfg, 1.0).unwrap();
        assert_eq!(b.eta_excited, 0.25);
        assert_eq!(b.eta0, 1.0 / 32.0);
        let cfg = AncillaConfig::new(6, 1.0).unwrap();
        assert_eq!(eta_bounds(cfg, 1.0).unwrap().eta, 0.125);
        let c5 = AncillaConfig::new(5, 1.0).unwrap();
        let b5 = eta_bounds(c5, 1.0).unwrap();
        assert!((b5.eta0 * 2.0 - b.eta0).abs() < 1e-15);
        assert!((b5.eta_excited * 2f64.sqrt() - b.eta_excited).abs() < 1e-15);
        assert!(eta_bounds(AncillaConfig::new(2, 1.0).unwrap(), 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = AncillaConfig::with_default_time(10, 4.0).unwrap();
        assert!(cfg.validate(4.0, 0.5).is_ok());
        assert!(cfg.validate(4.0, 0.01).is_err());
        assert!(cfg.validate(8.0, 0.5).is_err());
        assert!(AncillaConfig::new(0, 1.0).is_err());
        assert!(AncillaConfig::new(3, -1.0).is_err());
    }

    fn perfect_b(d: usize, marked: &MarkedSet) -> BlockB {
        let mut gammas = vec![0.0; d];
        gammas[0] = 1.0;
        BlockB::synthetic(marked, &gammas, &mut rng_from_seed(40)).unwrap()
    }

    #[test]
    fn perfect_discriminator_rotates_ground_only() {
        let marked = MarkedSet::new(0, 1, 3).unwrap();
        let b = perfect_b(3, &marked);
        let mut rng = rng_from_seed(5);
        let ground = State::basis(3, 0).unwrap();
        let (ok, out) = approx_selective(&ground, &b, &marked, DEFAULT_ANGLE, &mut rng).unwrap();
        assert!(ok);
        assert!(close(out.amplitudes()[0], C64::from_polar(1.0, DEFAULT_ANGLE), 1e-12));
        let exc = State::basis(3, 2).unwrap();
        let (ok, out) = approx_selective(&exc, &b, &marked, DEFAULT_ANGLE, &mut rng).unwrap();
        assert!(ok);
        assert!(close(out.amplitudes()[2], C64::new(1.0, 0.0), 1e-12));
    }

    #[test]
    fn measurement_free_branch() {
        let marked = MarkedSet::new(2, 2, 3).unwrap();
        let b = perfect_b(4, &marked);
        let mut rng = rng_from_seed(6);
        let mut v = State::random(4, &mut rng).into_amplitudes();
        v[0] = C64::new(0.0, 0.0);
        let psi = State::from_unnormalized(v).unwrap();
        let (p, out) = selective_branch(&psi, &b, &marked, 1.0).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        for (x, y) in out.unwrap().amplitudes().iter().zip(psi.amplitudes()) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn synthetic_blocks_have_prescribed_gamma() {
        let marked = MarkedSet::new(1, 2, 3).unwrap();
        let gammas = [0.97, 0.1, 0.03];
        let b = BlockB::synthetic(&marked, &gammas, &mut rng_from_seed(7)).unwrap();
        let basis: Vec<State> = (0..3).map(|j| State::basis(3, j).unwrap()).collect();
        let q = measure_quality(&b, &basis, &marked, DEFAULT_ANGLE).unwrap();
        for (x, y) in q.gamma.iter().zip(gammas) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((q.eta0 - 0.03).abs() < 1e-12);
        assert!((q.eta_excited_max - 0.1).abs() < 1e-12);
        let mu0 = q.mu[0];
        assert!((mu0.norm() - 1.0).abs() <= 5.0 * q.eta);
        assert!((mu0.arg() - DEFAULT_ANGLE).abs() <= 5.0 * q.eta);
    }

    #[test]
    fn boosting_perfect_b_stays_perfect() {
        let marked = MarkedSet::new(0, 1, 3).unwrap();
        let b: Arc<dyn Operator> = Arc::new(perfect_b(2, &marked));
        let bq = Arc::new(boosted_b(b, &marked, 2, 0.0).unwrap());
        let basis: Vec<State> = (0..2).map(|j| State::basis(2, j).unwrap()).collect();
        let q1 = measure_quality(bq.as_ref(), &basis, &marked, DEFAULT_ANGLE).unwrap();
        assert!((q1.gamma[0] - 1.0).abs() < 1e-12);
        let b2 = boosted_b2(bq, &marked, 2).unwrap();
        let q2 = measure_quality(&b2, &basis, &marked, DEFAULT_ANGLE).unwrap();
        assert!(q2.eta < 1e-12);
    }

    #[test]
    fn boost_preconditions() {
        let marked = MarkedSet::new(0, 1, 3).unwrap();
        let b: Arc<dyn Operator> = Arc::new(perfect_b(2, &marked));
        assert!(boosted_b(b.clone(), &marked, 3, 0.0).is_err());
        assert!(boosted_b(b.clone(), &marked, 2, 0.3).is_err());
        assert!(boosted_b(b, &marked, 8, 0.1).is_ok());
        assert_eq!(boosted_cost(2, 2), 9);
    }

    #[test]
    fn boosted_cost_is_counted() {
        let marked = MarkedSet::new(0, 1, 3).unwrap();
        let counter = CostCounter::new();
        let inner: Arc<dyn Operator> = Arc::new(perfect_b(2, &marked));
        let b: Arc<dyn Operator> = Arc::new(CountingOp::new(inner, counter.clone()));
        let bq = Arc::new(boosted_b(b, &marked, 2, 0.05).unwrap());
        let b2 = boosted_b2(bq, &marked, 2).unwrap();
        let mut v = State::random(16, &mut rng_from_seed(3));
        v.apply(&b2).unwrap();
        assert_eq!(counter.get(), 9);
        v.apply_adjoint(&b2).unwrap();
        assert_eq!(counter.get(), 18);
    }

    #[test]
    fn circular_median_wraps() {
        assert_eq!(circular_median(&[63, 0, 1], 64), Some(0));
        assert_eq!(circular_median(&[62, 63, 63, 1, 2], 64), Some(63));
        assert_eq!(circular_median(&[10, 11, 40], 64), Some(11));
        assert_eq!(circular_median(&[], 64), None);
    }

    #[test]
    fn anchor_exact_integer_single_repeat() {
        let cfg = AncillaConfig::new(5, 0.01).unwrap();
        let e = [7.0 / (32.0 * 0.01), 20.0 / (32.0 * 0.01)];
        let h = HermitianOp::from_real_diagonal(&e).unwrap();
        let pea = PeaOperator::new(&h, cfg, 0.0).unwrap();
        let mut ground = State::basis(2, 0).unwrap();
        let est = estimate_anchor(&mut ground, &pea, 1, &mut rng_from_seed(1)).unwrap();
        assert_eq!(est.anchor, 7);
        assert!(estimate_anchor(&mut ground, &pea, 0, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn oracle_requires_anchor_in_pea_modes() {
        let h = HermitianOp::random(2, &mut rng_from_seed(2));
        let spec = eig_hermitian(&h).unwrap();
        let mut rng = rng_from_seed(1);
        let counter = CostCounter::new();
        assert!(make_oracle(OracleMode::Pea, &spec, &spec, None, &counter, &mut rng).is_err());
        assert!(make_oracle(OracleMode::Exact, &spec, &spec, None, &counter, &mut rng).is_ok());
    }
}
