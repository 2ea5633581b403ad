//! The interpolated Hamiltonian family `H_s = (1 - s) H0 + s H1`, its gap
//! profile, and problem-instance generators.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::qcore::{
    eig_hermitian, raw_inner, rng_from_seed, HermitianOp, Matrix, SimRng, SpectralData, State,
    C64,
};

pub const DEFAULT_GRID_RESOLUTION: usize = 257;
const REJECTION_BUDGET: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Grover,
    Random,
    TwoLevel,
    Custom,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Grover => "grover",
            Family::Random => "random",
            Family::TwoLevel => "two_level",
            Family::Custom => "custom",
        })
    }
}

/// A pair `(H0, H1)` together with `Gamma = |H0| + |H1|` and the gap profile
/// sampled on a uniform grid in `s`.
///
/// The reported minimum gap is a grid minimum and therefore an upper bound
/// on the true minimum.
#[derive(Debug, Clone)]
pub struct InterpolationProblem {
    h0: HermitianOp,
    h1: HermitianOp,
    gamma: f64,
    grid_resolution: usize,
    min_gap: f64,
    gap_profile: Vec<(f64, f64)>,
    family: Family,
    seed: Option<u64>,
}

impl InterpolationProblem {
    pub fn new(h0: HermitianOp, h1: HermitianOp) -> Result<Self> {
        Self::with_resolution(h0, h1, DEFAULT_GRID_RESOLUTION)
    }

    pub fn with_resolution(h0: HermitianOp, h1: HermitianOp, grid_resolution: usize) -> Result<Self> {
        Self::build(h0, h1, grid_resolution, Family::Custom, None)
    }

    fn build(
        h0: HermitianOp,
        h1: HermitianOp,
        grid_resolution: usize,
        family: Family,
        seed: Option<u64>,
    ) -> Result<Self> {
        if h0.dim() != h1.dim() {
            return Err(Error::DimensionMismatch {
                expected: h0.dim(),
                found: h1.dim(),
            });
        }
        if grid_resolution < 2 {
            return Err(out_of_range(
                "grid_resolution",
                grid_resolution as f64,
                "grid_resolution >= 2",
            ));
        }
        let gamma = spectral_norm(&h0)? + spectral_norm(&h1)?;
        let (min_gap, gap_profile) = scan(&h0, &h1, grid_resolution)?;
        Ok(Self {
            h0,
            h1,
            gamma,
            grid_resolution,
            min_gap,
            gap_profile,
            family,
            seed,
        })
    }

    pub fn h0(&self) -> &HermitianOp {
        &self.h0
    }

    pub fn h1(&self) -> &HermitianOp {
        &self.h1
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }

    pub fn grid_resolution(&self) -> usize {
        self.grid_resolution
    }

    pub fn gap_profile(&self) -> &[(f64, f64)] {
        &self.gap_profile
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `Gamma / g`, the hardness ratio.
    pub fn ratio(&self) -> f64 {
        self.gamma / self.min_gap
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ProblemRecord::from(self))?)
    }

    /// Rebuilds a problem from its JSON record. Derived quantities are
    /// recomputed, which reproduces them bit for bit.
    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ProblemRecord = serde_json::from_str(text)?;
        let h0 = HermitianOp::new(record_matrix(rec.dim, &rec.h0)?)?;
        let h1 = HermitianOp::new(record_matrix(rec.dim, &rec.h1)?)?;
        let p = Self::build(h0, h1, rec.grid_resolution, rec.family, rec.seed)?;
        Ok(p)
    }
}

/// Serialized form of a problem instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub dim: usize,
    pub h0: Vec<[f64; 2]>,
    pub h1: Vec<[f64; 2]>,
    pub seed: Option<u64>,
    pub family: Family,
    pub gamma: f64,
    pub min_gap: f64,
    #[serde(default = "default_grid")]
    pub grid_resolution: usize,
}

fn default_grid() -> usize {
    DEFAULT_GRID_RESOLUTION
}

impl From<&InterpolationProblem> for ProblemRecord {
    fn from(p: &InterpolationProblem) -> Self {
        let flat = |h: &HermitianOp| {
            let m = h.matrix();
            let d = m.nrows();
            (0..d * d).map(|k| {
                let z = m[(k / d, k % d)];
                [z.re, z.im]
            })
            .collect()
        };
        Self {
            dim: p.dim(),
            h0: flat(&p.h0),
            h1: flat(&p.h1),
            seed: p.seed,
            family: p.family,
            gamma: p.gamma,
            min_gap: p.min_gap,
            grid_resolution: p.grid_resolution,
        }
    }
}

fn record_matrix(dim: usize, entries: &[[f64; 2]]) -> Result<Matrix> {
    if entries.len() != dim * dim || dim == 0 {
        return Err(Error::Parse(format!(
            "expected {} matrix entries, found {}",
            dim * dim,
            entries.len()
        )));
    }
    Ok(Matrix::from_fn(dim, dim, |i, j| {
        let [re, im] = entries[i * dim + j];
        C64::new(re, im)
    }))
}

/// Largest absolute eigenvalue.
pub fn spectral_norm(h: &HermitianOp) -> Result<f64> {
    h.spectral_norm()
}

fn check_s(name: &'static str, s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(out_of_range(name, s, "0 <= s <= 1"));
    }
    Ok(())
}

/// `(1 - s) H0 + s H1`.
pub fn interpolate(p: &InterpolationProblem, s: f64) -> Result<HermitianOp> {
    check_s("s", s)?;
    interpolate_raw(&p.h0, &p.h1, s)
}

fn interpolate_raw(h0: &HermitianOp, h1: &HermitianOp, s: f64) -> Result<HermitianOp> {
    if s == 0.0 {
        return Ok(h0.clone());
    }
    if s == 1.0 {
        return Ok(h1.clone());
    }
    h0.linear_combination(1.0 - s, h1, s)
}

/// Eigendecomposition of `H_s`; fails if the ground level is degenerate.
pub fn spectrum_at(p: &InterpolationProblem, s: f64) -> Result<SpectralData> {
    let spec = eig_hermitian(&interpolate(p, s)?)?;
    if spec.ground_is_degenerate() {
        return Err(Error::DegenerateGround { s, gap: spec.gap() });
    }
    Ok(spec)
}

fn scan(h0: &HermitianOp, h1: &HermitianOp, r: usize) -> Result<(f64, Vec<(f64, f64)>)> {
    let profile: Result<Vec<(f64, f64)>> = (0..r)
        .into_par_iter()
        .map(|k| {
            let s = k as f64 / (r - 1) as f64;
            let spec = eig_hermitian(&interpolate_raw(h0, h1, s)?)?;
            if spec.ground_is_degenerate() {
                return Err(Error::DegenerateGround { s, gap: spec.gap() });
            }
            Ok((s, spec.gap()))
        })
        .collect();
    let profile = profile?;
    let min_gap = profile.iter().map(|&(_, g)| g).fold(f64::INFINITY, f64::min);
    Ok((min_gap, profile))
}

/// Recomputes the minimum gap and profile at the problem's grid resolution.
pub fn gap_scan(p: &InterpolationProblem) -> Result<(f64, Vec<(f64, f64)>)> {
    scan(&p.h0, &p.h1, p.grid_resolution)
}

/// Gap scan at an explicit resolution.
pub fn gap_scan_at(p: &InterpolationProblem, grid_resolution: usize) -> Result<(f64, Vec<(f64, f64)>)> {
    if grid_resolution < 2 {
        return Err(out_of_range(
            "grid_resolution",
            grid_resolution as f64,
            "grid_resolution >= 2",
        ));
    }
    scan(&p.h0, &p.h1, grid_resolution)
}

/// Both sides of the ground-state overlap bound
/// `|<E_{s+d,0}|E_{s,0}>|^2 >= 1 - (d Gamma / g)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn overlap_bound_check(p: &InterpolationProblem, s: f64, delta: f64) -> Result<OverlapCheck> {
    check_s("s", s)?;
    check_s("s + delta", s + delta)?;
    let a = spectrum_at(p, s)?;
    let b = spectrum_at(p, s + delta)?;
    let lhs = raw_inner(a.ground_state().amplitudes(), b.ground_state().amplitudes()).norm_sqr();
    let x = delta * p.gamma / p.min_gap;
    let rhs = 1.0 - x * x;
    Ok(OverlapCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-9,
    })
}

/// Second-order perturbative estimate of the ground-state overlap between
/// `s` and `s + delta`.
pub fn perturbation_overlap(p: &InterpolationProblem, s: f64, delta: f64) -> Result<f64> {
    check_s("s", s)?;
    check_s("s + delta", s + delta)?;
    let spec = spectrum_at(p, s)?;
    let diff = p.h0.matrix() - p.h1.matrix();
    let g0 = spec.ground_state().as_column();
    let row = g0.adjoint() * &diff;
    let e0 = spec.ground_energy();
    let mut sum = 0.0;
    for j in 1..spec.dim() {
        let v = spec.eigenvectors[j].as_column();
        let elem = (&row * &v)[(0, 0)];
        let de = e0 - spec.eigenvalues[j];
        sum += elem.norm_sqr() / (de * de);
    }
    Ok(1.0 - delta * delta * sum)
}

/// Unstructured search: `H0 = I - |u><u|` with `|u>` uniform and
/// `H1 = I - |w><w|` with `|w>` a seeded random basis state. `Gamma = 2`.
pub fn make_grover_instance(n_qubits: u32, seed: u64) -> Result<InterpolationProblem> {
    if !(1..=6).contains(&n_qubits) {
        return Err(out_of_range("n_qubits", n_qubits as f64, "1 <= n_qubits <= 6"));
    }
    let n = 1usize << n_qubits;
    let mut rng = rng_from_seed(seed);
    let marked = rng.random_range(0..n);
    let u = State::uniform(n);
    let w = State::basis(n, marked)?;
    let id = Matrix::identity(n, n);
    let h0 = HermitianOp::new(id.clone() - crate::qcore::projector(&u))?;
    let h1 = HermitianOp::new(id - crate::qcore::projector(&w))?;
    InterpolationProblem::build(h0, h1, DEFAULT_GRID_RESOLUTION, Family::Grover, Some(seed))
}

/// Index of the marked basis state of a Grover instance.
pub fn grover_marked_index(p: &InterpolationProblem) -> Option<usize> {
    if p.family != Family::Grover {
        return None;
    }
    let d = p.dim();
    (0..d).find(|&i| p.h1.matrix()[(i, i)].re.abs() < 0.5)
}

/// Random pair with spectral norms scaled to 2 each (so `Gamma = 4`),
/// rejection-sampled until the grid minimum gap reaches `min_gap_floor`.
pub fn make_random_instance(
    dim: usize,
    min_gap_floor: f64,
    rng: &mut SimRng,
) -> Result<InterpolationProblem> {
    random_instance(dim, min_gap_floor, rng, None)
}

/// [`make_random_instance`] driven by a fresh generator; the seed is recorded.
pub fn make_random_instance_seeded(
    dim: usize,
    min_gap_floor: f64,
    seed: u64,
) -> Result<InterpolationProblem> {
    let mut rng = rng_from_seed(seed);
    random_instance(dim, min_gap_floor, &mut rng, Some(seed))
}

fn random_instance(
    dim: usize,
    floor: f64,
    rng: &mut SimRng,
    seed: Option<u64>,
) -> Result<InterpolationProblem> {
    if dim < 2 {
        return Err(out_of_range("dim", dim as f64, "dim >= 2"));
    }
    for _ in 0..REJECTION_BUDGET {
        let a = normalized_random(dim, rng)?;
        let b = normalized_random(dim, rng)?;
        match InterpolationProblem::build(a, b, DEFAULT_GRID_RESOLUTION, Family::Random, seed) {
            Ok(p) if p.min_gap >= floor => return Ok(p),
            Ok(_) | Err(Error::DegenerateGround { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RejectionBudget(REJECTION_BUDGET))
}

fn normalized_random(dim: usize, rng: &mut SimRng) -> Result<HermitianOp> {
    let h = HermitianOp::random(dim, rng);
    let n = h.spectral_norm()?;
    Ok(h.scaled(2.0 / n))
}

/// Two-level avoided crossing with minimum gap exactly `gap` at `s = 1/2`:
/// `H0 = -Z + (gap/2) X`, `H1 = Z + (gap/2) X`.
pub fn make_two_level_instance(gap: f64) -> Result<InterpolationProblem> {
    if !(gap > 0.0 && gap.is_finite()) {
        return Err(out_of_range("gap", gap, "gap > 0"));
    }
    let c = |x: f64| C64::new(x, 0.0);
    let x = gap / 2.0;
    let h0 = Matrix::from_row_slice(2, 2, &[c(-1.0), c(x), c(x), c(1.0)]);
    let h1 = Matrix::from_row_slice(2, 2, &[c(1.0), c(x), c(x), c(-1.0)]);
    InterpolationProblem::build(
        HermitianOp::new(h0)?,
        HermitianOp::new(h1)?,
        DEFAULT_GRID_RESOLUTION,
        Family::TwoLevel,
        None,
    )
}
