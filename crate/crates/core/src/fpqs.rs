//! Fixed-point search with pi/3 selective phase rotations.
//!
//! A query sequence is stored in application order: the first token acts
//! first on the input state. Token alphabet: `A` = R_alpha, `B` = R_beta,
//! `a` = R_alpha^dagger, `b` = R_beta^dagger.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{out_of_range, Error, Result};
use crate::qcore::{check_dim, raw_inner, Operator, SimRng, State, UnitaryOp, Matrix, C64};

pub const DEFAULT_ANGLE: f64 = PI / 3.0;
pub const MAX_LEVEL: u32 = 8;

/// `1 - (1 - e^{i w}) |chi><chi|`, or its adjoint when `dagger` is set.
#[derive(Debug, Clone)]
pub struct SelectiveRotation {
    pub axis: State,
    pub angle: f64,
    pub dagger: bool,
}

impl SelectiveRotation {
    pub fn new(axis: State, angle: f64, dagger: bool) -> Self {
        Self { axis, angle, dagger }
    }

    pub fn pi_over_3(axis: State) -> Self {
        Self::new(axis, DEFAULT_ANGLE, false)
    }

    fn factor(&self, adjoint: bool) -> C64 {
        let sign = if self.dagger ^ adjoint { -1.0 } else { 1.0 };
        C64::from_polar(1.0, sign * self.angle) - 1.0
    }

    fn act(&self, amps: &mut [C64], adjoint: bool) {
        let k = self.factor(adjoint) * raw_inner(self.axis.amplitudes(), amps);
        for (a, x) in amps.iter_mut().zip(self.axis.amplitudes()) {
            *a += k * x;
        }
    }

    pub fn to_unitary(&self) -> UnitaryOp {
        let d = self.axis.dim();
        let col = self.axis.as_column();
        let m = Matrix::identity(d, d) + (&col * col.adjoint()) * self.factor(false);
        UnitaryOp::from_matrix_unchecked(m)
    }
}

impl Operator for SelectiveRotation {
    fn dim(&self) -> usize {
        self.axis.dim()
    }

    fn apply(&self, amps: &mut [C64]) {
        self.act(amps, false);
    }

    fn apply_adjoint(&self, amps: &mut [C64]) {
        self.act(amps, true);
    }
}

/// Dense selective rotation about a (normalized) axis vector.
pub fn selective_rotation(axis: &[C64], angle: f64, dagger: bool) -> Result<UnitaryOp> {
    let axis = State::new(axis.to_vec())?;
    Ok(SelectiveRotation::new(axis, angle, dagger).to_unitary())
}

/// `R_alpha R_beta |alpha>`, one fixed-point step.
pub fn fpqs_step(alpha: &State, beta: &State) -> Result<State> {
    check_dim(alpha.dim(), beta.dim())?;
    let mut s = alpha.clone();
    s.apply(&SelectiveRotation::pi_over_3(beta.clone()))?;
    s.apply(&SelectiveRotation::pi_over_3(alpha.clone()))?;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    RAlpha,
    RBeta,
    RAlphaDag,
    RBetaDag,
}

impl Token {
    pub fn adjoint(self) -> Self {
        match self {
            Token::RAlpha => Token::RAlphaDag,
            Token::RBeta => Token::RBetaDag,
            Token::RAlphaDag => Token::RAlpha,
            Token::RBetaDag => Token::RBeta,
        }
    }

    pub fn is_alpha(self) -> bool {
        matches!(self, Token::RAlpha | Token::RAlphaDag)
    }

    pub fn is_dagger(self) -> bool {
        matches!(self, Token::RAlphaDag | Token::RBetaDag)
    }

    pub fn as_char(self) -> char {
        match self {
            Token::RAlpha => 'A',
            Token::RBeta => 'B',
            Token::RAlphaDag => 'a',
            Token::RBetaDag => 'b',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A' => Some(Token::RAlpha),
            'B' => Some(Token::RBeta),
            'a' => Some(Token::RAlphaDag),
            'b' => Some(Token::RBetaDag),
            _ => None,
        }
    }
}

/// The unrolled `V_n` as a flat list of rotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySequence {
    level: u32,
    steps: Vec<Token>,
}

impl QuerySequence {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn steps(&self) -> &[Token] {
        &self.steps
    }

    pub fn query_count(&self) -> u64 {
        self.steps.len() as u64
    }

    pub fn alpha_count(&self) -> u64 {
        self.steps.iter().filter(|t| t.is_alpha()).count() as u64
    }

    pub fn beta_count(&self) -> u64 {
        self.query_count() - self.alpha_count()
    }

    /// Sequence realizing `V_n^dagger`.
    pub fn reverse_adjoint(&self) -> Self {
        Self {
            level: self.level,
            steps: reverse_adjoint(&self.steps),
        }
    }
}

fn reverse_adjoint(steps: &[Token]) -> Vec<Token> {
    steps.iter().rev().map(|t| t.adjoint()).collect()
}

impl fmt::Display for QuerySequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.steps {
            write!(f, "{}", t.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for QuerySequence {
    type Err = Error;

    /// Parses a token string; whitespace is ignored. The string must be a
    /// complete `V_n` for some level.
    fn from_str(s: &str) -> Result<Self> {
        let steps = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| Token::from_char(c).ok_or_else(|| Error::Parse(format!("bad token {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut level = 0;
        while (3u64.pow(level) - 1) < steps.len() as u64 && level < MAX_LEVEL {
            level += 1;
        }
        let expected = build_sequence(level)?;
        if expected.steps != steps {
            return Err(Error::Parse(format!(
                "token string of length {} is not a fixed-point sequence",
                steps.len()
            )));
        }
        Ok(expected)
    }
}

/// Unrolls `V_{n+1} = V_n R_alpha V_n^dagger R_beta V_n`, `V_0 = 1`.
pub fn build_sequence(level: u32) -> Result<QuerySequence> {
    if level > MAX_LEVEL {
        return Err(out_of_range("level", level as f64, "level <= 8"));
    }
    let mut steps: Vec<Token> = Vec::new();
    for _ in 0..level {
        let adj = reverse_adjoint(&steps);
        let mut next = Vec::with_capacity(3 * steps.len() + 2);
        next.extend_from_slice(&steps);
        next.push(Token::RBeta);
        next.extend_from_slice(&adj);
        next.push(Token::RAlpha);
        next.extend_from_slice(&steps);
        steps = next;
    }
    Ok(QuerySequence { level, steps })
}

/// `3^n - 1`.
pub fn query_count(level: u32) -> u64 {
    3u64.pow(level) - 1
}

/// Supplies the four rotations of a query sequence.
pub trait RotationProvider {
    fn rotate(&mut self, token: Token, state: &mut State) -> Result<()>;

    /// Set once a rotation could not be realized (e.g. a failed
    /// post-selection); the sequence stops there.
    fn failed(&self) -> bool {
        false
    }
}

/// Exact selective rotations about fixed `|alpha>` and `|beta>`.
#[derive(Debug, Clone)]
pub struct ExactRotations {
    alpha: SelectiveRotation,
    beta: SelectiveRotation,
}

impl ExactRotations {
    pub fn new(alpha: &State, beta: &State) -> Result<Self> {
        check_dim(alpha.dim(), beta.dim())?;
        Ok(Self {
            alpha: SelectiveRotation::pi_over_3(alpha.clone()),
            beta: SelectiveRotation::pi_over_3(beta.clone()),
        })
    }
}

impl RotationProvider for ExactRotations {
    fn rotate(&mut self, token: Token, state: &mut State) -> Result<()> {
        let r = if token.is_alpha() { &self.alpha } else { &self.beta };
        if token.is_dagger() {
            state.apply_adjoint(r)
        } else {
            state.apply(r)
        }
    }
}

/// Runs the sequence on `alpha`; returns the output and the number of
/// rotations used. Stops early if the provider reports a failure.
pub fn apply_sequence(
    seq: &QuerySequence,
    alpha: &State,
    provider: &mut dyn RotationProvider,
) -> Result<(State, u64)> {
    let mut s = alpha.clone();
    let mut used = 0;
    for &t in &seq.steps {
        provider.rotate(t, &mut s)?;
        used += 1;
        if provider.failed() {
            break;
        }
    }
    Ok((s, used))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointReport {
    pub epsilon: f64,
    pub level: u32,
    pub predicted_failure: f64,
    pub observed_failure: f64,
    pub queries: u64,
}

/// `1 - |<beta|alpha>|^2`.
pub fn failure(alpha: &State, beta: &State) -> Result<f64> {
    Ok((1.0 - alpha.fidelity(beta)?).max(0.0))
}

/// A random pair `(alpha, beta)` with `1 - |<beta|alpha>|^2 = epsilon`
/// and a random relative phase.
pub fn pair_with_failure(dim: usize, epsilon: f64, rng: &mut SimRng) -> Result<(State, State)> {
    if dim < 2 {
        return Err(out_of_range("dim", dim as f64, "dim >= 2"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(out_of_range("epsilon", epsilon, "0 <= epsilon <= 1"));
    }
    let beta = State::random(dim, rng);
    let perp = loop {
        let r = State::random(dim, rng);
        let ov = raw_inner(beta.amplitudes(), r.amplitudes());
        let v: Vec<C64> = r
            .amplitudes()
            .iter()
            .zip(beta.amplitudes())
            .map(|(x, b)| x - ov * b)
            .collect();
        if let Ok(s) = State::from_unnormalized(v) {
            break s;
        }
    };
    let phase = C64::from_polar((1.0 - epsilon).sqrt(), rng.random::<f64>() * 2.0 * PI);
    let e = epsilon.sqrt();
    let amps = beta
        .amplitudes()
        .iter()
        .zip(perp.amplitudes())
        .map(|(b, p)| phase * b + e * p)
        .collect();
    Ok((State::from_unnormalized(amps)?, beta))
}

/// Random pairs with `epsilon` stratified over `[0, 1]`, run through `V_level`.
pub fn verify_fixed_point(
    dim: usize,
    level: u32,
    n_trials: usize,
    rng: &mut SimRng,
) -> Result<Vec<FixedPointReport>> {
    let seq = build_sequence(level)?;
    (0..n_trials)
        .map(|i| {
            let eps = ((i as f64 + rng.random::<f64>()) / n_trials as f64).min(1.0);
            let (alpha, beta) = pair_with_failure(dim, eps, rng)?;
            report_for(&seq, &alpha, &beta)
        })
        .collect()
}

/// Runs one pair through `seq` with exact rotations.
pub fn report_for(seq: &QuerySequence, alpha: &State, beta: &State) -> Result<FixedPointReport> {
    let epsilon = failure(alpha, beta)?;
    let mut provider = ExactRotations::new(alpha, beta)?;
    let (out, queries) = apply_sequence(seq, alpha, &mut provider)?;
    Ok(FixedPointReport {
        epsilon,
        level: seq.level,
        predicted_failure: epsilon.powi(3i32.pow(seq.level)),
        observed_failure: failure(&out, beta)?,
        queries,
    })
}
