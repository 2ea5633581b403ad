//! Phase estimation and discriminator boosting against dense references
//! built from the textbook definitions.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use proptest::prelude::*;

use fpsim::fpqs::DEFAULT_ANGLE;
use fpsim::qcore::{rng_from_seed, HermitianOp, Operator, State};
use fpsim::selective::{
    boosted_b, boosted_b2, boosted_cost, circular_median, estimate_anchor, mass_near,
    measure_quality, pea_amplitudes, selective_branch, AncillaConfig, BlockB, CostCounter,
    CountingOp, MarkedSet, PeaOperator,
};

type M = DMatrix<C>;

/// `exp(X)` by scaling and squaring of a Taylor series.
fn expm(x: &M) -> M {
    let norm: f64 = x.iter().map(|z| z.norm()).sum();
    let k = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
    let y = x / C::new(2f64.powi(k), 0.0);
    let n = x.nrows();
    let mut term = M::identity(n, n);
    let mut sum = M::identity(n, n);
    for i in 1..30 {
        term = &term * &y / C::new(i as f64, 0.0);
        sum += &term;
    }
    for _ in 0..k {
        sum = &sum * &sum;
    }
    sum
}

fn kron(a: &M, b: &M) -> M {
    a.kronecker(b)
}

/// `(I (x) F) sum_z U^z (x) |z><z|`, every factor written out.
fn dense_pea(h: &M, shift: f64, l: u32, t: f64) -> M {
    let d = h.nrows();
    let a = 1usize << l;
    let hs = h + M::identity(d, d) * C::new(shift, 0.0);
    let u = expm(&(hs * C::new(0.0, -2.0 * PI * t)));
    let f = M::from_fn(a, a, |k, z| C::from_polar(1.0 / (a as f64).sqrt(), 2.0 * PI * (k * z) as f64 / a as f64));
    let mut cu = M::zeros(d * a, d * a);
    let mut p = M::identity(d, d);
    for z in 0..a {
        let mut proj = M::zeros(a, a);
        proj[(z, z)] = C::new(1.0, 0.0);
        cu += kron(&p, &proj);
        p = &u * p;
    }
    kron(&M::identity(d, d), &f) * cu
}

fn max_dev(a: &M, b: &M) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn pea_matches_dense_definition() {
    let mut rng = rng_from_seed(21);
    for (d, l) in [(2, 3), (3, 4), (4, 5)] {
        let h = HermitianOp::random(d, &mut rng);
        let cfg = AncillaConfig::new(l, 0.037).unwrap();
        let pea = PeaOperator::new(&h, cfg, 0.8).unwrap();
        let dense = dense_pea(h.matrix(), 0.8, l, 0.037);
        assert!(max_dev(&pea.to_matrix(), &dense) < 1e-10);
        // adjoint
        let mut v: Vec<C> = State::random(d << l, &mut rng).into_amplitudes();
        let expect = dense.adjoint() * M::from_column_slice(v.len(), 1, &v);
        pea.apply_adjoint(&mut v);
        for (x, y) in v.iter().zip(expect.iter()) {
            assert!((x - y).norm() < 1e-10);
        }
    }
}

#[test]
fn closed_form_amplitudes_follow_dirichlet_kernel() {
    let l = 6;
    let a = 64.0;
    for x in [0.0, 3.3, 17.5, 40.9] {
        let amps = pea_amplitudes(x, l);
        for (k, z) in amps.iter().enumerate() {
            let delta = (k as f64 - x) / a;
            let expect = if (delta * a).fract().abs() < 1e-12 && delta.fract().abs() < 1e-12 {
                1.0
            } else {
                ((PI * delta * a).sin() / (a * (PI * delta).sin())).abs()
            };
            assert!((z.norm() - expect).abs() < 1e-10, "x {x} k {k}");
        }
        let total: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}

#[test]
fn marked_windows_wrap() {
    let w = MarkedSet::new(-2, 4, 4).unwrap();
    let m: Vec<u64> = w.members().collect();
    assert_eq!(m, vec![14, 15, 0, 1, 2]);
    assert_eq!(w.len(), 5);
    let c = MarkedSet::for_anchor(10, 2, 12.0, 5).unwrap();
    // h = floor((12 - 4)/2) = 4, so [10 - 6, 10 + 6]
    assert_eq!(c.members().min(), Some(4));
    assert_eq!(c.members().max(), Some(16));
    assert!(MarkedSet::for_anchor(0, 4, 9.0, 5).is_err());
}

#[test]
fn circular_median_handles_wraparound() {
    assert_eq!(circular_median(&[63, 0, 1, 62, 2], 64), Some(0));
    assert_eq!(circular_median(&[5], 64), Some(5));
    assert_eq!(circular_median(&[], 64), None);
}

#[test]
fn anchor_on_sharp_peak_is_exact() {
    let t = 0.01;
    let h = HermitianOp::from_real_diagonal(&[5.0 / (64.0 * t), 21.0 / (64.0 * t)]).unwrap();
    let pea = PeaOperator::new(&h, AncillaConfig::new(6, t).unwrap(), 0.0).unwrap();
    let mut rng = rng_from_seed(1);
    let mut s = State::basis(2, 0).unwrap();
    let est = estimate_anchor(&mut s, &pea, 7, &mut rng).unwrap();
    assert_eq!(est.anchor, 5);
    assert!(est.samples.iter().all(|&z| z == 5));
    assert!(estimate_anchor(&mut s, &pea, 0, &mut rng).is_err());
}

/// `1 - (1 - e^{iw}) P` for a diagonal projector given by `mask`.
fn dense_subspace_phase(d: usize, mask: &[bool], omega: f64, complement: bool) -> M {
    let a = mask.len();
    M::from_fn(d * a, d * a, |i, j| {
        if i != j {
            C::new(0.0, 0.0)
        } else if mask[i % a] != complement {
            C::from_polar(1.0, omega)
        } else {
            C::new(1.0, 0.0)
        }
    })
}

fn dense_r_e(d: usize, a: usize, omega: f64) -> M {
    let e = M::from_element(a, 1, C::new(1.0 / (a as f64).sqrt(), 0.0));
    let r = M::identity(a, a) - (&e * e.adjoint()) * (C::new(1.0, 0.0) - C::from_polar(1.0, omega));
    kron(&M::identity(d, d), &r)
}

/// `V_n B` with `R_a = B R_e B^+` and `R_b` a phase on (the complement of)
/// the marked set, by the literal recursion.
fn dense_boost(b: &M, d: usize, mask: &[bool], level: u32, complement: bool) -> M {
    let a = mask.len();
    let ra = b * dense_r_e(d, a, DEFAULT_ANGLE) * b.adjoint();
    let rb = dense_subspace_phase(d, mask, DEFAULT_ANGLE, complement);
    let mut v = M::identity(d * a, d * a);
    for _ in 0..level {
        v = &v * &ra * v.adjoint() * &rb * &v;
    }
    v * b
}

#[test]
fn boosted_operators_match_dense_recursion() {
    let mut rng = rng_from_seed(31);
    let marked = MarkedSet::new(2, 3, 3).unwrap();
    let block = BlockB::synthetic(&marked, &[0.9, 0.1, 0.2], &mut rng).unwrap();
    let b = block.to_matrix();
    let mask = marked.mask();
    for (q, level) in [(2u64, 1u32), (8, 2)] {
        let inner: Arc<dyn Operator> = Arc::new(BlockB::synthetic(&marked, &[0.9, 0.1, 0.2], &mut rng_from_seed(31)).unwrap());
        let eta = if q == 2 { 0.2 } else { 0.1 };
        let bq = Arc::new(boosted_b(inner, &marked, q, eta).unwrap());
        let dq = dense_boost(&b, 3, &mask, level, false);
        assert!(max_dev(&bq.to_matrix(), &dq) < 1e-10, "B(q), q = {q}");
        let b2 = boosted_b2(bq, &marked, 2).unwrap();
        let d2 = dense_boost(&dq, 3, &mask, 1, true);
        assert!(max_dev(&b2.to_matrix(), &d2) < 1e-10, "B(q, 2), q = {q}");
    }
}

#[test]
fn boost_condition_and_levels_are_checked() {
    let mut rng = rng_from_seed(32);
    let marked = MarkedSet::new(0, 2, 3).unwrap();
    let b: Arc<dyn Operator> = Arc::new(BlockB::synthetic(&marked, &[0.9, 0.1], &mut rng).unwrap());
    assert!(boosted_b(b.clone(), &marked, 2, 0.3).is_err());
    assert!(boosted_b(b.clone(), &marked, 3, 0.1).is_err());
    assert!(boosted_b(b, &marked, 2, 0.25).is_ok());
}

#[test]
fn boosted_cost_counts_inner_applications() {
    let mut rng = rng_from_seed(33);
    let marked = MarkedSet::new(0, 2, 3).unwrap();
    let counter = CostCounter::new();
    let raw: Arc<dyn Operator> = Arc::new(BlockB::synthetic(&marked, &[0.95, 0.05], &mut rng).unwrap());
    let b: Arc<dyn Operator> = Arc::new(CountingOp::new(raw, counter.clone()));
    for (q, qp) in [(2u64, 2u64), (2, 8), (8, 2)] {
        let bq = Arc::new(boosted_b(b.clone(), &marked, q, 0.05).unwrap());
        let b2 = boosted_b2(bq, &marked, qp).unwrap();
        counter.reset();
        let mut v = State::random(16, &mut rng).into_amplitudes();
        b2.apply(&mut v);
        assert_eq!(counter.get(), boosted_cost(q, qp));
        counter.reset();
        b2.apply_adjoint(&mut v);
        assert_eq!(counter.get(), boosted_cost(q, qp));
    }
}

#[test]
fn selective_branch_matches_dense_projection() {
    let mut rng = rng_from_seed(34);
    let marked = MarkedSet::new(1, 2, 3).unwrap();
    let b = BlockB::synthetic(&marked, &[0.97, 0.08, 0.04], &mut rng).unwrap();
    let bm = b.to_matrix();
    let psi = State::random(3, &mut rng);
    let a = 8;
    let e = M::from_element(a, 1, C::new(1.0 / (a as f64).sqrt(), 0.0));
    let joint = kron(&M::from_column_slice(3, 1, psi.amplitudes()), &e);
    let phase = dense_subspace_phase(3, &marked.mask(), DEFAULT_ANGLE, false);
    let out = bm.adjoint() * phase * &bm * joint;
    let proj = kron(&M::identity(3, 3), &e.adjoint());
    let w = proj * out;
    let p: f64 = w.iter().map(|z| z.norm_sqr()).sum();
    let (p2, s) = selective_branch(&psi, &b, &marked, DEFAULT_ANGLE).unwrap();
    assert!((p - p2).abs() < 1e-12);
    let s = s.unwrap();
    let wn = w.clone() / C::new(p.sqrt(), 0.0);
    for (x, y) in s.amplitudes().iter().zip(wn.iter()) {
        assert!((x - y).norm() < 1e-10);
    }
}

#[test]
fn synthetic_block_has_requested_overlaps() {
    let mut rng = rng_from_seed(35);
    let marked = MarkedSet::new(5, 3, 4).unwrap();
    let gammas = [0.91, 0.3, 0.07, 0.0];
    let b = BlockB::synthetic(&marked, &gammas, &mut rng).unwrap();
    let basis: Vec<State> = (0..4).map(|j| State::basis(4, j).unwrap()).collect();
    let q = measure_quality(&b, &basis, &marked, DEFAULT_ANGLE).unwrap();
    for (g, h) in q.gamma.iter().zip(gammas) {
        assert!((g - h).abs() < 1e-12);
    }
    assert!((q.eta0 - 0.09).abs() < 1e-12);
    assert!((q.eta_excited_max - 0.3).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pea_is_unitary_on_random_vectors(seed in any::<u64>(), d in 1usize..=4, l in 2u32..=6) {
        let mut rng = rng_from_seed(seed);
        let h = HermitianOp::random(d, &mut rng);
        let pea = PeaOperator::new(&h, AncillaConfig::new(l, 0.05).unwrap(), 1.0).unwrap();
        let v0 = State::random(d << l, &mut rng);
        let mut v = v0.clone().into_amplitudes();
        pea.apply(&mut v);
        let n: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((n - 1.0).abs() < 1e-10);
        pea.apply_adjoint(&mut v);
        for (x, y) in v.iter().zip(v0.amplitudes()) {
            prop_assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn tail_mass_bound(x in 0.0f64..1024.0, c in 2u64..=8) {
        let amps = pea_amplitudes(x, 10);
        let mass = mass_near(&amps, x.round() as i64, c);
        prop_assert!(mass >= 1.0 - 1.0 / (2.0 * (c as f64 - 1.0)));
    }
}

#[test]
fn single_boost_overlaps_follow_fixed_point_algebra() {
    // One level: failure eps -> eps^3 with eps = 1 - gamma^2, so
    // 1 - gamma0(q)^2 = (1 - (1 - eta0)^2)^3 and gamma_j(q)^2 = 1 - (1 - eta_j^2)^3.
    for (k, eta) in [0.01, 0.02, 0.05].into_iter().enumerate() {
        let marked = MarkedSet::new(3, 4, 4).unwrap();
        let mut rng = rng_from_seed(40 + k as u64);
        let b: Arc<dyn Operator> = Arc::new(BlockB::synthetic(&marked, &[1.0 - eta, eta, eta], &mut rng).unwrap());
        let bq = boosted_b(b, &marked, 2, eta).unwrap();
        let basis: Vec<State> = (0..3).map(|j| State::basis(3, j).unwrap()).collect();
        let q = measure_quality(&bq, &basis, &marked, DEFAULT_ANGLE).unwrap();
        let fail0 = 1.0 - q.gamma[0].powi(2);
        assert!((fail0 - (1.0 - (1.0 - eta).powi(2)).powi(3)).abs() < 1e-12);
        // leading order (2 eta0)^3
        assert!((fail0 / (2.0 * eta).powi(3) - 1.0).abs() < 3.0 * eta);
        for j in 1..3 {
            let g2 = q.gamma[j].powi(2);
            assert!((g2 - (1.0 - (1.0 - eta * eta).powi(3))).abs() < 1e-12);
            assert!((g2 / (3.0 * eta * eta) - 1.0).abs() <= 0.1);
        }
    }
}

fn random_gapped_h(seed: u64, l: u32) -> (HermitianOp, AncillaConfig, f64) {
    let mut s = seed;
    loop {
        let mut rng = rng_from_seed(s);
        let h = HermitianOp::random(4, &mut rng);
        let norm = h.spectral_norm().unwrap();
        let cfg = AncillaConfig::with_default_time(l, 2.0 * norm).unwrap();
        let spec = fpsim::qcore::eig_hermitian(&h).unwrap();
        if cfg.separation(spec.gap()) >= 8.0 {
            return (h, cfg, spec.gap());
        }
        s += 1000;
    }
}

#[test]
fn pea_selective_rotation_is_eta_accurate() {
    let l = 8;
    let mut good = 0;
    let trials = 200;
    for k in 0..trials {
        let (h, cfg, gap) = random_gapped_h(500 + k, l);
        let spec = fpsim::qcore::eig_hermitian(&h).unwrap();
        let pea = fpsim::selective::pea_operator(&h, cfg).unwrap();
        let bounds = fpsim::selective::eta_bounds(cfg, gap).unwrap();
        let marked = MarkedSet::for_anchor(pea.nearest_index(0), 2, bounds.separation, l).unwrap();
        let mut rng = rng_from_seed(900 + k);
        let psi = State::random(4, &mut rng);
        let (ok, out) = fpsim::selective::approx_selective(&psi, &pea, &marked, DEFAULT_ANGLE, &mut rng).unwrap();
        let mut exact = psi.clone();
        exact.apply(&fpsim::fpqs::SelectiveRotation::pi_over_3(spec.ground_state().clone())).unwrap();
        if ok {
            let err: f64 = out
                .amplitudes()
                .iter()
                .zip(exact.amplitudes())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>()
                .sqrt();
            good += (err <= 5.0 * bounds.eta) as usize;
        }
    }
    assert!(good as f64 >= 0.95 * trials as f64, "{good}/{trials}");
}

#[test]
fn anchor_lands_within_two_of_peak() {
    let l = 8;
    let a = 1i64 << l;
    let trials = 200;
    let mut hits = 0;
    for k in 0..trials {
        let (h, cfg, _) = random_gapped_h(k, l);
        let pea = fpsim::selective::pea_operator(&h, cfg).unwrap();
        let spec = fpsim::qcore::eig_hermitian(&h).unwrap();
        let mut ground = spec.ground_state().clone();
        let est = estimate_anchor(&mut ground, &pea, 15, &mut rng_from_seed(7000 + k)).unwrap();
        let d = (est.anchor as f64 - pea.peak(0)).rem_euclid(a as f64);
        hits += (d.min(a as f64 - d) <= 2.0) as usize;
    }
    assert!(hits as f64 >= 0.99 * trials as f64, "{hits}/{trials}");
}

#[test]
fn integer_spectrum_pea_oracle_equals_exact_oracle() {
    use fpsim::fpqs::{apply_sequence, build_sequence};
    use fpsim::selective::{make_oracle, OracleMode, PeaContext, PeaSetup};

    let l = 6;
    let cfg = AncillaConfig::new(l, 1.0 / 64.0).unwrap();
    let mut rng = rng_from_seed(50);
    let v = fpsim::qcore::UnitaryOp::random(3, &mut rng);
    let w = fpsim::qcore::UnitaryOp::random(3, &mut rng);
    let herm = |u: &fpsim::qcore::UnitaryOp, e: &[f64]| {
        let d = M::from_diagonal(&nalgebra::DVector::from_iterator(3, e.iter().map(|x| C::new(*x, 0.0))));
        HermitianOp::new(u.matrix() * d * u.matrix().adjoint()).unwrap()
    };
    let ha = herm(&v, &[5.0, 30.0, 50.0]);
    let hb = herm(&w, &[6.0, 31.0, 52.0]);
    let sa = fpsim::qcore::eig_hermitian(&ha).unwrap();
    let sb = fpsim::qcore::eig_hermitian(&hb).unwrap();
    let setup = PeaSetup {
        cfg,
        shift: 0.0,
        gap: 20.0,
        boost: None,
    };
    let ctx = PeaContext::from_anchor(
        setup,
        Arc::new(PeaOperator::from_spectrum(&sa, cfg, 0.0).unwrap()),
        Arc::new(PeaOperator::from_spectrum(&sb, cfg, 0.0).unwrap()),
        5,
        1,
    )
    .unwrap();
    let counter = CostCounter::new();
    for level in 1..=2 {
        let seq = build_sequence(level).unwrap();
        let start = sa.ground_state().clone();
        let mut r1 = rng_from_seed(1);
        let mut exact = make_oracle(OracleMode::Exact, &sa, &sb, None, &counter, &mut r1).unwrap();
        let (e, _) = apply_sequence(&seq, &start, &mut exact).unwrap();
        let mut r2 = rng_from_seed(2);
        let mut pea = make_oracle(OracleMode::Pea, &sa, &sb, Some(&ctx), &counter, &mut r2).unwrap();
        let (p, _) = apply_sequence(&seq, &start, &mut pea).unwrap();
        for (x, y) in e.amplitudes().iter().zip(p.amplitudes()) {
            assert!((x - y).norm() < 1e-9, "level {level}");
        }
    }
}
