//! Tensor embedding, operator application, and projective measurement against
//! independent dense oracles and exhaustive basis enumeration.

mod common;

use std::sync::Arc;

use cavlink_core::cqed::{GateLayout, HeffGenerator, PhysicalParams};
use cavlink_core::hilbert::{node1_atom, physical_space, HilbertSpace};
use cavlink_core::measure::{binary_projectors, measure_projective};
use cavlink_core::mcwf::Generator;
use cavlink_core::operator::{annihilator, embed, level_projector, LinearOperator};
use cavlink_core::pulse::PulseSchedule;
use cavlink_core::rng::rng_from_seed;
use cavlink_core::state::StateVector;
use num_complex::Complex64 as C64;
use rand::Rng;

fn random_state(space: &Arc<HilbertSpace>, seed: u64) -> StateVector<f64> {
    let mut rng = rng_from_seed(seed);
    let amps: Vec<C64> = (0..space.total_dim())
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    StateVector::from_amplitudes(space.clone(), amps)
        .unwrap()
        .normalized()
        .unwrap()
}

fn random_local_op(seed: u64, space: &Arc<HilbertSpace>) -> LinearOperator<f64> {
    let mut rng = rng_from_seed(seed);
    let d = space.total_dim();
    let mut triplets = Vec::new();
    for r in 0..d {
        for c in 0..d {
            triplets.push((
                r,
                c,
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
            ));
        }
    }
    LinearOperator::from_triplets(space.clone(), triplets)
}

#[test]
fn embedded_annihilator_kills_vacuum_components_exhaustively() {
    let full = physical_space(1);
    let local = HilbertSpace::new(vec![cavlink_core::hilbert::cavity("cav1", 1)]).unwrap();
    let a_local = annihilator::<f64>(&local, "cav1").unwrap();
    let a = embed(&a_local, &full).unwrap();
    let pos = full.position_of("cav1").unwrap();
    for idx in 0..full.total_dim() {
        let basis = StateVector::<f64>::basis(full.clone(), idx);
        let out = a.apply(&basis).unwrap();
        if full.level_of(idx, pos) == 0 {
            assert!(out.norm() < 1e-15, "vacuum component {idx} not annihilated");
        } else {
            assert!((out.norm() - 1.0).abs() < 1e-15);
            let lowered = full.index_of(
                &full
                    .levels_at(idx)
                    .iter()
                    .enumerate()
                    .map(|(k, &l)| if k == pos { l - 1 } else { l })
                    .collect::<Vec<_>>(),
            );
            assert!((out.amplitude(lowered) - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }
}

#[test]
fn heff_apply_matches_dense_matvec_oracle() {
    let space = physical_space(1);
    let p = PhysicalParams::<f64> {
        gamma: 0.3,
        kappa_loss_1: 0.2,
        kappa_loss_2: 0.1,
        delta_raman: 0.05,
        ..PhysicalParams::reference()
    };
    let pulses = Arc::new(
        PulseSchedule::from_functions(30.0, 601, |t: f64| (0.3 * (t - 15.0)).cosh().recip() * 9.0, |t: f64| {
            (0.3 * (15.0 - t)).cosh().recip() * 9.0
        })
        .unwrap(),
    );
    let generator =
        HeffGenerator::new(&p, pulses.clone(), &GateLayout::first(), space.clone()).unwrap();
    for (k, &t) in [0.0, 7.3, 15.0, 22.1].iter().enumerate() {
        let psi = random_state(&space, 100 + k as u64);
        let fast = {
            let mut out = StateVector::zero(space.clone());
            generator.apply_to(t, &psi, &mut out);
            out
        };
        let dense = generator.operator_at(t).to_dense();
        let oracle = common::dense_matvec(&dense, psi.amplitudes());
        let diff: f64 = fast
            .amplitudes()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "t = {t}: max deviation {diff}");
    }
}

#[test]
fn embedding_is_an_operator_homomorphism() {
    let local = HilbertSpace::new(vec![node1_atom("atom1")]).unwrap();
    let full = physical_space(1);
    for seed in 0..5u64 {
        let a = random_local_op(seed * 2 + 1, &local);
        let b = random_local_op(seed * 2 + 2, &local);
        let ab = a.matmul(&b).unwrap();
        let lhs = embed(&ab, &full).unwrap();
        let rhs = embed(&a, &full)
            .unwrap()
            .matmul(&embed(&b, &full).unwrap())
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }
}

#[test]
fn inner_product_conjugate_symmetry_on_random_vectors() {
    let space = physical_space(1);
    for seed in 0..4u64 {
        let phi = random_state(&space, 900 + seed);
        let psi = random_state(&space, 950 + seed);
        let a = phi.inner(&psi).unwrap();
        let b = psi.inner(&phi).unwrap();
        assert!((a - b.conj()).norm() < 1e-14);
    }
}

#[test]
fn unitaries_preserve_the_norm() {
    // Composed elementary rotations on one atom and one cavity level pair.
    let space = physical_space(1);
    let mut rng = rng_from_seed(17);
    let mut u = LinearOperator::<f64>::identity(space.clone());
    for _ in 0..6 {
        let th: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let (a, b) = if rng.random::<f64>() < 0.5 { (0, 1) } else { (1, 2) };
        let rot = {
            use cavlink_core::operator::transition;
            let paa = transition::<f64>(&space, "atom1", a, a).unwrap();
            let pbb = transition::<f64>(&space, "atom1", b, b).unwrap();
            let pab = transition::<f64>(&space, "atom1", a, b).unwrap();
            let pba = transition::<f64>(&space, "atom1", b, a).unwrap();
            let id = LinearOperator::identity(space.clone());
            let cos = C64::new(th.cos(), 0.0);
            let sin = C64::new(th.sin(), 0.0);
            // identity outside the block, rotation inside
            id.sub(&paa)
                .unwrap()
                .sub(&pbb)
                .unwrap()
                .add(&paa.scaled(cos))
                .unwrap()
                .add(&pbb.scaled(cos))
                .unwrap()
                .add(&pab.scaled(-sin))
                .unwrap()
                .add(&pba.scaled(sin))
                .unwrap()
        };
        u = u.matmul(&rot).unwrap();
    }
    for seed in 0..3 {
        let psi = random_state(&space, 40 + seed);
        let out = u.apply(&psi).unwrap();
        assert!((out.norm() - psi.norm()).abs() < 1e-10);
    }
}

#[test]
fn measurement_frequencies_match_probabilities_within_4_sigma() {
    let space = HilbertSpace::new(vec![node1_atom("a")]).unwrap();
    let psi = StateVector::from_amplitudes(
        space.clone(),
        vec![C64::new(0.8, 0.0), C64::new(0.0, 0.6), C64::new(0.0, 0.0)],
    )
    .unwrap();
    let projs = binary_projectors(&level_projector::<f64>(&space, "a", 0).unwrap()).unwrap();
    let n = 100_000usize;
    let p = 0.64;
    let mut rng = rng_from_seed(2024);
    let mut hits = 0usize;
    for _ in 0..n {
        let m = measure_projective(&psi, &projs, rng.random::<f64>()).unwrap();
        if m.outcome == 0 {
            hits += 1;
        }
    }
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    let freq = hits as f64 / n as f64;
    assert!(
        (freq - p).abs() < 4.0 * sigma,
        "freq {freq} vs p {p} (4σ = {})",
        4.0 * sigma
    );
}

#[test]
fn state_dump_csv_has_labels_and_amplitudes() {
    let space = physical_space(1);
    let idx = space
        .index_from_names(&[
            ("atom1", "g"),
            ("atomb", "e"),
            ("atom2", "R"),
            ("atoma", "R"),
            ("cav1", "0"),
            ("cav2", "0"),
        ])
        .unwrap();
    let psi = StateVector::<f64>::basis(space, idx);
    let mut buf = Vec::new();
    psi.dump_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.lines().count() == 325);
    assert!(text.contains(&format!("{idx},\"g,e,R,R,0,0\",1,0")));
}
