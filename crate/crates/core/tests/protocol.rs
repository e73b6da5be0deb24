//! Protocol-level verification: exhaustive measurement-tree enumeration,
//! the factorization that removes the channel parameters, teleportation
//! branch totality, exact backup recovery, and run statistics.

use cavlink_core::channel::{ChannelParams, NoiseConfig, ParamSampler};
use cavlink_core::hilbert::protocol_space;
use cavlink_core::measure::measure_all_branches;
use cavlink_core::operator::{level_projector, LinearOperator};
use cavlink_core::protocol::{
    correction_unitary, encode_backup, enumerate_teleport_branches, initial_state, run_protocol,
    symmetrize, ProtocolStatus, QubitInput, TeleportOutcomes,
};
use cavlink_core::rng::rng_from_seed;
use cavlink_core::state::StateVector;
use num_complex::Complex64 as C64;
use rand::Rng;

type Branches = Vec<(f64, StateVector<f64>)>;

fn e_projectors(space: &std::sync::Arc<cavlink_core::hilbert::HilbertSpace>) -> [LinearOperator<f64>; 2] {
    let p = level_projector::<f64>(space, "atom1", 1).unwrap();
    cavlink_core::measure::binary_projectors(&p).unwrap()
}

fn rr_projectors(space: &std::sync::Arc<cavlink_core::hilbert::HilbertSpace>) -> [LinearOperator<f64>; 2] {
    let p = level_projector::<f64>(space, "atom2", 2)
        .unwrap()
        .matmul(&level_projector(space, "atoma", 2).unwrap())
        .unwrap();
    cavlink_core::measure::binary_projectors(&p).unwrap()
}

/// One leaf of the measurement tree.
struct Leaf {
    probability: f64,
    /// None for success leaves; Some(backup fidelity) for retry leaves.
    retry_backup_fidelity: Option<f64>,
    /// Success fidelity for teleport leaves.
    success_fidelity: Option<f64>,
}

/// Independent walk of the complete measurement tree for fixed draws, built
/// straight from the channel map and projector branching — not from the
/// protocol's step drivers. Each transmission is described by its no-jump
/// tuple plus a jump flag, mirroring the sampler's output.
fn enumerate_tree(
    q: &QubitInput<f64>,
    d1: &ChannelParams<f64>,
    j1: bool,
    d2: &ChannelParams<f64>,
    j2: bool,
) -> Vec<Leaf> {
    use cavlink_core::channel::apply_channel;

    let space = protocol_space();
    let mut leaves = Vec::new();
    let psi = encode_backup(&initial_state(&space, q, None).unwrap()).unwrap();
    let d1_eff = if j1 { ChannelParams::jump() } else { d1.clone() };
    let psi = apply_channel(&psi, "atom1", "atom2", &d1_eff).unwrap();
    let total = psi.norm_sqr();
    // The channel is a contraction: the lost weight is the jump/no-jump
    // complement, not part of this tree. Normalize so the tree sums to one.
    let psi = psi.scaled(C64::new(total.sqrt().recip(), 0.0));

    let backup_target = q.atom_amplitudes();
    let swap_b = |s: &StateVector<f64>| {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let mat = vec![
            vec![zero, one, zero],
            vec![one, zero, zero],
            vec![zero, zero, one],
        ];
        cavlink_core::operator::subsystem_op(&space, "atomb", &mat)
            .unwrap()
            .apply(s)
            .unwrap()
    };

    let e1: Branches = measure_all_branches(&psi, &e_projectors(&space)).unwrap();
    // e found: retry, backup already correct
    if e1[0].0 > 0.0 {
        leaves.push(Leaf {
            probability: e1[0].0,
            retry_backup_fidelity: Some(e1[0].1.subsystem_fidelity("atomb", &backup_target).unwrap()),
            success_fidelity: None,
        });
    }
    if e1[1].0 > 0.0 {
        let p_pass1 = e1[1].0;
        let psi = symmetrize(&e1[1].1).unwrap();
        // Second transmission; a jump cannot fire without sender-e weight,
        // in which case the no-jump tuple applies.
        let e_weight = psi.subsystem_population("atom1", 1).unwrap();
        let d2_eff = if j2 && e_weight > 1e-12 {
            ChannelParams::jump()
        } else {
            d2.clone()
        };
        let psi = apply_channel(&psi, "atom1", "atoma", &d2_eff).unwrap();
        let survived = psi.norm_sqr();
        let psi = psi.scaled(C64::new(survived.sqrt().recip(), 0.0));

        let e2: Branches = measure_all_branches(&psi, &e_projectors(&space)).unwrap();
        if e2[0].0 > 0.0 {
            let rec = swap_b(&e2[0].1);
            leaves.push(Leaf {
                probability: p_pass1 * e2[0].0,
                retry_backup_fidelity: Some(rec.subsystem_fidelity("atomb", &backup_target).unwrap()),
                success_fidelity: None,
            });
        }
        if e2[1].0 > 0.0 {
            let p_pass2 = p_pass1 * e2[1].0;
            let rr: Branches = measure_all_branches(&e2[1].1, &rr_projectors(&space)).unwrap();
            if rr[0].0 > 0.0 {
                // RR found: atom-1 measurement decides the one-bit recovery.
                let a1_projs = [
                    level_projector::<f64>(&space, "atom1", 0).unwrap(),
                    level_projector::<f64>(&space, "atom1", 2).unwrap(),
                    level_projector::<f64>(&space, "atom1", 1).unwrap(),
                ];
                let a1: Branches = measure_all_branches(&rr[0].1, &a1_projs).unwrap();
                for (k, (p, s)) in a1.iter().enumerate() {
                    if *p <= 0.0 {
                        continue;
                    }
                    let rec = if k == 1 { swap_b(s) } else { s.clone() };
                    leaves.push(Leaf {
                        probability: p_pass2 * rr[0].0 * p,
                        retry_backup_fidelity: Some(
                            rec.subsystem_fidelity("atomb", &backup_target).unwrap(),
                        ),
                        success_fidelity: None,
                    });
                }
            }
            if rr[1].0 > 0.0 {
                let pre_tp = &rr[1].1;
                for b in enumerate_teleport_branches(pre_tp, q).unwrap() {
                    leaves.push(Leaf {
                        probability: p_pass2 * rr[1].0 * b.probability,
                        retry_backup_fidelity: None,
                        success_fidelity: Some(b.fidelity),
                    });
                }
            }
        }
    }
    leaves
}

fn random_nojump(rng: &mut cavlink_core::rng::SimRng, min_mag: f64) -> ChannelParams<f64> {
    let polar = |rng: &mut cavlink_core::rng::SimRng| {
        let m = min_mag + (1.0 - min_mag) * rng.random::<f64>();
        let th = rng.random::<f64>() * std::f64::consts::TAU;
        C64::new(m * th.cos(), m * th.sin())
    };
    let small = |rng: &mut cavlink_core::rng::SimRng| {
        let th = rng.random::<f64>() * std::f64::consts::TAU;
        let m = 0.15 * rng.random::<f64>();
        C64::new(m * th.cos(), m * th.sin())
    };
    let alpha = polar(rng);
    let mut beta = polar(rng);
    let mut g1 = small(rng);
    let mut g2 = small(rng);
    let s = beta.norm_sqr() + g1.norm_sqr() + g2.norm_sqr();
    if s > 1.0 {
        let f = C64::new(s.sqrt().recip(), 0.0);
        beta *= f;
        g1 *= f;
        g2 *= f;
    }
    ChannelParams::no_jump(alpha, beta, g1, g2).unwrap()
}

#[test]
fn full_tree_probabilities_sum_to_one_and_branches_behave() {
    let mut rng = rng_from_seed(40);
    for case in 0..12 {
        let q = QubitInput::<f64>::random(&mut rng);
        let d1 = random_nojump(&mut rng, 0.2);
        // correlated second draw: same α, β, fresh γs
        let mut d2 = random_nojump(&mut rng, 0.2);
        d2.alpha = d1.alpha;
        d2.beta = d1.beta;
        let d2 = ChannelParams::no_jump(d2.alpha, d2.beta, d2.gamma1, d2.gamma2).unwrap();

        let leaves = enumerate_tree(&q, &d1, false, &d2, false);
        let total: f64 = leaves.iter().map(|l| l.probability).sum();
        assert!(
            (total - 1.0).abs() < 1e-10,
            "case {case}: tree probabilities sum to {total}"
        );
        for leaf in &leaves {
            if let Some(f) = leaf.retry_backup_fidelity {
                assert!(
                    (f - 1.0).abs() < 1e-10,
                    "case {case}: retry leaf backup fidelity {f}"
                );
            }
            if let Some(f) = leaf.success_fidelity {
                assert!(
                    (f - 1.0).abs() < 1e-9,
                    "case {case}: success leaf fidelity {f}"
                );
            }
        }
    }
}

#[test]
fn jump_draw_trees_also_close_with_perfect_recovery() {
    let mut rng = rng_from_seed(41);
    for (j1, j2) in [(true, false), (false, true), (true, true)] {
        let q = QubitInput::<f64>::random(&mut rng);
        let base = random_nojump(&mut rng, 0.2);
        let leaves = enumerate_tree(&q, &base, j1, &base, j2);
        let total: f64 = leaves.iter().map(|l| l.probability).sum();
        assert!((total - 1.0).abs() < 1e-10, "({j1},{j2}): sum {total}");
        // every leaf of a jump round is a retry with perfect backup
        for leaf in &leaves {
            let f = leaf
                .retry_backup_fidelity
                .expect("jump rounds cannot reach teleportation");
            assert!((f - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn all_eight_teleport_branches_restore_the_input_equally() {
    let mut rng = rng_from_seed(42);
    for _ in 0..8 {
        let q = QubitInput::<f64>::random(&mut rng);
        let d1 = random_nojump(&mut rng, 0.3);
        let d2 = ChannelParams::no_jump(d1.alpha, d1.beta, d1.gamma1 * 0.5, d1.gamma2 * 0.3)
            .unwrap();
        let pre_tp = no_error_pre_teleport(&q, &d1, &d2);
        let branches = enumerate_teleport_branches(&pre_tp, &q).unwrap();
        assert_eq!(branches.len(), 8);
        let psum: f64 = branches.iter().map(|b| b.probability).sum();
        assert!((psum - 1.0).abs() < 1e-10);
        for b in &branches {
            assert!(
                (b.fidelity - 1.0).abs() < 1e-9,
                "outcome {:?}: fidelity {}",
                b.outcomes,
                b.fidelity
            );
            assert!(
                (b.probability - 0.125).abs() < 1e-9,
                "outcome {:?}: probability {}",
                b.outcomes,
                b.probability
            );
        }
    }
}

/// The no-detected-error pre-teleportation state for fixed draws.
fn no_error_pre_teleport(
    q: &QubitInput<f64>,
    d1: &ChannelParams<f64>,
    d2: &ChannelParams<f64>,
) -> StateVector<f64> {
    use cavlink_core::channel::apply_channel;
    let space = protocol_space();
    let psi = encode_backup(&initial_state(&space, q, None).unwrap()).unwrap();
    let psi = apply_channel(&psi, "atom1", "atom2", d1).unwrap();
    let e1 = measure_all_branches(&psi, &e_projectors(&space)).unwrap();
    let psi = symmetrize(&e1[1].1).unwrap();
    let psi = apply_channel(&psi, "atom1", "atoma", d2).unwrap();
    let e2 = measure_all_branches(&psi, &e_projectors(&space)).unwrap();
    let rr = measure_all_branches(&e2[1].1, &rr_projectors(&space)).unwrap();
    rr[1].1.clone()
}

#[test]
fn pre_teleport_state_is_independent_of_correlated_draws() {
    let mut rng = rng_from_seed(43);
    let q = QubitInput::<f64>::random(&mut rng);
    let mut states = Vec::new();
    for _ in 0..6 {
        let d1 = random_nojump(&mut rng, 0.05);
        let d2 =
            ChannelParams::no_jump(d1.alpha, d1.beta, d1.gamma2 * 0.7, d1.gamma1 * 0.2).unwrap();
        states.push(no_error_pre_teleport(&q, &d1, &d2));
    }
    for s in &states[1..] {
        let overlap = states[0].inner(s).unwrap().norm();
        assert!(
            (overlap - 1.0).abs() < 1e-10,
            "pre-teleport state depends on the draw: |⟨ψ₁|ψ₂⟩| = {overlap}"
        );
    }
}

#[test]
fn uncorrelated_draws_break_the_final_fidelity() {
    let mut rng = rng_from_seed(44);
    let cfg = NoiseConfig {
        p_nojump: 1.0,
        sampler: ParamSampler::Random {
            alpha_mag: [0.3, 1.0],
            beta_mag: [0.3, 1.0],
            gamma_scale: 0.05,
        },
        correlated: false,
    };
    let mut worst: f64 = 1.0;
    for _ in 0..40 {
        let q = QubitInput::<f64>::random(&mut rng);
        let out = run_protocol(&q, &cfg, &mut rng, 10).unwrap();
        if out.status == ProtocolStatus::Success {
            worst = worst.min(out.fidelity);
        }
    }
    assert!(
        worst < 0.99,
        "uncorrelated α̃ ≠ α never hurt the fidelity (worst {worst})"
    );
}

#[test]
fn correction_table_matches_branch_enumeration() {
    // Derivation check for the frozen table: a qubit map is pinned up to a
    // global phase by its action on three non-collinear inputs, so running
    // the enumeration with a spanning set of qubits and finding fidelity one
    // in every one of the eight branches re-derives each entry.
    let s = 1.0 / 2.0f64.sqrt();
    let spanning = [
        QubitInput::<f64>::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0)).unwrap(),
        QubitInput::<f64>::new(C64::new(0.0, 0.0), C64::new(1.0, 0.0)).unwrap(),
        QubitInput::<f64>::new(C64::new(s, 0.0), C64::new(0.0, s)).unwrap(),
        QubitInput::<f64>::new(C64::new(s, 0.0), C64::new(-s, 0.0)).unwrap(),
    ];
    for q in &spanning {
        let pre = no_error_pre_teleport(q, &ChannelParams::ideal(), &ChannelParams::ideal());
        let branches = enumerate_teleport_branches(&pre, q).unwrap();
        assert_eq!(branches.len(), 8);
        for b in &branches {
            assert!(
                (b.fidelity - 1.0).abs() < 1e-10,
                "outcome {:?} fails on spanning input ({}, {})",
                b.outcomes,
                q.c0,
                q.c1
            );
        }
    }
    // Every entry is a signed level permutation, hence unitary.
    let space = protocol_space();
    for o in TeleportOutcomes::all() {
        let u = correction_unitary::<f64>(&space, o).unwrap();
        let id = LinearOperator::identity(space.clone());
        assert!(u.adjoint().matmul(&u).unwrap().max_abs_diff(&id).unwrap() < 1e-14);
    }
}

#[test]
fn exact_recovery_over_many_random_draw_pairs() {
    let mut rng = rng_from_seed(46);
    for k in 0..10_000 {
        let q = QubitInput::<f64>::random(&mut rng);
        let jumped1 = rng.random::<f64>() < 0.3;
        let jumped2 = rng.random::<f64>() < 0.3;
        let base = random_nojump(&mut rng, 0.05);
        let g = random_nojump(&mut rng, 0.05);
        let d2 = ChannelParams::no_jump(base.alpha, base.beta, g.gamma1, g.gamma2)
            .unwrap_or_else(|_| {
                ChannelParams::no_jump(
                    base.alpha,
                    base.beta,
                    C64::new(0.0, 0.0),
                    C64::new(0.0, 0.0),
                )
                .unwrap()
            });
        for leaf in enumerate_tree(&q, &base, jumped1, &d2, jumped2) {
            if let Some(f) = leaf.retry_backup_fidelity {
                assert!(
                    (f - 1.0).abs() < 1e-10,
                    "pair {k}: retry backup fidelity {f}"
                );
            }
        }
    }
}

#[test]
fn success_rounds_follow_the_geometric_law() {
    // Ideal-when-no-jump sampler: a round succeeds exactly when both
    // transmissions avoid a jump, so the per-round success probability is P².
    let p_nojump = 0.6f64;
    let cfg = NoiseConfig {
        p_nojump,
        sampler: ParamSampler::Ideal,
        correlated: true,
    };
    let mut rng = rng_from_seed(47);
    let q = QubitInput::<f64>::new(C64::new(0.8, 0.0), C64::new(0.0, 0.6)).unwrap();
    let n_runs = 3000usize;
    let mut total_rounds = 0usize;
    let mut successes = 0usize;
    for _ in 0..n_runs {
        let out = run_protocol(&q, &cfg, &mut rng, 200).unwrap();
        total_rounds += out.rounds_used;
        if out.status == ProtocolStatus::Success {
            successes += 1;
            assert!((out.fidelity - 1.0).abs() < 1e-10);
        }
    }
    assert_eq!(successes, n_runs, "200 rounds must be ample at P = 0.6");
    // Empirical per-round success vs P², 4σ binomial on the round count.
    let p_round = p_nojump * p_nojump;
    let p_hat = successes as f64 / total_rounds as f64;
    let sigma = (p_round * (1.0 - p_round) / total_rounds as f64).sqrt();
    assert!(
        (p_hat - p_round).abs() < 4.0 * sigma,
        "per-round success {p_hat} vs {p_round} (4σ = {})",
        4.0 * sigma
    );
    // Geometric mean rounds 1/P².
    let mean_rounds = total_rounds as f64 / n_runs as f64;
    let geo_sd = ((1.0 - p_round).sqrt() / p_round) / (n_runs as f64).sqrt();
    assert!(
        (mean_rounds - 1.0 / p_round).abs() < 4.0 * geo_sd,
        "mean rounds {mean_rounds} vs {} (4σ = {})",
        1.0 / p_round,
        4.0 * geo_sd
    );
}

#[test]
fn qubit_is_held_by_exactly_one_designated_subsystem() {
    let mut rng = rng_from_seed(48);
    let q = QubitInput::<f64>::random(&mut rng);
    let d = random_nojump(&mut rng, 0.3);
    let d2 = ChannelParams::no_jump(d.alpha, d.beta, d.gamma1, d.gamma2).unwrap();

    // Mid-protocol: no single atom holds a pure copy (the information is
    // spread), and the retry collapse always reconstructs it on b.
    let pre = no_error_pre_teleport(&q, &d, &d2);
    for atom in ["atom1", "atom2", "atoma", "atomb"] {
        let purity = pre.subsystem_purity(atom).unwrap();
        assert!(
            purity < 1.0 - 1e-3,
            "{atom} already holds a pure state mid-protocol (purity {purity})"
        );
    }

    // After teleportation: atom 2 holds the qubit, purely.
    let branches = enumerate_teleport_branches(&pre, &q).unwrap();
    for b in &branches {
        let purity = b.state.subsystem_purity("atom2").unwrap();
        assert!(purity > 1.0 - 1e-10);
        assert!((b.fidelity - 1.0).abs() < 1e-9);
    }
}

#[test]
fn transcript_records_measurements_and_draws() {
    let mut rng = rng_from_seed(49);
    let q = QubitInput::<f64>::random(&mut rng);
    let cfg = NoiseConfig {
        p_nojump: 0.5,
        sampler: ParamSampler::default(),
        correlated: true,
    };
    let out = run_protocol(&q, &cfg, &mut rng, 50).unwrap();
    assert!(!out.transcript.entries.is_empty());
    assert_eq!(out.transcript.channel_draws.len(), 2 * out.rounds_used);
    for e in &out.transcript.entries {
        assert!(e.probability >= -1e-12 && e.probability <= 1.0 + 1e-12);
    }
    let line = out.to_json_line().unwrap();
    assert!(line.contains("\"status\""));
    assert!(line.contains("\"channel_draws\""));
}

#[test]
fn outcome_probabilities_are_honest_in_sampled_runs() {
    // Per-measurement probabilities over each binary measurement branch pair
    // sum to one: cross-check a long transcript.
    let mut rng = rng_from_seed(50);
    let q = QubitInput::<f64>::random(&mut rng);
    let cfg = NoiseConfig {
        p_nojump: 0.7,
        sampler: ParamSampler::default(),
        correlated: true,
    };
    for _ in 0..20 {
        let out = run_protocol(&q, &cfg, &mut rng, 30).unwrap();
        if out.status == ProtocolStatus::Success {
            assert!(out.fidelity > 1.0 - 1e-9);
        } else {
            assert!(out.fidelity > 1.0 - 1e-9, "backup fidelity degraded");
        }
    }
}
