//! The five-step transmission protocol with measurement-conditioned recovery.
//!
//! (i) entangle the sender qubit with the backup atom b, (ii) transmit
//! atom 1 → atom 2 and test whether atom 1 stayed in |e⟩, (iii) relabel
//! r→g, g→e on atom 1 so both logical branches traverse the channel once,
//! (iv) transmit atom 1 → atom a, test |e⟩ again and then whether atoms 2, a
//! are both still in R, and (v) teleport: measure b, atom 1 and atom a, then
//! rotate atom 2 into the input qubit with a table-driven correction.
//!
//! Every detected error collapses the register so that the backup atom holds
//! the input qubit exactly; the driver resets and retries. Conditional on no
//! detected error and on α, β being shared between the two transmissions, the
//! pre-teleportation state is independent of the channel parameters, which is
//! why the final fidelity is one.

use std::sync::Arc;

use num_complex::Complex;
use serde::Serialize;

use crate::channel::{
    apply_channel, apply_env_channel, sample_round, ChannelParams, ChannelParamsLog,
    EnvironmentModel, NoiseConfig, TransmissionDraw,
};
use crate::cqed::{
    run_transmission_gate_nojump_observed, run_transmission_gate_observed, GateLayout,
    PhysicalParams,
};
use crate::error::{Error, Result};
use crate::hilbert::{level, protocol_space, protocol_space_with_env, HilbertSpace};
use crate::mcwf::{IntegratorConfig, TrajectoryRecord};
use crate::measure::{
    binary_projectors, measure_all_branches, measure_projective, plus_minus_projectors,
};
use crate::operator::{embed, level_projector, subsystem_op, LinearOperator};
use crate::pulse::PulseSchedule;
use crate::rng::{uniform, SimRng};
use crate::scalar::{cplx, czero, real, Scalar};
use crate::state::StateVector;

/// Input qubit amplitudes (c₀, c₁). Construction renormalizes inputs whose
/// squared norm is within 10⁻³ of one and rejects anything further out.
#[derive(Debug, Clone)]
pub struct QubitInput<T: Scalar> {
    pub c0: Complex<T>,
    pub c1: Complex<T>,
}

impl<T: Scalar> QubitInput<T> {
    pub fn new(c0: Complex<T>, c1: Complex<T>) -> Result<Self> {
        let n2 = c0.norm_sqr() + c1.norm_sqr();
        if !n2.is_finite() || n2 <= T::zero() {
            return Err(Error::BadQubit("zero or non-finite amplitudes".into()));
        }
        let dev = (n2 - T::one()).abs();
        if dev > real(1e-3) {
            return Err(Error::BadQubit(format!(
                "|c0|² + |c1|² = {n2} deviates from 1 by more than 1e-3"
            )));
        }
        let inv = Complex::new(n2.sqrt().recip(), T::zero());
        Ok(QubitInput {
            c0: c0 * inv,
            c1: c1 * inv,
        })
    }

    /// Uniformly random qubit (normalized complex Gaussian pair).
    pub fn random(rng: &mut SimRng) -> Self {
        use rand::Rng;
        let mut draw = || {
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            let r = (-2.0 * u1.ln()).sqrt();
            let th = 2.0 * std::f64::consts::PI * u2;
            cplx::<T>(r * th.cos(), r * th.sin())
        };
        let a = draw();
        let b = draw();
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let inv = Complex::new(n.recip(), T::zero());
        QubitInput {
            c0: a * inv,
            c1: b * inv,
        }
    }

    /// Amplitudes on a three-level atom: (c0, c1, 0).
    pub fn atom_amplitudes(&self) -> Vec<Complex<T>> {
        vec![self.c0, self.c1, czero()]
    }

    /// The g ↔ e swapped qubit, as held by the backup atom in the Φ branches.
    pub fn swapped(&self) -> Self {
        QubitInput {
            c0: self.c1,
            c1: self.c0,
        }
    }
}

/// Why a round was aborted and restarted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RetryReason {
    SenderLeftInEStepII,
    SenderLeftInEStepIV,
    BothReceiversInR,
}

#[derive(Debug, Clone, Serialize)]
pub struct TranscriptEntry {
    pub step: String,
    pub description: String,
    pub outcome: String,
    pub probability: f64,
}

/// Ordered record of measurements and channel draws across the rounds of a
/// protocol run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    pub channel_draws: Vec<ChannelParamsLog>,
    pub rounds_used: usize,
}

impl Transcript {
    fn record<T: Scalar>(&mut self, step: &str, description: &str, outcome: &str, prob: T) {
        self.entries.push(TranscriptEntry {
            step: step.to_string(),
            description: description.to_string(),
            outcome: outcome.to_string(),
            probability: prob.to_f64().unwrap_or(f64::NAN),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolStatus {
    Success,
    RetryAfterDetectedError,
}

/// Result of a protocol run: either the qubit arrived on atom 2 (fidelity
/// against c₀|G⟩+c₁|E⟩) or the run exhausted its rounds and reports the
/// fidelity of the recovered backup.
#[derive(Debug, Clone)]
pub struct ProtocolOutcome<T: Scalar> {
    pub status: ProtocolStatus,
    pub fidelity: T,
    pub rounds_used: usize,
    pub retry_reason: Option<RetryReason>,
    pub transcript: Transcript,
}

#[derive(Debug, Serialize)]
struct OutcomeLine<'a> {
    status: ProtocolStatus,
    rounds: usize,
    fidelity: f64,
    retry_reason: Option<RetryReason>,
    branches: &'a [TranscriptEntry],
    channel_draws: &'a [ChannelParamsLog],
}

impl<T: Scalar> ProtocolOutcome<T> {
    /// One JSON line per run.
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&OutcomeLine {
            status: self.status,
            rounds: self.rounds_used,
            fidelity: self.fidelity.to_f64().unwrap_or(f64::NAN),
            retry_reason: self.retry_reason,
            branches: &self.transcript.entries,
            channel_draws: &self.transcript.channel_draws,
        })?)
    }
}

// ---------------------------------------------------------------------------
// Local operations
// ---------------------------------------------------------------------------

fn one_over_sqrt2<T: Scalar>() -> Complex<T> {
    Complex::new(real::<T>(0.5).sqrt(), T::zero())
}

/// The step-(i) entangler on atoms 1 and b: on the {g,e}⊗{g,e} block
/// |g,g⟩ → (|e,g⟩+|g,e⟩)/√2 and |e,g⟩ → (|e,e⟩+|g,g⟩)/√2, completed
/// unitarily; identity wherever either atom is in r.
fn encoding_unitary<T: Scalar>(space: &Arc<HilbertSpace>) -> Result<LinearOperator<T>> {
    let local = HilbertSpace::new(vec![
        crate::hilbert::node1_atom("atom1"),
        crate::hilbert::node1_atom("atomb"),
    ])?;
    let s = one_over_sqrt2::<T>();
    let m = -s;
    let idx = |a1: usize, ab: usize| a1 * 3 + ab;
    let mut triplets: Vec<(usize, usize, Complex<T>)> = vec![
        // column |g,g⟩
        (idx(1, 0), idx(0, 0), s),
        (idx(0, 1), idx(0, 0), s),
        // column |e,g⟩
        (idx(1, 1), idx(1, 0), s),
        (idx(0, 0), idx(1, 0), s),
        // column |g,e⟩
        (idx(1, 0), idx(0, 1), s),
        (idx(0, 1), idx(0, 1), m),
        // column |e,e⟩
        (idx(1, 1), idx(1, 1), s),
        (idx(0, 0), idx(1, 1), m),
    ];
    for a1 in 0..3 {
        for ab in 0..3 {
            if a1 == level::R || ab == level::R {
                triplets.push((idx(a1, ab), idx(a1, ab), Complex::new(T::one(), T::zero())));
            }
        }
    }
    let local_op = LinearOperator::from_triplets(local, triplets);
    embed(&local_op, space)
}

/// Cyclic relabeling on atom 1: r→g, g→e (and e→r, unobservable after the
/// step-(ii) projection).
fn symmetrize_unitary<T: Scalar>(space: &Arc<HilbertSpace>) -> Result<LinearOperator<T>> {
    let one = Complex::new(T::one(), T::zero());
    let mat = vec![
        vec![czero(), czero(), one], // g ← r
        vec![one, czero(), czero()], // e ← g
        vec![czero(), one, czero()], // r ← e
    ];
    subsystem_op(space, "atom1", &mat)
}

/// g ↔ e swap on the backup atom.
fn backup_swap<T: Scalar>(space: &Arc<HilbertSpace>) -> Result<LinearOperator<T>> {
    let one = Complex::new(T::one(), T::zero());
    let mat = vec![
        vec![czero(), one, czero()],
        vec![one, czero(), czero()],
        vec![czero(), czero(), one],
    ];
    subsystem_op(space, "atomb", &mat)
}

/// G ↔ R swap on a node-2 atom, used to park a spectator out of the cavity
/// interaction during a physical gate.
pub fn park_unitary<T: Scalar>(
    space: &Arc<HilbertSpace>,
    atom: &str,
) -> Result<LinearOperator<T>> {
    let one = Complex::new(T::one(), T::zero());
    let mat = vec![
        vec![czero(), czero(), one],
        vec![czero(), one, czero()],
        vec![one, czero(), czero()],
    ];
    subsystem_op(space, atom, &mat)
}

/// e^{iθ} on one level of one atom.
fn phase_on_level<T: Scalar>(
    space: &Arc<HilbertSpace>,
    atom: &str,
    lvl: usize,
    theta: T,
) -> Result<LinearOperator<T>> {
    let one = Complex::new(T::one(), T::zero());
    let ph = Complex::new(theta.cos(), theta.sin());
    let d = space.dim_of(atom)?;
    let mut mat = vec![vec![czero::<T>(); d]; d];
    for (k, row) in mat.iter_mut().enumerate() {
        row[k] = if k == lvl { ph } else { one };
    }
    subsystem_op(space, atom, &mat)
}

// ---------------------------------------------------------------------------
// Protocol steps
// ---------------------------------------------------------------------------

/// Fresh register: the qubit on atom 1, |g⟩ on b, |R⟩ on the node-2 atoms,
/// vacuum cavities, and — when present — the given environment state.
pub fn initial_state<T: Scalar>(
    space: &Arc<HilbertSpace>,
    q: &QubitInput<T>,
    env_xi: Option<&[Complex<T>]>,
) -> Result<StateVector<T>> {
    let one = Complex::new(T::one(), T::zero());
    let mut factors = Vec::new();
    for sub in space.subsystems() {
        let label = sub.label.as_str();
        let f = if label == "atom1" {
            q.atom_amplitudes()
        } else if label == "atomb" {
            vec![one, czero(), czero()]
        } else if label == "atom2" || label == "atoma" {
            vec![czero(), czero(), one]
        } else if label == "env" {
            env_xi
                .ok_or_else(|| Error::BadEnvironment("missing environment state".into()))?
                .to_vec()
        } else {
            let mut v = vec![czero::<T>(); sub.dim()];
            v[0] = one;
            v
        };
        factors.push(f);
    }
    StateVector::product(space.clone(), &factors)
}

/// Step (i): entangle atom 1 with the backup atom.
pub fn encode_backup<T: Scalar>(psi: &StateVector<T>) -> Result<StateVector<T>> {
    let n2 = psi.norm_sqr();
    let tol = real::<T>(1e-10);
    let b_not_g = (psi.subsystem_population("atomb", level::E)?
        + psi.subsystem_population("atomb", level::R)?)
        / n2;
    if b_not_g > tol {
        return Err(Error::SectorViolation(
            "backup atom must start in |g⟩".into(),
        ));
    }
    if psi.subsystem_population("atom1", level::R)? / n2 > tol {
        return Err(Error::SectorViolation(
            "atom 1 must carry the qubit in span{g, e}".into(),
        ));
    }
    encoding_unitary(psi.space())?.apply(psi)
}

/// Step (iii): the local relabeling r→g, g→e on atom 1. Errors if atom 1
/// still holds e amplitude (the step-(ii) measurement must have removed it).
pub fn symmetrize<T: Scalar>(psi: &StateVector<T>) -> Result<StateVector<T>> {
    let res = psi.subsystem_population("atom1", level::E)? / psi.norm_sqr();
    if res > real(1e-10) {
        return Err(Error::ResidualEAmplitude(res.to_f64().unwrap_or(f64::NAN)));
    }
    symmetrize_unitary(psi.space())?.apply(psi)
}

/// Outcomes of the three step-(v) measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TeleportOutcomes {
    /// Atom b found in g (false) or e (true).
    pub b_in_e: bool,
    /// Sign of the atom-1 (|g⟩±|r⟩)/√2 outcome: +1 or −1.
    pub atom1_sign: i8,
    /// Sign of the atom-a (|E⟩±|R⟩)/√2 outcome.
    pub atoma_sign: i8,
}

impl TeleportOutcomes {
    pub fn all() -> [TeleportOutcomes; 8] {
        let mut out = [TeleportOutcomes {
            b_in_e: false,
            atom1_sign: 1,
            atoma_sign: 1,
        }; 8];
        let mut k = 0;
        for &b in &[false, true] {
            for &s1 in &[1i8, -1] {
                for &sa in &[1i8, -1] {
                    out[k] = TeleportOutcomes {
                        b_in_e: b,
                        atom1_sign: s1,
                        atoma_sign: sa,
                    };
                    k += 1;
                }
            }
        }
        out
    }
}

/// The measurement-conditioned single-atom correction on atom 2.
///
/// The eight entries were frozen from the branch enumeration of the
/// pre-teleportation state (the `correction_table_matches_branch_enumeration`
/// test re-derives them):
///   b = g: E→G, R→s·E, G→R with s = s₁·s_a;
///   b = e: R→G, E→s·E, G→R with s = s₁·s_a.
pub fn correction_unitary<T: Scalar>(
    space: &Arc<HilbertSpace>,
    o: TeleportOutcomes,
) -> Result<LinearOperator<T>> {
    let one = Complex::new(T::one(), T::zero());
    let s = if o.atom1_sign * o.atoma_sign >= 0 {
        one
    } else {
        -one
    };
    let z = czero::<T>();
    let mat = if !o.b_in_e {
        vec![
            vec![z, one, z],  // G ← E
            vec![z, z, s],    // E ← s·R
            vec![one, z, z],  // R ← G
        ]
    } else {
        vec![
            vec![z, z, one],  // G ← R
            vec![z, s, z],    // E ← s·E
            vec![one, z, z],  // R ← G
        ]
    };
    subsystem_op(space, "atom2", &mat)
}

fn sender_e_projectors<T: Scalar>(space: &Arc<HilbertSpace>) -> Result<[LinearOperator<T>; 2]> {
    binary_projectors(&level_projector(space, "atom1", level::E)?)
}

fn joint_rr_projectors<T: Scalar>(space: &Arc<HilbertSpace>) -> Result<[LinearOperator<T>; 2]> {
    let p = level_projector::<T>(space, "atom2", level::R)?
        .matmul(&level_projector(space, "atoma", level::R)?)?;
    binary_projectors(&p)
}

fn atom1_level_projectors<T: Scalar>(
    space: &Arc<HilbertSpace>,
) -> Result<Vec<LinearOperator<T>>> {
    Ok(vec![
        level_projector(space, "atom1", level::G)?,
        level_projector(space, "atom1", level::R)?,
        level_projector(space, "atom1", level::E)?,
    ])
}

fn backup_ge_projectors<T: Scalar>(space: &Arc<HilbertSpace>) -> Result<Vec<LinearOperator<T>>> {
    Ok(vec![
        level_projector(space, "atomb", level::G)?,
        level_projector(space, "atomb", level::E)?,
        level_projector(space, "atomb", level::R)?,
    ])
}

/// What a completed step-(ii) or step-(iv) check produced.
pub enum CheckResult<T: Scalar> {
    /// No error detected; the projected state continues.
    Pass(StateVector<T>),
    /// Detected error: the state after collapse and backup recovery.
    Detected {
        reason: RetryReason,
        state: StateVector<T>,
        backup_fidelity: T,
    },
}

fn backup_fidelity<T: Scalar>(psi: &StateVector<T>, q: &QubitInput<T>) -> Result<T> {
    psi.subsystem_fidelity("atomb", &q.atom_amplitudes())
}

/// Step (ii): apply the channel atom 1 → atom 2 and measure whether atom 1 is
/// left in |e⟩. A hit collapses the register with the backup atom already in
/// the input state.
pub fn step_ii_transmit_and_check<T: Scalar>(
    psi: &StateVector<T>,
    draw: &ChannelParams<T>,
    q: &QubitInput<T>,
    u: T,
    transcript: &mut Transcript,
) -> Result<CheckResult<T>> {
    let sent = apply_channel(psi, "atom1", "atom2", draw)?;
    let m = measure_projective(&sent, &sender_e_projectors(sent.space())?, u)?;
    let found = m.outcome == 0;
    transcript.record(
        "ii",
        "atom 1 measured in |e⟩ after first transmission",
        if found { "e" } else { "not_e" },
        m.probability,
    );
    if found {
        let f = backup_fidelity(&m.collapsed, q)?;
        Ok(CheckResult::Detected {
            reason: RetryReason::SenderLeftInEStepII,
            state: m.collapsed,
            backup_fidelity: f,
        })
    } else {
        Ok(CheckResult::Pass(m.collapsed))
    }
}

/// Step (iv): apply the channel atom 1 → atom a, re-test |e⟩ on atom 1, then
/// test whether atoms 2 and a are both in R. Either hit routes to recovery:
/// the |e⟩ hit needs a g↔e swap on b, the RR hit needs the swap only when
/// atom 1 is found in r.
pub fn step_iv_transmit_and_check<T: Scalar>(
    psi: &StateVector<T>,
    draw: &TransmissionDraw<T>,
    q: &QubitInput<T>,
    rng: &mut SimRng,
    transcript: &mut Transcript,
) -> Result<CheckResult<T>> {
    // A jump draw cannot fire on a register without sender-e amplitude: no
    // photon is ever emitted, so the no-jump tuple applies instead.
    let e_weight = psi.subsystem_population("atom1", level::E)? / psi.norm_sqr();
    let effective = if draw.jumped && e_weight <= real(1e-12) {
        transcript.record(
            "iv",
            "jump draw ignored: no photon amplitude in second transmission",
            "forced_no_jump",
            T::one(),
        );
        draw.nojump.clone()
    } else {
        draw.effective()
    };
    let sent = apply_channel(psi, "atom1", "atoma", &effective)?;

    let u1: T = uniform(rng);
    let m = measure_projective(&sent, &sender_e_projectors(sent.space())?, u1)?;
    let found_e = m.outcome == 0;
    transcript.record(
        "iv",
        "atom 1 measured in |e⟩ after second transmission",
        if found_e { "e" } else { "not_e" },
        m.probability,
    );
    if found_e {
        let recovered = backup_swap(m.collapsed.space())?.apply(&m.collapsed)?;
        let f = backup_fidelity(&recovered, q)?;
        return Ok(CheckResult::Detected {
            reason: RetryReason::SenderLeftInEStepIV,
            state: recovered,
            backup_fidelity: f,
        });
    }

    let u2: T = uniform(rng);
    let m = measure_projective(&m.collapsed, &joint_rr_projectors(sent.space())?, u2)?;
    let found_rr = m.outcome == 0;
    transcript.record(
        "iv",
        "atoms 2 and a measured jointly in |R⟩|R⟩",
        if found_rr { "RR" } else { "not_RR" },
        m.probability,
    );
    if !found_rr {
        return Ok(CheckResult::Pass(m.collapsed));
    }

    // Recovery: measure atom 1; finding r means the backup holds the swapped
    // qubit.
    let u3: T = uniform(rng);
    let m1 = measure_projective(&m.collapsed, &atom1_level_projectors(m.collapsed.space())?, u3)?;
    let outcome = ["g", "r", "e"][m1.outcome];
    transcript.record("iv", "atom 1 measured for backup recovery", outcome, m1.probability);
    let state = if m1.outcome == 1 {
        backup_swap(m1.collapsed.space())?.apply(&m1.collapsed)?
    } else {
        m1.collapsed
    };
    let f = backup_fidelity(&state, q)?;
    Ok(CheckResult::Detected {
        reason: RetryReason::BothReceiversInR,
        state,
        backup_fidelity: f,
    })
}

/// Result of one teleportation branch.
#[derive(Debug, Clone)]
pub struct TeleportResult<T: Scalar> {
    pub outcomes: TeleportOutcomes,
    pub probability: T,
    pub fidelity: T,
    pub state: StateVector<T>,
}

/// Step (v): measure atom b in {g,e}, atom 1 in (|g⟩±|r⟩)/√2, atom a in
/// (|E⟩±|R⟩)/√2, then apply the correction on atom 2.
pub fn step_v_teleport<T: Scalar>(
    psi: &StateVector<T>,
    q: &QubitInput<T>,
    rng: &mut SimRng,
    transcript: &mut Transcript,
) -> Result<TeleportResult<T>> {
    let space = psi.space();
    let u1: T = uniform(rng);
    let mb = measure_projective(psi, &backup_ge_projectors(space)?, u1)?;
    if mb.outcome == 2 {
        return Err(Error::SectorViolation(
            "backup atom found in r during teleportation".into(),
        ));
    }
    let b_in_e = mb.outcome == 1;
    transcript.record(
        "v",
        "atom b measured in {g, e}",
        if b_in_e { "e" } else { "g" },
        mb.probability,
    );

    let u2: T = uniform(rng);
    let m1 = measure_projective(
        &mb.collapsed,
        &plus_minus_projectors(space, "atom1", level::G, level::R)?,
        u2,
    )?;
    if m1.outcome == 2 {
        return Err(Error::SectorViolation(
            "atom 1 found outside span{g, r} during teleportation".into(),
        ));
    }
    let s1: i8 = if m1.outcome == 0 { 1 } else { -1 };
    transcript.record(
        "v",
        "atom 1 measured in (|g⟩±|r⟩)/√2",
        if s1 > 0 { "+" } else { "-" },
        m1.probability,
    );

    let u3: T = uniform(rng);
    let ma = measure_projective(
        &m1.collapsed,
        &plus_minus_projectors(space, "atoma", level::E, level::R)?,
        u3,
    )?;
    if ma.outcome == 2 {
        return Err(Error::SectorViolation(
            "atom a found in G during teleportation".into(),
        ));
    }
    let sa: i8 = if ma.outcome == 0 { 1 } else { -1 };
    transcript.record(
        "v",
        "atom a measured in (|E⟩±|R⟩)/√2",
        if sa > 0 { "+" } else { "-" },
        ma.probability,
    );

    let outcomes = TeleportOutcomes {
        b_in_e,
        atom1_sign: s1,
        atoma_sign: sa,
    };
    let corrected = correction_unitary(space, outcomes)?.apply(&ma.collapsed)?;
    let fidelity = corrected.subsystem_fidelity("atom2", &q.atom_amplitudes())?;
    let probability = mb.probability * m1.probability * ma.probability;
    Ok(TeleportResult {
        outcomes,
        probability,
        fidelity,
        state: corrected,
    })
}

/// All eight teleportation branches of a pre-teleportation state, with their
/// probabilities, corrected states and fidelities.
pub fn enumerate_teleport_branches<T: Scalar>(
    psi: &StateVector<T>,
    q: &QubitInput<T>,
) -> Result<Vec<TeleportResult<T>>> {
    let space = psi.space();
    let mut out = Vec::with_capacity(8);
    let b_branches = measure_all_branches(psi, &backup_ge_projectors(space)?)?;
    for (bi, (pb, state_b)) in b_branches.iter().enumerate().take(2) {
        if *pb <= T::zero() {
            continue;
        }
        let a1_branches = measure_all_branches(
            state_b,
            &plus_minus_projectors(space, "atom1", level::G, level::R)?,
        )?;
        for (i1, (p1, state_1)) in a1_branches.iter().enumerate().take(2) {
            if *p1 <= T::zero() {
                continue;
            }
            let aa_branches = measure_all_branches(
                state_1,
                &plus_minus_projectors(space, "atoma", level::E, level::R)?,
            )?;
            for (ia, (pa, state_a)) in aa_branches.iter().enumerate().take(2) {
                if *pa <= T::zero() {
                    continue;
                }
                let outcomes = TeleportOutcomes {
                    b_in_e: bi == 1,
                    atom1_sign: if i1 == 0 { 1 } else { -1 },
                    atoma_sign: if ia == 0 { 1 } else { -1 },
                };
                let corrected = correction_unitary(space, outcomes)?.apply(state_a)?;
                let fidelity = corrected.subsystem_fidelity("atom2", &q.atom_amplitudes())?;
                out.push(TeleportResult {
                    outcomes,
                    probability: *pb * *p1 * *pa,
                    fidelity,
                    state: corrected,
                });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Abstract-channel driver
// ---------------------------------------------------------------------------

enum RoundResult<T: Scalar> {
    Success { fidelity: T },
    Retry { reason: RetryReason, backup_fidelity: T },
}

fn run_abstract_round<T: Scalar>(
    q: &QubitInput<T>,
    draws: &(TransmissionDraw<T>, TransmissionDraw<T>),
    rng: &mut SimRng,
    transcript: &mut Transcript,
) -> Result<RoundResult<T>> {
    let space = protocol_space();
    let psi = initial_state(&space, q, None)?;
    let psi = encode_backup(&psi)?;

    let u: T = uniform(rng);
    let psi = match step_ii_transmit_and_check(&psi, &draws.0.effective(), q, u, transcript)? {
        CheckResult::Detected {
            reason,
            backup_fidelity,
            ..
        } => {
            return Ok(RoundResult::Retry {
                reason,
                backup_fidelity,
            })
        }
        CheckResult::Pass(s) => s,
    };

    let psi = symmetrize(&psi)?;

    let psi = match step_iv_transmit_and_check(&psi, &draws.1, q, rng, transcript)? {
        CheckResult::Detected {
            reason,
            backup_fidelity,
            ..
        } => {
            return Ok(RoundResult::Retry {
                reason,
                backup_fidelity,
            })
        }
        CheckResult::Pass(s) => s,
    };

    let tele = step_v_teleport(&psi, q, rng, transcript)?;
    Ok(RoundResult::Success {
        fidelity: tele.fidelity,
    })
}

/// Repeat-until-success driver over the abstract noisy channel: each round
/// samples a correlated pair of draws, runs steps (i)–(v), and restarts from
/// the recovered backup whenever an error was detected.
pub fn run_protocol<T: Scalar>(
    q: &QubitInput<T>,
    cfg: &NoiseConfig,
    rng: &mut SimRng,
    max_rounds: usize,
) -> Result<ProtocolOutcome<T>> {
    cfg.validate()?;
    if max_rounds == 0 {
        return Err(Error::InvalidConfig("max_rounds must be ≥ 1".into()));
    }
    let mut transcript = Transcript::default();
    let mut last_retry: Option<(RetryReason, T)> = None;
    for round in 1..=max_rounds {
        transcript.rounds_used = round;
        let draws = sample_round::<T>(cfg, rng);
        transcript.channel_draws.push(draws.0.effective().log_entry());
        transcript.channel_draws.push(draws.1.effective().log_entry());
        match run_abstract_round(q, &draws, rng, &mut transcript)? {
            RoundResult::Success { fidelity } => {
                return Ok(ProtocolOutcome {
                    status: ProtocolStatus::Success,
                    fidelity,
                    rounds_used: round,
                    retry_reason: None,
                    transcript,
                });
            }
            RoundResult::Retry {
                reason,
                backup_fidelity,
            } => {
                transcript.record(
                    "retry",
                    "register reset and re-encoded from the backup atom",
                    "retry",
                    backup_fidelity,
                );
                last_retry = Some((reason, backup_fidelity));
            }
        }
    }
    let (reason, backup_fidelity) = last_retry.expect("at least one round ran");
    Ok(ProtocolOutcome {
        status: ProtocolStatus::RetryAfterDetectedError,
        fidelity: backup_fidelity,
        rounds_used: max_rounds,
        retry_reason: Some(reason),
        transcript,
    })
}

// ---------------------------------------------------------------------------
// Explicit-environment analysis
// ---------------------------------------------------------------------------

/// Deterministic walk of the no-detected-error branch under an explicit
/// environment, enumerating all eight teleportation outcomes.
#[derive(Debug, Clone)]
pub struct EnvProtocolReport<T: Scalar> {
    pub commuting: bool,
    pub commutator_residual: T,
    /// Probability of reaching teleportation without a detected error.
    pub no_error_probability: T,
    pub min_fidelity: T,
    pub mean_fidelity: T,
}

pub fn run_protocol_env<T: Scalar>(
    q: &QubitInput<T>,
    env: &EnvironmentModel<T>,
) -> Result<EnvProtocolReport<T>> {
    let (commuting, residual) = env.check_commuting();
    let space = if env.env_dim == 1 {
        protocol_space()
    } else {
        protocol_space_with_env(env.env_dim)?
    };
    let xi = if env.env_dim == 1 {
        None
    } else {
        Some(env.xi.as_slice())
    };
    let psi = initial_state(&space, q, xi)?;
    let psi = encode_backup(&psi)?;
    let psi = apply_env_channel(&psi, env, "atom1", "atom2")?;

    let mut no_error_probability = T::one();
    let e_branches = measure_all_branches(&psi, &sender_e_projectors(&space)?)?;
    no_error_probability *= e_branches[1].0;
    let psi = symmetrize(&e_branches[1].1)?;
    let psi = apply_env_channel(&psi, env, "atom1", "atoma")?;
    let e_branches = measure_all_branches(&psi, &sender_e_projectors(&space)?)?;
    no_error_probability *= e_branches[1].0;
    let rr_branches = measure_all_branches(&e_branches[1].1, &joint_rr_projectors(&space)?)?;
    no_error_probability *= rr_branches[1].0;

    let branches = enumerate_teleport_branches(&rr_branches[1].1, q)?;
    let mut min_f = T::one();
    let mut mean_f = T::zero();
    let mut total_p = T::zero();
    for b in &branches {
        min_f = min_f.min(b.fidelity);
        mean_f += b.fidelity * b.probability;
        total_p += b.probability;
    }
    if total_p > T::zero() {
        mean_f /= total_p;
    }
    Ok(EnvProtocolReport {
        commuting,
        commutator_residual: residual,
        no_error_probability,
        min_fidelity: min_f,
        mean_fidelity: mean_f,
    })
}

// ---------------------------------------------------------------------------
// Physical (MCWF) driver
// ---------------------------------------------------------------------------

/// How the physical gates evolve.
#[derive(Debug, Clone, Copy)]
pub enum TrajectoryMode {
    /// Full Monte-Carlo trajectories; gate seeds derive from the base seed.
    Stochastic { base_seed: u64 },
    /// Deterministic no-jump branch with measurements conditioned on the
    /// no-detected-error outcomes.
    NoJumpConditional,
}

/// One sampled point of the overlap time series emitted by physical runs.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapSample {
    pub round: usize,
    pub leg: u8,
    pub t: f64,
    pub overlap_after_step_ii_target: f64,
    pub overlap_final_target: f64,
    pub backup_overlap: f64,
}

/// Protocol driver whose transmissions run the full cascaded-cavity model.
pub struct PhysicalRunner<T: Scalar> {
    pub params: PhysicalParams<T>,
    pub pulses: Arc<PulseSchedule<T>>,
    pub integrator: IntegratorConfig<T>,
    /// Calibrated phase of the ideal gate's β amplitude, undone after each
    /// transmission by a local rotation on the receiver.
    pub beta_phase: T,
    pub space: Arc<HilbertSpace>,
}

impl<T: Scalar> PhysicalRunner<T> {
    pub fn new(
        params: PhysicalParams<T>,
        pulses: PulseSchedule<T>,
        integrator: IntegratorConfig<T>,
        beta_phase: T,
        n_max: usize,
    ) -> Self {
        PhysicalRunner {
            params,
            pulses: Arc::new(pulses),
            integrator,
            beta_phase,
            space: crate::hilbert::physical_space(n_max),
        }
    }

    /// Ideal post-step-(ii) state in the leg-1 frame (spectator a parked,
    /// β phase folded in).
    fn target_after_ii(&self, q: &QubitInput<T>) -> Result<StateVector<T>> {
        let s = one_over_sqrt2::<T>();
        let ph = Complex::new(self.beta_phase.cos(), self.beta_phase.sin());
        let mk = |a1: &str, ab: &str, a2: &str| -> Result<StateVector<T>> {
            StateVector::basis_from_names(
                self.space.clone(),
                &[
                    ("atom1", a1),
                    ("atomb", ab),
                    ("atom2", a2),
                    ("atoma", "G"),
                    ("cav1", "0"),
                    ("cav2", "0"),
                ],
            )
        };
        let mut t = StateVector::zero(self.space.clone());
        t.add_scaled(q.c0 * s * ph, &mk("r", "g", "E")?);
        t.add_scaled(q.c1 * s * ph, &mk("r", "e", "E")?);
        t.add_scaled(q.c0 * s, &mk("g", "e", "R")?);
        t.add_scaled(q.c1 * s, &mk("g", "g", "R")?);
        Ok(t)
    }

    /// Ideal pre-teleportation state in the leg-2 frame (spectator atom 2
    /// parked, pending β phase on the second branch).
    fn target_after_iv(&self, q: &QubitInput<T>) -> Result<StateVector<T>> {
        let s = one_over_sqrt2::<T>();
        let ph = Complex::new(self.beta_phase.cos(), self.beta_phase.sin());
        let mk = |a1: &str, ab: &str, a2: &str, aa: &str| -> Result<StateVector<T>> {
            StateVector::basis_from_names(
                self.space.clone(),
                &[
                    ("atom1", a1),
                    ("atomb", ab),
                    ("atom2", a2),
                    ("atoma", aa),
                    ("cav1", "0"),
                    ("cav2", "0"),
                ],
            )
        };
        let mut t = StateVector::zero(self.space.clone());
        // [c₀|g⟩_b + c₁|e⟩_b] |g₁⟩|E₂⟩|Rₐ⟩  (atom 2 in E is unaffected by parking)
        t.add_scaled(q.c0 * s, &mk("g", "g", "E", "R")?);
        t.add_scaled(q.c1 * s, &mk("g", "e", "E", "R")?);
        // [c₀|e⟩_b + c₁|g⟩_b] |r₁⟩|R₂→G₂⟩|Eₐ⟩ with the in-flight β phase
        t.add_scaled(q.c0 * s * ph, &mk("r", "e", "G", "E")?);
        t.add_scaled(q.c1 * s * ph, &mk("r", "g", "G", "E")?);
        Ok(t)
    }

    fn phase_correction(&self, receiver: &str) -> Result<LinearOperator<T>> {
        phase_on_level(&self.space, receiver, level::E, -self.beta_phase)
    }

    /// Run one transmission leg: park the idle node-2 atom, evolve the gate,
    /// unpark, undo the calibrated β phase.
    #[allow(clippy::too_many_arguments)]
    fn transmit_leg(
        &self,
        psi: &StateVector<T>,
        leg: u8,
        round: usize,
        mode: TrajectoryMode,
        gate_counter: &mut u64,
        records: &mut Vec<TrajectoryRecord>,
        q: &QubitInput<T>,
        observer: &mut Option<&mut dyn FnMut(OverlapSample)>,
    ) -> Result<StateVector<T>> {
        let layout = if leg == 1 {
            GateLayout::first()
        } else {
            GateLayout::second()
        };
        let spectator = layout.node2_spectator();
        let park = park_unitary::<T>(&self.space, spectator)?;
        let parked = park.apply(psi)?;

        let duration = self.pulses.duration();
        let t_offset = real::<T>((round - 1) as f64) * duration * real(2.0)
            + if leg == 1 { T::zero() } else { duration };
        let target_ii = self.target_after_ii(q)?;
        let target_iv = self.target_after_iv(q)?;
        let backup = q.atom_amplitudes();
        let backup_swapped = q.swapped().atom_amplitudes();

        let mut sample = |t: T, state: &StateVector<T>| {
            if let Some(obs) = observer.as_deref_mut() {
                let o_ii = target_ii.inner(state).map(|v| v.norm_sqr()).unwrap_or(T::zero());
                let o_iv = target_iv.inner(state).map(|v| v.norm_sqr()).unwrap_or(T::zero());
                let f1 = state
                    .subsystem_fidelity("atomb", &backup)
                    .unwrap_or(T::zero());
                let f2 = state
                    .subsystem_fidelity("atomb", &backup_swapped)
                    .unwrap_or(T::zero());
                obs(OverlapSample {
                    round,
                    leg,
                    t: (t_offset + t).to_f64().unwrap_or(f64::NAN),
                    overlap_after_step_ii_target: o_ii.to_f64().unwrap_or(f64::NAN),
                    overlap_final_target: o_iv.to_f64().unwrap_or(f64::NAN),
                    backup_overlap: f1.max(f2).to_f64().unwrap_or(f64::NAN),
                });
            }
        };

        let out = match mode {
            TrajectoryMode::Stochastic { base_seed } => {
                let seed = crate::rng::derived_seed(base_seed, *gate_counter);
                *gate_counter += 1;
                let (state, record) = run_transmission_gate_observed(
                    &parked,
                    &layout,
                    &self.params,
                    &self.pulses,
                    &self.integrator,
                    seed,
                    &mut sample,
                )?;
                records.push(record);
                state
            }
            TrajectoryMode::NoJumpConditional => {
                run_transmission_gate_nojump_observed(
                    &parked,
                    &layout,
                    &self.params,
                    &self.pulses,
                    &self.integrator,
                    &mut sample,
                )?
            }
        };

        let unparked = park.apply(&out)?;
        self.phase_correction(&layout.receiver)?.apply(&unparked)
    }

    /// Full protocol run over the physical gates. In `NoJumpConditional` mode
    /// the error checks are conditioned on their no-error outcomes instead of
    /// sampled.
    pub fn run(
        &self,
        q: &QubitInput<T>,
        mode: TrajectoryMode,
        max_rounds: usize,
        rng: &mut SimRng,
        mut observer: Option<&mut dyn FnMut(OverlapSample)>,
    ) -> Result<(ProtocolOutcome<T>, Vec<TrajectoryRecord>)> {
        if max_rounds == 0 {
            return Err(Error::InvalidConfig("max_rounds must be ≥ 1".into()));
        }
        let conditional = matches!(mode, TrajectoryMode::NoJumpConditional);
        let mut transcript = Transcript::default();
        let mut records = Vec::new();
        let mut gate_counter = 0u64;
        let mut last_retry: Option<(RetryReason, T)> = None;

        for round in 1..=max_rounds {
            transcript.rounds_used = round;
            let psi = initial_state(&self.space, q, None)?;
            let psi = encode_backup(&psi)?;
            let psi = self.transmit_leg(
                &psi,
                1,
                round,
                mode,
                &mut gate_counter,
                &mut records,
                q,
                &mut observer,
            )?;

            // Step (ii) check.
            let projs = sender_e_projectors(&self.space)?;
            let (found_e, prob, state) =
                self.measure(&psi, &projs, 0, conditional, rng)?;
            transcript.record(
                "ii",
                "atom 1 measured in |e⟩ after first transmission",
                if found_e { "e" } else { "not_e" },
                prob,
            );
            if found_e {
                let f = backup_fidelity(&state, q)?;
                transcript.record("retry", "reset after detected error", "retry", f);
                last_retry = Some((RetryReason::SenderLeftInEStepII, f));
                continue;
            }

            let psi = symmetrize(&state)?;
            let psi = self.transmit_leg(
                &psi,
                2,
                round,
                mode,
                &mut gate_counter,
                &mut records,
                q,
                &mut observer,
            )?;

            // Step (iv) checks.
            let projs = sender_e_projectors(&self.space)?;
            let (found_e, prob, state) =
                self.measure(&psi, &projs, 0, conditional, rng)?;
            transcript.record(
                "iv",
                "atom 1 measured in |e⟩ after second transmission",
                if found_e { "e" } else { "not_e" },
                prob,
            );
            if found_e {
                let recovered = backup_swap(&self.space)?.apply(&state)?;
                let f = backup_fidelity(&recovered, q)?;
                transcript.record("retry", "reset after detected error", "retry", f);
                last_retry = Some((RetryReason::SenderLeftInEStepIV, f));
                continue;
            }

            let projs = joint_rr_projectors(&self.space)?;
            let (found_rr, prob, state) = self.measure(&state, &projs, 0, conditional, rng)?;
            transcript.record(
                "iv",
                "atoms 2 and a measured jointly in |R⟩|R⟩",
                if found_rr { "RR" } else { "not_RR" },
                prob,
            );
            if found_rr {
                let u: T = uniform(rng);
                let m1 =
                    measure_projective(&state, &atom1_level_projectors(&self.space)?, u)?;
                let outcome = ["g", "r", "e"][m1.outcome];
                transcript.record("iv", "atom 1 measured for backup recovery", outcome, m1.probability);
                let recovered = if m1.outcome == 1 {
                    backup_swap(&self.space)?.apply(&m1.collapsed)?
                } else {
                    m1.collapsed
                };
                let f = backup_fidelity(&recovered, q)?;
                transcript.record("retry", "reset after detected error", "retry", f);
                last_retry = Some((RetryReason::BothReceiversInR, f));
                continue;
            }

            let tele = step_v_teleport(&state, q, rng, &mut transcript)?;
            return Ok((
                ProtocolOutcome {
                    status: ProtocolStatus::Success,
                    fidelity: tele.fidelity,
                    rounds_used: round,
                    retry_reason: None,
                    transcript,
                },
                records,
            ));
        }

        let (reason, backup_fidelity) = last_retry.expect("at least one round ran");
        Ok((
            ProtocolOutcome {
                status: ProtocolStatus::RetryAfterDetectedError,
                fidelity: backup_fidelity,
                rounds_used: max_rounds,
                retry_reason: Some(reason),
                transcript,
            },
            records,
        ))
    }

    /// Sampled or conditioned binary measurement: returns whether the flagged
    /// outcome (index `flag_index`) occurred, its probability, and the
    /// post-measurement state. Conditioning forces the complement branch.
    fn measure(
        &self,
        psi: &StateVector<T>,
        projectors: &[LinearOperator<T>; 2],
        flag_index: usize,
        conditional: bool,
        rng: &mut SimRng,
    ) -> Result<(bool, T, StateVector<T>)> {
        if conditional {
            let branches = measure_all_branches(psi, projectors)?;
            let keep = 1 - flag_index;
            let (p, state) = &branches[keep];
            if *p <= T::zero() {
                return Err(Error::InvalidConfig(
                    "conditioned no-error branch has zero probability".into(),
                ));
            }
            Ok((false, *p, state.clone()))
        } else {
            let u: T = uniform(rng);
            let m = measure_projective(psi, projectors, u)?;
            Ok((m.outcome == flag_index, m.probability, m.collapsed))
        }
    }
}

/// Convenience wrapper matching the abstract driver's shape.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol_physical<T: Scalar>(
    q: &QubitInput<T>,
    params: &PhysicalParams<T>,
    pulses: &PulseSchedule<T>,
    integrator: &IntegratorConfig<T>,
    beta_phase: T,
    n_max: usize,
    mode: TrajectoryMode,
    rng: &mut SimRng,
    max_rounds: usize,
) -> Result<(ProtocolOutcome<T>, Vec<TrajectoryRecord>)> {
    let runner = PhysicalRunner::new(
        params.clone(),
        pulses.clone(),
        integrator.clone(),
        beta_phase,
        n_max,
    );
    runner.run(q, mode, max_rounds, rng, None)
}
