//! Physical model of the two cascaded cavity-QED nodes.
//!
//! Each node holds two Λ atoms whose upper level has been eliminated
//! adiabatically; what remains per atom is a photon-number Stark shift on the
//! auxiliary level, a laser Stark shift on the qubit's upper ground level, and
//! an effective two-photon Raman coupling |e,0⟩ ↔ |r,1⟩ with the atom's cavity
//! mode. The two cavities decay into a common unidirectional channel (output
//! of cavity 1 drives cavity 2, never the reverse), plus independent loss
//! channels. All rates are in units of the cavity decay κ, all times in 1/κ.
//!
//! With a laser detuning Δ and upper-level width Γ the three derived
//! couplings are complex; their negative imaginary parts are decay rates and
//! are matched exactly by the jump channels, so that Σ J†J = i(H − H†) holds
//! identically.

use std::sync::Arc;

use num_complex::Complex;

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::hilbert::{level, HilbertSpace};
use crate::mcwf::{
    evolve_no_jump, sample_trajectory, Generator, IntegratorConfig, JumpChannel, JumpKind,
    TrajectoryRecord,
};
use crate::operator::{annihilator, level_projector, number_op, transition, LinearOperator};
use crate::optim::NelderMead;
use crate::pulse::PulseSchedule;
use crate::scalar::{cplx, czero, imag_unit, real, Scalar};
use crate::state::StateVector;

/// Rates of the physical model, in units of κ.
#[derive(Debug, Clone)]
pub struct PhysicalParams<T: Scalar> {
    /// Atom–cavity coupling g.
    pub g: T,
    /// Cavity decay rate κ (the unit; normally 1).
    pub kappa: T,
    /// Photon loss rate κ′₁ of cavity 1 (mirrors, transmission line).
    pub kappa_loss_1: T,
    /// Photon loss rate κ′₂ of cavity 2.
    pub kappa_loss_2: T,
    /// Spontaneous-emission rate Γ of the eliminated upper level.
    pub gamma: T,
    /// Laser detuning Δ from the upper level.
    pub delta_laser: T,
    /// Raman detuning δ.
    pub delta_raman: T,
}

impl<T: Scalar> PhysicalParams<T> {
    /// The parameter set used throughout the experiments: g = 5κ, Δ = 10κ,
    /// lossless and without spontaneous emission.
    pub fn reference() -> Self {
        PhysicalParams {
            g: real(5.0),
            kappa: T::one(),
            kappa_loss_1: T::zero(),
            kappa_loss_2: T::zero(),
            gamma: T::zero(),
            delta_laser: real(10.0),
            delta_raman: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        if self.kappa <= T::zero() || !self.kappa.is_finite() {
            return Err(Error::InvalidParams("kappa must be positive".into()));
        }
        for (name, v) in [
            ("g", self.g),
            ("kappa_loss_1", self.kappa_loss_1),
            ("kappa_loss_2", self.kappa_loss_2),
            ("gamma", self.gamma),
        ] {
            if v < T::zero() || !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and ≥ 0"
                )));
            }
        }
        if !self.delta_laser.is_finite() || !self.delta_raman.is_finite() {
            return Err(Error::InvalidParams("detunings must be finite".into()));
        }
        let mut warnings = Vec::new();
        if self.gamma > T::zero() && self.delta_laser.abs() < real::<T>(5.0) * self.gamma {
            warnings.push(format!(
                "laser detuning |Δ| = {} is below 5Γ = {}; the adiabatic elimination is marginal",
                self.delta_laser.abs(),
                real::<T>(5.0) * self.gamma
            ));
        }
        Ok(warnings)
    }

    /// Δ + iΓ/2, the eliminated-level denominator.
    pub fn lorentz_denominator(&self) -> Complex<T> {
        Complex::new(self.delta_laser, self.gamma * real(0.5))
    }

    /// g²/(Δ+iΓ/2): photon-number Stark shift of the auxiliary level.
    pub fn cavity_stark(&self) -> Complex<T> {
        Complex::new(self.g * self.g, T::zero()) / self.lorentz_denominator()
    }

    /// 1/(4(Δ+iΓ/2)): laser Stark shift per Ω².
    pub fn stark_per_omega_sqr(&self) -> Complex<T> {
        Complex::new(real(0.25), T::zero()) / self.lorentz_denominator()
    }

    /// g/(2(Δ+iΓ/2)): effective two-photon Rabi frequency per Ω.
    pub fn rabi_per_omega(&self) -> Complex<T> {
        Complex::new(self.g * real(0.5), T::zero()) / self.lorentz_denominator()
    }
}

/// The three derived complex couplings at a given instantaneous Ω.
#[derive(Debug, Clone)]
pub struct DerivedCouplings<T: Scalar> {
    /// δω(t) = Ω(t)²/(4(Δ+iΓ/2)).
    pub stark_shift: Complex<T>,
    /// g(t) = g·Ω(t)/(2(Δ+iΓ/2)).
    pub eff_rabi: Complex<T>,
    /// g²/(Δ+iΓ/2).
    pub cavity_stark: Complex<T>,
}

impl<T: Scalar> DerivedCouplings<T> {
    pub fn at(p: &PhysicalParams<T>, omega: T) -> Self {
        DerivedCouplings {
            stark_shift: p.stark_per_omega_sqr() * Complex::new(omega * omega, T::zero()),
            eff_rabi: p.rabi_per_omega() * Complex::new(omega, T::zero()),
            cavity_stark: p.cavity_stark(),
        }
    }
}

pub const ATOM_LABELS: [&str; 4] = ["atom1", "atomb", "atom2", "atoma"];

pub fn is_node1_atom(label: &str) -> bool {
    label == "atom1" || label == "atomb"
}

/// Cavity hosting a given atom.
pub fn cavity_of(atom: &str) -> Result<&'static str> {
    match atom {
        "atom1" | "atomb" => Ok("cav1"),
        "atom2" | "atoma" => Ok("cav2"),
        other => Err(Error::UnknownLabel(other.to_string())),
    }
}

/// Which atoms a transmission gate drives: the sender emits with Ω₁(t), the
/// receiver absorbs with Ω₂(t).
#[derive(Debug, Clone)]
pub struct GateLayout {
    pub sender: String,
    pub receiver: String,
}

impl GateLayout {
    /// First transmission: atom 1 → atom 2.
    pub fn first() -> Self {
        GateLayout {
            sender: "atom1".into(),
            receiver: "atom2".into(),
        }
    }

    /// Second transmission: atom 1 → atom a.
    pub fn second() -> Self {
        GateLayout {
            sender: "atom1".into(),
            receiver: "atoma".into(),
        }
    }

    pub fn validate(&self, space: &HilbertSpace) -> Result<()> {
        space.position_of(&self.sender)?;
        space.position_of(&self.receiver)?;
        if !is_node1_atom(&self.sender) {
            return Err(Error::LayoutError(format!(
                "sender `{}` must sit in node 1",
                self.sender
            )));
        }
        if is_node1_atom(&self.receiver) {
            return Err(Error::LayoutError(format!(
                "receiver `{}` must sit in node 2",
                self.receiver
            )));
        }
        Ok(())
    }

    /// The node-2 atom that is not receiving in this gate.
    pub fn node2_spectator(&self) -> &'static str {
        if self.receiver == "atom2" {
            "atoma"
        } else {
            "atom2"
        }
    }
}

/// a†a |r⟩⟨r| restricted to one atom and its cavity.
fn cavity_stark_op<T: Scalar>(
    space: &Arc<HilbertSpace>,
    atom: &str,
) -> Result<LinearOperator<T>> {
    let n = number_op::<T>(space, cavity_of(atom)?)?;
    let pr = level_projector::<T>(space, atom, level::R)?;
    n.matmul(&pr)
}

/// Constant part of H_eff: cavity detuning, cascaded decay, losses, and the
/// photon-number Stark shifts of all four atoms.
fn constant_part<T: Scalar>(
    p: &PhysicalParams<T>,
    space: &Arc<HilbertSpace>,
) -> Result<LinearOperator<T>> {
    let n1 = number_op::<T>(space, "cav1")?;
    let n2 = number_op::<T>(space, "cav2")?;
    let a1 = annihilator::<T>(space, "cav1")?;
    let a2 = annihilator::<T>(space, "cav2")?;
    let mi = -imag_unit::<T>();

    // −δ (n₁ + n₂)
    let mut h = n1
        .add(&n2)?
        .scaled(Complex::new(-p.delta_raman, T::zero()));
    // −iκ (n₁ + n₂ + 2 a₂†a₁)
    let cascade = n1
        .add(&n2)?
        .add(&a2.adjoint().matmul(&a1)?.scaled(cplx(2.0, 0.0)))?;
    h = h.add(&cascade.scaled(mi * Complex::new(p.kappa, T::zero())))?;
    // −i(κ′₁ n₁ + κ′₂ n₂)
    h = h.add(&n1.scaled(mi * Complex::new(p.kappa_loss_1, T::zero())))?;
    h = h.add(&n2.scaled(mi * Complex::new(p.kappa_loss_2, T::zero())))?;
    // Σᵢ g²/(Δ+iΓ/2) aᵢ†aᵢ |r⟩ᵢ⟨r|
    let cs = p.cavity_stark();
    for atom in ATOM_LABELS {
        if space.position_of(atom).is_ok() {
            h = h.add(&cavity_stark_op::<T>(space, atom)?.scaled(cs))?;
        }
    }
    Ok(h)
}

/// −i[(g/2(Δ+iΓ/2)) |r⟩⟨e| a† − h.c.] for one atom: multiplied by the real
/// envelope Ω(t) this is the Raman coupling pairing |e,0⟩ with |r,1⟩.
fn raman_linear_part<T: Scalar>(
    p: &PhysicalParams<T>,
    space: &Arc<HilbertSpace>,
    atom: &str,
) -> Result<LinearOperator<T>> {
    let cav = cavity_of(atom)?;
    let k_op = transition::<T>(space, atom, level::R, level::E)?
        .matmul(&annihilator::<T>(space, cav)?.adjoint())?;
    let c = p.rabi_per_omega();
    let mi = -imag_unit::<T>();
    k_op.scaled(mi * c).add(&k_op.adjoint().scaled(-mi * c.conj()))
}

/// (1/4(Δ+iΓ/2)) |e⟩⟨e| for one atom: multiplied by Ω(t)² this is the laser
/// Stark shift (and, through its imaginary part, the laser-induced decay).
fn stark_quadratic_part<T: Scalar>(
    p: &PhysicalParams<T>,
    space: &Arc<HilbertSpace>,
    atom: &str,
) -> Result<LinearOperator<T>> {
    Ok(level_projector::<T>(space, atom, level::E)?.scaled(p.stark_per_omega_sqr()))
}

enum DrivenBy {
    SenderPulse,
    ReceiverPulse,
}

struct PulsedTerm<T: Scalar> {
    driven_by: DrivenBy,
    linear: LinearOperator<T>,
    quadratic: LinearOperator<T>,
}

/// H_eff(t) for one transmission gate, split into a constant part and terms
/// proportional to Ω(t) and Ω(t)².
pub struct HeffGenerator<T: Scalar> {
    space: Arc<HilbertSpace>,
    pulses: Arc<PulseSchedule<T>>,
    constant: LinearOperator<T>,
    pulsed: Vec<PulsedTerm<T>>,
}

impl<T: Scalar> HeffGenerator<T> {
    pub fn new(
        p: &PhysicalParams<T>,
        pulses: Arc<PulseSchedule<T>>,
        layout: &GateLayout,
        space: Arc<HilbertSpace>,
    ) -> Result<Self> {
        p.validate()?;
        layout.validate(&space)?;
        let constant = constant_part(p, &space)?;
        let pulsed = vec![
            PulsedTerm {
                driven_by: DrivenBy::SenderPulse,
                linear: raman_linear_part(p, &space, &layout.sender)?,
                quadratic: stark_quadratic_part(p, &space, &layout.sender)?,
            },
            PulsedTerm {
                driven_by: DrivenBy::ReceiverPulse,
                linear: raman_linear_part(p, &space, &layout.receiver)?,
                quadratic: stark_quadratic_part(p, &space, &layout.receiver)?,
            },
        ];
        Ok(HeffGenerator {
            space,
            pulses,
            constant,
            pulsed,
        })
    }

    fn omega(&self, term: &PulsedTerm<T>, t: T) -> T {
        match term.driven_by {
            DrivenBy::SenderPulse => self.pulses.omega1_at(t),
            DrivenBy::ReceiverPulse => self.pulses.omega2_at(t),
        }
    }
}

impl<T: Scalar> Generator<T> for HeffGenerator<T> {
    fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    fn operator_at(&self, t: T) -> LinearOperator<T> {
        let mut h = self.constant.clone();
        for term in &self.pulsed {
            let om = self.omega(term, t);
            if om != T::zero() {
                h = h
                    .add(&term.linear.scaled(Complex::new(om, T::zero())))
                    .and_then(|x| {
                        x.add(&term.quadratic.scaled(Complex::new(om * om, T::zero())))
                    })
                    .expect("same space");
            }
        }
        h
    }

    fn apply_to(&self, t: T, psi: &StateVector<T>, out: &mut StateVector<T>) {
        self.constant.apply_into(psi, out);
        for term in &self.pulsed {
            let om = self.omega(term, t);
            if om != T::zero() {
                term.linear
                    .apply_add_into(Complex::new(om, T::zero()), psi, out);
                term.quadratic
                    .apply_add_into(Complex::new(om * om, T::zero()), psi, out);
            }
        }
    }
}

/// H_eff(t) assembled as a single operator.
pub fn build_heff<T: Scalar>(
    p: &PhysicalParams<T>,
    pulses: &Arc<PulseSchedule<T>>,
    layout: &GateLayout,
    space: &Arc<HilbertSpace>,
    t: T,
) -> Result<LinearOperator<T>> {
    if t < -real::<T>(1e-12) || t > pulses.duration() + real::<T>(1e-12) {
        return Err(Error::InvalidParams(format!(
            "t = {t} outside the pulse grid [0, {}]",
            pulses.duration()
        )));
    }
    Ok(HeffGenerator::new(p, pulses.clone(), layout, space.clone())?.operator_at(t))
}

/// The jump channels matching H_eff: the cascaded output √(2κ)(a₁+a₂),
/// per-cavity loss channels √(2κ′ᵢ)aᵢ, and — for Γ > 0 — spontaneous-emission
/// collapses onto |r⟩: √(−2 Im g²/(Δ+iΓ/2)) |r⟩⟨r| aᵢ for every atom, plus
/// |Ω(t)|·√(−2 Im 1/(4(Δ+iΓ/2))) |r⟩⟨e| for each driven atom.
pub fn build_jump_channels<T: Scalar>(
    p: &PhysicalParams<T>,
    pulses: &Arc<PulseSchedule<T>>,
    layout: &GateLayout,
    space: &Arc<HilbertSpace>,
) -> Result<Vec<JumpChannel<T>>> {
    p.validate()?;
    layout.validate(space)?;
    let mut channels = Vec::new();

    let a1 = annihilator::<T>(space, "cav1")?;
    let a2 = annihilator::<T>(space, "cav2")?;
    let amp_out = Complex::new((real::<T>(2.0) * p.kappa).sqrt(), T::zero());
    channels.push(JumpChannel::constant(
        "cavity_output",
        JumpKind::CavityOutput,
        a1.add(&a2)?.scaled(amp_out),
    ));

    for (label, kind, rate, a) in [
        ("cavity_loss_1", JumpKind::CavityLoss1, p.kappa_loss_1, &a1),
        ("cavity_loss_2", JumpKind::CavityLoss2, p.kappa_loss_2, &a2),
    ] {
        if rate > T::zero() {
            let amp = Complex::new((real::<T>(2.0) * rate).sqrt(), T::zero());
            channels.push(JumpChannel::constant(label, kind, a.scaled(amp)));
        }
    }

    if p.gamma > T::zero() {
        let rate_cav = -real::<T>(2.0) * p.cavity_stark().im;
        for atom in ATOM_LABELS {
            if space.position_of(atom).is_err() {
                continue;
            }
            let pr = level_projector::<T>(space, atom, level::R)?;
            let acav = annihilator::<T>(space, cavity_of(atom)?)?;
            let op = pr
                .matmul(&acav)?
                .scaled(Complex::new(rate_cav.sqrt(), T::zero()));
            channels.push(JumpChannel::constant(
                &format!("spont_cav_{atom}"),
                JumpKind::SpontEmission,
                op,
            ));
        }
        let rate_per_omega = (-real::<T>(2.0) * p.stark_per_omega_sqr().im).sqrt();
        for (atom, is_sender) in [(&layout.sender, true), (&layout.receiver, false)] {
            let op = transition::<T>(space, atom, level::R, level::E)?;
            let sched = pulses.clone();
            let amplitude: Arc<dyn Fn(T) -> T + Send + Sync> = if is_sender {
                Arc::new(move |t: T| sched.omega1_at(t).abs() * rate_per_omega)
            } else {
                Arc::new(move |t: T| sched.omega2_at(t).abs() * rate_per_omega)
            };
            channels.push(JumpChannel::time_dependent(
                &format!("spont_laser_{atom}"),
                JumpKind::SpontEmission,
                op,
                amplitude,
            ));
        }
    }
    Ok(channels)
}

/// Total photon population outside the cavity vacuum, relative to ‖ψ‖².
pub fn cavity_population<T: Scalar>(psi: &StateVector<T>) -> Result<T> {
    let mut pop = T::zero();
    for cav in ["cav1", "cav2"] {
        if psi.space().position_of(cav).is_ok() {
            let d = psi.space().dim_of(cav)?;
            for n in 1..d {
                pop += psi.subsystem_population(cav, n)?;
            }
        }
    }
    let n2 = psi.norm_sqr();
    if n2 <= T::zero() {
        return Err(Error::ZeroNormState);
    }
    Ok(pop / n2)
}

/// Residual photon population tolerated at the end of a gate.
pub const CAVITY_RESIDUAL_TOL: f64 = 1e-3;

fn check_gate_preconditions<T: Scalar>(psi: &StateVector<T>, layout: &GateLayout) -> Result<()> {
    let tol = real::<T>(1e-8);
    if cavity_population(psi)? > tol {
        return Err(Error::InvalidParams(
            "gate input must have the cavities in vacuum".into(),
        ));
    }
    let excited = psi.subsystem_population(&layout.receiver, level::E)? / psi.norm_sqr();
    if excited > tol {
        return Err(Error::InvalidParams(format!(
            "receiver `{}` must start in its R sector",
            layout.receiver
        )));
    }
    Ok(())
}

fn check_gate_residual<T: Scalar>(psi: &StateVector<T>) -> Result<()> {
    let pop = cavity_population(psi)?;
    if pop > real(CAVITY_RESIDUAL_TOL) {
        return Err(Error::ResidualCavityPopulation {
            population: pop.to_f64().unwrap_or(f64::NAN),
            tolerance: CAVITY_RESIDUAL_TOL,
        });
    }
    Ok(())
}

/// Run one stochastic photon-mediated transmission gate over [0, T]. The
/// returned state is renormalized; the record carries the jump history.
pub fn run_transmission_gate<T: Scalar>(
    psi: &StateVector<T>,
    layout: &GateLayout,
    p: &PhysicalParams<T>,
    pulses: &Arc<PulseSchedule<T>>,
    cfg: &IntegratorConfig<T>,
    seed: u64,
) -> Result<(StateVector<T>, TrajectoryRecord)> {
    check_gate_preconditions(psi, layout)?;
    let gen = HeffGenerator::new(p, pulses.clone(), layout, psi.space().clone())?;
    let jumps = build_jump_channels(p, pulses, layout, psi.space())?;
    let mut cfg = cfg.clone();
    cfg.t_final = pulses.duration();
    let (state, record) = sample_trajectory(psi, &gen, &jumps, &cfg, seed)?;
    check_gate_residual(&state)?;
    Ok((state, record))
}

/// Deterministic no-jump branch of the gate; the result stays unnormalized so
/// its squared norm is the no-jump probability.
pub fn run_transmission_gate_nojump<T: Scalar>(
    psi: &StateVector<T>,
    layout: &GateLayout,
    p: &PhysicalParams<T>,
    pulses: &Arc<PulseSchedule<T>>,
    cfg: &IntegratorConfig<T>,
) -> Result<StateVector<T>> {
    run_transmission_gate_nojump_observed(psi, layout, p, pulses, cfg, &mut |_, _| {})
}

/// No-jump gate with an observer at the same sampled grid times the
/// stochastic gate would use. Chunk boundaries align with integration steps,
/// so the result is bit-identical to the unobserved run.
pub fn run_transmission_gate_nojump_observed<T: Scalar>(
    psi: &StateVector<T>,
    layout: &GateLayout,
    p: &PhysicalParams<T>,
    pulses: &Arc<PulseSchedule<T>>,
    cfg: &IntegratorConfig<T>,
    observer: crate::mcwf::SampleObserver<'_, T>,
) -> Result<StateVector<T>> {
    check_gate_preconditions(psi, layout)?;
    let gen = HeffGenerator::new(p, pulses.clone(), layout, psi.space().clone())?;
    let mut cfg = cfg.clone();
    cfg.t_final = pulses.duration();
    let n_steps = (cfg.t_final / cfg.dt)
        .ceil()
        .to_f64()
        .unwrap_or(0.0) as usize;
    let mut state = psi.clone();
    observer(T::zero(), &state);
    let mut step = 0usize;
    while step < n_steps {
        let next = (step + cfg.sample_stride).min(n_steps);
        let t0 = cfg.dt * real::<T>(step as f64);
        let t1 = if next == n_steps {
            cfg.t_final
        } else {
            cfg.dt * real::<T>(next as f64)
        };
        state = evolve_no_jump(&state, &gen, t0, t1, &cfg)?;
        observer(t1, &state);
        step = next;
    }
    check_gate_residual(&state)?;
    Ok(state)
}

/// Like [`run_transmission_gate`] but with an observer at sampled grid times.
pub fn run_transmission_gate_observed<T: Scalar>(
    psi: &StateVector<T>,
    layout: &GateLayout,
    p: &PhysicalParams<T>,
    pulses: &Arc<PulseSchedule<T>>,
    cfg: &IntegratorConfig<T>,
    seed: u64,
    observer: crate::mcwf::SampleObserver<'_, T>,
) -> Result<(StateVector<T>, TrajectoryRecord)> {
    check_gate_preconditions(psi, layout)?;
    let gen = HeffGenerator::new(p, pulses.clone(), layout, psi.space().clone())?;
    let jumps = build_jump_channels(p, pulses, layout, psi.space())?;
    let mut cfg = cfg.clone();
    cfg.t_final = pulses.duration();
    let (state, record) =
        crate::mcwf::sample_trajectory_observed(psi, &gen, &jumps, &cfg, seed, observer)?;
    check_gate_residual(&state)?;
    Ok((state, record))
}

/// Canonical calibration input for channel-parameter extraction:
/// ((|g⟩+|e⟩)/√2) on the sender, |R⟩ on the receiver, |g⟩ on the backup atom,
/// |G⟩ on the idle node-2 atom, cavities in vacuum.
pub fn calibration_input<T: Scalar>(
    space: &Arc<HilbertSpace>,
    layout: &GateLayout,
) -> Result<StateVector<T>> {
    let inv = real::<T>(0.5).sqrt();
    let mut factors = Vec::new();
    for sub in space.subsystems() {
        let label = sub.label.as_str();
        let mut f = vec![czero::<T>(); sub.dim()];
        if label == layout.sender {
            f[level::G] = Complex::new(inv, T::zero());
            f[level::E] = Complex::new(inv, T::zero());
        } else if label == layout.receiver {
            f[level::R] = Complex::new(T::one(), T::zero());
        } else if label.starts_with("cav") {
            f[0] = Complex::new(T::one(), T::zero());
        } else {
            // backup atom in g, idle node-2 atom parked in G
            f[0] = Complex::new(T::one(), T::zero());
        }
        factors.push(f);
    }
    StateVector::product(space.clone(), &factors)
}

/// Read the channel parameters (α, β, γ₁, γ₂) off a final no-jump state that
/// started from [`calibration_input`]. Returns the parameters and the relative
/// residual outside the four components of the mapping.
pub fn extract_channel_params<T: Scalar>(
    state: &StateVector<T>,
    layout: &GateLayout,
) -> Result<(ChannelParams<T>, T)> {
    let space = state.space();
    let pop = cavity_population(state)?;
    if pop > real(1e-2) {
        return Err(Error::ResidualCavityPopulation {
            population: pop.to_f64().unwrap_or(f64::NAN),
            tolerance: 1e-2,
        });
    }
    let base_levels = |sender_level: usize, receiver_level: usize| -> usize {
        let mut levels = vec![0usize; space.num_subsystems()];
        for (k, sub) in space.subsystems().iter().enumerate() {
            let label = sub.label.as_str();
            levels[k] = if label == layout.sender {
                sender_level
            } else if label == layout.receiver {
                receiver_level
            } else {
                0
            };
        }
        space.index_of(&levels)
    };
    let sqrt2 = real::<T>(2.0).sqrt();
    let grab = |s: usize, r: usize| state.amplitude(base_levels(s, r)) * Complex::new(sqrt2, T::zero());
    let alpha = grab(level::G, level::R);
    let beta = grab(level::R, level::E);
    let gamma1 = grab(level::R, level::R);
    let gamma2 = grab(level::E, level::R);
    let captured = (alpha.norm_sqr() + beta.norm_sqr() + gamma1.norm_sqr() + gamma2.norm_sqr())
        * real::<T>(0.5);
    let total = state.norm_sqr();
    let residual = (T::one() - captured / total).max(T::zero());
    if residual > real(1e-2) {
        return Err(Error::ExtractionResidual {
            residual: residual.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok((
        ChannelParams::no_jump(alpha, beta, gamma1, gamma2)?,
        residual,
    ))
}

/// Phase of the ideal gate's β amplitude for a given pulse schedule, from a
/// deterministic no-jump run with losses and spontaneous emission switched
/// off. Protocols undo this phase with an error-free local rotation.
pub fn calibrate_beta_phase<T: Scalar>(
    p: &PhysicalParams<T>,
    pulses: &Arc<PulseSchedule<T>>,
    dt: T,
) -> Result<T> {
    let ideal = idealized(p);
    let space = crate::hilbert::physical_space(1);
    let layout = GateLayout::first();
    let cfg = IntegratorConfig::new(dt, pulses.duration());
    let (params, _residual) = calibrate_channel(&ideal, pulses, &layout, &space, &cfg)?;
    Ok(params.beta.arg())
}

/// Run the deterministic no-jump gate on the calibration input and extract
/// its channel parameters.
pub fn calibrate_channel<T: Scalar>(
    p: &PhysicalParams<T>,
    pulses: &Arc<PulseSchedule<T>>,
    layout: &GateLayout,
    space: &Arc<HilbertSpace>,
    cfg: &IntegratorConfig<T>,
) -> Result<(ChannelParams<T>, T)> {
    let input = calibration_input::<T>(space, layout)?;
    let out = run_transmission_gate_nojump(&input, layout, p, pulses, cfg)?;
    extract_channel_params(&out, layout)
}

// ---------------------------------------------------------------------------
// Pulse design
// ---------------------------------------------------------------------------

/// Ideal-case population transfer the designed pulses must reach.
pub const TRANSFER_TARGET: f64 = 0.98;

/// Minimum admissible gate duration.
pub const MIN_GATE_DURATION: f64 = 10.0;

/// Default gate duration: 30/κ.
pub fn default_gate_duration<T: Scalar>() -> T {
    real(30.0)
}

/// Designed envelopes plus the calibration data of the ideal gate.
#[derive(Debug, Clone)]
pub struct PulseDesign<T: Scalar> {
    pub schedule: PulseSchedule<T>,
    /// Ideal-case population transfer |e⟩ sender → |E⟩ receiver.
    pub transfer: T,
    /// Phase of the β amplitude accumulated by the ideal gate; protocols
    /// undo it with a local rotation after each transmission.
    pub beta_phase: T,
}

/// The e-sector of one gate is spanned by four states: sender excited,
/// photon in cavity 1, photon in cavity 2, receiver excited. The no-jump
/// generator is closed on this span, which makes pulse optimization a dense
/// 4×4 problem.
struct ReducedGateModel<T: Scalar> {
    constant: [[Complex<T>; 4]; 4],
    sender_linear: [[Complex<T>; 4]; 4],
    sender_quadratic: [[Complex<T>; 4]; 4],
    receiver_linear: [[Complex<T>; 4]; 4],
    receiver_quadratic: [[Complex<T>; 4]; 4],
}

fn project4<T: Scalar>(op: &LinearOperator<T>, basis: &[StateVector<T>; 4]) -> [[Complex<T>; 4]; 4] {
    let mut m = [[czero::<T>(); 4]; 4];
    for (j, b) in basis.iter().enumerate() {
        let col = op.apply(b).expect("same space");
        for (i, a) in basis.iter().enumerate() {
            m[i][j] = a.inner(&col).expect("same space");
        }
    }
    m
}

impl<T: Scalar> ReducedGateModel<T> {
    fn new(p: &PhysicalParams<T>, space: &Arc<HilbertSpace>, layout: &GateLayout) -> Result<Self> {
        let spectator = layout.node2_spectator();
        let mk = |sender: &str, receiver: &str, c1: &str, c2: &str| -> Result<StateVector<T>> {
            let mut names: Vec<(&str, &str)> = Vec::new();
            for sub in space.subsystems() {
                let label = sub.label.as_str();
                let lvl = if label == layout.sender {
                    sender
                } else if label == layout.receiver {
                    receiver
                } else if label == "cav1" {
                    c1
                } else if label == "cav2" {
                    c2
                } else if label == spectator {
                    "G"
                } else {
                    "g"
                };
                names.push((label, lvl));
            }
            StateVector::basis_from_names(space.clone(), &names)
        };
        let basis = [
            mk("e", "R", "0", "0")?,
            mk("r", "R", "1", "0")?,
            mk("r", "R", "0", "1")?,
            mk("r", "E", "0", "0")?,
        ];
        Ok(ReducedGateModel {
            constant: project4(&constant_part(p, space)?, &basis),
            sender_linear: project4(&raman_linear_part(p, space, &layout.sender)?, &basis),
            sender_quadratic: project4(&stark_quadratic_part(p, space, &layout.sender)?, &basis),
            receiver_linear: project4(&raman_linear_part(p, space, &layout.receiver)?, &basis),
            receiver_quadratic: project4(
                &stark_quadratic_part(p, space, &layout.receiver)?,
                &basis,
            ),
        })
    }

    #[allow(clippy::needless_range_loop)]
    fn derivative(&self, t: T, c: &[Complex<T>; 4], omega1: T, omega2: T) -> [Complex<T>; 4] {
        let _ = t;
        let o1 = Complex::new(omega1, T::zero());
        let o1sq = Complex::new(omega1 * omega1, T::zero());
        let o2 = Complex::new(omega2, T::zero());
        let o2sq = Complex::new(omega2 * omega2, T::zero());
        let mi = -imag_unit::<T>();
        let mut out = [czero::<T>(); 4];
        for i in 0..4 {
            let mut acc = czero::<T>();
            for j in 0..4 {
                let h = self.constant[i][j]
                    + o1 * self.sender_linear[i][j]
                    + o1sq * self.sender_quadratic[i][j]
                    + o2 * self.receiver_linear[i][j]
                    + o2sq * self.receiver_quadratic[i][j];
                acc += h * c[j];
            }
            out[i] = mi * acc;
        }
        out
    }

    /// Final amplitudes starting from the sender-excited state, under sech
    /// envelopes with parameters (Ω₀, ν, t₁) and the mirrored receiver pulse.
    fn propagate_sech(&self, duration: T, dt: T, omega0: T, nu: T, t1: T) -> [Complex<T>; 4] {
        let sech = |x: T| T::one() / x.cosh();
        let om1 = |t: T| omega0 * sech(nu * (t - t1));
        let om2 = |t: T| omega0 * sech(nu * (duration - t - t1));
        let mut c = [czero::<T>(); 4];
        c[0] = Complex::new(T::one(), T::zero());
        let n = (duration / dt).ceil().to_usize().unwrap_or(1).max(1);
        let h = duration / real::<T>(n as f64);
        let half = real::<T>(0.5);
        let sixth = T::one() / real::<T>(6.0);
        let mut t = T::zero();
        for _ in 0..n {
            let k1 = self.derivative(t, &c, om1(t), om2(t));
            let tm = t + h * half;
            let cm = add4(&c, &k1, h * half);
            let k2 = self.derivative(tm, &cm, om1(tm), om2(tm));
            let cm = add4(&c, &k2, h * half);
            let k3 = self.derivative(tm, &cm, om1(tm), om2(tm));
            let te = t + h;
            let ce = add4(&c, &k3, h);
            let k4 = self.derivative(te, &ce, om1(te), om2(te));
            for i in 0..4 {
                c[i] += Complex::new(h * sixth, T::zero())
                    * (k1[i]
                        + (k2[i] + k3[i]) * Complex::new(real::<T>(2.0), T::zero())
                        + k4[i]);
            }
            t = te;
        }
        c
    }
}

fn add4<T: Scalar>(c: &[Complex<T>; 4], k: &[Complex<T>; 4], h: T) -> [Complex<T>; 4] {
    let ch = Complex::new(h, T::zero());
    [
        c[0] + ch * k[0],
        c[1] + ch * k[1],
        c[2] + ch * k[2],
        c[3] + ch * k[3],
    ]
}

/// Zero-loss copy of the parameters used as the pulse-design objective.
fn idealized<T: Scalar>(p: &PhysicalParams<T>) -> PhysicalParams<T> {
    PhysicalParams {
        g: p.g,
        kappa: p.kappa,
        kappa_loss_1: T::zero(),
        kappa_loss_2: T::zero(),
        gamma: T::zero(),
        delta_laser: p.delta_laser,
        delta_raman: T::zero(),
    }
}

/// Construct envelopes for the transmission gate: a sech trial family for the
/// sender, the time mirror for the receiver, tuned by Nelder–Mead to maximize
/// the ideal-case transfer |e⟩|R⟩ → |r⟩|E⟩. Fails if the target 0.98 is not
/// reached within the optimization budget.
pub fn design_pulses<T: Scalar>(
    p: &PhysicalParams<T>,
    gate_duration: T,
) -> Result<PulseDesign<T>> {
    p.validate()?;
    if gate_duration < real::<T>(MIN_GATE_DURATION) / p.kappa {
        return Err(Error::InvalidParams(format!(
            "gate duration {gate_duration} below the minimum {MIN_GATE_DURATION}/kappa"
        )));
    }
    let ideal = idealized(p);
    let space = crate::hilbert::physical_space(1);
    let layout = GateLayout::first();
    let model = ReducedGateModel::new(&ideal, &space, &layout)?;
    let duration = gate_duration;
    let dt_opt = real::<T>(2e-3);

    let loss = |x: &[T]| -> T {
        let omega0 = x[0].exp();
        let nu = x[1].exp();
        let frac = x[2].max(real(0.05)).min(real(0.95));
        let t1 = duration * frac;
        let c = model.propagate_sech(duration, dt_opt, omega0, nu, t1);
        T::one() - c[3].norm_sqr()
    };

    let two_g = (real::<T>(2.0) * p.g).max(real(1e-3));
    let starts: [[T; 3]; 5] = [
        [two_g.ln(), real::<T>(0.5).ln(), real(0.45)],
        [two_g.ln(), real::<T>(0.3).ln(), real(0.40)],
        [(two_g * real::<T>(0.8)).ln(), real::<T>(0.8).ln(), real(0.50)],
        [(two_g * real::<T>(1.2)).ln(), real::<T>(0.45).ln(), real(0.35)],
        [two_g.ln(), T::one().ln(), real(0.30)],
    ];
    let nm = NelderMead::<T> {
        max_evals: 320,
        ..Default::default()
    };
    let mut best: Option<(Vec<T>, T)> = None;
    for start in &starts {
        let mut f = |x: &[T]| loss(x);
        let got = nm.minimize(&mut f, start, &[real(0.3), real(0.3), real(0.05)]);
        if best.as_ref().is_none_or(|b| got.1 < b.1) {
            best = Some(got);
        }
    }
    let (x, _) = best.expect("at least one start");
    let omega0 = x[0].exp();
    let nu = x[1].exp();
    let t1 = duration * x[2].max(real(0.05)).min(real(0.95));

    // Sample the winning family; everything downstream uses the sampled,
    // linearly interpolated schedule.
    let samples = (duration / real::<T>(5e-3))
        .ceil()
        .to_usize()
        .unwrap_or(2000)
        + 1;
    let sech = |x: T| T::one() / x.cosh();
    let schedule = PulseSchedule::from_functions(
        duration,
        samples,
        |t| omega0 * sech(nu * (t - t1)),
        |t| omega0 * sech(nu * (duration - t - t1)),
    )?;

    // Verify on the full space with the sampled schedule.
    let pulses = Arc::new(schedule);
    let input = e_sector_input::<T>(&space, &layout)?;
    let cfg = IntegratorConfig::new(real(1e-3), duration);
    let out = run_transmission_gate_nojump(&input, &layout, &ideal, &pulses, &cfg)?;
    let target = transfer_target_state::<T>(&space, &layout)?;
    let amp = target.inner(&out)?;
    let transfer = amp.norm_sqr();
    if transfer < real(TRANSFER_TARGET) {
        return Err(Error::PulseDesignBelowTarget {
            achieved: transfer.to_f64().unwrap_or(f64::NAN),
        });
    }
    let schedule = Arc::try_unwrap(pulses).unwrap_or_else(|arc| (*arc).clone());
    Ok(PulseDesign {
        schedule,
        transfer,
        beta_phase: amp.im.atan2(amp.re),
    })
}

/// |e⟩ sender ⊗ |R⟩ receiver with parked spectators and vacuum cavities.
pub fn e_sector_input<T: Scalar>(
    space: &Arc<HilbertSpace>,
    layout: &GateLayout,
) -> Result<StateVector<T>> {
    basis_with_gate_levels(space, layout, "e", "R")
}

/// |r⟩ sender ⊗ |E⟩ receiver: the ideal transfer target.
pub fn transfer_target_state<T: Scalar>(
    space: &Arc<HilbertSpace>,
    layout: &GateLayout,
) -> Result<StateVector<T>> {
    basis_with_gate_levels(space, layout, "r", "E")
}

fn basis_with_gate_levels<T: Scalar>(
    space: &Arc<HilbertSpace>,
    layout: &GateLayout,
    sender_level: &str,
    receiver_level: &str,
) -> Result<StateVector<T>> {
    let spectator = layout.node2_spectator();
    let mut names: Vec<(&str, &str)> = Vec::new();
    for sub in space.subsystems() {
        let label = sub.label.as_str();
        let lvl = if label == layout.sender {
            sender_level
        } else if label == layout.receiver {
            receiver_level
        } else if label == spectator {
            "G"
        } else if label.starts_with("cav") {
            "0"
        } else {
            "g"
        };
        names.push((label, lvl));
    }
    StateVector::basis_from_names(space.clone(), &names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_couplings_are_real_without_linewidth() {
        let p = PhysicalParams::<f64>::reference();
        let dc = DerivedCouplings::at(&p, 7.0);
        assert_eq!(dc.stark_shift.im, 0.0);
        assert_eq!(dc.eff_rabi.im, 0.0);
        assert_eq!(dc.cavity_stark.im, 0.0);
        assert!((dc.stark_shift.re - 49.0 / 40.0).abs() < 1e-12);
        assert!((dc.eff_rabi.re - 5.0 * 7.0 / 20.0).abs() < 1e-12);
        assert!((dc.cavity_stark.re - 2.5).abs() < 1e-12);
    }

    #[test]
    fn derived_couplings_decay_not_gain() {
        let p = PhysicalParams::<f64> {
            gamma: 2.0,
            ..PhysicalParams::reference()
        };
        let dc = DerivedCouplings::at(&p, 7.0);
        assert!(dc.stark_shift.im < 0.0);
        assert!(dc.cavity_stark.im < 0.0);
    }

    #[test]
    fn marginal_detuning_warns() {
        let p = PhysicalParams::<f64> {
            gamma: 3.0,
            ..PhysicalParams::reference()
        };
        let warnings = p.validate().unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("5Γ") || warnings[0].contains("detuning"));
        assert!(PhysicalParams::<f64>::reference().validate().unwrap().is_empty());
    }

    #[test]
    fn layout_validation_rejects_wrong_nodes() {
        let space = crate::hilbert::physical_space(1);
        let bad = GateLayout {
            sender: "atom2".into(),
            receiver: "atoma".into(),
        };
        assert!(bad.validate(&space).is_err());
        assert!(GateLayout::first().validate(&space).is_ok());
        assert_eq!(GateLayout::first().node2_spectator(), "atoma");
        assert_eq!(GateLayout::second().node2_spectator(), "atom2");
    }
}
