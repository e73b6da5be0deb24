//! Quantum-trajectory (Monte-Carlo wave function) engine.
//!
//! A trajectory is deterministic evolution of an unnormalized pure state
//! under a time-dependent non-Hermitian generator, interrupted by jumps: a
//! threshold r is drawn uniformly, the state is integrated until its squared
//! norm crosses r, the crossing time is located by bisection, a jump channel
//! is selected with probability proportional to ‖J_k ψ‖², the jump operator is
//! applied and the state renormalized, and a fresh threshold is drawn.
//!
//! Ensemble averages of trajectories reproduce the master equation with the
//! same jump operators, which the test suite checks against an independent
//! density-matrix integrator.

use std::sync::Arc;

use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::HilbertSpace;
use crate::operator::LinearOperator;
use crate::rng::{derived_seed, rng_from_seed, uniform, uniform_open};
use crate::scalar::{real, Scalar};
use crate::state::StateVector;

/// Time-dependent generator H_eff(t) of the no-jump evolution.
///
/// `apply_to` is the hot path; implementations with a fixed sparsity split
/// (constant + pulsed terms) override it to avoid assembling the operator at
/// every integration substep.
pub trait Generator<T: Scalar>: Send + Sync {
    fn space(&self) -> &Arc<HilbertSpace>;

    fn operator_at(&self, t: T) -> LinearOperator<T>;

    /// H_eff(t) · ψ.
    fn apply_to(&self, t: T, psi: &StateVector<T>, out: &mut StateVector<T>) {
        self.operator_at(t).apply_into(psi, out);
    }
}

/// Generator wrapping a closure that assembles the operator at each time.
pub struct OperatorGenerator<T: Scalar, F>
where
    F: Fn(T) -> LinearOperator<T> + Send + Sync,
{
    space: Arc<HilbertSpace>,
    f: F,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar, F> OperatorGenerator<T, F>
where
    F: Fn(T) -> LinearOperator<T> + Send + Sync,
{
    pub fn new(space: Arc<HilbertSpace>, f: F) -> Self {
        OperatorGenerator {
            space,
            f,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar, F> Generator<T> for OperatorGenerator<T, F>
where
    F: Fn(T) -> LinearOperator<T> + Send + Sync,
{
    fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    fn operator_at(&self, t: T) -> LinearOperator<T> {
        (self.f)(t)
    }
}

/// Constant generator, for toys and unitary checks.
pub struct ConstantGenerator<T: Scalar> {
    op: LinearOperator<T>,
}

impl<T: Scalar> ConstantGenerator<T> {
    pub fn new(op: LinearOperator<T>) -> Self {
        ConstantGenerator { op }
    }
}

impl<T: Scalar> Generator<T> for ConstantGenerator<T> {
    fn space(&self) -> &Arc<HilbertSpace> {
        self.op.space()
    }

    fn operator_at(&self, _t: T) -> LinearOperator<T> {
        self.op.clone()
    }

    fn apply_to(&self, _t: T, psi: &StateVector<T>, out: &mut StateVector<T>) {
        self.op.apply_into(psi, out);
    }
}

/// Kind of a jump channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum JumpKind {
    CavityOutput,
    CavityLoss1,
    CavityLoss2,
    SpontEmission,
}

/// One decay channel: a fixed operator with an optional time-dependent real
/// amplitude multiplier (laser-induced rates follow the pulse envelope).
pub struct JumpChannel<T: Scalar> {
    pub id: String,
    pub kind: JumpKind,
    op: LinearOperator<T>,
    amplitude: Option<Arc<dyn Fn(T) -> T + Send + Sync>>,
}

impl<T: Scalar> JumpChannel<T> {
    pub fn constant(id: &str, kind: JumpKind, op: LinearOperator<T>) -> Self {
        JumpChannel {
            id: id.to_string(),
            kind,
            op,
            amplitude: None,
        }
    }

    pub fn time_dependent(
        id: &str,
        kind: JumpKind,
        op: LinearOperator<T>,
        amplitude: Arc<dyn Fn(T) -> T + Send + Sync>,
    ) -> Self {
        JumpChannel {
            id: id.to_string(),
            kind,
            op,
            amplitude: Some(amplitude),
        }
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        self.op.space()
    }

    pub fn operator_at(&self, t: T) -> LinearOperator<T> {
        match &self.amplitude {
            None => self.op.clone(),
            Some(f) => self.op.scaled(Complex::new(f(t), T::zero())),
        }
    }

    /// J(t) · ψ.
    pub fn apply_at(&self, t: T, psi: &StateVector<T>) -> Result<StateVector<T>> {
        let mut out = self.op.apply(psi)?;
        if let Some(f) = &self.amplitude {
            out.scale(Complex::new(f(t), T::zero()));
        }
        Ok(out)
    }
}

/// Fixed-step integration settings (time in units of 1/κ).
#[derive(Debug, Clone)]
pub struct IntegratorConfig<T: Scalar> {
    pub dt: T,
    pub t_final: T,
    /// Relative tolerance for locating the norm² = r crossing.
    pub norm_bisection_tol: T,
    /// Record every `sample_stride`-th grid point.
    pub sample_stride: usize,
    /// Error out if a step grows the squared norm by more than this relative
    /// amount (the generator is expected to be passive).
    pub enforce_passivity: bool,
}

impl<T: Scalar> IntegratorConfig<T> {
    pub fn new(dt: T, t_final: T) -> Self {
        IntegratorConfig {
            dt,
            t_final,
            norm_bisection_tol: real(1e-10),
            sample_stride: 10,
            enforce_passivity: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= T::zero() {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if self.norm_bisection_tol <= T::zero() {
            return Err(Error::InvalidConfig(
                "norm_bisection_tol must be positive".into(),
            ));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidConfig("sample_stride must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Default step: 10⁻³/κ.
pub fn default_dt<T: Scalar>() -> T {
    real(1e-3)
}

const PASSIVITY_SLACK: f64 = 1e-6;

/// One jump event along a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct JumpEvent {
    pub t: f64,
    pub channel: String,
    pub norm2_before: f64,
}

/// Full record of one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub events: Vec<JumpEvent>,
    /// Sampled (t, ‖ψ‖²) pairs on the fixed grid.
    pub norm_history: Vec<(f64, f64)>,
    pub rng_algorithm: &'static str,
}

impl TrajectoryRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

struct Rk4Workspace<T: Scalar> {
    k: [StateVector<T>; 4],
    stage: StateVector<T>,
    tmp: StateVector<T>,
}

impl<T: Scalar> Rk4Workspace<T> {
    fn new(space: &Arc<HilbertSpace>) -> Self {
        Rk4Workspace {
            k: [
                StateVector::zero(space.clone()),
                StateVector::zero(space.clone()),
                StateVector::zero(space.clone()),
                StateVector::zero(space.clone()),
            ],
            stage: StateVector::zero(space.clone()),
            tmp: StateVector::zero(space.clone()),
        }
    }
}

/// One classical RK4 step of dψ/dt = −i H(t) ψ, in place.
fn rk4_step<T: Scalar>(
    gen: &dyn Generator<T>,
    psi: &mut StateVector<T>,
    t: T,
    h: T,
    ws: &mut Rk4Workspace<T>,
) {
    let half = real::<T>(0.5);
    let sixth = T::one() / real::<T>(6.0);
    let mi = Complex::new(T::zero(), -T::one());
    let c_half = Complex::new(h * half, T::zero());
    let c_full = Complex::new(h, T::zero());

    // k1 = −i H(t) ψ
    gen.apply_to(t, psi, &mut ws.tmp);
    clone_scaled(&ws.tmp, mi, &mut ws.k[0]);
    // k2 = −i H(t+h/2)(ψ + h/2 k1)
    stage(psi, &ws.k[0], c_half, &mut ws.stage);
    gen.apply_to(t + h * half, &ws.stage, &mut ws.tmp);
    clone_scaled(&ws.tmp, mi, &mut ws.k[1]);
    // k3 = −i H(t+h/2)(ψ + h/2 k2)
    stage(psi, &ws.k[1], c_half, &mut ws.stage);
    gen.apply_to(t + h * half, &ws.stage, &mut ws.tmp);
    clone_scaled(&ws.tmp, mi, &mut ws.k[2]);
    // k4 = −i H(t+h)(ψ + h k3)
    stage(psi, &ws.k[2], c_full, &mut ws.stage);
    gen.apply_to(t + h, &ws.stage, &mut ws.tmp);
    clone_scaled(&ws.tmp, mi, &mut ws.k[3]);

    let w1 = Complex::new(h * sixth, T::zero());
    let w2 = Complex::new(h * sixth * real::<T>(2.0), T::zero());
    psi.add_scaled(w1, &ws.k[0]);
    psi.add_scaled(w2, &ws.k[1]);
    psi.add_scaled(w2, &ws.k[2]);
    psi.add_scaled(w1, &ws.k[3]);
}

fn clone_scaled<T: Scalar>(src: &StateVector<T>, c: Complex<T>, dst: &mut StateVector<T>) {
    let s = src.amplitudes();
    let d = dst.amplitudes_mut();
    for (di, si) in d.iter_mut().zip(s) {
        *di = c * *si;
    }
}

fn stage<T: Scalar>(
    base: &StateVector<T>,
    k: &StateVector<T>,
    c: Complex<T>,
    dst: &mut StateVector<T>,
) {
    let b = base.amplitudes();
    let kk = k.amplitudes();
    let d = dst.amplitudes_mut();
    for ((di, bi), ki) in d.iter_mut().zip(b).zip(kk) {
        *di = *bi + c * *ki;
    }
}

/// Deterministic no-jump evolution of dψ/dt = −i H_eff(t) ψ over [t0, t1].
/// The result is unnormalized; for a passive generator its norm decays.
pub fn evolve_no_jump<T: Scalar>(
    psi: &StateVector<T>,
    gen: &dyn Generator<T>,
    t0: T,
    t1: T,
    cfg: &IntegratorConfig<T>,
) -> Result<StateVector<T>> {
    cfg.validate()?;
    if psi.space() != gen.space() {
        return Err(Error::SpaceMismatch("generator"));
    }
    if t1 < t0 {
        return Err(Error::InvalidConfig("t1 must be ≥ t0".into()));
    }
    let mut ws = Rk4Workspace::new(psi.space());
    let mut state = psi.clone();
    let mut t = t0;
    let slack = real::<T>(PASSIVITY_SLACK);
    while t1 - t > real::<T>(1e-15) {
        let h = cfg.dt.min(t1 - t);
        let before = state.norm_sqr();
        rk4_step(gen, &mut state, t, h, &mut ws);
        if cfg.enforce_passivity {
            let after = state.norm_sqr();
            if after > before * (T::one() + slack) && before > T::zero() {
                return Err(Error::StepInstability {
                    t: t.to_f64().unwrap_or(f64::NAN),
                    growth: ((after - before) / before).to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        t += h;
    }
    Ok(state)
}

/// Observer invoked at sampled grid points with the raw (unnormalized) state.
pub type SampleObserver<'a, T> = &'a mut dyn FnMut(T, &StateVector<T>);

/// Run one trajectory with the waiting-time algorithm. Deterministic given
/// `(seed, cfg)`. The final state is renormalized; the record carries jump
/// times, channel identities and the norm history.
pub fn sample_trajectory<T: Scalar>(
    psi0: &StateVector<T>,
    gen: &dyn Generator<T>,
    jumps: &[JumpChannel<T>],
    cfg: &IntegratorConfig<T>,
    seed: u64,
) -> Result<(StateVector<T>, TrajectoryRecord)> {
    sample_trajectory_observed(psi0, gen, jumps, cfg, seed, &mut |_, _| {})
}

pub fn sample_trajectory_observed<T: Scalar>(
    psi0: &StateVector<T>,
    gen: &dyn Generator<T>,
    jumps: &[JumpChannel<T>],
    cfg: &IntegratorConfig<T>,
    seed: u64,
    observer: SampleObserver<'_, T>,
) -> Result<(StateVector<T>, TrajectoryRecord)> {
    cfg.validate()?;
    psi0.assert_normalized()?;
    if psi0.space() != gen.space() {
        return Err(Error::SpaceMismatch("generator"));
    }
    for j in jumps {
        if j.space() != psi0.space() {
            return Err(Error::SpaceMismatch("jump channel"));
        }
    }

    let mut rng = rng_from_seed(seed);
    let mut ws = Rk4Workspace::new(psi0.space());
    let mut state = psi0.clone();
    let mut record = TrajectoryRecord {
        seed,
        events: Vec::new(),
        norm_history: Vec::new(),
        rng_algorithm: crate::rng::RNG_ALGORITHM,
    };
    let mut threshold: T = uniform_open(&mut rng);

    let n_steps = (cfg.t_final / cfg.dt).ceil().to_f64().unwrap_or(0.0) as usize;
    let to64 = |x: T| x.to_f64().unwrap_or(f64::NAN);
    record.norm_history.push((0.0, to64(state.norm_sqr())));
    observer(T::zero(), &state);

    let mut t = T::zero();
    for step in 0..n_steps {
        let t_next = if step + 1 == n_steps {
            cfg.t_final
        } else {
            cfg.dt * real::<T>((step + 1) as f64)
        };
        advance_with_jumps(
            gen,
            jumps,
            cfg,
            &mut state,
            &mut t,
            t_next,
            &mut threshold,
            &mut rng,
            &mut ws,
            &mut record,
        )?;
        if (step + 1) % cfg.sample_stride == 0 || step + 1 == n_steps {
            record.norm_history.push((to64(t), to64(state.norm_sqr())));
            observer(t, &state);
        }
    }

    state.normalize()?;
    Ok((state, record))
}

/// Advance from `t` to `t_next`, applying any jumps whose threshold crossings
/// fall within the interval.
#[allow(clippy::too_many_arguments)]
fn advance_with_jumps<T: Scalar>(
    gen: &dyn Generator<T>,
    jumps: &[JumpChannel<T>],
    cfg: &IntegratorConfig<T>,
    state: &mut StateVector<T>,
    t: &mut T,
    t_next: T,
    threshold: &mut T,
    rng: &mut crate::rng::SimRng,
    ws: &mut Rk4Workspace<T>,
    record: &mut TrajectoryRecord,
) -> Result<()> {
    let slack = real::<T>(PASSIVITY_SLACK);
    let mut guard = 0usize;
    loop {
        let h = t_next - *t;
        if h <= real::<T>(1e-15) {
            return Ok(());
        }
        let pre = state.clone();
        let norm_pre = pre.norm_sqr();
        rk4_step(gen, state, *t, h, ws);
        let norm_post = state.norm_sqr();
        if cfg.enforce_passivity && norm_post > norm_pre * (T::one() + slack) && norm_pre > T::zero()
        {
            return Err(Error::StepInstability {
                t: t.to_f64().unwrap_or(f64::NAN),
                growth: ((norm_post - norm_pre) / norm_pre)
                    .to_f64()
                    .unwrap_or(f64::NAN),
            });
        }
        if norm_post > *threshold {
            *t = t_next;
            return Ok(());
        }

        // Locate the crossing ‖ψ(τ)‖² = r by bisection on the step size,
        // re-integrating from the stored pre-step state each iteration.
        let mut lo = T::zero();
        let mut hi = h;
        let mut tau_state = state.clone();
        let mut tau_h = h;
        for _ in 0..200 {
            let mid = (lo + hi) * real::<T>(0.5);
            let mut trial = pre.clone();
            if mid > T::zero() {
                rk4_step(gen, &mut trial, *t, mid, ws);
            }
            let n2 = trial.norm_sqr();
            if n2 > *threshold {
                lo = mid;
            } else {
                hi = mid;
                tau_state = trial;
                tau_h = mid;
            }
            if ((n2 - *threshold).abs() <= cfg.norm_bisection_tol * *threshold
                && n2 <= *threshold)
                || (hi - lo) < real::<T>(1e-300)
            {
                break;
            }
        }
        let tau = *t + tau_h;

        // Channel selection with probability ∝ ‖J_k ψ(τ)‖².
        let branch_states: Vec<StateVector<T>> = jumps
            .iter()
            .map(|j| j.apply_at(tau, &tau_state))
            .collect::<Result<_>>()?;
        let weights: Vec<T> = branch_states.iter().map(|b| b.norm_sqr()).collect();
        let total: T = weights.iter().fold(T::zero(), |a, &b| a + b);
        if total <= T::zero() {
            return Err(Error::AllJumpRatesZero {
                t: tau.to_f64().unwrap_or(f64::NAN),
            });
        }
        let u: T = uniform::<T>(rng) * total;
        let mut cum = T::zero();
        let mut pick = jumps.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            cum += *w;
            if u < cum {
                pick = k;
                break;
            }
        }

        record.events.push(JumpEvent {
            t: tau.to_f64().unwrap_or(f64::NAN),
            channel: jumps[pick].id.clone(),
            norm2_before: tau_state.norm_sqr().to_f64().unwrap_or(f64::NAN),
        });

        *state = branch_states.into_iter().nth(pick).unwrap();
        state.normalize()?;
        *t = tau;
        *threshold = uniform_open(rng);

        guard += 1;
        if guard > 10_000 {
            return Err(Error::InvalidConfig(
                "more than 10000 jumps within one step interval".into(),
            ));
        }
    }
}

/// Ensemble mean and standard error of ⟨ψ(t)|O|ψ(t)⟩ over normalized
/// trajectory states at the recorded grid times. Per-trajectory seeds are
/// `base_seed + index`; the reduction is ordered by trajectory index.
pub fn ensemble_expectation<T: Scalar>(
    observable: &LinearOperator<T>,
    psi0: &StateVector<T>,
    gen: &dyn Generator<T>,
    jumps: &[JumpChannel<T>],
    cfg: &IntegratorConfig<T>,
    n_traj: usize,
    base_seed: u64,
) -> Result<EnsembleSeries<T>> {
    use rayon::prelude::*;

    if n_traj == 0 {
        return Err(Error::InvalidConfig("n_traj must be ≥ 1".into()));
    }
    if observable.space() != psi0.space() {
        return Err(Error::SpaceMismatch("observable"));
    }

    let one_series = |seed: u64| -> Result<(Vec<T>, Vec<T>)> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        sample_trajectory_observed(psi0, gen, jumps, cfg, seed, &mut |t, psi| {
            let n2 = psi.norm_sqr();
            let val = if n2 > T::zero() {
                let opsi = observable.apply(psi).expect("checked space");
                psi.inner(&opsi).expect("checked space").re / n2
            } else {
                T::zero()
            };
            times.push(t);
            values.push(val);
        })?;
        Ok((times, values))
    };

    let (times, first) = one_series(derived_seed(base_seed, 0))?;
    let n_samples = times.len();
    let mut mean = vec![T::zero(); n_samples];
    let mut m2 = vec![T::zero(); n_samples];
    let mut count = T::zero();

    let welford = |values: &[T], count: &mut T, mean: &mut [T], m2: &mut [T]| {
        *count += T::one();
        for (k, v) in values.iter().enumerate() {
            let delta = *v - mean[k];
            mean[k] += delta / *count;
            m2[k] += delta * (*v - mean[k]);
        }
    };
    welford(&first, &mut count, &mut mean, &mut m2);

    const BATCH: usize = 256;
    let mut next = 1usize;
    while next < n_traj {
        let hi = (next + BATCH).min(n_traj);
        let batch: Vec<Vec<T>> = (next..hi)
            .into_par_iter()
            .map(|i| one_series(derived_seed(base_seed, i as u64)).map(|(_, v)| v))
            .collect::<Result<_>>()?;
        for values in &batch {
            welford(values, &mut count, &mut mean, &mut m2);
        }
        next = hi;
    }

    let stderr: Vec<T> = if n_traj > 1 {
        let denom = count * (count - T::one());
        m2.iter().map(|&v| (v / denom).sqrt()).collect()
    } else {
        vec![T::zero(); n_samples]
    };
    Ok(EnsembleSeries {
        times,
        mean,
        stderr,
    })
}

#[derive(Debug, Clone)]
pub struct EnsembleSeries<T: Scalar> {
    pub times: Vec<T>,
    pub mean: Vec<T>,
    pub stderr: Vec<T>,
}
