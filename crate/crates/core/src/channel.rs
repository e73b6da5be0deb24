//! The abstract noisy transmission channel and its explicit-environment form.
//!
//! A transmission from node-1 atom i to node-2 atom j acts on the sector
//! where atom i is in span{g, e} and atom j is in R:
//!
//! no jump:  |g⟩ᵢ|R⟩ⱼ → α |g⟩ᵢ|R⟩ⱼ
//!           |e⟩ᵢ|R⟩ⱼ → β |r⟩ᵢ|E⟩ⱼ + γ₁ |r⟩ᵢ|R⟩ⱼ + γ₂ |e⟩ᵢ|R⟩ⱼ
//! jump:     the α = β = γ₂ = 0, γ₁ = 1 special case.
//!
//! Sampling draws the complex tuple once per round; α and β are shared
//! between the two transmissions of a round when the correlated flag is set.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::level;
use crate::operator::{level_projector, transition};
use crate::scalar::{czero, real, Scalar};
use crate::state::StateVector;

const CONTRACTION_SLACK: f64 = 1e-9;

/// Complex parameters of one transmission.
#[derive(Debug, Clone)]
pub struct ChannelParams<T: Scalar> {
    pub alpha: Complex<T>,
    pub beta: Complex<T>,
    pub gamma1: Complex<T>,
    pub gamma2: Complex<T>,
    pub jumped: bool,
}

impl<T: Scalar> ChannelParams<T> {
    pub fn no_jump(
        alpha: Complex<T>,
        beta: Complex<T>,
        gamma1: Complex<T>,
        gamma2: Complex<T>,
    ) -> Result<Self> {
        let p = ChannelParams {
            alpha,
            beta,
            gamma1,
            gamma2,
            jumped: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// The jump outcome: α = β = γ₂ = 0, γ₁ = 1.
    pub fn jump() -> Self {
        ChannelParams {
            alpha: czero(),
            beta: czero(),
            gamma1: Complex::new(T::one(), T::zero()),
            gamma2: czero(),
            jumped: true,
        }
    }

    /// α = β = 1, γ = 0: the ideal mapping.
    pub fn ideal() -> Self {
        ChannelParams {
            alpha: Complex::new(T::one(), T::zero()),
            beta: Complex::new(T::one(), T::zero()),
            gamma1: czero(),
            gamma2: czero(),
            jumped: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let slack = real::<T>(CONTRACTION_SLACK);
        if self.jumped
            && (self.alpha.norm_sqr() > T::zero()
                || self.beta.norm_sqr() > T::zero()
                || self.gamma2.norm_sqr() > T::zero())
        {
            return Err(Error::InvalidParams(
                "jumped channel requires alpha = beta = gamma2 = 0".into(),
            ));
        }
        if self.alpha.norm_sqr() > T::one() + slack {
            return Err(Error::InvalidParams("|alpha| must be ≤ 1".into()));
        }
        let s = self.beta.norm_sqr() + self.gamma1.norm_sqr() + self.gamma2.norm_sqr();
        if s > T::one() + slack {
            return Err(Error::InvalidParams(
                "|beta|² + |gamma1|² + |gamma2|² must be ≤ 1".into(),
            ));
        }
        Ok(())
    }

    pub fn log_entry(&self) -> ChannelParamsLog {
        let c = |z: Complex<T>| [z.re.to_f64().unwrap_or(f64::NAN), z.im.to_f64().unwrap_or(f64::NAN)];
        ChannelParamsLog {
            alpha: c(self.alpha),
            beta: c(self.beta),
            gamma1: c(self.gamma1),
            gamma2: c(self.gamma2),
            jumped: self.jumped,
        }
    }
}

/// Serializable mirror of [`ChannelParams`] for JSON logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelParamsLog {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub gamma1: [f64; 2],
    pub gamma2: [f64; 2],
    pub jumped: bool,
}

/// Distribution of the no-jump parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamSampler {
    /// α = β = 1, γ = 0 on every draw.
    Ideal,
    /// A fixed tuple, complex numbers as [re, im].
    PointMass {
        alpha: [f64; 2],
        beta: [f64; 2],
        gamma1: [f64; 2],
        gamma2: [f64; 2],
    },
    /// |α|, |β| uniform in the given magnitude ranges with uniform phases;
    /// γ₁, γ₂ complex Gaussian with the given scale; the (β, γ₁, γ₂) tuple is
    /// rescaled into the contraction ball when necessary.
    Random {
        alpha_mag: [f64; 2],
        beta_mag: [f64; 2],
        gamma_scale: f64,
    },
}

impl Default for ParamSampler {
    fn default() -> Self {
        ParamSampler::Random {
            alpha_mag: [0.3, 1.0],
            beta_mag: [0.3, 1.0],
            gamma_scale: 0.1,
        }
    }
}

impl ParamSampler {
    pub fn validate(&self) -> Result<()> {
        match self {
            ParamSampler::Ideal => Ok(()),
            ParamSampler::PointMass {
                alpha,
                beta,
                gamma1,
                gamma2,
            } => {
                let p: ChannelParams<f64> = ChannelParams::no_jump(
                    Complex::new(alpha[0], alpha[1]),
                    Complex::new(beta[0], beta[1]),
                    Complex::new(gamma1[0], gamma1[1]),
                    Complex::new(gamma2[0], gamma2[1]),
                )?;
                let _ = p;
                Ok(())
            }
            ParamSampler::Random {
                alpha_mag,
                beta_mag,
                gamma_scale,
            } => {
                for r in [alpha_mag, beta_mag] {
                    if !(0.0..=1.0).contains(&r[0]) || !(0.0..=1.0).contains(&r[1]) || r[0] > r[1]
                    {
                        return Err(Error::InvalidParams(
                            "magnitude ranges must satisfy 0 ≤ lo ≤ hi ≤ 1".into(),
                        ));
                    }
                }
                if *gamma_scale < 0.0 || !gamma_scale.is_finite() {
                    return Err(Error::InvalidParams("gamma_scale must be ≥ 0".into()));
                }
                Ok(())
            }
        }
    }

    fn draw<T: Scalar>(&self, rng: &mut impl Rng) -> ChannelParams<T> {
        match self {
            ParamSampler::Ideal => ChannelParams::ideal(),
            ParamSampler::PointMass {
                alpha,
                beta,
                gamma1,
                gamma2,
            } => ChannelParams {
                alpha: crate::scalar::cplx(alpha[0], alpha[1]),
                beta: crate::scalar::cplx(beta[0], beta[1]),
                gamma1: crate::scalar::cplx(gamma1[0], gamma1[1]),
                gamma2: crate::scalar::cplx(gamma2[0], gamma2[1]),
                jumped: false,
            },
            ParamSampler::Random {
                alpha_mag,
                beta_mag,
                gamma_scale,
            } => {
                let alpha = draw_polar::<T>(rng, *alpha_mag);
                let beta = draw_polar::<T>(rng, *beta_mag);
                let gamma1 = draw_gaussian::<T>(rng, *gamma_scale);
                let gamma2 = draw_gaussian::<T>(rng, *gamma_scale);
                let mut p = ChannelParams {
                    alpha,
                    beta,
                    gamma1,
                    gamma2,
                    jumped: false,
                };
                rescale_contraction(&mut p);
                p
            }
        }
    }

    /// Fresh γ draws for a correlated second transmission; α and β are kept,
    /// so only the γ pair is shrunk if the contraction bound requires it.
    fn redraw_gammas<T: Scalar>(&self, base: &ChannelParams<T>, rng: &mut impl Rng) -> ChannelParams<T> {
        match self {
            ParamSampler::Ideal | ParamSampler::PointMass { .. } => base.clone(),
            ParamSampler::Random { gamma_scale, .. } => {
                let gamma1 = draw_gaussian::<T>(rng, *gamma_scale);
                let gamma2 = draw_gaussian::<T>(rng, *gamma_scale);
                let mut p = ChannelParams {
                    alpha: base.alpha,
                    beta: base.beta,
                    gamma1,
                    gamma2,
                    jumped: false,
                };
                let budget = T::one() - p.beta.norm_sqr();
                let used = p.gamma1.norm_sqr() + p.gamma2.norm_sqr();
                if used > budget && used > T::zero() {
                    let f = Complex::new((budget.max(T::zero()) / used).sqrt(), T::zero());
                    p.gamma1 *= f;
                    p.gamma2 *= f;
                }
                p
            }
        }
    }
}

fn draw_polar<T: Scalar>(rng: &mut impl Rng, mag_range: [f64; 2]) -> Complex<T> {
    let mag = mag_range[0] + (mag_range[1] - mag_range[0]) * rng.random::<f64>();
    let phase = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    crate::scalar::cplx(mag * phase.cos(), mag * phase.sin())
}

/// Box–Muller pair as one complex Gaussian with E|γ|² = scale².
fn draw_gaussian<T: Scalar>(rng: &mut impl Rng, scale: f64) -> Complex<T> {
    let u1 = rng.random::<f64>().max(1e-300);
    let u2 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt() * scale / std::f64::consts::SQRT_2;
    let th = 2.0 * std::f64::consts::PI * u2;
    crate::scalar::cplx(r * th.cos(), r * th.sin())
}

fn rescale_contraction<T: Scalar>(p: &mut ChannelParams<T>) {
    let s = p.beta.norm_sqr() + p.gamma1.norm_sqr() + p.gamma2.norm_sqr();
    if s > T::one() {
        let f = Complex::new(s.sqrt().recip(), T::zero());
        p.beta *= f;
        p.gamma1 *= f;
        p.gamma2 *= f;
    }
}

/// Channel noise specification, loadable from the CLI configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NoiseConfig {
    /// Probability P that a transmission completes without a jump.
    pub p_nojump: f64,
    #[serde(default)]
    pub sampler: ParamSampler,
    /// Whether the two transmissions of a round share α and β.
    #[serde(default = "default_true")]
    pub correlated: bool,
}

fn default_true() -> bool {
    true
}

impl NoiseConfig {
    pub fn ideal() -> Self {
        NoiseConfig {
            p_nojump: 1.0,
            sampler: ParamSampler::Ideal,
            correlated: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_nojump) {
            return Err(Error::InvalidParams(format!(
                "p_nojump = {} outside [0, 1]",
                self.p_nojump
            )));
        }
        self.sampler.validate()
    }
}

/// One transmission's draw: the no-jump tuple plus the jump flag. The
/// effective parameters are the jump special case when the flag is set.
#[derive(Debug, Clone)]
pub struct TransmissionDraw<T: Scalar> {
    pub jumped: bool,
    pub nojump: ChannelParams<T>,
}

impl<T: Scalar> TransmissionDraw<T> {
    pub fn effective(&self) -> ChannelParams<T> {
        if self.jumped {
            ChannelParams::jump()
        } else {
            self.nojump.clone()
        }
    }
}

/// Single channel draw: with probability P the sampler's no-jump tuple,
/// otherwise the jump parameters.
pub fn sample_channel<T: Scalar>(cfg: &NoiseConfig, rng: &mut impl Rng) -> ChannelParams<T> {
    let tuple = cfg.sampler.draw::<T>(rng);
    let u = rng.random::<f64>();
    if u < cfg.p_nojump {
        tuple
    } else {
        ChannelParams::jump()
    }
}

/// Both draws of one protocol round. Draw order: first tuple, second tuple
/// (γ only when correlated), then the two jump flags.
pub fn sample_round<T: Scalar>(
    cfg: &NoiseConfig,
    rng: &mut impl Rng,
) -> (TransmissionDraw<T>, TransmissionDraw<T>) {
    let first = cfg.sampler.draw::<T>(rng);
    let second = if cfg.correlated {
        cfg.sampler.redraw_gammas(&first, rng)
    } else {
        cfg.sampler.draw::<T>(rng)
    };
    let j1 = rng.random::<f64>() >= cfg.p_nojump;
    let j2 = rng.random::<f64>() >= cfg.p_nojump;
    (
        TransmissionDraw {
            jumped: j1,
            nojump: first,
        },
        TransmissionDraw {
            jumped: j2,
            nojump: second,
        },
    )
}

fn check_sector<T: Scalar>(psi: &StateVector<T>, sender: &str, receiver: &str) -> Result<()> {
    let tol = real::<T>(1e-10);
    let n2 = psi.norm_sqr();
    if n2 <= T::zero() {
        return Err(Error::ZeroNormState);
    }
    if psi.subsystem_population(sender, level::R)? / n2 > tol {
        return Err(Error::SectorViolation(format!(
            "sender `{sender}` has r population"
        )));
    }
    let out_of_r = (psi.subsystem_population(receiver, level::G)?
        + psi.subsystem_population(receiver, level::E)?)
        / n2;
    if out_of_r > tol {
        return Err(Error::SectorViolation(format!(
            "receiver `{receiver}` is not in its R sector"
        )));
    }
    Ok(())
}

/// Apply the channel mapping from `sender` to `receiver`, extended linearly
/// and as the identity on spectators. The output is unnormalized.
pub fn apply_channel<T: Scalar>(
    psi: &StateVector<T>,
    sender: &str,
    receiver: &str,
    params: &ChannelParams<T>,
) -> Result<StateVector<T>> {
    params.validate()?;
    check_sector(psi, sender, receiver)?;
    let space = psi.space();
    let s_pos = space.position_of(sender)?;
    let r_pos = space.position_of(receiver)?;
    let s_stride = space.stride_at(s_pos);
    let r_stride = space.stride_at(r_pos);

    let mut out = StateVector::zero(space.clone());
    for (idx, amp) in psi.amplitudes().iter().enumerate() {
        if amp.norm_sqr() == T::zero() {
            continue;
        }
        let s_level = space.level_of(idx, s_pos);
        let r_level = space.level_of(idx, r_pos);
        debug_assert_eq!(r_level, level::R);
        let a = *amp;
        match s_level {
            level::G => {
                out.amplitudes_mut()[idx] += params.alpha * a;
            }
            level::E => {
                // |e,R⟩ → β|r,E⟩ + γ₁|r,R⟩ + γ₂|e,R⟩
                let to_r = idx - level::E * s_stride + level::R * s_stride;
                let to_re = to_r - level::R * r_stride + level::E * r_stride;
                out.amplitudes_mut()[to_re] += params.beta * a;
                out.amplitudes_mut()[to_r] += params.gamma1 * a;
                out.amplitudes_mut()[idx] += params.gamma2 * a;
            }
            _ => unreachable!("sector checked"),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Explicit environment formulation
// ---------------------------------------------------------------------------

/// Dense environment operators tied to the four channel branches. The branch
/// structure mirrors the abstract channel with environment kets in place of
/// the complex constants: T for the α branch, S for β, G₁/G₂ for the γs.
#[derive(Debug, Clone)]
pub struct EnvironmentModel<T: Scalar> {
    pub env_dim: usize,
    pub xi: Vec<Complex<T>>,
    pub t_op: Vec<Vec<Complex<T>>>,
    pub s_op: Vec<Vec<Complex<T>>>,
    pub g1_op: Vec<Vec<Complex<T>>>,
    pub g2_op: Vec<Vec<Complex<T>>>,
}

fn mat_shape_ok<T: Scalar>(m: &[Vec<Complex<T>>], d: usize) -> bool {
    m.len() == d && m.iter().all(|row| row.len() == d)
}

fn matvec<T: Scalar>(m: &[Vec<Complex<T>>], v: &[Complex<T>]) -> Vec<Complex<T>> {
    m.iter()
        .map(|row| {
            row.iter()
                .zip(v)
                .fold(czero::<T>(), |acc, (a, b)| acc + *a * *b)
        })
        .collect()
}

fn matmul_dense<T: Scalar>(
    a: &[Vec<Complex<T>>],
    b: &[Vec<Complex<T>>],
) -> Vec<Vec<Complex<T>>> {
    let d = a.len();
    let mut out = vec![vec![czero::<T>(); d]; d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i][k];
            if aik.norm_sqr() == T::zero() {
                continue;
            }
            for j in 0..d {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Largest eigenvalue of M†M by power iteration.
fn operator_norm_sqr<T: Scalar>(m: &[Vec<Complex<T>>]) -> T {
    let d = m.len();
    let mut v: Vec<Complex<T>> = (0..d)
        .map(|k| crate::scalar::cplx(1.0 + 0.1 * k as f64, 0.3 * k as f64))
        .collect();
    let mut lambda = T::zero();
    for _ in 0..100 {
        let mv = matvec(m, &v);
        // M† (Mv)
        let mut w = vec![czero::<T>(); d];
        for (i, row) in m.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                w[j] += a.conj() * mv[i];
            }
        }
        let n = w
            .iter()
            .fold(T::zero(), |acc, x| acc + x.norm_sqr())
            .sqrt();
        if n <= T::zero() {
            return T::zero();
        }
        lambda = n;
        let inv = T::one() / n;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = *wi * inv;
        }
    }
    lambda
}

impl<T: Scalar> EnvironmentModel<T> {
    pub fn new(
        xi: Vec<Complex<T>>,
        t_op: Vec<Vec<Complex<T>>>,
        s_op: Vec<Vec<Complex<T>>>,
        g1_op: Vec<Vec<Complex<T>>>,
        g2_op: Vec<Vec<Complex<T>>>,
    ) -> Result<Self> {
        let d = xi.len();
        if d == 0 {
            return Err(Error::BadEnvironment("empty environment state".into()));
        }
        for (name, m) in [("T", &t_op), ("S", &s_op), ("G1", &g1_op), ("G2", &g2_op)] {
            if !mat_shape_ok(m, d) {
                return Err(Error::BadEnvironment(format!(
                    "operator {name} is not {d}×{d}"
                )));
            }
        }
        let norm = xi.iter().fold(T::zero(), |a, x| a + x.norm_sqr()).sqrt();
        if (norm - T::one()).abs() > real::<T>(1e-8) {
            return Err(Error::BadEnvironment(
                "initial environment state must be normalized".into(),
            ));
        }
        let slack = T::one() + real::<T>(1e-6);
        if operator_norm_sqr(&t_op) > slack {
            return Err(Error::BadEnvironment(
                "T branch is not a contraction".into(),
            ));
        }
        // S†S + G₁†G₁ + G₂†G₂ ⪯ 1: bound the block column norm.
        let mut stacked = vec![vec![czero::<T>(); d]; 3 * d];
        for i in 0..d {
            for j in 0..d {
                stacked[i][j] = s_op[i][j];
                stacked[d + i][j] = g1_op[i][j];
                stacked[2 * d + i][j] = g2_op[i][j];
            }
        }
        // power iteration on the stacked non-square block
        let norm_sqr = {
            let mut v: Vec<Complex<T>> = (0..d)
                .map(|k| crate::scalar::cplx(1.0 + 0.2 * k as f64, 0.1))
                .collect();
            let mut lambda = T::zero();
            for _ in 0..100 {
                let mv: Vec<Complex<T>> = stacked
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(&v)
                            .fold(czero::<T>(), |acc, (a, b)| acc + *a * *b)
                    })
                    .collect();
                let mut w = vec![czero::<T>(); d];
                for (i, row) in stacked.iter().enumerate() {
                    for (j, a) in row.iter().enumerate() {
                        w[j] += a.conj() * mv[i];
                    }
                }
                let n = w
                    .iter()
                    .fold(T::zero(), |acc, x| acc + x.norm_sqr())
                    .sqrt();
                if n <= T::zero() {
                    break;
                }
                lambda = n;
                let inv = T::one() / n;
                for (vi, wi) in v.iter_mut().zip(&w) {
                    *vi = *wi * inv;
                }
            }
            lambda
        };
        if norm_sqr > slack {
            return Err(Error::BadEnvironment(
                "(S, G1, G2) branch is not a contraction".into(),
            ));
        }
        Ok(EnvironmentModel {
            env_dim: d,
            xi,
            t_op,
            s_op,
            g1_op,
            g2_op,
        })
    }

    /// Scalar environment: reduces to the abstract channel.
    pub fn scalar(params: &ChannelParams<T>) -> Result<Self> {
        Self::new(
            vec![Complex::new(T::one(), T::zero())],
            vec![vec![params.alpha]],
            vec![vec![params.beta]],
            vec![vec![params.gamma1]],
            vec![vec![params.gamma2]],
        )
    }

    /// Independent reservoirs: T acts on the first factor, S on the second,
    /// so they commute by construction.
    pub fn disjoint_reservoirs(
        t_small: Vec<Vec<Complex<T>>>,
        xi1: Vec<Complex<T>>,
        s_small: Vec<Vec<Complex<T>>>,
        xi2: Vec<Complex<T>>,
    ) -> Result<Self> {
        let d1 = xi1.len();
        let d2 = xi2.len();
        if !mat_shape_ok(&t_small, d1) || !mat_shape_ok(&s_small, d2) {
            return Err(Error::BadEnvironment(
                "factor operators must match factor states".into(),
            ));
        }
        let d = d1 * d2;
        let mut t_op = vec![vec![czero::<T>(); d]; d];
        let mut s_op = vec![vec![czero::<T>(); d]; d];
        for i1 in 0..d1 {
            for j1 in 0..d1 {
                for k in 0..d2 {
                    t_op[i1 * d2 + k][j1 * d2 + k] = t_small[i1][j1];
                }
            }
        }
        for i2 in 0..d2 {
            for j2 in 0..d2 {
                for k in 0..d1 {
                    s_op[k * d2 + i2][k * d2 + j2] = s_small[i2][j2];
                }
            }
        }
        let mut xi = Vec::with_capacity(d);
        for a in &xi1 {
            for b in &xi2 {
                xi.push(*a * *b);
            }
        }
        let zeros = vec![vec![czero::<T>(); d]; d];
        Self::new(xi, t_op, s_op, zeros.clone(), zeros)
    }

    /// A minimal non-commuting pair: T is a bit flip, S a phase flip, on a
    /// two-dimensional environment starting in |0⟩.
    pub fn noncommuting_flips() -> Result<Self> {
        let one = Complex::new(T::one(), T::zero());
        let zeros = vec![vec![czero::<T>(); 2]; 2];
        Self::new(
            vec![one, czero()],
            vec![vec![czero(), one], vec![one, czero()]],
            vec![vec![one, czero()], vec![czero(), -one]],
            zeros.clone(),
            zeros,
        )
    }

    /// ‖(ST − TS)|ξ⟩‖ and whether it vanishes at tolerance 1e-10.
    pub fn check_commuting(&self) -> (bool, T) {
        let st = matmul_dense(&self.s_op, &self.t_op);
        let ts = matmul_dense(&self.t_op, &self.s_op);
        let v1 = matvec(&st, &self.xi);
        let v2 = matvec(&ts, &self.xi);
        let residual = v1
            .iter()
            .zip(&v2)
            .fold(T::zero(), |acc, (a, b)| acc + (*a - *b).norm_sqr())
            .sqrt();
        (residual <= real(1e-10), residual)
    }
}

/// Apply the environment-explicit transmission: the state lives on the atoms
/// plus an `env` subsystem of matching dimension. A one-dimensional
/// environment reduces exactly to [`apply_channel`] with scalar parameters.
pub fn apply_env_channel<T: Scalar>(
    psi: &StateVector<T>,
    env: &EnvironmentModel<T>,
    sender: &str,
    receiver: &str,
) -> Result<StateVector<T>> {
    if env.env_dim == 1 {
        let params = ChannelParams {
            alpha: env.t_op[0][0],
            beta: env.s_op[0][0],
            gamma1: env.g1_op[0][0],
            gamma2: env.g2_op[0][0],
            jumped: false,
        };
        return apply_channel(psi, sender, receiver, &params);
    }
    check_sector(psi, sender, receiver)?;
    let space = psi.space();
    let env_dim = space.dim_of("env")?;
    if env_dim != env.env_dim {
        return Err(Error::DimensionMismatch {
            context: "environment factor",
            expected: env.env_dim,
            got: env_dim,
        });
    }

    let env_mat = |m: &[Vec<Complex<T>>]| crate::operator::subsystem_op(space, "env", m);
    let p_g = level_projector::<T>(space, sender, level::G)?;
    let p_e = level_projector::<T>(space, sender, level::E)?;
    let p_r_recv = level_projector::<T>(space, receiver, level::R)?;
    let s_e_to_r = transition::<T>(space, sender, level::R, level::E)?;
    let r_to_e_recv = transition::<T>(space, receiver, level::E, level::R)?;

    let branch_alpha = p_g.matmul(&p_r_recv)?.matmul(&env_mat(&env.t_op)?)?;
    let branch_beta = s_e_to_r
        .matmul(&r_to_e_recv)?
        .matmul(&env_mat(&env.s_op)?)?;
    let branch_g1 = s_e_to_r.matmul(&p_r_recv)?.matmul(&env_mat(&env.g1_op)?)?;
    let branch_g2 = p_e.matmul(&p_r_recv)?.matmul(&env_mat(&env.g2_op)?)?;

    let map = branch_alpha
        .add(&branch_beta)?
        .add(&branch_g1)?
        .add(&branch_g2)?;
    map.apply(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::protocol_space;
    use crate::rng::rng_from_seed;
    use crate::scalar::cplx;

    fn sector_state() -> StateVector<f64> {
        // (0.6|g⟩ + 0.8i|e⟩)₁ ⊗ |g⟩_b ⊗ |R⟩₂ ⊗ |R⟩ₐ
        StateVector::product(
            protocol_space(),
            &[
                vec![cplx(0.6, 0.0), cplx(0.0, 0.8), cplx(0.0, 0.0)],
                vec![cplx(1.0, 0.0), cplx(0.0, 0.0), cplx(0.0, 0.0)],
                vec![cplx(0.0, 0.0), cplx(0.0, 0.0), cplx(1.0, 0.0)],
                vec![cplx(0.0, 0.0), cplx(0.0, 0.0), cplx(1.0, 0.0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn ideal_params_reproduce_the_ideal_mapping() {
        let psi = sector_state();
        let out = apply_channel(&psi, "atom1", "atom2", &ChannelParams::ideal()).unwrap();
        let sp = protocol_space();
        let g_part = StateVector::basis_from_names(
            sp.clone(),
            &[("atom1", "g"), ("atomb", "g"), ("atom2", "R"), ("atoma", "R")],
        )
        .unwrap()
        .scaled(cplx(0.6, 0.0));
        let e_part = StateVector::basis_from_names(
            sp,
            &[("atom1", "r"), ("atomb", "g"), ("atom2", "E"), ("atoma", "R")],
        )
        .unwrap()
        .scaled(cplx(0.0, 0.8));
        let mut ideal = g_part;
        ideal.add_scaled(cplx(1.0, 0.0), &e_part);
        assert!((out.inner(&ideal).unwrap().re - 1.0).abs() < 1e-12);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jump_collapses_to_r_pattern() {
        let psi = sector_state();
        let out = apply_channel(&psi, "atom1", "atom2", &ChannelParams::jump()).unwrap();
        // c₀ branch annihilated, c₁ branch → |r⟩₁|R⟩₂
        let expect = StateVector::basis_from_names(
            protocol_space(),
            &[("atom1", "r"), ("atomb", "g"), ("atom2", "R"), ("atoma", "R")],
        )
        .unwrap()
        .scaled(cplx(0.0, 0.8));
        assert!((out.norm_sqr() - 0.64).abs() < 1e-12);
        assert!(out.overlap_sqr(&expect).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn sector_violation_detected() {
        let sp = protocol_space();
        let bad: StateVector<f64> = StateVector::basis_from_names(
            sp,
            &[("atom1", "r"), ("atomb", "g"), ("atom2", "R"), ("atoma", "R")],
        )
        .unwrap();
        assert!(matches!(
            apply_channel(&bad, "atom1", "atom2", &ChannelParams::ideal()),
            Err(Error::SectorViolation(_))
        ));
    }

    #[test]
    fn sampler_respects_p_extremes() {
        let cfg = NoiseConfig {
            p_nojump: 1.0,
            sampler: ParamSampler::Ideal,
            correlated: true,
        };
        let mut rng = rng_from_seed(1);
        for _ in 0..50 {
            let p: ChannelParams<f64> = sample_channel(&cfg, &mut rng);
            assert!(!p.jumped);
            assert!((p.alpha.re - 1.0).abs() < 1e-15);
        }
        let cfg0 = NoiseConfig {
            p_nojump: 0.0,
            ..cfg
        };
        for _ in 0..50 {
            let p: ChannelParams<f64> = sample_channel(&cfg0, &mut rng);
            assert!(p.jumped);
        }
    }

    #[test]
    fn correlated_round_shares_alpha_beta() {
        let cfg = NoiseConfig {
            p_nojump: 1.0,
            sampler: ParamSampler::default(),
            correlated: true,
        };
        let mut rng = rng_from_seed(9);
        let (d1, d2) = sample_round::<f64>(&cfg, &mut rng);
        assert_eq!(d1.nojump.alpha, d2.nojump.alpha);
        assert_eq!(d1.nojump.beta, d2.nojump.beta);
        assert!(d1.nojump.gamma1 != d2.nojump.gamma1 || d1.nojump.gamma2 != d2.nojump.gamma2);
    }

    #[test]
    fn scalar_environment_reduces_to_abstract_channel() {
        let params = ChannelParams::no_jump(
            cplx(0.9, 0.1),
            cplx(0.7, -0.2),
            cplx(0.05, 0.0),
            cplx(0.0, 0.05),
        )
        .unwrap();
        let env = EnvironmentModel::scalar(&params).unwrap();
        let psi = sector_state();
        let via_env = apply_env_channel(&psi, &env, "atom1", "atom2").unwrap();
        let direct = apply_channel(&psi, "atom1", "atom2", &params).unwrap();
        let diff: f64 = via_env
            .amplitudes()
            .iter()
            .zip(direct.amplitudes())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        assert!(diff < 1e-24);
    }

    #[test]
    fn disjoint_reservoirs_commute_and_flips_do_not() {
        let rot = |th: f64| {
            vec![
                vec![cplx(th.cos(), 0.0), cplx(-th.sin(), 0.0)],
                vec![cplx(th.sin(), 0.0), cplx(th.cos(), 0.0)],
            ]
        };
        let one0 = vec![cplx(1.0, 0.0), cplx(0.0, 0.0)];
        let env: EnvironmentModel<f64> =
            EnvironmentModel::disjoint_reservoirs(rot(0.4), one0.clone(), rot(1.1), one0)
                .unwrap();
        let (ok, res) = env.check_commuting();
        assert!(ok, "residual {res}");

        let bad: EnvironmentModel<f64> = EnvironmentModel::noncommuting_flips().unwrap();
        let (ok, res) = bad.check_commuting();
        assert!(!ok);
        assert!(res > 0.5);
    }
}
