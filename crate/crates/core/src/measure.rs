//! Projective measurement on state vectors.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::operator::LinearOperator;
use crate::scalar::{real, Scalar};
use crate::state::StateVector;

/// Validation tolerance for completeness and mutual orthogonality.
pub const PROJECTOR_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MeasurementOutcome<T: Scalar> {
    pub outcome: usize,
    pub collapsed: StateVector<T>,
    pub probability: T,
}

fn validate_projectors<T: Scalar>(
    psi: &StateVector<T>,
    projectors: &[LinearOperator<T>],
) -> Result<()> {
    let tol = real::<T>(PROJECTOR_TOL);
    let mut sum = LinearOperator::zero(psi.space().clone());
    for p in projectors {
        if p.space() != psi.space() {
            return Err(Error::SpaceMismatch("projector"));
        }
        sum = sum.add(p)?;
    }
    let dev = sum.max_abs_diff(&LinearOperator::identity(psi.space().clone()))?;
    if dev > tol {
        return Err(Error::IncompleteProjectors {
            deviation: dev.to_f64().unwrap_or(f64::NAN),
        });
    }
    for (i, p) in projectors.iter().enumerate() {
        for q in projectors.iter().skip(i + 1) {
            let cross = p.matmul(q)?.max_abs_entry();
            if cross > tol {
                return Err(Error::NonOrthogonalProjectors {
                    deviation: cross.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
    }
    Ok(())
}

/// Projective measurement: the outcome is selected by the cumulative
/// probabilities ‖P_k ψ‖²/‖ψ‖² against `u` ∈ [0,1), and the collapsed state is
/// P_k ψ renormalized.
pub fn measure_projective<T: Scalar>(
    psi: &StateVector<T>,
    projectors: &[LinearOperator<T>],
    u: T,
) -> Result<MeasurementOutcome<T>> {
    validate_projectors(psi, projectors)?;
    let total = psi.norm_sqr();
    if total <= T::zero() {
        return Err(Error::ZeroNormState);
    }
    let branches: Vec<StateVector<T>> = projectors
        .iter()
        .map(|p| p.apply(psi))
        .collect::<Result<_>>()?;
    let weights: Vec<T> = branches.iter().map(|b| b.norm_sqr() / total).collect();
    let mut cum = T::zero();
    let mut pick = projectors.len() - 1;
    for (k, w) in weights.iter().enumerate() {
        cum += *w;
        if u < cum {
            pick = k;
            break;
        }
    }
    // Guard against landing on a zero-probability branch through rounding.
    if weights[pick] <= T::zero() {
        pick = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap();
    }
    let mut collapsed = branches.into_iter().nth(pick).unwrap();
    collapsed.normalize()?;
    Ok(MeasurementOutcome {
        outcome: pick,
        collapsed,
        probability: weights[pick],
    })
}

/// All branches of a projective measurement: `(probability, collapsed)` per
/// projector, in order. Zero-probability branches carry a zero state.
pub fn measure_all_branches<T: Scalar>(
    psi: &StateVector<T>,
    projectors: &[LinearOperator<T>],
) -> Result<Vec<(T, StateVector<T>)>> {
    validate_projectors(psi, projectors)?;
    let total = psi.norm_sqr();
    if total <= T::zero() {
        return Err(Error::ZeroNormState);
    }
    projectors
        .iter()
        .map(|p| {
            let mut b = p.apply(psi)?;
            let w = b.norm_sqr() / total;
            if w > T::zero() {
                b.normalize()?;
            }
            Ok((w, b))
        })
        .collect()
}

/// Complement pair {P, 1 − P} for a yes/no measurement.
pub fn binary_projectors<T: Scalar>(p: &LinearOperator<T>) -> Result<[LinearOperator<T>; 2]> {
    let id = LinearOperator::identity(p.space().clone());
    Ok([p.clone(), id.sub(p)?])
}

/// Superposition |a⟩ ± |b⟩ measurement basis on one 3-level subsystem: the two
/// ± projectors plus the projector onto the remaining level.
pub fn plus_minus_projectors<T: Scalar>(
    space: &std::sync::Arc<crate::hilbert::HilbertSpace>,
    label: &str,
    level_a: usize,
    level_b: usize,
) -> Result<Vec<LinearOperator<T>>> {
    let d = space.dim_of(label)?;
    let mut rest = None;
    for l in 0..d {
        if l != level_a && l != level_b {
            rest = Some(l);
        }
    }
    let inv = real::<T>(0.5);
    let mk = |sign: T| -> Result<LinearOperator<T>> {
        // (|a⟩ ± |b⟩)(⟨a| ± ⟨b|) / 2
        let paa = crate::operator::transition::<T>(space, label, level_a, level_a)?;
        let pbb = crate::operator::transition::<T>(space, label, level_b, level_b)?;
        let pab = crate::operator::transition::<T>(space, label, level_a, level_b)?;
        let pba = crate::operator::transition::<T>(space, label, level_b, level_a)?;
        let s = Complex::new(sign * inv, T::zero());
        let h = Complex::new(inv, T::zero());
        paa.scaled(h)
            .add(&pbb.scaled(h))?
            .add(&pab.scaled(s))?
            .add(&pba.scaled(s))
    };
    let mut out = vec![mk(T::one())?, mk(-T::one())?];
    if let Some(l) = rest {
        out.push(crate::operator::level_projector(space, label, l)?);
    }
    Ok(out)
}
