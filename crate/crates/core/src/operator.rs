//! Sparse complex operators over labeled Hilbert spaces.
//!
//! Operators are stored in compressed sparse row form; states stay dense.
//! Local operators are built on a small space holding only the subsystems
//! they touch and lifted into a larger space with [`embed`].

use std::sync::Arc;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::hilbert::HilbertSpace;
use crate::scalar::{czero, imag_unit, real, Scalar};
use crate::state::StateVector;

#[derive(Debug, Clone)]
pub struct LinearOperator<T: Scalar> {
    space: Arc<HilbertSpace>,
    indptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<Complex<T>>,
    hermitian_hint: bool,
}

impl<T: Scalar> LinearOperator<T> {
    pub fn zero(space: Arc<HilbertSpace>) -> Self {
        let dim = space.total_dim();
        LinearOperator {
            space,
            indptr: vec![0; dim + 1],
            cols: Vec::new(),
            vals: Vec::new(),
            hermitian_hint: true,
        }
    }

    pub fn identity(space: Arc<HilbertSpace>) -> Self {
        let dim = space.total_dim();
        LinearOperator {
            space,
            indptr: (0..=dim).collect(),
            cols: (0..dim as u32).collect(),
            vals: vec![Complex::new(T::one(), T::zero()); dim],
            hermitian_hint: true,
        }
    }

    /// Build from (row, col, value) triplets; duplicates are summed, exact
    /// zeros dropped.
    pub fn from_triplets(
        space: Arc<HilbertSpace>,
        mut triplets: Vec<(usize, usize, Complex<T>)>,
    ) -> Self {
        let dim = space.total_dim();
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; dim + 1];
        let mut cols: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex<T>> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < dim && c < dim);
            if last == Some((r, c)) {
                let k = vals.len() - 1;
                vals[k] += v;
            } else {
                cols.push(c as u32);
                vals.push(v);
                indptr[r + 1] = cols.len();
                last = Some((r, c));
            }
        }
        for i in 1..=dim {
            if indptr[i] < indptr[i - 1] {
                indptr[i] = indptr[i - 1];
            }
        }
        let mut op = LinearOperator {
            space,
            indptr,
            cols,
            vals,
            hermitian_hint: false,
        };
        op.prune_zeros();
        op
    }

    fn prune_zeros(&mut self) {
        let dim = self.space.total_dim();
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        let mut indptr = vec![0usize; dim + 1];
        for r in 0..dim {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let v = self.vals[k];
                if v.re != T::zero() || v.im != T::zero() {
                    cols.push(self.cols[k]);
                    vals.push(v);
                }
            }
            indptr[r + 1] = cols.len();
        }
        self.cols = cols;
        self.vals = vals;
        self.indptr = indptr;
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn hermitian_hint(&self) -> bool {
        self.hermitian_hint
    }

    pub fn with_hermitian_hint(mut self, hint: bool) -> Self {
        self.hermitian_hint = hint;
        self
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex<T>)> + '_ {
        (0..self.dim()).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1])
                .map(move |k| (r, self.cols[k] as usize, self.vals[k]))
        })
    }

    /// op · ψ, unnormalized.
    pub fn apply(&self, psi: &StateVector<T>) -> Result<StateVector<T>> {
        if self.space != *psi.space() {
            return Err(Error::SpaceMismatch("operator application"));
        }
        let mut out = StateVector::zero(self.space.clone());
        self.apply_into(psi, &mut out);
        Ok(out)
    }

    /// Internal unchecked apply into a preallocated output.
    pub(crate) fn apply_into(&self, psi: &StateVector<T>, out: &mut StateVector<T>) {
        let x = psi.amplitudes();
        let y = out.amplitudes_mut();
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = czero::<T>();
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            *yr = acc;
        }
    }

    /// Like `apply_into` but accumulates `c · op · ψ` onto `out`.
    pub(crate) fn apply_add_into(&self, c: Complex<T>, psi: &StateVector<T>, out: &mut StateVector<T>) {
        let x = psi.amplitudes();
        let y = out.amplitudes_mut();
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = czero::<T>();
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            *yr += c * acc;
        }
    }

    pub fn scaled(&self, c: Complex<T>) -> Self {
        let mut out = self.clone();
        for v in &mut out.vals {
            *v *= c;
        }
        out.hermitian_hint = false;
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch("operator sum"));
        }
        let mut triplets: Vec<(usize, usize, Complex<T>)> = self.entries().collect();
        triplets.extend(other.entries());
        Ok(Self::from_triplets(self.space.clone(), triplets))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(Complex::new(-T::one(), T::zero())))
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let triplets = self
            .entries()
            .map(|(r, c, v)| (c, r, v.conj()))
            .collect();
        let mut out = Self::from_triplets(self.space.clone(), triplets);
        out.hermitian_hint = self.hermitian_hint;
        out
    }

    /// self · other.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch("operator product"));
        }
        let dim = self.dim();
        let mut scratch = vec![czero::<T>(); dim];
        let mut touched: Vec<u32> = Vec::new();
        let mut triplets = Vec::new();
        for r in 0..dim {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let a = self.vals[k];
                let mid = self.cols[k] as usize;
                for k2 in other.indptr[mid]..other.indptr[mid + 1] {
                    let c = other.cols[k2];
                    if scratch[c as usize] == czero() {
                        touched.push(c);
                    }
                    scratch[c as usize] += a * other.vals[k2];
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                triplets.push((r, c as usize, scratch[c as usize]));
                scratch[c as usize] = czero();
            }
            touched.clear();
        }
        Ok(Self::from_triplets(self.space.clone(), triplets))
    }

    /// i (H − H†): twice the decay part of a non-Hermitian generator. For
    /// H = H₀ − (i/2) W with Hermitian H₀ and W, this returns W.
    pub fn decay_operator(&self) -> Self {
        let i = imag_unit::<T>();
        self.scaled(i)
            .add(&self.adjoint().scaled(-i))
            .expect("same space")
    }

    /// Largest |entry| of self − other, for exactness tests.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        let d = self.sub(other)?;
        Ok(d
            .vals
            .iter()
            .map(|v| v.norm())
            .fold(T::zero(), |a, b| a.max(b)))
    }

    pub fn max_abs_entry(&self) -> T {
        self.vals
            .iter()
            .map(|v| v.norm())
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn is_hermitian(&self, tol: T) -> bool {
        self.max_abs_diff(&self.adjoint())
            .map(|d| d <= tol)
            .unwrap_or(false)
    }

    /// Dense row-major copy, for small test oracles.
    pub fn to_dense(&self) -> Vec<Vec<Complex<T>>> {
        let dim = self.dim();
        let mut m = vec![vec![czero::<T>(); dim]; dim];
        for (r, c, v) in self.entries() {
            m[r][c] += v;
        }
        m
    }
}

/// |to⟩⟨from| on one subsystem, as an operator on the full `space`.
pub fn transition<T: Scalar>(
    space: &Arc<HilbertSpace>,
    label: &str,
    to_level: usize,
    from_level: usize,
) -> Result<LinearOperator<T>> {
    let pos = space.position_of(label)?;
    let stride = space.stride_of(label)?;
    let one = Complex::new(T::one(), T::zero());
    let mut triplets = Vec::new();
    for i in 0..space.total_dim() {
        if space.level_of(i, pos) == from_level {
            let j = i - from_level * stride + to_level * stride;
            triplets.push((j, i, one));
        }
    }
    let hint = to_level == from_level;
    Ok(LinearOperator::from_triplets(space.clone(), triplets).with_hermitian_hint(hint))
}

/// Projector onto one level of one subsystem.
pub fn level_projector<T: Scalar>(
    space: &Arc<HilbertSpace>,
    label: &str,
    level: usize,
) -> Result<LinearOperator<T>> {
    transition(space, label, level, level)
}

/// Annihilation operator on a numbered (cavity) subsystem.
pub fn annihilator<T: Scalar>(
    space: &Arc<HilbertSpace>,
    label: &str,
) -> Result<LinearOperator<T>> {
    let pos = space.position_of(label)?;
    let stride = space.stride_of(label)?;
    let mut triplets = Vec::new();
    for i in 0..space.total_dim() {
        let n = space.level_of(i, pos);
        if n >= 1 {
            let amp = Complex::new(real::<T>(n as f64).sqrt(), T::zero());
            triplets.push((i - stride, i, amp));
        }
    }
    Ok(LinearOperator::from_triplets(space.clone(), triplets))
}

/// Photon-number operator on a numbered subsystem.
pub fn number_op<T: Scalar>(space: &Arc<HilbertSpace>, label: &str) -> Result<LinearOperator<T>> {
    let pos = space.position_of(label)?;
    let mut triplets = Vec::new();
    for i in 0..space.total_dim() {
        let n = space.level_of(i, pos);
        if n >= 1 {
            triplets.push((i, i, Complex::new(real::<T>(n as f64), T::zero())));
        }
    }
    Ok(LinearOperator::from_triplets(space.clone(), triplets).with_hermitian_hint(true))
}

/// Arbitrary single-subsystem operator from a small dense matrix
/// (`mat[to][from]`), as an operator on the full `space`.
pub fn subsystem_op<T: Scalar>(
    space: &Arc<HilbertSpace>,
    label: &str,
    mat: &[Vec<Complex<T>>],
) -> Result<LinearOperator<T>> {
    let pos = space.position_of(label)?;
    let d = space.subsystems()[pos].dim();
    if mat.len() != d || mat.iter().any(|row| row.len() != d) {
        return Err(Error::DimensionMismatch {
            context: "subsystem operator matrix",
            expected: d,
            got: mat.len(),
        });
    }
    let stride = space.stride_of(label)?;
    let mut triplets = Vec::new();
    for i in 0..space.total_dim() {
        let from = space.level_of(i, pos);
        let base = i - from * stride;
        for (to, row) in mat.iter().enumerate() {
            let v = row[from];
            if v != czero() {
                triplets.push((base + to * stride, i, v));
            }
        }
    }
    Ok(LinearOperator::from_triplets(space.clone(), triplets))
}

/// |ψ⟩⟨ψ| for a (not necessarily normalized) state.
pub fn projector_onto<T: Scalar>(psi: &StateVector<T>) -> LinearOperator<T> {
    let n2 = psi.norm_sqr();
    let mut triplets = Vec::new();
    if n2 > T::zero() {
        let inv = T::one() / n2;
        for (i, a) in psi.amplitudes().iter().enumerate() {
            if a.norm_sqr() == T::zero() {
                continue;
            }
            for (j, b) in psi.amplitudes().iter().enumerate() {
                if b.norm_sqr() == T::zero() {
                    continue;
                }
                triplets.push((i, j, *a * b.conj() * inv));
            }
        }
    }
    LinearOperator::from_triplets(psi.space().clone(), triplets).with_hermitian_hint(true)
}

/// Lift `op` into `target`, tensoring with the identity on every subsystem of
/// `target` that `op`'s space does not contain. Subsystem ordering of the
/// target is respected regardless of the local ordering.
pub fn embed<T: Scalar>(
    op: &LinearOperator<T>,
    target: &Arc<HilbertSpace>,
) -> Result<LinearOperator<T>> {
    let local = op.space();
    let mut local_positions = Vec::with_capacity(local.num_subsystems());
    for sub in local.subsystems() {
        let pos = target.position_of(&sub.label)?;
        let tdim = target.subsystems()[pos].dim();
        if tdim != sub.dim() {
            return Err(Error::DimensionMismatch {
                context: "embed subsystem dimension",
                expected: sub.dim(),
                got: tdim,
            });
        }
        local_positions.push(pos);
    }

    // Offsets contributed by every configuration of the complement factors.
    let complement: Vec<usize> = (0..target.num_subsystems())
        .filter(|p| !local_positions.contains(p))
        .collect();
    let mut offsets = vec![0usize];
    for &p in &complement {
        let d = target.subsystems()[p].dim();
        let stride = target.stride_at(p);
        let mut next = Vec::with_capacity(offsets.len() * d);
        for &base in &offsets {
            for l in 0..d {
                next.push(base + l * stride);
            }
        }
        offsets = next;
    }

    let target_index = |local_index: usize| -> usize {
        let levels = local.levels_at(local_index);
        levels
            .iter()
            .zip(&local_positions)
            .map(|(&l, &p)| l * target.stride_at(p))
            .sum()
    };

    let mut triplets = Vec::with_capacity(op.nnz() * offsets.len());
    for (r, c, v) in op.entries() {
        let rb = target_index(r);
        let cb = target_index(c);
        for &off in &offsets {
            triplets.push((rb + off, cb + off, v));
        }
    }
    Ok(LinearOperator::from_triplets(target.clone(), triplets)
        .with_hermitian_hint(op.hermitian_hint()))
}
