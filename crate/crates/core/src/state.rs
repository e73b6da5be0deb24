//! Dense complex state vectors over a labeled Hilbert space.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::hilbert::HilbertSpace;
use crate::scalar::{czero, real, Scalar};

/// Tolerance for the `is_normalized` hint.
pub const NORMALIZATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct StateVector<T: Scalar> {
    space: Arc<HilbertSpace>,
    amps: Vec<Complex<T>>,
    normalized_hint: bool,
}

impl<T: Scalar> StateVector<T> {
    pub fn zero(space: Arc<HilbertSpace>) -> Self {
        let dim = space.total_dim();
        StateVector {
            space,
            amps: vec![czero(); dim],
            normalized_hint: false,
        }
    }

    /// Basis state |index⟩.
    pub fn basis(space: Arc<HilbertSpace>, index: usize) -> Self {
        let mut s = Self::zero(space);
        s.amps[index] = Complex::new(T::one(), T::zero());
        s.normalized_hint = true;
        s
    }

    /// Basis state from named levels.
    pub fn basis_from_names(space: Arc<HilbertSpace>, names: &[(&str, &str)]) -> Result<Self> {
        let idx = space.index_from_names(names)?;
        Ok(Self::basis(space, idx))
    }

    pub fn from_amplitudes(space: Arc<HilbertSpace>, amps: Vec<Complex<T>>) -> Result<Self> {
        if amps.len() != space.total_dim() {
            return Err(Error::DimensionMismatch {
                context: "state amplitudes",
                expected: space.total_dim(),
                got: amps.len(),
            });
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::NonFiniteAmplitude);
        }
        let mut s = StateVector {
            space,
            amps,
            normalized_hint: false,
        };
        s.refresh_hint();
        Ok(s)
    }

    /// Product state from per-subsystem amplitude vectors, given in the
    /// subsystem order of the space.
    pub fn product(space: Arc<HilbertSpace>, factors: &[Vec<Complex<T>>]) -> Result<Self> {
        if factors.len() != space.num_subsystems() {
            return Err(Error::DimensionMismatch {
                context: "product factors",
                expected: space.num_subsystems(),
                got: factors.len(),
            });
        }
        for (f, sub) in factors.iter().zip(space.subsystems()) {
            if f.len() != sub.dim() {
                return Err(Error::DimensionMismatch {
                    context: "product factor dimension",
                    expected: sub.dim(),
                    got: f.len(),
                });
            }
        }
        let dim = space.total_dim();
        let mut amps = Vec::with_capacity(dim);
        for idx in 0..dim {
            let levels = space.levels_at(idx);
            let mut a = Complex::new(T::one(), T::zero());
            for (k, &l) in levels.iter().enumerate() {
                a *= factors[k][l];
            }
            amps.push(a);
        }
        Self::from_amplitudes(space, amps)
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex<T>] {
        self.normalized_hint = false;
        &mut self.amps
    }

    pub fn amplitude(&self, index: usize) -> Complex<T> {
        self.amps[index]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized_hint
    }

    fn refresh_hint(&mut self) {
        let dev = (self.norm() - T::one()).abs();
        self.normalized_hint = dev < real(NORMALIZATION_TOL);
    }

    pub fn norm_sqr(&self) -> T {
        self.amps
            .iter()
            .fold(T::zero(), |acc, a| acc + a.norm_sqr())
    }

    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    /// Conjugate-linear in `self`: ⟨self|other⟩.
    pub fn inner(&self, other: &Self) -> Result<Complex<T>> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch("inner product"));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .fold(czero(), |acc, (a, b)| acc + a.conj() * *b))
    }

    /// |⟨self|other⟩|² on normalized copies of both states.
    pub fn overlap_sqr(&self, other: &Self) -> Result<T> {
        let n2 = self.norm_sqr() * other.norm_sqr();
        if n2 <= T::zero() {
            return Err(Error::ZeroNormState);
        }
        Ok(self.inner(other)?.norm_sqr() / n2)
    }

    pub fn scale(&mut self, c: Complex<T>) {
        for a in &mut self.amps {
            *a *= c;
        }
        self.normalized_hint = false;
    }

    pub fn scaled(&self, c: Complex<T>) -> Self {
        let mut s = self.clone();
        s.scale(c);
        s
    }

    /// self += c · other.
    pub fn add_scaled(&mut self, c: Complex<T>, other: &Self) {
        debug_assert_eq!(self.space, other.space);
        for (a, b) in self.amps.iter_mut().zip(&other.amps) {
            *a += c * *b;
        }
        self.normalized_hint = false;
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if n <= T::zero() || !n.is_finite() {
            return Err(Error::ZeroNormState);
        }
        let inv = T::one() / n;
        for a in &mut self.amps {
            *a *= inv;
        }
        self.normalized_hint = true;
        Ok(())
    }

    pub fn normalized(&self) -> Result<Self> {
        let mut s = self.clone();
        s.normalize()?;
        Ok(s)
    }

    pub fn assert_normalized(&self) -> Result<()> {
        let dev = (self.norm() - T::one()).abs();
        if dev > real(NORMALIZATION_TOL) {
            return Err(Error::NotNormalized {
                deviation: dev.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }

    /// Total population of basis states whose `label` subsystem sits at
    /// `level_index`.
    pub fn subsystem_population(&self, label: &str, level_index: usize) -> Result<T> {
        let pos = self.space.position_of(label)?;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| self.space.level_of(*i, pos) == level_index)
            .fold(T::zero(), |acc, (_, a)| acc + a.norm_sqr()))
    }

    /// Reduced density matrix of one subsystem (row-major d×d).
    #[allow(clippy::needless_range_loop)]
    pub fn reduced_density(&self, label: &str) -> Result<Vec<Vec<Complex<T>>>> {
        let pos = self.space.position_of(label)?;
        let d = self.space.subsystems()[pos].dim();
        let stride = self.space.stride_at(pos);
        let mut rho = vec![vec![czero::<T>(); d]; d];
        for (i, a) in self.amps.iter().enumerate() {
            if a.norm_sqr() == T::zero() {
                continue;
            }
            let li = self.space.level_of(i, pos);
            let base = i - li * stride;
            for lj in 0..d {
                let j = base + lj * stride;
                rho[li][lj] += *a * self.amps[j].conj();
            }
        }
        Ok(rho)
    }

    /// Fidelity ⟨φ|ρ_sub|φ⟩ / tr ρ_sub of one subsystem against a pure state
    /// given by its amplitudes.
    pub fn subsystem_fidelity(&self, label: &str, phi: &[Complex<T>]) -> Result<T> {
        let rho = self.reduced_density(label)?;
        if phi.len() != rho.len() {
            return Err(Error::DimensionMismatch {
                context: "subsystem fidelity",
                expected: rho.len(),
                got: phi.len(),
            });
        }
        let mut num = czero::<T>();
        let mut tr = T::zero();
        for (i, row) in rho.iter().enumerate() {
            tr += row[i].re;
            for (j, v) in row.iter().enumerate() {
                num += phi[i].conj() * *v * phi[j];
            }
        }
        if tr <= T::zero() {
            return Err(Error::ZeroNormState);
        }
        Ok(num.re / tr)
    }

    /// Purity tr(ρ²)/(tr ρ)² of one subsystem's reduced state.
    #[allow(clippy::needless_range_loop)]
    pub fn subsystem_purity(&self, label: &str) -> Result<T> {
        let rho = self.reduced_density(label)?;
        let d = rho.len();
        let mut tr = T::zero();
        let mut tr2 = T::zero();
        for i in 0..d {
            tr += rho[i][i].re;
            for j in 0..d {
                tr2 += (rho[i][j] * rho[j][i]).re;
            }
        }
        if tr <= T::zero() {
            return Err(Error::ZeroNormState);
        }
        Ok(tr2 / (tr * tr))
    }

    /// CSV dump with columns `basis_index,basis_label,re,im`. The label field
    /// is quoted because product labels contain commas.
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "basis_index,basis_label,re,im")?;
        for (i, a) in self.amps.iter().enumerate() {
            writeln!(
                w,
                "{},\"{}\",{},{}",
                i,
                self.space.basis_label(i),
                a.re,
                a.im
            )?;
        }
        Ok(())
    }
}
