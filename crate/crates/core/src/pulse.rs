//! Sampled laser envelopes Ω₁(t), Ω₂(t) with linear interpolation.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

#[derive(Debug, Clone)]
pub struct PulseSchedule<T: Scalar> {
    t: Vec<T>,
    omega1: Vec<T>,
    omega2: Vec<T>,
}

impl<T: Scalar> PulseSchedule<T> {
    pub fn new(t: Vec<T>, omega1: Vec<T>, omega2: Vec<T>) -> Result<Self> {
        if t.len() != omega1.len() || t.len() != omega2.len() {
            return Err(Error::BadPulseSchedule("grid lengths differ".into()));
        }
        if t.len() < 2 {
            return Err(Error::BadPulseSchedule("need at least two samples".into()));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadPulseSchedule(
                "time samples must be strictly increasing".into(),
            ));
        }
        if omega1
            .iter()
            .chain(&omega2)
            .chain(&t)
            .any(|x| !x.is_finite())
        {
            return Err(Error::BadPulseSchedule("non-finite sample".into()));
        }
        Ok(PulseSchedule { t, omega1, omega2 })
    }

    /// Sample two real envelope functions on a uniform grid over [0, duration].
    pub fn from_functions(
        duration: T,
        samples: usize,
        f1: impl Fn(T) -> T,
        f2: impl Fn(T) -> T,
    ) -> Result<Self> {
        let n = samples.max(2);
        let dt = duration / real::<T>((n - 1) as f64);
        let t: Vec<T> = (0..n).map(|k| dt * real::<T>(k as f64)).collect();
        let omega1 = t.iter().map(|&x| f1(x)).collect();
        let omega2 = t.iter().map(|&x| f2(x)).collect();
        Self::new(t, omega1, omega2)
    }

    pub fn duration(&self) -> T {
        *self.t.last().unwrap()
    }

    pub fn grid(&self) -> &[T] {
        &self.t
    }

    pub fn samples_omega1(&self) -> &[T] {
        &self.omega1
    }

    pub fn samples_omega2(&self) -> &[T] {
        &self.omega2
    }

    fn interp(&self, samples: &[T], t: T) -> T {
        // The laser is off outside the schedule.
        if t < self.t[0] || t > self.duration() {
            return T::zero();
        }
        // Grids are uniform in practice; fall back to binary search otherwise.
        let n = self.t.len();
        let span = self.duration() - self.t[0];
        let guess = ((t - self.t[0]) / span * real::<T>((n - 1) as f64))
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(n - 2);
        let mut k = guess;
        while k > 0 && self.t[k] > t {
            k -= 1;
        }
        while k + 2 < n && self.t[k + 1] < t {
            k += 1;
        }
        let w = (t - self.t[k]) / (self.t[k + 1] - self.t[k]);
        samples[k] + (samples[k + 1] - samples[k]) * w
    }

    pub fn omega1_at(&self, t: T) -> T {
        self.interp(&self.omega1, t)
    }

    pub fn omega2_at(&self, t: T) -> T {
        self.interp(&self.omega2, t)
    }

    /// Multiply both envelopes by a factor (systematic Rabi-frequency error).
    pub fn scaled(&self, factor: T) -> Self {
        PulseSchedule {
            t: self.t.clone(),
            omega1: self.omega1.iter().map(|&x| x * factor).collect(),
            omega2: self.omega2.iter().map(|&x| x * factor).collect(),
        }
    }

    /// CSV export with header `t,omega1,omega2`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,omega1,omega2")?;
        for k in 0..self.t.len() {
            writeln!(w, "{},{},{}", self.t[k], self.omega1[k], self.omega2[k])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut t = Vec::new();
        let mut o1 = Vec::new();
        let mut o2 = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || (lineno == 0 && trimmed.starts_with("t,")) {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::BadPulseSchedule(format!(
                    "line {}: expected 3 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<T> {
                s.trim()
                    .parse::<f64>()
                    .map(real::<T>)
                    .map_err(|e| Error::BadPulseSchedule(format!("line {}: {e}", lineno + 1)))
            };
            t.push(parse(fields[0])?);
            o1.push(parse(fields[1])?);
            o2.push(parse(fields[2])?);
        }
        Self::new(t, o1, o2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_linear_and_off_outside() {
        let p: PulseSchedule<f64> =
            PulseSchedule::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.0], vec![1.0, 1.0, 1.0])
                .unwrap();
        assert!((p.omega1_at(0.5) - 1.0).abs() < 1e-14);
        assert!((p.omega1_at(1.5) - 1.0).abs() < 1e-14);
        assert_eq!(p.omega1_at(-0.1), 0.0);
        assert_eq!(p.omega1_at(2.1), 0.0);
        assert!((p.omega2_at(1.7) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn csv_round_trip() {
        let p: PulseSchedule<f64> = PulseSchedule::from_functions(
            3.0,
            16,
            |t: f64| (t - 1.5).cosh().recip(),
            |t: f64| (1.5 - t).cosh().recip(),
        )
        .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = PulseSchedule::<f64>::read_csv(buf.as_slice()).unwrap();
        for (a, b) in p.samples_omega1().iter().zip(back.samples_omega1()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_unsorted_grid() {
        let err = PulseSchedule::<f64>::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]);
        assert!(err.is_err());
    }
}
