//! Derivative-free minimization (Nelder–Mead) for pulse-shape tuning.

use crate::scalar::{real, Scalar};

pub struct NelderMead<T: Scalar> {
    pub max_evals: usize,
    pub xtol: T,
    pub ftol: T,
}

impl<T: Scalar> Default for NelderMead<T> {
    fn default() -> Self {
        NelderMead {
            max_evals: 400,
            xtol: real(1e-7),
            ftol: real(1e-10),
        }
    }
}

impl<T: Scalar> NelderMead<T> {
    /// Minimize `f` starting from `x0` with per-coordinate initial steps.
    pub fn minimize(
        &self,
        f: &mut dyn FnMut(&[T]) -> T,
        x0: &[T],
        steps: &[T],
    ) -> (Vec<T>, T) {
        let n = x0.len();
        let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(n + 1);
        simplex.push((x0.to_vec(), f(x0)));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += steps[i];
            let fx = f(&x);
            simplex.push((x, fx));
        }
        let mut evals = n + 1;

        let alpha = T::one();
        let gamma = real::<T>(2.0);
        let rho = real::<T>(0.5);
        let sigma = real::<T>(0.5);

        while evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let best = simplex[0].1;
            let worst = simplex[n].1;
            let spread = (worst - best).abs();
            let size = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (*a - *b).abs())
                        .fold(T::zero(), |m, v| m.max(v))
                })
                .fold(T::zero(), |m, v| m.max(v));
            if spread < self.ftol && size < self.xtol {
                break;
            }

            // centroid of all but the worst
            let mut centroid = vec![T::zero(); n];
            for (x, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += *v;
                }
            }
            let inv = T::one() / real::<T>(n as f64);
            for c in &mut centroid {
                *c *= inv;
            }

            let point = |coef: T| -> Vec<T> {
                centroid
                    .iter()
                    .zip(&simplex[n].0)
                    .map(|(c, w)| *c + coef * (*c - *w))
                    .collect()
            };

            let xr = point(alpha);
            let fr = f(&xr);
            evals += 1;
            if fr < simplex[0].1 {
                let xe = point(gamma);
                let fe = f(&xe);
                evals += 1;
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let xc = point(-rho);
                let fc = f(&xc);
                evals += 1;
                if fc < simplex[n].1 {
                    simplex[n] = (xc, fc);
                } else {
                    // shrink toward the best vertex
                    let best_x = simplex[0].0.clone();
                    for v in simplex.iter_mut().skip(1) {
                        for (xi, bi) in v.0.iter_mut().zip(&best_x) {
                            *xi = *bi + sigma * (*xi - *bi);
                        }
                        v.1 = f(&v.0);
                        evals += 1;
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        simplex.swap_remove(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let nm = NelderMead::<f64>::default();
        let mut f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2);
        let (x, v) = nm.minimize(&mut f, &[0.0, 0.0], &[1.0, 1.0]);
        assert!(v < 1e-8);
        assert!((x[0] - 3.0).abs() < 1e-3);
        assert!((x[1] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn handles_rosenbrock_reasonably() {
        let nm = NelderMead::<f64> {
            max_evals: 2000,
            ..Default::default()
        };
        let mut f =
            |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (_, v) = nm.minimize(&mut f, &[-1.2, 1.0], &[0.5, 0.5]);
        assert!(v < 1e-3);
    }
}
