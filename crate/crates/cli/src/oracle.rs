//! Dense density-matrix oracle for the trajectory unraveling: a driven
//! two-level atom coupled to a decaying cavity, integrated directly as a
//! master equation. This path shares no solver code with the trajectory
//! engine it is compared against.

use num_complex::Complex64 as C64;

pub type DenseMat = Vec<Vec<C64>>;

pub fn zeros(n: usize) -> DenseMat {
    vec![vec![C64::new(0.0, 0.0); n]; n]
}

fn matmul(a: &DenseMat, b: &DenseMat) -> DenseMat {
    let n = a.len();
    let mut out = zeros(n);
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn adjoint(a: &DenseMat) -> DenseMat {
    let n = a.len();
    let mut out = zeros(n);
    for i in 0..n {
        for j in 0..n {
            out[j][i] = a[i][j].conj();
        }
    }
    out
}

fn add_scaled(a: &mut DenseMat, c: C64, b: &DenseMat) {
    for (ra, rb) in a.iter_mut().zip(b) {
        for (xa, xb) in ra.iter_mut().zip(rb) {
            *xa += c * xb;
        }
    }
}

/// Index convention: i = atom_level · (n_max + 1) + photons.
pub struct ToyModel {
    pub dim: usize,
    pub n_max: usize,
    pub h_eff: DenseMat,
    pub jump: DenseMat,
}

impl ToyModel {
    pub fn new(g: f64, drive: f64, kappa: f64, n_max: usize) -> Self {
        let nc = n_max + 1;
        let dim = 2 * nc;
        let idx = |atom: usize, n: usize| atom * nc + n;
        let mut h = zeros(dim);
        for n in 0..nc {
            h[idx(1, n)][idx(0, n)] += C64::new(drive, 0.0);
            h[idx(0, n)][idx(1, n)] += C64::new(drive, 0.0);
        }
        for n in 0..n_max {
            let amp = C64::new(g * ((n + 1) as f64).sqrt(), 0.0);
            h[idx(1, n)][idx(0, n + 1)] += amp;
            h[idx(0, n + 1)][idx(1, n)] += amp;
        }
        for atom in 0..2 {
            for n in 0..nc {
                h[idx(atom, n)][idx(atom, n)] += C64::new(0.0, -kappa * n as f64);
            }
        }
        let mut j = zeros(dim);
        for atom in 0..2 {
            for n in 1..nc {
                j[idx(atom, n - 1)][idx(atom, n)] =
                    C64::new((2.0 * kappa * n as f64).sqrt(), 0.0);
            }
        }
        ToyModel {
            dim,
            n_max,
            h_eff: h,
            jump: j,
        }
    }

    /// ρ at the checkpoints under
    /// dρ/dt = −i(H_eff ρ − ρ H_eff†) + J ρ J†, fixed-step RK4.
    pub fn lindblad_checkpoints(&self, rho0: &DenseMat, dt: f64, checkpoints: &[f64]) -> Vec<DenseMat> {
        let jdag = adjoint(&self.jump);
        let hdag = adjoint(&self.h_eff);
        let deriv = |rho: &DenseMat| -> DenseMat {
            let mut d = zeros(self.dim);
            add_scaled(&mut d, C64::new(0.0, -1.0), &matmul(&self.h_eff, rho));
            add_scaled(&mut d, C64::new(0.0, 1.0), &matmul(rho, &hdag));
            add_scaled(
                &mut d,
                C64::new(1.0, 0.0),
                &matmul(&matmul(&self.jump, rho), &jdag),
            );
            d
        };
        let mut rho = rho0.clone();
        let mut t = 0.0f64;
        let mut out = Vec::new();
        let mut next = 0usize;
        while next < checkpoints.len() {
            if t + 1e-9 >= checkpoints[next] {
                out.push(rho.clone());
                next += 1;
                continue;
            }
            let h = dt.min(checkpoints[next] - t);
            let k1 = deriv(&rho);
            let mut r = rho.clone();
            add_scaled(&mut r, C64::new(h / 2.0, 0.0), &k1);
            let k2 = deriv(&r);
            let mut r = rho.clone();
            add_scaled(&mut r, C64::new(h / 2.0, 0.0), &k2);
            let k3 = deriv(&r);
            let mut r = rho.clone();
            add_scaled(&mut r, C64::new(h, 0.0), &k3);
            let k4 = deriv(&r);
            add_scaled(&mut rho, C64::new(h / 6.0, 0.0), &k1);
            add_scaled(&mut rho, C64::new(h / 3.0, 0.0), &k2);
            add_scaled(&mut rho, C64::new(h / 3.0, 0.0), &k3);
            add_scaled(&mut rho, C64::new(h / 6.0, 0.0), &k4);
            t += h;
        }
        out
    }

    pub fn photon_number(&self, rho: &DenseMat) -> f64 {
        let nc = self.n_max + 1;
        (0..self.dim)
            .map(|i| rho[i][i].re * ((i % nc) as f64))
            .sum()
    }
}

/// Eigenvalues of a Hermitian matrix via the real symmetric doubling
/// [[A, −B], [B, A]] and cyclic Jacobi sweeps.
#[allow(clippy::needless_range_loop)]
pub fn hermitian_eigenvalues(m: &DenseMat) -> Vec<f64> {
    let n = m.len();
    let dim = 2 * n;
    let mut s = vec![vec![0.0f64; dim]; dim];
    for i in 0..n {
        for j in 0..n {
            s[i][j] = m[i][j].re;
            s[i][j + n] = -m[i][j].im;
            s[i + n][j] = m[i][j].im;
            s[i + n][j + n] = m[i][j].re;
        }
    }
    for _ in 0..60 {
        let mut off = 0.0;
        for p in 0..dim {
            for q in (p + 1)..dim {
                off += s[p][q] * s[p][q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = s[p][q];
                if apq.abs() < 1e-18 {
                    continue;
                }
                let theta = (s[q][q] - s[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..dim {
                    let skp = s[k][p];
                    let skq = s[k][q];
                    s[k][p] = c * skp - sn * skq;
                    s[k][q] = sn * skp + c * skq;
                }
                for k in 0..dim {
                    let spk = s[p][k];
                    let sqk = s[q][k];
                    s[p][k] = c * spk - sn * sqk;
                    s[q][k] = sn * spk + c * sqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..dim).map(|k| s[k][k]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig.into_iter().step_by(2).collect()
}

/// ½‖ρ₁ − ρ₂‖₁.
pub fn trace_distance(r1: &DenseMat, r2: &DenseMat) -> f64 {
    let n = r1.len();
    let mut d = zeros(n);
    for i in 0..n {
        for j in 0..n {
            d[i][j] = r1[i][j] - r2[i][j];
        }
    }
    0.5 * hermitian_eigenvalues(&d)
        .iter()
        .map(|x| x.abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_is_preserved_by_the_master_equation() {
        let sys = ToyModel::new(1.0, 0.7, 0.6, 3);
        let mut rho0 = zeros(sys.dim);
        rho0[0][0] = C64::new(1.0, 0.0);
        let rhos = sys.lindblad_checkpoints(&rho0, 1e-3, &[1.0, 3.0]);
        for rho in &rhos {
            let tr: f64 = (0..sys.dim).map(|i| rho[i][i].re).sum();
            assert!((tr - 1.0).abs() < 1e-8, "trace {tr}");
        }
    }

    #[test]
    fn eigenvalues_of_a_known_hermitian_matrix() {
        // [[1, i], [−i, 1]] has eigenvalues 0 and 2.
        let m = vec![
            vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)],
            vec![C64::new(0.0, -1.0), C64::new(1.0, 0.0)],
        ];
        let eig = hermitian_eigenvalues(&m);
        assert!((eig[0] - 0.0).abs() < 1e-10);
        assert!((eig[1] - 2.0).abs() < 1e-10);
    }
}
