//! Shared test oracles, independent of the library's solver paths: dense
//! matrix-vector products, a dense density-matrix (Lindblad) integrator for
//! small toys, and Hermitian eigenvalues via Jacobi rotations on the real
//! symmetric doubling.

#![allow(dead_code)]

use num_complex::Complex64 as C64;

pub type DenseMat = Vec<Vec<C64>>;

pub fn zeros(n: usize) -> DenseMat {
    vec![vec![C64::new(0.0, 0.0); n]; n]
}

pub fn dense_matvec(m: &DenseMat, v: &[C64]) -> Vec<C64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn dense_matmul(a: &DenseMat, b: &DenseMat) -> DenseMat {
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

pub fn dense_adjoint(a: &DenseMat) -> DenseMat {
    let n = a.len();
    let mut out = zeros(n);
    for i in 0..n {
        for j in 0..n {
            out[j][i] = a[i][j].conj();
        }
    }
    out
}

pub fn dense_add_scaled(a: &mut DenseMat, c: C64, b: &DenseMat) {
    for (ra, rb) in a.iter_mut().zip(b) {
        for (xa, xb) in ra.iter_mut().zip(rb) {
            *xa += c * xb;
        }
    }
}

/// The toy open system used by the unraveling oracle: a driven two-level
/// atom Jaynes–Cummings-coupled to a decaying cavity, dim = 2·(n_max+1).
/// Index convention: i = atom_level·(n_max+1) + photons.
pub struct ToySystem {
    pub dim: usize,
    pub h_eff: DenseMat,
    pub jump: DenseMat,
}

impl ToySystem {
    pub fn new(g: f64, drive: f64, kappa: f64, n_max: usize) -> Self {
        let nc = n_max + 1;
        let dim = 2 * nc;
        let idx = |atom: usize, n: usize| atom * nc + n;
        let mut h = zeros(dim);
        for n in 0..nc {
            // drive Ω(σ⁺ + σ⁻)
            h[idx(1, n)][idx(0, n)] += C64::new(drive, 0.0);
            h[idx(0, n)][idx(1, n)] += C64::new(drive, 0.0);
        }
        for n in 0..n_max {
            // g (σ⁺ a + σ⁻ a†), a|n+1⟩ = √(n+1)|n⟩
            let amp = C64::new(g * ((n + 1) as f64).sqrt(), 0.0);
            h[idx(1, n)][idx(0, n + 1)] += amp;
            h[idx(0, n + 1)][idx(1, n)] += amp;
        }
        // −iκ a†a
        for atom in 0..2 {
            for n in 0..nc {
                h[idx(atom, n)][idx(atom, n)] += C64::new(0.0, -kappa * n as f64);
            }
        }
        let mut j = zeros(dim);
        for atom in 0..2 {
            for n in 1..nc {
                j[idx(atom, n - 1)][idx(atom, n)] = C64::new((2.0 * kappa * n as f64).sqrt(), 0.0);
            }
        }
        ToySystem {
            dim,
            h_eff: h,
            jump: j,
        }
    }
}

/// Direct density-matrix integration of
/// dρ/dt = −i(H_eff ρ − ρ H_eff†) + J ρ J† with fixed-step RK4, returning ρ
/// at the requested checkpoints.
pub fn lindblad_checkpoints(
    sys: &ToySystem,
    rho0: &DenseMat,
    dt: f64,
    checkpoints: &[f64],
) -> Vec<DenseMat> {
    let jdag = dense_adjoint(&sys.jump);
    let deriv = |rho: &DenseMat| -> DenseMat {
        let mut d = zeros(sys.dim);
        let h_rho = dense_matmul(&sys.h_eff, rho);
        let rho_hdag = dense_matmul(rho, &dense_adjoint(&sys.h_eff));
        dense_add_scaled(&mut d, C64::new(0.0, -1.0), &h_rho);
        dense_add_scaled(&mut d, C64::new(0.0, 1.0), &rho_hdag);
        let feed = dense_matmul(&dense_matmul(&sys.jump, rho), &jdag);
        dense_add_scaled(&mut d, C64::new(1.0, 0.0), &feed);
        d
    };

    let mut rho = rho0.clone();
    let mut t = 0.0f64;
    let mut out = Vec::new();
    let mut next = 0usize;
    let tol = 1e-9;
    while next < checkpoints.len() {
        if t + tol >= checkpoints[next] {
            out.push(rho.clone());
            next += 1;
            continue;
        }
        let h = dt.min(checkpoints[next] - t);
        let k1 = deriv(&rho);
        let mut r2 = rho.clone();
        dense_add_scaled(&mut r2, C64::new(h / 2.0, 0.0), &k1);
        let k2 = deriv(&r2);
        let mut r3 = rho.clone();
        dense_add_scaled(&mut r3, C64::new(h / 2.0, 0.0), &k2);
        let k3 = deriv(&r3);
        let mut r4 = rho.clone();
        dense_add_scaled(&mut r4, C64::new(h, 0.0), &k3);
        let k4 = deriv(&r4);
        dense_add_scaled(&mut rho, C64::new(h / 6.0, 0.0), &k1);
        dense_add_scaled(&mut rho, C64::new(h / 3.0, 0.0), &k2);
        dense_add_scaled(&mut rho, C64::new(h / 3.0, 0.0), &k3);
        dense_add_scaled(&mut rho, C64::new(h / 6.0, 0.0), &k4);
        t += h;
    }
    out
}

/// Eigenvalues of a Hermitian matrix via the real symmetric doubling
/// [[A, −B], [B, A]] (each eigenvalue appears twice) and cyclic Jacobi.
#[allow(clippy::needless_range_loop)]
pub fn hermitian_eigenvalues(m: &DenseMat) -> Vec<f64> {
    let n = m.len();
    let mut s = vec![vec![0.0f64; 2 * n]; 2 * n];
    for i in 0..n {
        for j in 0..n {
            s[i][j] = m[i][j].re;
            s[i][j + n] = -m[i][j].im;
            s[i + n][j] = m[i][j].im;
            s[i + n][j + n] = m[i][j].re;
        }
    }
    let dim = 2 * n;
    for _sweep in 0..60 {
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
    // Collapse the doubled spectrum: sort and take every second value.
    let mut eig: Vec<f64> = (0..dim).map(|k| s[k][k]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig.into_iter().step_by(2).collect()
}

/// Trace distance ½‖ρ₁ − ρ₂‖₁ of two Hermitian matrices.
pub fn trace_distance(r1: &DenseMat, r2: &DenseMat) -> f64 {
    let n = r1.len();
    let mut d = zeros(n);
    for i in 0..n {
        for j in 0..n {
            d[i][j] = r1[i][j] - r2[i][j];
        }
    }
    0.5 * hermitian_eigenvalues(&d).iter().map(|x| x.abs()).sum::<f64>()
}

/// Two-sided Kolmogorov–Smirnov statistic of samples against a CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}
