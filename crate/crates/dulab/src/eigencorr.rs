//! Exact diagonalization of `U_F` and the quartet eigenstate correlations.

use std::f64::consts::PI;

use faer::Mat;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::circuits::FloquetOperator;
use crate::geometry::SubsystemSpec;
use crate::{Error, Result, C64, ZERO};

/// Largest `4^L * d_X^2 * d_Y^2` the fast quartet route will attempt.
pub const QUARTET_BUDGET: u64 = 1 << 32;
/// Largest L for the brute-force quadruple loop.
pub const BRUTE_MAX_L: usize = 4;
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct EigenData {
    l: usize,
    /// `theta_alpha` in `(-pi, pi]`, ascending; `U|a> = e^{-i theta}|a>`.
    pub phases: Vec<f64>,
    /// Column `alpha` is the eigenvector.
    pub vectors: Mat<C64>,
}

impl EigenData {
    pub fn l(&self) -> usize {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.phases.len()
    }

    /// `max |sum_a e^{-i theta_a} |a><a| - U|`.
    pub fn reconstruction_defect(&self, u: &Mat<C64>) -> f64 {
        let n = self.dim();
        let scaled = Mat::from_fn(n, n, |i, a| self.vectors[(i, a)] * C64::from_polar(1.0, -self.phases[a]));
        let r = &scaled * self.vectors.adjoint();
        max_abs_diff(&r, u)
    }

    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.vectors.adjoint() * &self.vectors;
        max_abs_diff(&g, &Mat::<C64>::identity(self.dim(), self.dim()))
    }

    /// Eigenvector `alpha` reshaped to a `d_X x d_Xbar` matrix.
    fn reshape(&self, alpha: usize, bits_x: &[usize], bits_c: &[usize]) -> Mat<C64> {
        let dx = 1usize << bits_x.len();
        let dc = 1usize << bits_c.len();
        let mut m = Mat::<C64>::zeros(dx, dc);
        for idx in 0..self.dim() {
            let r = crate::kernels::gather_bits(idx, bits_x);
            let c = crate::kernels::gather_bits(idx, bits_c);
            m[(r, c)] = self.vectors[(idx, alpha)];
        }
        m
    }

    fn split_bits(&self, x: &SubsystemSpec) -> Result<(Vec<usize>, Vec<usize>)> {
        x.validate(self.l)?;
        let bx: Vec<usize> = x.sites.iter().map(|&s| self.l - 1 - s).collect();
        let bc: Vec<usize> = (0..self.l).filter(|s| !x.sites.contains(s)).map(|s| self.l - 1 - s).collect();
        Ok((bx, bc))
    }
}

fn max_abs_diff(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    worst
}

pub fn diagonalize(u: &FloquetOperator) -> Result<EigenData> {
    let m = u.matrix()?;
    diagonalize_matrix(u.l(), &m)
}

/// Spectral decomposition of a unitary given as a dense matrix.
pub fn diagonalize_matrix(l: usize, m: &Mat<C64>) -> Result<EigenData> {
    let n = m.nrows();
    let eig = m.eigen().map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
    let s = eig.S();
    let v = eig.U();
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|a| {
            let mut th = -s[a].arg();
            if th <= -PI {
                th += 2.0 * PI;
            }
            (th, a)
        })
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let phases: Vec<f64> = order.iter().map(|o| o.0).collect();
    let mut vectors = Mat::from_fn(n, n, |i, k| v[(i, order[k].1)]);

    // Gram-Schmidt inside each degenerate block, twice for stability.
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (phases[end] - phases[end - 1]).abs() < DEGENERACY_TOL {
            end += 1;
        }
        for _ in 0..2 {
            for k in start..end {
                for j in start..k {
                    let mut ov = ZERO;
                    for i in 0..n {
                        ov += vectors[(i, j)].conj() * vectors[(i, k)];
                    }
                    for i in 0..n {
                        let vj = vectors[(i, j)];
                        vectors[(i, k)] -= ov * vj;
                    }
                }
                let nrm = (0..n).map(|i| vectors[(i, k)].norm_sqr()).sum::<f64>().sqrt();
                for i in 0..n {
                    vectors[(i, k)] /= nrm;
                }
            }
        }
        start = end;
    }
    let e = EigenData { l, phases, vectors };
    let ortho = e.orthonormality_defect();
    let resid = e.reconstruction_defect(m);
    if ortho > 1e-8 || resid > 1e-8 {
        return Err(Error::Numerical(format!(
            "eigendecomposition defect: orthonormality {ortho:.3e}, reconstruction {resid:.3e}"
        )));
    }
    Ok(e)
}

/// `V^X_{abcd} = Tr(A B^dagger D C^dagger)` with `A..D` the reshaped
/// eigenvectors `alpha, beta, gamma, lambda`.
pub fn quartet_v(e: &EigenData, q: [usize; 4], x: &SubsystemSpec) -> Result<C64> {
    if let Some(&bad) = q.iter().find(|&&k| k >= e.dim()) {
        return Err(Error::Invalid(format!("eigenstate index {bad} out of range")));
    }
    let (bx, bc) = e.split_bits(x)?;
    let [a, b, c, d] = q.map(|k| e.reshape(k, &bx, &bc));
    let p = &a * b.adjoint() * &d * c.adjoint();
    Ok((0..p.nrows()).map(|i| p[(i, i)]).sum())
}

pub fn quartet_phase(e: &EigenData, q: [usize; 4]) -> f64 {
    let th = &e.phases;
    th[q[0]] - th[q[1]] - th[q[2]] + th[q[3]]
}

/// `K_{ab} = A_a B_b^dagger` flattened row-major, for all pairs `(a, b)`.
fn pair_products(e: &EigenData, x: &SubsystemSpec) -> Result<(usize, Vec<Vec<C64>>)> {
    let (bx, bc) = e.split_bits(x)?;
    let dx = 1usize << bx.len();
    let n = e.dim();
    let mats: Vec<Mat<C64>> = (0..n).map(|a| e.reshape(a, &bx, &bc)).collect();
    let k = (0..n * n)
        .into_par_iter()
        .map(|ab| {
            let p = &mats[ab / n] * mats[ab % n].adjoint();
            let mut out = Vec::with_capacity(dx * dx);
            for i in 0..dx {
                for j in 0..dx {
                    out.push(p[(i, j)]);
                }
            }
            out
        })
        .collect();
    Ok((dx, k))
}

/// Full quartet sum with X on the input leg and Y on the output leg. Read
/// literally, `sum e^{-it theta_{abcd}} V^X (V^Y)^*` puts X on the output
/// leg, so the phase enters as `e^{+it theta_{abcd}}` here. Evaluated through
/// `G_{ij,kl} = sum_{ab} e^{+it(theta_a - theta_b)}
/// K^X_{ab,ij} conj(K^Y_{ab,kl})` and `F = sum G_{ij,kl} G_{ji,lk}`.
pub fn f_xy_quartet(e: &EigenData, x: &SubsystemSpec, y: &SubsystemSpec, t: usize) -> Result<f64> {
    let n = e.dim() as u64;
    let cost = n * n * (1u64 << (2 * (x.len() + y.len())));
    if cost > QUARTET_BUDGET {
        return Err(Error::Budget(format!(
            "quartet sum needs {cost} terms (budget {QUARTET_BUDGET}); L={}, |X|={}, |Y|={}",
            e.l(),
            x.len(),
            y.len()
        )));
    }
    let (dx, kx) = pair_products(e, x)?;
    let (dy, ky) = pair_products(e, y)?;
    let nn = e.dim();
    let gsize = dx * dx * dy * dy;
    // Partition over the leading index, reduce in index order.
    let partial: Vec<Vec<C64>> = (0..nn)
        .into_par_iter()
        .map(|a| {
            let mut g = vec![ZERO; gsize];
            for b in 0..nn {
                let ph = C64::from_polar(1.0, t as f64 * (e.phases[a] - e.phases[b]));
                let (kxa, kya) = (&kx[a * nn + b], &ky[a * nn + b]);
                for (ij, &vx) in kxa.iter().enumerate() {
                    let w = ph * vx;
                    let row = &mut g[ij * dy * dy..(ij + 1) * dy * dy];
                    for (slot, &vy) in row.iter_mut().zip(kya) {
                        *slot += w * vy.conj();
                    }
                }
            }
            g
        })
        .collect();
    let mut g = vec![ZERO; gsize];
    for p in &partial {
        g.iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    let mut f = ZERO;
    for i in 0..dx {
        for j in 0..dx {
            for k in 0..dy {
                for l in 0..dy {
                    let a = g[(i * dx + j) * dy * dy + k * dy + l];
                    let b = g[(j * dx + i) * dy * dy + l * dy + k];
                    f += a * b;
                }
            }
        }
    }
    if f.im.abs() > 1e-8 * f.re.abs().max(1.0) {
        return Err(Error::Numerical(format!("quartet sum not real: {f}")));
    }
    Ok(f.re)
}

fn check_brute(e: &EigenData) -> Result<()> {
    if e.l() > BRUTE_MAX_L {
        return Err(Error::Budget(format!("brute quartet loop limited to L <= {BRUTE_MAX_L}")));
    }
    Ok(())
}

/// Every quartet as `(omega, V^X (V^Y)^*)` with `omega = -theta_{abcd}`, so
/// that `F(t) = sum w e^{-it omega}` and the DFT of `F(t)` peaks at `omega`.
fn quartet_terms(e: &EigenData, x: &SubsystemSpec, y: &SubsystemSpec) -> Result<Vec<(f64, C64)>> {
    check_brute(e)?;
    let n = e.dim();
    let (dx, kx) = pair_products(e, x)?;
    let (dy, ky) = pair_products(e, y)?;
    let tr = |k1: &[C64], k2: &[C64], d: usize| -> C64 {
        let mut s = ZERO;
        for i in 0..d {
            for j in 0..d {
                s += k1[i * d + j] * k2[j * d + i];
            }
        }
        s
    };
    let mut out = Vec::with_capacity(n * n * n * n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let vx = tr(&kx[a * n + b], &kx[d * n + c], dx);
                    let vy = tr(&ky[a * n + b], &ky[d * n + c], dy);
                    out.push((-quartet_phase(e, [a, b, c, d]), vx * vy.conj()));
                }
            }
        }
    }
    Ok(out)
}

/// Quadruple loop over quartets; debug path for small L.
pub fn f_xy_quartet_brute(e: &EigenData, x: &SubsystemSpec, y: &SubsystemSpec, t: usize) -> Result<f64> {
    let s: C64 = quartet_terms(e, x, y)?.into_iter().map(|(th, w)| w * C64::from_polar(1.0, -(t as f64) * th)).sum();
    Ok(s.re)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    Rect,
    Hann,
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    /// `2 pi k / T` folded into `(-pi, pi]`.
    pub omega: Vec<f64>,
    pub values: Vec<C64>,
    pub normalization: &'static str,
}

impl Spectrum {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

/// Discrete Fourier transform of a finite time series, the finite-T stand-in
/// for the delta comb in frequency. Unitary normalization so that
/// `sum |F(t)|^2 = sum |F_k|^2` for the (windowed) series.
pub fn f_spectral(series: &[f64], window: Window) -> Result<Spectrum> {
    let n = series.len();
    if n == 0 {
        return Err(Error::Invalid("empty time series".into()));
    }
    if n < 4 {
        return Err(Error::Invalid(format!("need at least 4 time steps, got {n}")));
    }
    let mut buf: Vec<C64> = series
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            let w = match window {
                Window::Rect => 1.0,
                Window::Hann => 0.5 - 0.5 * (2.0 * PI * t as f64 / n as f64).cos(),
            };
            C64::new(v * w, 0.0)
        })
        .collect();
    // Inverse transform gives the e^{+i omega t} sign convention.
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let s = 1.0 / (n as f64).sqrt();
    let omega = (0..n)
        .map(|k| {
            let w = 2.0 * PI * k as f64 / n as f64;
            if w > PI {
                w - 2.0 * PI
            } else {
                w
            }
        })
        .collect();
    Ok(Spectrum {
        omega,
        values: buf.into_iter().map(|v| v * s).collect(),
        normalization: "F_k = T^{-1/2} sum_t w(t) F(t) e^{+i 2 pi k t / T}",
    })
}

/// One-sided transform `(1/2pi) sum_{t>=0} g(t) e^{i omega t}`.
pub fn fourier_sum(series: &[f64], omega: f64) -> C64 {
    series.iter().enumerate().map(|(t, &g)| C64::from_polar(g, omega * t as f64)).sum::<C64>() / (2.0 * PI)
}

/// Quartet weights binned by `-theta_{abcd}` folded into `(-pi, pi]`; debug
/// route for small L. Bin `b` covers `(-pi + b w, -pi + (b+1) w]`.
pub fn f_spectral_binned(e: &EigenData, x: &SubsystemSpec, y: &SubsystemSpec, nbins: usize) -> Result<Vec<(f64, C64)>> {
    if nbins == 0 {
        return Err(Error::Invalid("need at least one bin".into()));
    }
    let w = 2.0 * PI / nbins as f64;
    let mut bins = vec![ZERO; nbins];
    for (th, v) in quartet_terms(e, x, y)? {
        let folded = th - 2.0 * PI * ((th + PI) / (2.0 * PI)).ceil() + 2.0 * PI;
        let b = (((folded + PI) / w).ceil() as usize).clamp(1, nbins) - 1;
        bins[b] += v;
    }
    Ok(bins.into_iter().enumerate().map(|(b, v)| (-PI + (b as f64 + 0.5) * w, v)).collect())
}
