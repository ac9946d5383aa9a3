//! Haar-averaged folded transfer matrices and the closed-form predictions.
//!
//! A folded leg carries four copies `(U, U*, U, U*)` of a qubit, index
//! `s1*8 + s2*4 + s3*2 + s4`. The two contraction patterns are
//! `ID = d(s1,s2) d(s3,s4)` and `SW = d(s1,s4) d(s2,s3)`.
//!
//! A ribbon of `m = |d|+1` identical stacked gates is sliced one stack at a
//! time. The interface between slices holds `m` right-moving legs followed
//! by `m-1` left-moving legs, index `R * 16^{m-1} + Lm`. Averaging the four
//! dressings of the stack projects each group of `m` legs onto the span of
//! the `(2m)!` pairings; after identifying the outgoing legs with the
//! incoming ones, the bare core gate is a pure phase. Hence
//! `T = (Pi (x) N) Phi (Pi (x) M)` with `M`, `N` the capped projectors of
//! the left-mover groups.

use std::f64::consts::{LN_2, PI};

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::circuits::{build_core_gate, TwoQubitGate};
use crate::geometry::HalfInt;
use crate::{Error, Result, C64, ONE, ZERO};

pub const LEG: usize = 16;
/// Largest stack height with a dense reduced matrix.
pub const DENSE_MAX_M: usize = 2;
/// Largest stack height handled at all (matrix-free above `DENSE_MAX_M`).
pub const MAX_M: usize = 3;
const CLUSTER_TOL: f64 = 1e-7;

pub fn id_vec() -> [f64; 16] {
    std::array::from_fn(|s| {
        let b = |k: usize| (s >> (3 - k)) & 1;
        f64::from(u8::from(b(0) == b(1) && b(2) == b(3)))
    })
}

pub fn sw_vec() -> [f64; 16] {
    std::array::from_fn(|s| {
        let b = |k: usize| (s >> (3 - k)) & 1;
        f64::from(u8::from(b(0) == b(3) && b(1) == b(2)))
    })
}

/// `E[u (x) u* (x) u (x) u*]` over Haar `u` in U(2), as a 16x16 matrix.
pub fn haar_twirl_single() -> [[f64; 16]; 16] {
    let (id, sw) = (id_vec(), sw_vec());
    let wg = [[1.0 / 3.0, -1.0 / 6.0], [-1.0 / 6.0, 1.0 / 3.0]];
    let pats = [id, sw];
    std::array::from_fn(|r| {
        std::array::from_fn(|c| {
            let mut v = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    v += wg[a][b] * pats[a][r] * pats[b][c];
                }
            }
            v
        })
    })
}

/// `u (x) u* (x) u (x) u*` for a 2x2 `u` (row-major), as a 16x16 matrix.
pub fn fold_single(u: &[C64; 4]) -> [[C64; 16]; 16] {
    std::array::from_fn(|r| {
        std::array::from_fn(|c| {
            let mut v = ONE;
            for k in 0..4 {
                let (a, b) = ((r >> (3 - k)) & 1, (c >> (3 - k)) & 1);
                let x = u[a * 2 + b];
                v *= if k % 2 == 0 { x } else { x.conj() };
            }
            v
        })
    })
}

/// Folded two-qubit gate, flat `[oL, oR, iL, iR]` with 16 values each.
pub fn fold_gate(g: &TwoQubitGate) -> Vec<C64> {
    let mut out = vec![ZERO; LEG.pow(4)];
    for (idx, slot) in out.iter_mut().enumerate() {
        let (ol, or, il, ir) = (idx >> 12, (idx >> 8) & 15, (idx >> 4) & 15, idx & 15);
        let mut v = ONE;
        for k in 0..4 {
            let bit = |x: usize| (x >> (3 - k)) & 1;
            let e = g.get(bit(ol) * 2 + bit(or), bit(il) * 2 + bit(ir));
            v *= if k % 2 == 0 { e } else { e.conj() };
            if v == ZERO {
                break;
            }
        }
        *slot = v;
    }
    out
}

/// Twirl on all four legs of a folded gate.
pub fn average_folded(g: &[C64]) -> Vec<C64> {
    let e = haar_twirl_single();
    let mut cur = g.to_vec();
    // Contract one leg at a time; the twirl is real symmetric.
    for leg in 0..4 {
        let shift = 4 * (3 - leg);
        let mut next = vec![ZERO; cur.len()];
        for (idx, slot) in next.iter_mut().enumerate() {
            let s = (idx >> shift) & 15;
            let base = idx & !(15 << shift);
            let mut v = ZERO;
            for (s2, &w) in e[s].iter().enumerate() {
                if w != 0.0 {
                    v += cur[base | (s2 << shift)] * w;
                }
            }
            *slot = v;
        }
        cur = next;
    }
    cur
}

pub fn lambda(j: f64) -> f64 {
    (2.0 - (4.0 * j).cos()) / 3.0
}

/// T1 from its four quoted pattern coefficients.
pub fn t1_closed_form(j: f64) -> Mat<C64> {
    let s = (2.0 * j).sin().powi(2);
    let (c_ii, c_is, c_ss) = ((10.0 + 2.0 * s) / 9.0, -2.0 * (1.0 + 2.0 * s) / 9.0, 4.0 * (1.0 + 2.0 * s) / 9.0);
    let (id, sw) = (id_vec(), sw_vec());
    Mat::from_fn(16, 16, |r, c| {
        C64::from(c_ii * id[r] * id[c] + c_is * (sw[r] * id[c] + id[r] * sw[c]) + c_ss * sw[r] * sw[c])
    })
}

/// T1 by twirling the folded core gate and closing the left output and
/// right input with `ID`. Rows are the outgoing (right output) leg.
pub fn t1_from_twirl(j: f64) -> Mat<C64> {
    let gav = average_folded(&fold_gate(&build_core_gate(j)));
    let id = id_vec();
    Mat::from_fn(16, 16, |or, il| {
        let mut v = ZERO;
        for ol in 0..16 {
            for ir in 0..16 {
                v += gav[(ol << 12) | (or << 8) | (il << 4) | ir] * id[ol] * id[ir];
            }
        }
        v
    })
}

/// Orthonormal basis of the span of the `(2m)!` pairing vectors on `m`
/// folded legs (the range of the stack twirl).
pub fn pairing_basis(m: usize) -> Mat<C64> {
    let dim = LEG.pow(m as u32);
    // U slots are copies 0 and 2, U* slots copies 1 and 3; slot -> bit.
    let bit_of = |leg: usize, copy: usize| 4 * (m - 1 - leg) + (3 - copy);
    let u_slots: Vec<usize> = (0..m).flat_map(|g| [bit_of(g, 0), bit_of(g, 2)]).collect();
    let b_slots: Vec<usize> = (0..m).flat_map(|g| [bit_of(g, 1), bit_of(g, 3)]).collect();
    let perms = permutations(2 * m);
    let p = Mat::from_fn(dim, perms.len(), |s, k| {
        let ok = u_slots.iter().zip(&perms[k]).all(|(&ub, &pi)| (s >> ub) & 1 == (s >> b_slots[pi]) & 1);
        if ok {
            ONE
        } else {
            ZERO
        }
    });
    orthonormal_range(&p)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Orthonormal basis of the column space, via whichever Gram matrix is
/// smaller.
fn orthonormal_range(p: &Mat<C64>) -> Mat<C64> {
    let wide = p.ncols() > p.nrows();
    let g = if wide { p * p.adjoint() } else { p.adjoint() * p };
    let eig = g.self_adjoint_eigen(Side::Lower).expect("Hermitian eigensolver");
    let (s, u) = (eig.S(), eig.U());
    let n = g.nrows();
    let top = (0..n).map(|k| s[k].re).fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&k| s[k].re > 1e-10 * top).collect();
    if wide {
        return Mat::from_fn(n, keep.len(), |i, k| u[(i, keep[k])]);
    }
    let w = Mat::from_fn(n, keep.len(), |i, k| u[(i, keep[k])] / s[keep[k]].re.sqrt());
    p * w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    T1,
    T2,
    T3,
}

/// One eigenvalue cluster of a transfer matrix.
#[derive(Clone, Debug)]
pub struct SpectralLine {
    pub value: C64,
    pub multiplicity: usize,
    /// Boundary weight `r . P . l` summed over the cluster.
    pub weight: f64,
    /// Largest eigen-residual inside the cluster.
    pub residual: f64,
}

/// Caps closing the ribbon. `tl` closes the top left-mover of every full
/// stack, `br` the bottom left-mover. On the left end, `il` closes the
/// inputs along the edge of the lower light cone and `r0` the first
/// right-mover. On the right end, `rd` closes the top right-mover of the
/// last full stack and `top` the right-movers leaving the upper cone.
#[derive(Clone, Copy, Debug)]
struct Caps {
    tl: [f64; 16],
    br: [f64; 16],
    il: [f64; 16],
    r0: [f64; 16],
    rd: [f64; 16],
    top: [f64; 16],
    /// Top-left cap of the last full stack (half-integer d only).
    tl_last: Option<[f64; 16]>,
}

impl Caps {
    fn of(kind: Kind, half: bool) -> Self {
        let (id, sw) = (id_vec(), sw_vec());
        match kind {
            Kind::T1 => Caps { tl: id, br: id, il: id, r0: sw, rd: sw, top: sw, tl_last: None },
            Kind::T2 => Caps {
                tl: sw,
                br: id,
                il: id,
                r0: sw,
                rd: if half { sw } else { id },
                top: sw,
                tl_last: half.then_some(id),
            },
            Kind::T3 => Caps { tl: id, br: id, il: sw, r0: sw, rd: sw, top: sw, tl_last: None },
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransferMatrix {
    pub kind: Kind,
    pub j: f64,
    pub d: HalfInt,
    /// Full stacks have `m = D + 1` gates, `D = floor(|d|)`.
    m: usize,
    /// `phi[iL * 16 + iR]`, the core gate after leg identification.
    phase: Vec<C64>,
    /// Pairing bases on `1..=m` legs.
    qs: Vec<Mat<C64>>,
    cap_m: Mat<C64>,
    cap_n: Mat<C64>,
    r_out: Mat<C64>,
    /// `M R_out` and `N^T conj(R_out)`.
    mr: Mat<C64>,
    nr: Mat<C64>,
    reduced: Option<Mat<C64>>,
    left: Vec<C64>,
    /// Right boundary, already pulled through the modified last stack when
    /// there is one.
    right: Vec<C64>,
    krylov_steps: usize,
}

fn core_phase(j: f64) -> Vec<C64> {
    let g = fold_gate(&build_core_gate(j));
    // The folded core only connects (oL, oR) = (iR, iL).
    (0..256)
        .map(|k| {
            let (il, ir) = (k >> 4, k & 15);
            g[(ir << 12) | (il << 8) | (il << 4) | ir]
        })
        .collect()
}

/// Stack twirl on `m` legs with the last (`last = true`) or first leg
/// closed by `cap`; result maps `m-1` legs to `m` legs.
fn capped_projector(q: &Mat<C64>, m: usize, cap: &[f64; 16], last: bool) -> Mat<C64> {
    let dim = LEG.pow(m as u32);
    let small = dim / LEG;
    let pi = q * q.adjoint();
    Mat::from_fn(dim, small, |r, c| {
        let mut v = ZERO;
        for (k, &w) in cap.iter().enumerate() {
            if w != 0.0 {
                let col = if last { c * LEG + k } else { k * small + c };
                v += pi[(r, col)] * w;
            }
        }
        v
    })
}

fn to_mat(x: &[C64], rows: usize) -> Mat<C64> {
    let cols = x.len() / rows;
    Mat::from_fn(rows, cols, |r, c| x[r * cols + c])
}

impl TransferMatrix {
    fn build(kind: Kind, j: f64, d: HalfInt) -> Result<Self> {
        let half = !d.is_integer();
        let big_d = (d.twice().unsigned_abs() / 2) as usize;
        let m = big_d + 1;
        if m > MAX_M {
            return Err(Error::Budget(format!("|d|={d} exceeds the supported |d| <= {}", MAX_M - 1)));
        }
        let caps = Caps::of(kind, half);
        let qs: Vec<Mat<C64>> = (1..=m).map(pairing_basis).collect();
        let q = &qs[m - 1];
        let cap_m = capped_projector(q, m, &caps.tl, true);
        let cap_n = capped_projector(q, m, &caps.br, false).transpose().to_owned();
        let r_out = orthonormal_range(&cap_n);
        let mr = &cap_m * &r_out;
        let nr = cap_n.transpose() * r_out.conjugate();
        let mut t = Self {
            kind,
            j,
            d,
            m,
            phase: core_phase(j),
            qs,
            cap_m,
            cap_n,
            r_out,
            mr,
            nr,
            reduced: None,
            left: Vec::new(),
            right: Vec::new(),
            krylov_steps: KRYLOV_STEPS,
        };
        if m <= DENSE_MAX_M {
            let dim = t.reduced_dim();
            let mut red = Mat::<C64>::zeros(dim, dim);
            for c in 0..dim {
                let mut e = vec![ZERO; dim];
                e[c] = ONE;
                let col = t.apply_reduced(&e);
                for r in 0..dim {
                    red[(r, c)] = col[r];
                }
            }
            t.reduced = Some(red);
        }
        t.left = t.left_boundary(&caps);
        let mut right = t.right_boundary(&caps);
        if let Some(tl) = caps.tl_last {
            let last = capped_projector(&t.qs[m - 1], m, &tl, true);
            right = t.apply_transpose_with(&right, &last);
        }
        t.right = right;
        Ok(t)
    }

    /// Iteration cap of the matrix-free eigensolver.
    pub fn with_krylov_steps(mut self, steps: usize) -> Self {
        self.krylov_steps = steps.max(2);
        self
    }

    fn q(&self) -> &Mat<C64> {
        &self.qs[self.m - 1]
    }

    /// `Pi (Phi o (Pi a Pi)) Pi` for one stack of `n` gates, `a` indexed by
    /// `(iL group, oL group)`, result by `(oR group, iR group)`.
    fn stack(&self, n: usize, a: &Mat<C64>) -> Mat<C64> {
        let q = &self.qs[n - 1];
        let mut z = q * (q.adjoint() * a * q) * q.adjoint();
        self.apply_phase_n(n, &mut z);
        q * (q.adjoint() * z * q) * q.adjoint()
    }

    /// Partial stacks before the first full stack, closed from the left.
    fn left_boundary(&self, caps: &Caps) -> Vec<C64> {
        let mut v = Mat::from_fn(1, 1, |_, _| ONE);
        for n in 1..self.m {
            let inner = LEG.pow(n as u32 - 1);
            let a = Mat::from_fn(inner * LEG, inner * LEG, |il, ol| {
                let w = caps.il[il / inner] * caps.tl[ol % LEG];
                if w == 0.0 {
                    ZERO
                } else {
                    v[(il % inner, ol / LEG)] * w
                }
            });
            v = self.stack(n, &a);
        }
        // Interface layout: (r0, right-movers) major, left-movers minor.
        let rest = LEG.pow(self.m as u32 - 1);
        let mut out = vec![ZERO; LEG * rest * rest];
        for (k, &w) in caps.r0.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for r in 0..rest {
                for l in 0..rest {
                    out[(k * rest + r) * rest + l] = v[(r, l)] * w;
                }
            }
        }
        out
    }

    /// Partial stacks after the last full stack, as a covector.
    fn right_boundary(&self, caps: &Caps) -> Vec<C64> {
        let mut u = Mat::from_fn(1, 1, |_, _| ONE);
        for n in 1..self.m {
            let inner = LEG.pow(n as u32 - 1);
            // Outputs of this stack: oR (top closed by `top`), iR (bottom by `br`).
            let c = Mat::from_fn(inner * LEG, inner * LEG, |or, ir| {
                let w = caps.top[or % LEG] * caps.br[ir / inner];
                if w == 0.0 {
                    ZERO
                } else {
                    u[(or / LEG, ir % inner)] * w
                }
            });
            u = self.stack(n, &c);
        }
        let rest = LEG.pow(self.m as u32 - 1);
        let mut out = vec![ZERO; LEG * rest * rest];
        for r in 0..rest {
            for (k, &w) in caps.rd.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for l in 0..rest {
                    out[(r * LEG + k) * rest + l] = u[(r, l)] * w;
                }
            }
        }
        out
    }

    pub fn stack_height(&self) -> usize {
        self.m
    }

    /// Dimension of the full interface space, `16^{2|d|+1}`.
    pub fn dim(&self) -> usize {
        LEG.pow((2 * self.m - 1) as u32)
    }

    /// Dimension of the compressed invariant subspace.
    pub fn reduced_dim(&self) -> usize {
        self.q().ncols() * self.r_out.ncols()
    }

    pub fn reduced(&self) -> Option<&Mat<C64>> {
        self.reduced.as_ref()
    }

    /// Left and right boundary vectors on the full interface space.
    pub fn boundaries(&self) -> (&[C64], &[C64]) {
        (&self.left, &self.right)
    }

    fn apply_phase_n(&self, n: usize, z: &mut Mat<C64>) {
        for i in 0..z.ncols() {
            for r in 0..z.nrows() {
                let mut p = ONE;
                for k in 0..n {
                    let sh = 4 * (n - 1 - k);
                    p *= self.phase[((r >> sh) & 15) * 16 + ((i >> sh) & 15)];
                }
                z[(r, i)] *= p;
            }
        }
    }

    /// `T x` on the full interface space.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.dim());
        let q = self.q();
        let xm = to_mat(x, LEG.pow(self.m as u32));
        let mut z = q * (q.adjoint() * &xm) * self.cap_m.transpose();
        self.apply_phase_n(self.m, &mut z);
        flatten(&(q * (q.adjoint() * z) * self.cap_n.transpose()))
    }

    /// `T^T y` under the bilinear pairing, with `cap_m` replaced by `m_cap`.
    fn apply_transpose_with(&self, y: &[C64], m_cap: &Mat<C64>) -> Vec<C64> {
        let q = self.q();
        let ym = to_mat(y, LEG.pow(self.m as u32));
        let mut z = q * (q.adjoint() * &ym) * &self.cap_n;
        self.apply_phase_n(self.m, &mut z);
        flatten(&(q * (q.adjoint() * z) * m_cap))
    }

    pub fn apply_transpose(&self, y: &[C64]) -> Vec<C64> {
        self.apply_transpose_with(y, &self.cap_m)
    }

    /// Coordinates of a full interface vector in the reduced basis.
    pub fn project(&self, x: &[C64]) -> Vec<C64> {
        let xm = to_mat(x, LEG.pow(self.m as u32));
        flatten(&(self.q().adjoint() * xm * self.r_out.conjugate()))
    }

    /// `T` in the reduced basis `Q (x) R_out`, coordinates row-major
    /// `(pairing, left-mover)`.
    pub fn apply_reduced(&self, c: &[C64]) -> Vec<C64> {
        let q = self.q();
        let cm = to_mat(c, q.ncols());
        let mut z = (q * cm) * self.mr.transpose();
        self.apply_phase_n(self.m, &mut z);
        flatten(&(q.adjoint() * (z * &self.nr)))
    }

    /// Random-vector test of `<u, T v> = <T u, v>`, relative.
    pub fn hermiticity_defect(&self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.reduced_dim();
        let mut draw = || -> Vec<C64> {
            (0..dim).map(|_| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))).collect()
        };
        let (u, v) = (draw(), draw());
        let (tu, tv) = (self.apply_reduced(&u), self.apply_reduced(&v));
        let dot = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>();
        let (lhs, rhs) = (dot(&u, &tv), dot(&tu, &v));
        (lhs - rhs).norm() / lhs.norm().max(rhs.norm())
    }

    /// `r . T^n . l` (bilinear, no conjugation).
    pub fn contract(&self, n: usize) -> C64 {
        let (l, r) = (&self.left, &self.right);
        if n == 0 {
            return r.iter().zip(l.iter()).map(|(a, b)| a * b).sum();
        }
        let mut c = self.project(&self.apply(l));
        for _ in 1..n {
            c = self.apply_reduced(&c);
        }
        let rt = self.right_reduced(r);
        rt.iter().zip(&c).map(|(a, b)| a * b).sum()
    }

    /// `Q^T r R_out`, so that `r . (V c) = sum rt * c`.
    fn right_reduced(&self, r: &[C64]) -> Vec<C64> {
        let rm = to_mat(r, LEG.pow(self.m as u32));
        flatten(&(self.q().transpose() * rm * &self.r_out))
    }

    /// Number of transfer-matrix applications between the boundaries at time `t`.
    pub fn power(&self, t: usize) -> Result<usize> {
        let big_d = self.m - 1;
        let n = match self.kind {
            Kind::T1 => Ok(2 * t),
            _ if self.d.is_integer() => (2 * t).checked_sub(2 * big_d).ok_or(()),
            _ => (2 * t).checked_sub(2 * big_d + 1).ok_or(()),
        }
        .map_err(|_| Error::Invalid(format!("t={t} is too short for the ribbon at d={}", self.d)));
        n
    }

    /// Haar-averaged value at time `t`: `F^{XY}` for T1, `F^{X Ybar}` for
    /// T2 (single sites, ring of `l`) and `exp(I_2^{XY})` for T3.
    pub fn predict(&self, l: usize, t: usize) -> Result<f64> {
        let n = self.power(t)?;
        let v = self.contract(n).re;
        let (l, t) = (l as i32, t as i32);
        Ok(match self.kind {
            Kind::T1 => 4f64.powi(l - 2 * t - 1) * v,
            Kind::T2 => 2f64.powi(l - 2 * t - 1) * v,
            Kind::T3 => 2f64.powi(2 * (self.m as i32 - 1) - 4 * t) * v,
        })
    }

    /// Top `k` eigenvalue clusters by magnitude, with boundary weights. Above
    /// the dense size the clusters come from a Krylov space grown from the
    /// left boundary, so eigenvalues with vanishing weight may be missing and
    /// multiplicities are not meaningful.
    pub fn leading_spectrum(&self, k: usize) -> Result<Vec<SpectralLine>> {
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        let tl = self.project(&self.apply(&self.left));
        let rt = self.right_reduced(&self.right);
        match &self.reduced {
            Some(red) => self.dense_spectrum(red, &tl, &rt, k),
            None => self.krylov_spectrum(&tl, &rt, k),
        }
    }

    fn dense_spectrum(&self, red: &Mat<C64>, tl: &[C64], rt: &[C64], k: usize) -> Result<Vec<SpectralLine>> {
        let n = red.nrows();
        let eig = red.eigen().map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
        let (s, u) = (eig.S(), eig.U());
        let u = u.to_owned();
        let uinv = u.partial_piv_lu().inverse();
        let items = (0..n)
            .map(|a| {
                let val = s[a];
                let col: Vec<C64> = (0..n).map(|i| u[(i, a)]).collect();
                let tc = self.apply_reduced(&col);
                let scale = col.iter().map(|x| x.norm()).fold(0.0, f64::max);
                let res = tc.iter().zip(&col).map(|(x, y)| (x - val * y).norm()).fold(0.0, f64::max) / scale;
                let w = if val.norm() < 1e-12 {
                    ZERO
                } else {
                    let rv: C64 = rt.iter().zip(&col).map(|(x, y)| x * y).sum();
                    let zl: C64 = (0..n).map(|i| uinv[(a, i)] * tl[i]).sum();
                    rv * zl / val
                };
                (val, w, res)
            })
            .collect();
        Ok(cluster(items, k))
    }

    fn krylov_spectrum(&self, tl: &[C64], rt: &[C64], k: usize) -> Result<Vec<SpectralLine>> {
        let steps = self.krylov_steps.min(self.reduced_dim());
        let kr = arnoldi(|v| self.apply_reduced(v), tl, steps)?;
        let n0 = tl.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let used = kr.values.len();
        let items = (0..used)
            .map(|a| {
                let val = kr.values[a];
                // r . (B y_a) and the first component of Y^{-1} times |tl|.
                let mut rv = ZERO;
                for (bi, b) in kr.basis.iter().enumerate().take(used) {
                    let rb: C64 = rt.iter().zip(b).map(|(x, y)| x * y).sum();
                    rv += rb * kr.vectors[(bi, a)];
                }
                let zl = kr.inverse[(a, 0)] * n0;
                let w = if val.norm() < 1e-12 { ZERO } else { rv * zl / val };
                (val, w, kr.residuals[a])
            })
            .collect::<Vec<_>>();
        // Late Arnoldi steps seed ghost copies of converged eigenvalues; an
        // unconverged Ritz value sitting on a converged one is such a copy.
        let ok = |v: C64, res: f64| res <= 1e-6 * v.norm().max(1.0);
        let converged: Vec<C64> = items.iter().filter(|x| ok(x.0, x.2)).map(|x| x.0).collect();
        let items = items
            .into_iter()
            .filter(|x| ok(x.0, x.2) || !converged.iter().any(|c| (c - x.0).norm() < CLUSTER_TOL * c.norm().max(1.0)))
            .collect();
        let lines = cluster(items, k);
        if let Some(bad) = lines.iter().find(|l| l.weight.abs() > 1e-8 && l.residual > 1e-6 * l.value.norm().max(1.0)) {
            return Err(Error::Numerical(format!(
                "Krylov iteration did not converge: eigenvalue {} has residual {:.3e}",
                bad.value, bad.residual
            )));
        }
        Ok(lines)
    }
}

const KRYLOV_STEPS: usize = 48;

fn flatten(m: &Mat<C64>) -> Vec<C64> {
    let mut v = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            v.push(m[(r, c)]);
        }
    }
    v
}

/// Groups `(value, weight, residual)` into clusters of nearly equal values,
/// sorted by decreasing magnitude, and keeps the first `k`.
fn cluster(mut items: Vec<(C64, C64, f64)>, k: usize) -> Vec<SpectralLine> {
    items.sort_by(|x, y| y.0.norm().total_cmp(&x.0.norm()).then(y.0.re.total_cmp(&x.0.re)));
    let mut out: Vec<SpectralLine> = Vec::new();
    for (v, w, res) in items {
        if let Some(last) = out.last_mut() {
            if (last.value - v).norm() < CLUSTER_TOL * v.norm().max(1.0) {
                last.multiplicity += 1;
                last.residual = last.residual.max(res);
                last.weight += w.re;
                continue;
            }
        }
        if out.len() == k {
            break;
        }
        out.push(SpectralLine { value: v, multiplicity: 1, weight: w.re, residual: res });
    }
    out
}

struct Krylov {
    basis: Vec<Vec<C64>>,
    values: Vec<C64>,
    vectors: Mat<C64>,
    inverse: Mat<C64>,
    residuals: Vec<f64>,
}

/// Arnoldi with full reorthogonalization; Ritz pairs of the Hessenberg matrix.
fn arnoldi(apply: impl Fn(&[C64]) -> Vec<C64>, start: &[C64], steps: usize) -> Result<Krylov> {
    let dot = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>();
    let norm = |a: &[C64]| a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let n0 = norm(start);
    if n0 == 0.0 {
        return Err(Error::Numerical("Krylov start vector vanishes".into()));
    }
    let mut basis = vec![start.iter().map(|x| x / n0).collect::<Vec<_>>()];
    let mut h = Mat::<C64>::zeros(steps + 1, steps);
    let mut used = steps;
    for j in 0..steps {
        let mut w = apply(&basis[j]);
        for _ in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let c = dot(b, &w);
                h[(i, j)] += c;
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nw = norm(&w);
        h[(j + 1, j)] = C64::from(nw);
        if nw < 1e-12 * n0.max(1.0) {
            used = j + 1;
            break;
        }
        basis.push(w.into_iter().map(|x| x / nw).collect());
    }
    let hk = Mat::from_fn(used, used, |i, j| h[(i, j)]);
    let eig = hk.eigen().map_err(|e| Error::Numerical(format!("Hessenberg eigensolver failed: {e:?}")))?;
    let (s, y) = (eig.S(), eig.U());
    let y = y.to_owned();
    let inverse = y.partial_piv_lu().inverse();
    let beta = h[(used, used - 1)].norm();
    let values = (0..used).map(|i| s[i]).collect();
    let residuals = (0..used)
        .map(|i| {
            let ny = (0..used).map(|r| y[(r, i)].norm_sqr()).sum::<f64>().sqrt();
            beta * y[(used - 1, i)].norm() / ny
        })
        .collect();
    Ok(Krylov { basis, values, vectors: y, inverse, residuals })
}

pub fn build_t1(j: f64) -> Result<TransferMatrix> {
    TransferMatrix::build(Kind::T1, j, HalfInt::int(0))
}

/// Ribbon for single-site `F^{X Ybar}` at `d <= 0` (integer or half-integer).
pub fn build_t2(j: f64, d: HalfInt) -> Result<TransferMatrix> {
    if d.twice() > 0 {
        return Err(Error::Invalid(format!("T2 needs d <= 0, got {d}")));
    }
    TransferMatrix::build(Kind::T2, j, d)
}

/// Ribbon for macroscopic `exp(I_2^{XY})` at integer `d <= 0`.
pub fn build_t3(j: f64, d: HalfInt) -> Result<TransferMatrix> {
    if d.twice() > 0 || !d.is_integer() {
        return Err(Error::Invalid(format!("T3 needs an integer d <= 0, got {d}")));
    }
    TransferMatrix::build(Kind::T3, j, d)
}

/// Weight of the leading eigenvalue of T2 at `|d|`.
pub fn nu_max(d_abs: u32) -> f64 {
    7.0 * 2f64.powi(2 * d_abs as i32 - 1)
}

/// Decay data of T2: `F^{X Ybar} = 7/4 2^L (1 + c Gamma^{2t} + ...)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decay {
    pub gamma: f64,
    pub c: f64,
    pub nu_max: f64,
    pub nu: f64,
}

pub fn t2_decay(t2: &TransferMatrix) -> Result<Decay> {
    if t2.kind != Kind::T2 || t2.d.twice() >= 0 {
        return Err(Error::Invalid("decay data needs T2 at d < 0".into()));
    }
    let lines = t2.leading_spectrum(6)?;
    let lead = &lines[0];
    if (lead.value - 2.0).norm() > 1e-8 {
        return Err(Error::Numerical(format!("leading eigenvalue {} is not 2", lead.value)));
    }
    // Loose enough to ignore weight leaked by a leading pair that is only converged to ~1e-6.
    let tol = 1e-6 * lead.weight.abs().max(1.0);
    let sub = lines[1..]
        .iter()
        .find(|l| l.weight.abs() > tol)
        .ok_or_else(|| Error::Numerical("no subleading eigenvalue with weight".into()))?;
    let gamma = sub.value.norm() / 2.0;
    let big_d = (t2.stack_height() - 1) as i32;
    let c = 2.0 * sub.weight / (7.0 * (2.0 * gamma).powi(2 * big_d));
    Ok(Decay { gamma, c, nu_max: lead.weight, nu: sub.weight })
}

/// Leading weight `E_4` and `e_d`, the coefficient in
/// `exp(I_2^{XY}) = 1 + e_d Lambda^{2t}`.
pub fn t3_e_d(t3: &TransferMatrix) -> Result<(f64, f64)> {
    let lines = t3.leading_spectrum(2)?;
    if lines.len() < 2 {
        return Err(Error::Numerical("T3 has fewer than two eigenvalue clusters".into()));
    }
    let lam = lines[1].value.re / 4.0;
    let big_d = (t3.stack_height() - 1) as i32;
    let (e4, sub) = (lines[0].weight, lines[1].weight);
    Ok((e4, sub / (e4 * lam.powi(2 * big_d))))
}

/// Exact averaged single-site `F^{X Ybar}(t)` on a ring of `l` sites.
pub fn f_xybar_from_t2(t2: &TransferMatrix, l: usize, t: usize) -> Result<f64> {
    t2.predict(l, t)
}

/// Exact averaged macroscopic `exp(I_2^{XY}(t))`.
pub fn opmi_macro_from_t3(t3: &TransferMatrix, t: usize) -> Result<f64> {
    t3.predict(0, t)
}

// ---- closed forms ----

/// Local `<F^{XY}(t)>` for single sites; zero-variance 4^{L-1} off the cone.
pub fn f_local(l: usize, t: usize, d: HalfInt, j: f64) -> f64 {
    let base = 4f64.powi(l as i32 - 1);
    if d.twice() == 0 {
        base * (1.0 + 3.0 * lambda(j).powi(2 * t as i32))
    } else {
        base
    }
}

/// Local `<F^{X Ybar}(t)>`; `gamma` and `c` are only used for `d < 0`.
pub fn f_xybar_local(l: usize, t: usize, d: HalfInt, j: f64, gamma: f64, c: f64) -> f64 {
    let base = 2f64.powi(l as i32);
    match d.twice() {
        -1 => base * (3.0 - (4.0 * j).cos()),
        x if x < 0 => base * 1.75 * (1.0 + c * gamma.powi(2 * t as i32)),
        0 => base,
        _ => 4.0 * base,
    }
}

/// Macroscopic `<exp(I_2^{XY})>`, leading order.
pub fn opmi_macro(t: usize, d: i32, j: f64) -> f64 {
    if d > 0 {
        return 1.0;
    }
    let da = d.abs();
    1.0 + 3.0 * (da + 1) as f64 * lambda(j).powi(2 * t as i32 - da)
}

/// `exp(Delta I_2^{X Ybar})` in the macroscopic geometry.
pub fn exp_delta_opmi_macro(d: i32) -> f64 {
    if d <= 0 {
        2f64.powi(2 * d - 2)
    } else {
        1.0
    }
}

/// Regular part of the local spectrum; the `4^{L-1} delta(omega)` term is
/// left out.
pub fn ftilde_local(l: usize, r: usize, omega: f64, j: f64) -> f64 {
    4f64.powi(l as i32 - 1) * 3.0 * lambda(j).powi(r as i32) / (2.0 * PI) * (omega * r as f64 / 2.0).cos()
}

pub fn ftilde_macro(l: usize, r: usize, omega: f64) -> f64 {
    let rf = r as f64;
    let pref = 2f64.powi(2 * l as i32) / (2f64.powi(r as i32) * PI);
    let ln4 = 2.0 * LN_2;
    let first = if omega.abs() < 1e-12 { rf / 2.0 } else { (omega * rf / 2.0).sin() / omega };
    let second =
        ((omega * rf / 2.0).cos() * ln4 - omega * (omega * rf / 2.0).sin()) / (4.0 * (omega * omega + ln4 * ln4));
    pref * (first + second)
}

pub fn gamma_v(v: f64, j: f64) -> f64 {
    if v <= 2.0 {
        lambda(j).ln().abs() * (1.0 + v / 2.0)
    } else {
        f64::INFINITY
    }
}

/// Growth of the opEE along a ray of velocity `v`.
pub fn opee_ray(t: f64, v: f64) -> f64 {
    if v <= 2.0 {
        2.0 * LN_2 + t * (2.0 - v) * LN_2
    } else {
        0.0
    }
}

/// Named closed form with its arguments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prediction {
    Lambda { j: f64 },
    FLocal { l: usize, t: usize, d: HalfInt, j: f64 },
    FXybarLocal { l: usize, t: usize, d: HalfInt, j: f64, gamma: f64, c: f64 },
    OpmiMacro { t: usize, d: i32, j: f64 },
    DeltaOpmiMacro { d: i32 },
    FtildeLocal { l: usize, r: usize, omega: f64, j: f64 },
    FtildeMacro { l: usize, r: usize, omega: f64 },
    GammaV { v: f64, j: f64 },
    OpeeRay { t: f64, v: f64 },
}

impl Prediction {
    pub fn evaluate(&self) -> Result<f64> {
        Ok(match *self {
            Prediction::Lambda { j } => lambda(j),
            Prediction::FLocal { l, t, d, j } => f_local(l, t, d, j),
            Prediction::FXybarLocal { l, t, d, j, gamma, c } => {
                if d.twice() < -1 && !(gamma > 0.0 && gamma < 1.0) {
                    return Err(Error::Invalid(format!("d={d} needs 0 < Gamma < 1, got {gamma}")));
                }
                f_xybar_local(l, t, d, j, gamma, c)
            }
            Prediction::OpmiMacro { t, d, j } => {
                if d <= 0 && 2 * (t as i32) < d.abs() {
                    return Err(Error::Invalid(format!("t={t} is below the |d|/2 onset for d={d}")));
                }
                opmi_macro(t, d, j)
            }
            Prediction::DeltaOpmiMacro { d } => exp_delta_opmi_macro(d),
            Prediction::FtildeLocal { l, r, omega, j } => ftilde_local(l, r, omega, j),
            Prediction::FtildeMacro { l, r, omega } => ftilde_macro(l, r, omega),
            Prediction::GammaV { v, j } => gamma_v(v, j),
            Prediction::OpeeRay { t, v } => opee_ray(t, v),
        })
    }
}
