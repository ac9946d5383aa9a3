//! Pauli-averaged two-point correlators and OTOCs.
//!
//! `<A> = Tr A / 2^L` and the operator basis is unnormalized Pauli strings.

use faer::Mat;
use rayon::prelude::*;

use crate::circuits::FloquetOperator;
use crate::geometry::SubsystemSpec;
use crate::kernels;
use crate::{Error, Result, C64, ONE, ZERO};

/// Largest L for dense `2^L x 2^L` operator work in this module.
pub const MAX_OPERATOR_L: usize = 12;
/// Largest Pauli-pair enumeration `4^{|X|+|Y|}`.
pub const PAIR_BUDGET: usize = 1 << 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    /// `P|b> = phase |b'>`.
    fn act(self, b: usize) -> (usize, C64) {
        match self {
            Pauli::I => (b, ONE),
            Pauli::X => (b ^ 1, ONE),
            Pauli::Y => (b ^ 1, if b == 0 { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) }),
            Pauli::Z => (b, if b == 0 { ONE } else { -ONE }),
        }
    }

    pub fn matrix(self) -> [C64; 4] {
        let mut m = [ZERO; 4];
        for b in 0..2 {
            let (r, ph) = self.act(b);
            m[r * 2 + b] = ph;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PauliString {
    pub support: SubsystemSpec,
    pub letters: Vec<Pauli>,
}

impl PauliString {
    pub fn new(support: SubsystemSpec, letters: Vec<Pauli>) -> Result<Self> {
        if support.len() != letters.len() {
            return Err(Error::Invalid(format!("{} letters for a support of {} sites", letters.len(), support.len())));
        }
        Ok(Self { support, letters })
    }

    /// All `4^n` strings on `support`, identity first.
    pub fn all(support: &SubsystemSpec) -> Vec<Self> {
        let n = support.len();
        (0..1usize << (2 * n))
            .map(|code| Self {
                support: support.clone(),
                letters: (0..n).map(|k| Pauli::ALL[(code >> (2 * (n - 1 - k))) & 3]).collect(),
            })
            .collect()
    }

    /// Column `j` of the full-space matrix has its single entry at row
    /// `perm[j]` with value `phase[j]`.
    fn action(&self, l: usize) -> (Vec<usize>, Vec<C64>) {
        let n = 1usize << l;
        let mut perm = Vec::with_capacity(n);
        let mut phase = Vec::with_capacity(n);
        for j in 0..n {
            let (mut i, mut ph) = (j, ONE);
            for (&s, &p) in self.support.sites.iter().zip(&self.letters) {
                let bit = l - 1 - s;
                let (nb, f) = p.act((j >> bit) & 1);
                i = (i & !(1 << bit)) | (nb << bit);
                ph *= f;
            }
            perm.push(i);
            phase.push(ph);
        }
        (perm, phase)
    }

    pub fn matrix(&self, l: usize) -> Mat<C64> {
        let (perm, phase) = self.action(l);
        let n = 1usize << l;
        let mut m = Mat::<C64>::zeros(n, n);
        for j in 0..n {
            m[(perm[j], j)] = phase[j];
        }
        m
    }
}

fn check_l(l: usize) -> Result<()> {
    if l > MAX_OPERATOR_L {
        return Err(Error::Budget(format!("dense operators limited to L <= {MAX_OPERATOR_L}, got {l}")));
    }
    Ok(())
}

fn to_rows(m: &Mat<C64>) -> Vec<C64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// One Heisenberg period, `Q <- U_F^dagger Q U_F`, on a row-major operator.
fn heisenberg_period(u: &FloquetOperator, q: &mut [C64]) {
    let l = u.l();
    for layer in [1, 0] {
        for k in u.layer(layer) {
            let (a, b) = u.bond(k);
            kernels::conjugate(u.gates()[k].g4(), q, l, l - 1 - a, l - 1 - b);
        }
    }
}

/// `U_t^dagger O U_t`.
pub fn heisenberg(u: &FloquetOperator, t: usize, o: &Mat<C64>) -> Result<Mat<C64>> {
    check_l(u.l())?;
    let n = 1usize << u.l();
    if o.nrows() != n || o.ncols() != n {
        return Err(Error::Invalid("operator dimension does not match L".into()));
    }
    let mut q = to_rows(o);
    for _ in 0..t {
        heisenberg_period(u, &mut q);
    }
    Ok(Mat::from_fn(n, n, |i, j| q[i * n + j]))
}

fn heisenberg_rows(u: &FloquetOperator, t: usize, p: &PauliString) -> Vec<C64> {
    let mut q = to_rows(&p.matrix(u.l()));
    for _ in 0..t {
        heisenberg_period(u, &mut q);
    }
    q
}

fn check_pairs(x: &SubsystemSpec, y: &SubsystemSpec) -> Result<()> {
    let pairs = 1usize << (2 * (x.len() + y.len()));
    if pairs > PAIR_BUDGET {
        return Err(Error::Budget(format!("{pairs} Pauli pairs exceed the budget {PAIR_BUDGET}")));
    }
    Ok(())
}

/// `4^{-(|X|+|Y|)} sum |<O_Y(t) O_X>|^2`.
pub fn two_point_avg(u: &FloquetOperator, t: usize, x: &SubsystemSpec, y: &SubsystemSpec) -> Result<f64> {
    let l = u.l();
    check_l(l)?;
    check_pairs(x, y)?;
    x.validate(l)?;
    y.validate(l)?;
    let n = 1usize << l;
    let xs: Vec<_> = PauliString::all(x).iter().map(|p| p.action(l)).collect();
    let total: f64 = PauliString::all(y)
        .par_iter()
        .map(|py| {
            let q = heisenberg_rows(u, t, py);
            xs.iter()
                .map(|(perm, phase)| {
                    let tr: C64 = (0..n).map(|j| q[j * n + perm[j]] * phase[j]).sum();
                    (tr / n as f64).norm_sqr()
                })
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total / 4f64.powi((x.len() + y.len()) as i32))
}

/// `4^{-(|X|+|Y|)} sum <(O_Y(t) O_X)^2>`.
pub fn otoc_avg(u: &FloquetOperator, t: usize, x: &SubsystemSpec, y: &SubsystemSpec) -> Result<f64> {
    let l = u.l();
    check_l(l)?;
    check_pairs(x, y)?;
    x.validate(l)?;
    y.validate(l)?;
    let n = 1usize << l;
    let xs: Vec<_> = PauliString::all(x).iter().map(|p| p.action(l)).collect();
    let total: f64 = PauliString::all(y)
        .par_iter()
        .map(|py| {
            let q = heisenberg_rows(u, t, py);
            xs.iter()
                .map(|(perm, phase)| {
                    // Tr(Q P Q P) with (P Q P)_{ij} = conj(ph_i) Q_{pi(i) pi(j)} ph_j.
                    let mut s = ZERO;
                    for i in 0..n {
                        let pi = perm[i];
                        let phi = phase[i].conj();
                        for j in 0..n {
                            s += q[j * n + i] * phi * q[pi * n + perm[j]] * phase[j];
                        }
                    }
                    s.re / n as f64
                })
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total / 4f64.powi((x.len() + y.len()) as i32))
}

/// An operator stored on a contiguous window of sites, identity elsewhere.
/// Window position `p` is bit `k-1-p` of the local index.
struct WindowOp {
    l: usize,
    sites: Vec<usize>,
    q: Vec<C64>,
}

impl WindowOp {
    fn single(l: usize, site: usize, p: Pauli) -> Self {
        Self { l, sites: vec![site], q: p.matrix().to_vec() }
    }

    fn pauli(l: usize, p: &PauliString) -> Self {
        let mut q = vec![ONE];
        for letter in &p.letters {
            let m = letter.matrix();
            let d = 1usize << (q.len().ilog2() / 2);
            let nd = 2 * d;
            let mut out = vec![ZERO; nd * nd];
            for i in 0..d {
                for j in 0..d {
                    for a in 0..2 {
                        for b in 0..2 {
                            out[(i << 1 | a) * nd + (j << 1 | b)] = q[i * d + j] * m[a * 2 + b];
                        }
                    }
                }
            }
            q = out;
        }
        Self { l, sites: p.support.sites.clone(), q }
    }

    fn k(&self) -> usize {
        self.sites.len()
    }

    fn pos(&self, s: usize) -> Option<usize> {
        self.sites.iter().position(|&w| w == s)
    }

    /// `O -> O (x) 1` (new least significant site) or `1 (x) O`.
    fn extend(&mut self, site: usize, right: bool) {
        let d = 1usize << self.k();
        let nd = 2 * d;
        let mut out = vec![ZERO; nd * nd];
        for i in 0..d {
            for j in 0..d {
                let v = self.q[i * d + j];
                if v == ZERO {
                    continue;
                }
                for b in 0..2 {
                    let (ni, nj) = if right { (i << 1 | b, j << 1 | b) } else { (b * d + i, b * d + j) };
                    out[ni * nd + nj] = v;
                }
            }
        }
        self.q = out;
        if right {
            self.sites.push(site);
        } else {
            self.sites.insert(0, site);
        }
    }

    fn conjugate(&mut self, g: &kernels::G4, a: usize, b: usize) {
        let (pa, pb) = (self.pos(a), self.pos(b));
        match (pa, pb) {
            (None, None) => return,
            (Some(_), None) => self.extend(b, true),
            (None, Some(_)) => self.extend(a, false),
            _ => {}
        }
        let k = self.k();
        let (pa, pb) = (self.pos(a).unwrap(), self.pos(b).unwrap());
        kernels::conjugate(g, &mut self.q, k, k - 1 - pa, k - 1 - pb);
    }

    /// One layer, backwards (`g^dagger O g`) or forwards (`g O g^dagger`).
    fn layer(&mut self, u: &FloquetOperator, layer: usize, forward: bool) {
        for k in u.layer(layer) {
            let (a, b) = u.bond(k);
            let g = u.gates()[k].g4();
            if forward {
                self.conjugate(&kernels::adjoint4(g), a, b);
            } else {
                self.conjugate(g, a, b);
            }
        }
    }

    fn period(&mut self, u: &FloquetOperator) {
        self.layer(u, 1, false);
        self.layer(u, 0, false);
    }

    /// Partial trace onto `keep`, all of which must lie in the window.
    /// `keep[0]` becomes the most significant bit.
    fn reduce(&self, keep: &[usize]) -> Vec<C64> {
        let k = self.k();
        let kept: Vec<usize> = keep.iter().map(|&s| k - 1 - self.pos(s).expect("site in window")).collect();
        let traced: Vec<usize> = (0..k).rev().filter(|b| !kept.contains(b)).collect();
        let scatter = |bits: &[usize]| -> Vec<usize> {
            (0..1usize << bits.len())
                .map(|v| bits.iter().enumerate().fold(0, |acc, (n, &b)| acc | (((v >> (bits.len() - 1 - n)) & 1) << b)))
                .collect()
        };
        let (sk, st) = (scatter(&kept), scatter(&traced));
        let (d, dm) = (1usize << k, sk.len());
        let mut out = vec![ZERO; dm * dm];
        for &base in &st {
            for (i, &ii) in sk.iter().enumerate() {
                let row = (base | ii) * d + base;
                for (j, &jj) in sk.iter().enumerate() {
                    out[i * dm + j] += self.q[row + jj];
                }
            }
        }
        out
    }

    /// `||Tr_p O||_F^2` over the window.
    fn traced_out_norm(&self, p: usize) -> f64 {
        let k = self.k();
        let d = 1usize << k;
        let m = 1usize << (k - 1 - p);
        let mut s = 0.0;
        for i in (0..d).filter(|i| i & m == 0) {
            for j in (0..d).filter(|j| j & m == 0) {
                s += (self.q[i * d + j] + self.q[(i | m) * d + (j | m)]).norm_sqr();
            }
        }
        s
    }

    /// `||Tr_{window minus p} O||_F^2`.
    fn kept_norm(&self, p: usize) -> f64 {
        let k = self.k();
        let d = 1usize << k;
        let m = 1usize << (k - 1 - p);
        let mut r = [ZERO; 4];
        for i in (0..d).filter(|i| i & m == 0) {
            for a in 0..2 {
                for b in 0..2 {
                    r[a * 2 + b] += self.q[(i | (a * m)) * d + (i | (b * m))];
                }
            }
        }
        r.iter().map(|z| z.norm_sqr()).sum()
    }

    fn norm_sqr(&self) -> f64 {
        self.q.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `2^{-L} ||Tr_x O||^2` and `4^{-L} ||Tr_{xbar} O||^2` on the full ring.
    fn site_norms(&self, x: usize) -> (f64, f64) {
        let (l, k) = (self.l as i32, self.k() as i32);
        match self.pos(x) {
            Some(p) => (self.traced_out_norm(p) * 2f64.powi(-k), self.kept_norm(p) * 4f64.powi(-k)),
            None => (4.0 * self.norm_sqr() * 2f64.powi(l - k - 1 - l), 0.0),
        }
    }
}

/// `Tr(A B) / 2^L` for window operators: only the sites both windows share
/// have to be traced jointly.
fn window_overlap(a: &WindowOp, b: &WindowOp) -> C64 {
    let shared: Vec<usize> = a.sites.iter().copied().filter(|s| b.pos(*s).is_some()).collect();
    let union = a.k() + b.k() - shared.len();
    let (ra, rb) = (a.reduce(&shared), b.reduce(&shared));
    let dm = 1usize << shared.len();
    let mut tr = ZERO;
    for i in 0..dm {
        for j in 0..dm {
            tr += ra[i * dm + j] * rb[j * dm + i];
        }
    }
    tr * 0.5f64.powi(union as i32)
}

/// Same value as `two_point_avg`, without full-ring operators. Writing
/// `U_t = V W` with `W` the first `t` layers, `Tr(U_t^dagger Q U_t P)` equals
/// `Tr(V^dagger Q V W P W^dagger)`, so every Pauli on Y is evolved backwards
/// through `t` layers and every Pauli on X forwards through `t` layers,
/// each inside its own light cone.
pub fn two_point_lightcone(u: &FloquetOperator, t: usize, x: &SubsystemSpec, y: &SubsystemSpec) -> Result<f64> {
    let l = u.l();
    check_pairs(x, y)?;
    x.validate(l)?;
    y.validate(l)?;
    let widest = (x.len().max(y.len()) + 2 * t).min(l);
    if widest > MAX_OPERATOR_L {
        return Err(Error::Budget(format!("light-cone windows of {widest} sites exceed {MAX_OPERATOR_L}")));
    }
    let evolve = |p: &PauliString, forward: bool| {
        let mut w = WindowOp::pauli(l, p);
        if forward {
            (0..t).for_each(|k| w.layer(u, k % 2, true));
        } else {
            (t..2 * t).rev().for_each(|k| w.layer(u, k % 2, false));
        }
        w
    };
    // The identity strings only pair with each other.
    let xs: Vec<WindowOp> = PauliString::all(x)[1..].par_iter().map(|p| evolve(p, true)).collect();
    let ys: Vec<WindowOp> = PauliString::all(y)[1..].par_iter().map(|p| evolve(p, false)).collect();
    let total: f64 = ys
        .par_iter()
        .map(|b| xs.iter().map(|a| window_overlap(b, a).norm_sqr()).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok((1.0 + total) / 4f64.powi((x.len() + y.len()) as i32))
}

/// Single-site correlators `C_{xy}(t)` and `D_{xy}(t)` for one output site
/// `y` and every input site `x`, by Heisenberg evolution restricted to the
/// light cone of `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub t: usize,
    /// `two_point_avg({x}, {y})`, indexed by `x`.
    pub c: Vec<f64>,
    /// `otoc_avg({x}, {y})`, indexed by `x`.
    pub d: Vec<f64>,
}

impl ProbeRow {
    /// `F^{XY} / 4^{L-1}`.
    pub fn f_xy_scaled(&self, x: usize) -> f64 {
        16.0 * self.c[x]
    }

    /// `F^{X Ybar} / 2^L`.
    pub fn f_xybar_scaled(&self, x: usize) -> f64 {
        4.0 * self.d[x]
    }
}

pub fn single_site_probe(u: &FloquetOperator, y: usize, t_max: usize) -> Result<Vec<ProbeRow>> {
    let l = u.l();
    check_l(l)?;
    if y >= l {
        return Err(Error::Invalid(format!("site {y} outside 0..{l}")));
    }
    let mut rows: Vec<ProbeRow> =
        (0..=t_max).map(|t| ProbeRow { t, c: vec![1.0 / 16.0; l], d: vec![4.0 / 16.0; l] }).collect();
    for p in [Pauli::X, Pauli::Y, Pauli::Z] {
        let mut w = WindowOp::single(l, y, p);
        for (t, row) in rows.iter_mut().enumerate() {
            if t > 0 {
                w.period(u);
            }
            for x in 0..l {
                let (traced, kept) = w.site_norms(x);
                row.c[x] += 2.0 * kept / 16.0;
                row.d[x] += 2.0 * traced / 16.0;
            }
        }
    }
    Ok(rows)
}
