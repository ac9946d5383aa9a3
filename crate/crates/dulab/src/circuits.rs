//! Dual-unitary two-qubit gates and the brickwork Floquet operator.

use faer::Mat;
use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::kernels::{self, G4};
use crate::{Error, Result, C64, ONE, ZERO};

/// Largest L for which dense `2^L x 2^L` matrices are formed.
pub const MAX_DENSE_L: usize = 13;

pub type Mat2 = [C64; 4];

pub const IDENTITY2: Mat2 = [ONE, ZERO, ZERO, ONE];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuGateParams {
    pub j: f64,
    pub phi: f64,
    pub u_plus: Mat2,
    pub u_minus: Mat2,
    pub v_plus: Mat2,
    pub v_minus: Mat2,
}

impl DuGateParams {
    pub fn undressed(j: f64) -> Self {
        Self { j, phi: 0.0, u_plus: IDENTITY2, u_minus: IDENTITY2, v_plus: IDENTITY2, v_minus: IDENTITY2 }
    }
}

/// 4x4 gate, row = `2*out_a + out_b`, column = `2*in_a + in_b`, where `a`
/// is the left site of the bond.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoQubitGate {
    pub m: [C64; 16],
}

impl TwoQubitGate {
    pub fn identity() -> Self {
        let mut m = [ZERO; 16];
        for i in 0..4 {
            m[i * 5] = ONE;
        }
        Self { m }
    }

    pub fn swap() -> Self {
        let mut m = [ZERO; 16];
        for (r, c) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
            m[r * 4 + c] = ONE;
        }
        Self { m }
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.m[r * 4 + c]
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut m = [ZERO; 16];
        for i in 0..4 {
            for j in 0..4 {
                m[i * 4 + j] = (0..4).map(|k| self.m[i * 4 + k] * other.m[k * 4 + j]).sum();
            }
        }
        Self { m }
    }

    pub fn adjoint(&self) -> Self {
        Self { m: kernels::adjoint4(&self.m) }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { m: self.m.map(|x| x * s) }
    }

    pub fn kron(a: &Mat2, b: &Mat2) -> Self {
        let mut m = [ZERO; 16];
        for (r, c) in (0..4).flat_map(|r| (0..4).map(move |c| (r, c))) {
            m[r * 4 + c] = a[(r >> 1) * 2 + (c >> 1)] * b[(r & 1) * 2 + (c & 1)];
        }
        Self { m }
    }

    pub(crate) fn g4(&self) -> &G4 {
        &self.m
    }
}

/// The undressed gate `exp(-i[(pi/4)(XX+YY) + J ZZ])`.
///
/// It is diagonal on `|00>, |11>` with phase `e^{-iJ}` and maps the one-
/// excitation block by `-i e^{iJ}` times a swap. `J` multiplies ZZ directly,
/// which is the normalisation under which `Lambda = (2 - cos 4J)/3`.
#[allow(clippy::identity_op)]
pub fn build_core_gate(j: f64) -> TwoQubitGate {
    let diag = C64::from_polar(1.0, -j);
    let off = C64::new(0.0, -1.0) * C64::from_polar(1.0, j);
    let mut m = [ZERO; 16];
    m[0] = diag;
    m[15] = diag;
    m[1 * 4 + 2] = off;
    m[2 * 4 + 1] = off;
    TwoQubitGate { m }
}

fn mat2_defect(u: &Mat2) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let s: C64 = (0..2).map(|k| u[i * 2 + k] * u[j * 2 + k].conj()).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s - target).norm());
        }
    }
    worst
}

/// `e^{i phi} (u+ (x) u-) U[J] (v+ (x) v-)`.
pub fn compose_gate(p: &DuGateParams) -> Result<TwoQubitGate> {
    if !p.j.is_finite() || !p.phi.is_finite() {
        return Err(Error::Invalid("J and phi must be finite".into()));
    }
    for (name, u) in [("u_plus", &p.u_plus), ("u_minus", &p.u_minus), ("v_plus", &p.v_plus), ("v_minus", &p.v_minus)] {
        let d = mat2_defect(u);
        if d > 1e-10 {
            return Err(Error::Invalid(format!("{name} is not unitary (defect {d:.3e})")));
        }
    }
    let outer = TwoQubitGate::kron(&p.u_plus, &p.u_minus);
    let inner = TwoQubitGate::kron(&p.v_plus, &p.v_minus);
    Ok(outer.mul(&build_core_gate(p.j)).mul(&inner).scale(C64::from_polar(1.0, p.phi)))
}

/// Space-time reshuffle: `w~[(i j),(k l)] = w[(i k),(j l)]`.
pub fn dual_transpose(g: &TwoQubitGate) -> TwoQubitGate {
    let mut m = [ZERO; 16];
    for idx in 0..16usize {
        let (i, j, k, l) = (idx >> 3 & 1, idx >> 2 & 1, idx >> 1 & 1, idx & 1);
        m[(i * 2 + j) * 4 + (k * 2 + l)] = g.m[(i * 2 + k) * 4 + (j * 2 + l)];
    }
    TwoQubitGate { m }
}

/// Max-norm of `g g^dagger - 1`.
pub fn check_unitarity(g: &TwoQubitGate) -> f64 {
    let p = g.mul(&g.adjoint());
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((p.get(i, j) - target).norm());
        }
    }
    worst
}

pub fn check_dual_unitarity(g: &TwoQubitGate) -> f64 {
    check_unitarity(&dual_transpose(g))
}

/// Haar-random 2x2 unitary: Gram-Schmidt on a complex Ginibre matrix, which
/// leaves R with a positive diagonal.
pub fn haar_u2<R: Rng + ?Sized>(rng: &mut R) -> Mat2 {
    let mut draw = || {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    };
    let (a, c, b, d) = (draw(), draw(), draw(), draw());
    let n1 = (a.norm_sqr() + c.norm_sqr()).sqrt();
    let (q00, q10) = (a / n1, c / n1);
    let ov = q00.conj() * b + q10.conj() * d;
    let (b2, d2) = (b - ov * q00, d - ov * q10);
    let n2 = (b2.norm_sqr() + d2.norm_sqr()).sqrt();
    [q00, b2 / n2, q10, d2 / n2]
}

pub fn sample_du_gate<R: Rng + ?Sized>(j: f64, rng: &mut R) -> DuGateParams {
    let u_plus = haar_u2(rng);
    let u_minus = haar_u2(rng);
    let v_plus = haar_u2(rng);
    let v_minus = haar_u2(rng);
    let phi = rng.random::<f64>() * 2.0 * PI;
    DuGateParams { j, phi, u_plus, u_minus, v_plus, v_minus }
}

/// Brickwork Floquet operator on a ring of `L` qubits.
///
/// `gates[k]` for `k < L/2` sits on bond `(2k, 2k+1)` (layer 1); the rest sit
/// on `(2k'+1, 2k'+2 mod L)` with `k' = k - L/2` (layer 2).
#[derive(Clone, Debug)]
pub struct FloquetOperator {
    l: usize,
    gates: Vec<TwoQubitGate>,
}

impl FloquetOperator {
    pub fn from_gates(l: usize, gates: Vec<TwoQubitGate>) -> Result<Self> {
        if l < 4 || l % 2 != 0 {
            return Err(Error::Config(format!("L must be even and >= 4, got {l}")));
        }
        if gates.len() != l {
            return Err(Error::Config(format!("expected {l} gates, got {}", gates.len())));
        }
        Ok(Self { l, gates })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn gates(&self) -> &[TwoQubitGate] {
        &self.gates
    }

    /// Sites `(a, b)` of gate `k`, `a` being the left leg.
    pub fn bond(&self, k: usize) -> (usize, usize) {
        let h = self.l / 2;
        if k < h {
            (2 * k, 2 * k + 1)
        } else {
            let s = 2 * (k - h) + 1;
            (s, (s + 1) % self.l)
        }
    }

    /// Gate indices of layer 0 (applied first) or layer 1.
    pub fn layer(&self, which: usize) -> std::ops::Range<usize> {
        let h = self.l / 2;
        if which == 0 {
            0..h
        } else {
            h..self.l
        }
    }

    pub(crate) fn bit(&self, site: usize) -> usize {
        self.l - 1 - site
    }

    /// `M <- U_F M` for a row-major `2^L x ncols` matrix.
    pub fn apply_rows(&self, data: &mut [C64], ncols: usize) {
        for k in 0..self.l {
            let (a, b) = self.bond(k);
            kernels::gate_rows(self.gates[k].g4(), data, ncols, self.bit(a), self.bit(b));
        }
    }

    fn check_dense(&self) -> Result<()> {
        if self.l > MAX_DENSE_L {
            return Err(Error::Budget(format!(
                "dense 2^{} x 2^{} matrix exceeds the L <= {MAX_DENSE_L} budget",
                self.l, self.l
            )));
        }
        Ok(())
    }

    /// Row-major `U_F^t`.
    pub fn power_rows(&self, t: usize) -> Result<Vec<C64>> {
        self.check_dense()?;
        let n = 1usize << self.l;
        let mut m = vec![ZERO; n * n];
        for i in 0..n {
            m[i * n + i] = ONE;
        }
        for _ in 0..t {
            self.apply_rows(&mut m, n);
        }
        Ok(m)
    }

    pub fn matrix(&self) -> Result<Mat<C64>> {
        let n = 1usize << self.l;
        let rows = self.power_rows(1)?;
        Ok(Mat::from_fn(n, n, |i, j| rows[i * n + j]))
    }

    pub fn gate_defects(&self) -> Vec<(f64, f64)> {
        self.gates.iter().map(|g| (check_unitarity(g), check_dual_unitarity(g))).collect()
    }
}

/// Max-norm of `U U^dagger - 1` for a dense matrix.
pub fn matrix_unitarity_defect(u: &Mat<C64>) -> f64 {
    let p = u * u.adjoint();
    let mut worst: f64 = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((p[(i, j)] - target).norm());
        }
    }
    worst
}

/// One independently sampled dual-unitary gate per bond.
pub fn build_floquet<R: Rng + ?Sized>(j: f64, l: usize, rng: &mut R) -> Result<FloquetOperator> {
    if l < 4 || l % 2 != 0 {
        return Err(Error::Config(format!("L must be even and >= 4, got {l}")));
    }
    let gates = (0..l).map(|_| compose_gate(&sample_du_gate(j, rng))).collect::<Result<Vec<_>>>()?;
    FloquetOperator::from_gates(l, gates)
}
