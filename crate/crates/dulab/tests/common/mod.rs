#![allow(dead_code)]

use dulab::circuits::{build_floquet, FloquetOperator, TwoQubitGate};
use dulab::seed::sample_rng;
use dulab::C64;
use faer::Mat;

pub fn circuit(j: f64, l: usize, seed: u64) -> FloquetOperator {
    build_floquet(j, l, &mut sample_rng(seed, 0)).expect("circuit builds")
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn max_diff(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    let mut w: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            w = w.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    w
}

/// Matrix exponential by scaling and squaring with a long Taylor series.
pub fn expm(a: &Mat<C64>) -> Mat<C64> {
    let n = a.nrows();
    let norm = (0..n).map(|i| (0..n).map(|j| a[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max);
    let s = (norm.max(1e-300).log2().ceil() as i32 + 4).max(0);
    let scaled = Mat::from_fn(n, n, |i, j| a[(i, j)] / 2f64.powi(s));
    let mut term = Mat::<C64>::identity(n, n);
    let mut sum = Mat::<C64>::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled;
        term = Mat::from_fn(n, n, |i, j| term[(i, j)] / k as f64);
        sum = &sum + &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

pub fn gate_mat(g: &TwoQubitGate) -> Mat<C64> {
    Mat::from_fn(4, 4, |r, c| g.get(r, c))
}

/// `g` acting on sites `(a, b)` of an `l`-site ring, site 0 the most
/// significant bit, built entry by entry.
pub fn embed(l: usize, g: &TwoQubitGate, a: usize, b: usize) -> Mat<C64> {
    let n = 1usize << l;
    let bit = |s: usize| l - 1 - s;
    let mask = (1usize << bit(a)) | (1usize << bit(b));
    Mat::from_fn(n, n, |r, c| {
        if r & !mask != c & !mask {
            return C64::new(0.0, 0.0);
        }
        let pick = |x: usize| 2 * ((x >> bit(a)) & 1) + ((x >> bit(b)) & 1);
        g.get(pick(r), pick(c))
    })
}

/// Floquet operator from first principles: product of embedded gates.
pub fn floquet_dense(u: &FloquetOperator) -> Mat<C64> {
    let l = u.l();
    let n = 1usize << l;
    let mut m = Mat::<C64>::identity(n, n);
    for layer in [0, 1] {
        for k in u.layer(layer) {
            let (a, b) = u.bond(k);
            m = &embed(l, &u.gates()[k], a, b) * &m;
        }
    }
    m
}

pub fn mat_pow(m: &Mat<C64>, t: usize) -> Mat<C64> {
    let mut p = Mat::<C64>::identity(m.nrows(), m.ncols());
    for _ in 0..t {
        p = m * &p;
    }
    p
}

pub fn rows_of(m: &Mat<C64>) -> Vec<C64> {
    let mut v = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

pub fn identity_circuit(l: usize) -> FloquetOperator {
    FloquetOperator::from_gates(l, vec![TwoQubitGate::identity(); l]).expect("valid ring")
}

pub fn eigenvalues(m: &Mat<C64>) -> Vec<C64> {
    let eig = m.eigen().expect("eigensolver");
    let s = eig.S();
    (0..m.nrows()).map(|k| s[k]).collect()
}
