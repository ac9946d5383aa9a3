//! Operator-to-state mapping and Rényi-2 operator entanglement.
//!
//! The doubled state of `U_t` lives on `2L` qubits. Output site `k` is
//! doubled bit `2L-1-k` and input site `k` is doubled bit `L-1-k`, so the
//! amplitude index is `out * 2^L + in`.

use std::f64::consts::LN_2;

use faer::Mat;

use crate::circuits::FloquetOperator;
use crate::geometry::{Layer, SubsystemSpec};
use crate::{Error, Result, C64, ZERO};

#[derive(Clone, Debug)]
pub struct DoubledState {
    l: usize,
    t: usize,
    amps: Vec<C64>,
}

impl DoubledState {
    pub fn new(u: &FloquetOperator, t: usize) -> Result<Self> {
        Ok(Self::from_unitary_rows(u.l(), t, u.power_rows(t)?))
    }

    /// Takes the row-major matrix of `U_t` and rescales it in place.
    pub fn from_unitary_rows(l: usize, t: usize, mut rows: Vec<C64>) -> Self {
        assert_eq!(rows.len(), 1usize << (2 * l), "need a 2^L x 2^L matrix");
        let s = (0.5f64).powi(l as i32).sqrt();
        rows.iter_mut().for_each(|a| *a *= s);
        Self { l, t, amps: rows }
    }

    /// `U_t -> U_{t+1}` in place.
    pub fn advance(&mut self, u: &FloquetOperator) -> Result<()> {
        if u.l() != self.l {
            return Err(Error::Invalid(format!("operator has L={}, state has L={}", u.l(), self.l)));
        }
        u.apply_rows(&mut self.amps, 1usize << self.l);
        self.t += 1;
        Ok(())
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn doubled_bits(&self, parts: &[&SubsystemSpec]) -> Result<Vec<usize>> {
        let l = self.l;
        let mut bits = Vec::new();
        for p in parts {
            p.validate(l)?;
            for &s in &p.sites {
                bits.push(match p.layer {
                    Layer::Output => 2 * l - 1 - s,
                    Layer::Input => l - 1 - s,
                });
            }
        }
        bits.sort_unstable_by(|a, b| b.cmp(a));
        if bits.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid("subsystem selects a doubled site twice".into()));
        }
        Ok(bits)
    }

    /// `Tr rho_A^2` for `A` the union of `parts`.
    pub fn purity(&self, parts: &[&SubsystemSpec]) -> Result<f64> {
        let bits = self.doubled_bits(parts)?;
        Ok(purity_of_bits(&self.amps, 2 * self.l, &bits))
    }

    pub fn renyi2(&self, parts: &[&SubsystemSpec]) -> Result<f64> {
        Ok(-self.purity(parts)?.ln())
    }

    /// `I_2^{XY}` with the single-layer entropies fixed at their unitarity
    /// values `|X| ln 2` and `|Y| ln 2`.
    pub fn opmi(&self, x: &SubsystemSpec, y: &SubsystemSpec) -> Result<f64> {
        if x.layer == y.layer {
            return Err(Error::Invalid("X and Y must sit on opposite layers".into()));
        }
        let s_xy = self.renyi2(&[x, y])?;
        Ok((x.len() + y.len()) as f64 * LN_2 - s_xy)
    }

    /// `F^{XY}(t) = 2^{2L-|X|-|Y|} exp(I_2^{XY})`; pass the complement of Y
    /// for `F^{X Ybar}`.
    pub fn f_from_purity(&self, x: &SubsystemSpec, y: &SubsystemSpec) -> Result<f64> {
        let e = (2 * self.l) as i32 - (x.len() + y.len()) as i32;
        Ok(2f64.powi(e) * self.opmi(x, y)?.exp())
    }
}

/// Purity of the reduced state on `bits` (descending) of a pure state over
/// `n` qubits. Works on whichever side of the cut is smaller.
pub(crate) fn purity_of_bits(amps: &[C64], n: usize, bits: &[usize]) -> f64 {
    let comp: Vec<usize> = (0..n).rev().filter(|b| !bits.contains(b)).collect();
    let side: &[usize] = if bits.len() <= comp.len() { bits } else { &comp };
    let other: Vec<usize> = (0..n).rev().filter(|b| !side.contains(b)).collect();
    let a = side.len();
    if a == 0 {
        return amps.iter().map(|x| x.norm_sqr()).sum::<f64>().powi(2);
    }
    let rows = 1usize << a;
    let cols = 1usize << other.len();
    // Scatter tables on the two halves of the index keep the gather cheap.
    let half = n / 2;
    let hi_mask = (1usize << (n - half)) - 1;
    let table = |shift: usize, width: usize, target: &[usize]| -> Vec<usize> {
        (0..1usize << width)
            .map(|v| {
                let idx = v << shift;
                target.iter().enumerate().fold(0, |acc, (k, &b)| acc | (((idx >> b) & 1) << (target.len() - 1 - k)))
            })
            .collect()
    };
    let (r_hi, r_lo) = (table(half, n - half, side), table(0, half, side));
    let (c_hi, c_lo) = (table(half, n - half, &other), table(0, half, &other));
    let lo_mask = (1usize << half) - 1;
    if a <= 2 {
        let mut rho = [[ZERO; 4]; 4];
        let mut buf = vec![[ZERO; 4]; cols];
        for (idx, &x) in amps.iter().enumerate() {
            let (h, lo) = ((idx >> half) & hi_mask, idx & lo_mask);
            buf[c_hi[h] | c_lo[lo]][r_hi[h] | r_lo[lo]] = x;
        }
        for v in &buf {
            for i in 0..rows {
                for j in 0..rows {
                    rho[i][j] += v[i] * v[j].conj();
                }
            }
        }
        return rho.iter().flatten().map(|z| z.norm_sqr()).sum();
    }
    let mut m = Mat::<C64>::zeros(rows, cols);
    for (idx, &x) in amps.iter().enumerate() {
        let (h, lo) = ((idx >> half) & hi_mask, idx & lo_mask);
        m[(r_hi[h] | r_lo[lo], c_hi[h] | c_lo[lo])] = x;
    }
    let rho = &m * m.adjoint();
    let mut s = 0.0;
    for j in 0..rows {
        for i in 0..rows {
            s += rho[(i, j)].norm_sqr();
        }
    }
    s
}

/// `exp(I_2^{X Ybar}(U_t))` divided by its `t = 0` value `4^{|X|}`, in log
/// form. Equals the same-spec difference whenever X and Y do not overlap.
pub fn delta_opmi_xybar(u: &FloquetOperator, t: usize, x: &SubsystemSpec, y: &SubsystemSpec) -> Result<f64> {
    let s = DoubledState::new(u, t)?;
    let ybar = y.complement(u.l());
    Ok(s.opmi(x, &ybar)? - 2.0 * x.len() as f64 * LN_2)
}

/// `I_2^{X Ybar}(U_t) - I_2^{X Ybar}(U_0)` with identical specs.
pub fn delta_opmi_same_spec(u: &FloquetOperator, t: usize, x: &SubsystemSpec, y: &SubsystemSpec) -> Result<f64> {
    let ybar = y.complement(u.l());
    let now = DoubledState::new(u, t)?.opmi(x, &ybar)?;
    let then = DoubledState::new(u, 0)?.opmi(x, &ybar)?;
    Ok(now - then)
}
