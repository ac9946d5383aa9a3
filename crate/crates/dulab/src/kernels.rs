//! Two-qubit gate application on row-major matrices.
//!
//! Gate matrices are 4x4 row-major with index `2*s_a + s_b`. Qubits are
//! addressed by bit position inside the row (or column) index.

use crate::C64;

pub(crate) type G4 = [C64; 16];

pub(crate) fn adjoint4(g: &G4) -> G4 {
    let mut out = [crate::ZERO; 16];
    for i in 0..4 {
        for j in 0..4 {
            out[i * 4 + j] = g[j * 4 + i].conj();
        }
    }
    out
}

/// `M <- (g on bits ba,bb) * M` for a matrix with `ncols` columns.
pub(crate) fn gate_rows(g: &G4, data: &mut [C64], ncols: usize, ba: usize, bb: usize) {
    debug_assert_ne!(ba, bb);
    let nrows = data.len() / ncols;
    let (ma, mb) = (1usize << ba, 1usize << bb);
    for r in 0..nrows {
        if r & (ma | mb) != 0 {
            continue;
        }
        let idx = [r, r | mb, r | ma, r | ma | mb];
        let [r0, r1, r2, r3] = data.get_disjoint_mut(idx.map(|i| i * ncols..(i + 1) * ncols)).expect("distinct rows");
        for c in 0..ncols {
            let x = [r0[c], r1[c], r2[c], r3[c]];
            let y = |k: usize| g[4 * k] * x[0] + g[4 * k + 1] * x[1] + g[4 * k + 2] * x[2] + g[4 * k + 3] * x[3];
            r0[c] = y(0);
            r1[c] = y(1);
            r2[c] = y(2);
            r3[c] = y(3);
        }
    }
}

/// `M <- M * (g on column bits ba,bb)`; `ncols` must be a power of two.
pub(crate) fn gate_cols(g: &G4, data: &mut [C64], ncols: usize, ba: usize, bb: usize) {
    let (ma, mb) = (1usize << ba, 1usize << bb);
    for row in data.chunks_exact_mut(ncols) {
        for c in 0..ncols {
            if c & (ma | mb) != 0 {
                continue;
            }
            let idx = [c, c | mb, c | ma, c | ma | mb];
            let x = idx.map(|i| row[i]);
            for (j, &i) in idx.iter().enumerate() {
                row[i] = x[0] * g[j] + x[1] * g[4 + j] + x[2] * g[8 + j] + x[3] * g[12 + j];
            }
        }
    }
}

/// `Q <- g^dagger Q g` for a square matrix on `nq` qubits.
pub(crate) fn conjugate(g: &G4, q: &mut [C64], nq: usize, ba: usize, bb: usize) {
    let n = 1usize << nq;
    gate_rows(&adjoint4(g), q, n, ba, bb);
    gate_cols(g, q, n, ba, bb);
}

/// Gathers the bits of `idx` at `positions` (first position becomes the
/// most significant bit of the result).
#[inline]
pub(crate) fn gather_bits(idx: usize, positions: &[usize]) -> usize {
    positions.iter().fold(0, |acc, &p| (acc << 1) | ((idx >> p) & 1))
}
