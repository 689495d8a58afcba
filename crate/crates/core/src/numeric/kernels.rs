//! Slice kernels for the hot loops.
//!
//! Every output element is accumulated in a fixed order (left to right over
//! the reduced index) so results do not depend on blocking. Blocking only
//! interleaves independent accumulators.

/// `y[o] += Σ_k w[o, k] · x[k]` for row-major `w` with `cols` columns.
pub(crate) fn gemv_acc(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.len(), y.len() * cols);
    debug_assert_eq!(x.len(), cols);
    if cols == 0 {
        return;
    }
    let x = &x[..cols];
    let mut blocks = w.chunks_exact(4 * cols);
    let mut outs = y.chunks_exact_mut(4);
    for (block, yb) in (&mut blocks).zip(&mut outs) {
        let (r0, rest) = block.split_at(cols);
        let (r1, rest) = rest.split_at(cols);
        let (r2, r3) = rest.split_at(cols);
        let (mut a0, mut a1, mut a2, mut a3) = (yb[0], yb[1], yb[2], yb[3]);
        for k in 0..cols {
            let xk = x[k];
            a0 += r0[k] * xk;
            a1 += r1[k] * xk;
            a2 += r2[k] * xk;
            a3 += r3[k] * xk;
        }
        yb[0] = a0;
        yb[1] = a1;
        yb[2] = a2;
        yb[3] = a3;
    }
    for (row, yo) in blocks
        .remainder()
        .chunks_exact(cols)
        .zip(outs.into_remainder())
    {
        let mut acc = *yo;
        for (wk, xk) in row.iter().zip(x) {
            acc += wk * xk;
        }
        *yo = acc;
    }
}

/// `gx[k] += Σ_o w[o, k] · d[o]` (transposed product).
pub(crate) fn gemv_t_acc(w: &[f64], cols: usize, d: &[f64], gx: &mut [f64]) {
    debug_assert_eq!(w.len(), d.len() * cols);
    debug_assert_eq!(gx.len(), cols);
    for (row, &dv) in w.chunks_exact(cols.max(1)).zip(d) {
        if dv == 0.0 {
            continue;
        }
        for (g, &wv) in gx.iter_mut().zip(row) {
            *g += wv * dv;
        }
    }
}

/// `g[o, k] += d[o] · x[k]` (outer-product accumulation).
pub(crate) fn outer_acc(g: &mut [f64], cols: usize, d: &[f64], x: &[f64]) {
    debug_assert_eq!(g.len(), d.len() * cols);
    for (row, &dv) in g.chunks_exact_mut(cols.max(1)).zip(d) {
        if dv == 0.0 {
            continue;
        }
        for (gv, &xv) in row.iter_mut().zip(x) {
            *gv += dv * xv;
        }
    }
}
