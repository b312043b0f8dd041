//! Raw row-major kernels shared by the forward and backward rules.

/// `a[m×k] · b[k×p]`.
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let out_row = &mut out[i * p..(i + 1) * p];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m×k] · b[p×k]ᵀ`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * p + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[m×k]ᵀ · b[m×p]`.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * p];
    for i in 0..m {
        let b_row = &b[i * p..(i + 1) * p];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[kk * p..(kk + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Time offset of kernel tap `j` for a centred kernel of size `k`.
#[inline]
pub(crate) fn tap_offset(j: usize, k: usize, dilation: usize) -> isize {
    (j as isize - (k / 2) as isize) * dilation as isize
}

/// "Same"-padded dilated convolution of `x[t×cin]` with `kernel[k×cin×cout]`.
///
/// `out[t, o] = Σ_j Σ_i x[t + (j − k/2)·d, i] · kernel[j, i, o]`, with
/// out-of-range samples treated as zero.
pub fn conv1d_forward(
    x: &[f64],
    kernel: &[f64],
    t: usize,
    cin: usize,
    cout: usize,
    k: usize,
    dilation: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; t * cout];
    for j in 0..k {
        let off = tap_offset(j, k, dilation);
        let w = &kernel[j * cin * cout..(j + 1) * cin * cout];
        for step in 0..t {
            let src = step as isize + off;
            if src < 0 || src >= t as isize {
                continue;
            }
            let src = src as usize;
            let x_row = &x[src * cin..(src + 1) * cin];
            let out_row = &mut out[step * cout..(step + 1) * cout];
            for (i, &xv) in x_row.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (o, &wv) in out_row.iter_mut().zip(&w[i * cout..(i + 1) * cout]) {
                    *o += xv * wv;
                }
            }
        }
    }
    out
}
