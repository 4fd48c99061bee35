//! Raw f64 matrix kernels shared by the taped and eager forward paths.
//!
//! All matrices are row-major. Loops are arranged so the inner loop runs over
//! contiguous rows, which autovectorizes well; that is all the performance
//! this crate needs at desk scale.

/// c = a @ b, a: [m,k], b: [k,n], c: [m,n] (c must be zeroed by the caller).
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == 0.0 {
                continue;
            }
            let b_row = &b[l * n..(l + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_il * bv;
            }
        }
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// c = a @ b^T, a: [m,k], b: [n,k], c: [m,n].
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cv = acc;
        }
    }
    c
}

/// c += a^T @ g, a: [m,k], g: [m,n], c: [k,n].
pub fn matmul_tn_acc(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == 0.0 {
                continue;
            }
            let c_row = &mut c[l * n..(l + 1) * n];
            for (cv, &gv) in c_row.iter_mut().zip(g_row) {
                *cv += a_il * gv;
            }
        }
    }
}

/// Column sums of a [m,n] matrix.
pub fn col_sums(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in 0..m {
        let row = &a[i * n..(i + 1) * n];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projects each row of `v` (width `d`) onto the radius-sqrt(d) hypersphere.
///
/// Rows with norm below 1e-12 are perturbed by adding 1e-8 to their first
/// coordinate before normalizing; randomly initialized encoders can emit
/// near-zero rows on step 0 and the projection must stay defined.
pub fn sphere_rows_inplace(v: &mut [f64], d: usize) {
    debug_assert_eq!(v.len() % d, 0);
    let radius = (d as f64).sqrt();
    for row in v.chunks_mut(d) {
        let mut norm_sq: f64 = row.iter().map(|x| x * x).sum();
        if norm_sq.sqrt() < 1e-12 {
            row[0] += 1e-8;
            norm_sq = row.iter().map(|x| x * x).sum();
        }
        let scale = radius / norm_sq.sqrt();
        for x in row.iter_mut() {
            *x *= scale;
        }
    }
}
