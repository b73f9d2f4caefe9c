//! Shared oracle helpers for integration tests. These deliberately avoid
//! the library's incremental code paths.

use fedadapt_core::numerics::{Matrix, Rng};

/// Gauss-Jordan inverse with partial pivoting.
pub fn gauss_inverse(m: &Matrix) -> Matrix {
    let n = m.rows();
    assert_eq!(n, m.cols());
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a.get(i, col)
                    .abs()
                    .partial_cmp(&a.get(j, col).abs())
                    .unwrap()
            })
            .unwrap();
        for c in 0..n {
            let t = a.get(col, c);
            a.set(col, c, a.get(pivot, c));
            a.set(pivot, c, t);
            let t = inv.get(col, c);
            inv.set(col, c, inv.get(pivot, c));
            inv.set(pivot, c, t);
        }
        let p = a.get(col, col);
        assert!(p.abs() > 1e-14, "singular matrix in oracle");
        for c in 0..n {
            a.set(col, c, a.get(col, c) / p);
            inv.set(col, c, inv.get(col, c) / p);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a.get(r, col);
            for c in 0..n {
                a.set(r, c, a.get(r, c) - f * a.get(col, c));
                inv.set(r, c, inv.get(r, c) - f * inv.get(col, c));
            }
        }
    }
    inv
}

pub fn random_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.normal()).collect()
}

pub fn random_spd(dim: usize, rng: &mut Rng) -> Matrix {
    let b = Matrix::random_normal(dim, dim, 1.0, rng);
    let mut m = b.matmul(&b.transpose()).unwrap();
    for i in 0..dim {
        m.set(i, i, m.get(i, i) + 0.5);
    }
    m
}
