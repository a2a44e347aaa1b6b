//! Matrix exponential by scaling and squaring with diagonal Padé approximants.
//!
//! Degree selection and the θ thresholds follow Higham (2005), "The Scaling and
//! Squaring Method for the Matrix Exponential Revisited". The thresholds bound
//! the backward error by the unit roundoff of f64.

use nalgebra::DMatrix;

const THETA: [(usize, f64); 5] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
    (13, 5.371_920_351_148_152),
];

/// Coefficients of the numerator of the [m/m] Padé approximant of `exp`.
fn pade_coefficients(m: usize) -> Vec<f64> {
    // b_k = (2m-k)! m! / ((2m)! k! (m-k)!), built by the ratio b_{k+1}/b_k.
    let mut b = Vec::with_capacity(m + 1);
    let mut c = 1.0;
    b.push(c);
    for k in 0..m {
        c *= (m - k) as f64 / (((2 * m - k) * (k + 1)) as f64);
        b.push(c);
    }
    b
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade(a: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let b = pade_coefficients(m);
    let a2 = a * a;
    // even powers I, A^2, A^4, ... up to A^{m-1}
    let mut evens = vec![DMatrix::<f64>::identity(n, n), a2.clone()];
    while 2 * evens.len() <= m {
        let next = evens.last().unwrap() * &a2;
        evens.push(next);
    }
    let mut u_inner = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    for (i, p) in evens.iter().enumerate() {
        let even = 2 * i;
        let odd = 2 * i + 1;
        if even <= m {
            v += p * b[even];
        }
        if odd <= m {
            u_inner += p * b[odd];
        }
    }
    let u = a * u_inner;
    let num = &v + &u;
    let den = v - u;
    den.lu()
        .solve(&num)
        .expect("Padé denominator is nonsingular for scaled arguments")
}

/// Computes `exp(a)` for a square matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm requires a square matrix");
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = one_norm(a);
    if norm == 0.0 {
        return DMatrix::identity(n, n);
    }
    for &(m, theta) in &THETA[..4] {
        if norm <= theta {
            return pade(a, m);
        }
    }
    let theta13 = THETA[4].1;
    let s = if norm > theta13 {
        (norm / theta13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-s);
    let mut r = pade(&scaled, 13);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}
