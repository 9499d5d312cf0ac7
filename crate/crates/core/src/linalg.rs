//! Small dense matrix helpers for transition matrices (row-major, `k x k`).

use crate::error::{Error, Result};

const SINGULAR_DET: f64 = 1e-9;

/// LU-style elimination with partial pivoting. Returns the determinant and
/// leaves `a` reduced to upper-triangular form.
fn eliminate(a: &mut [f64], b: Option<&mut [f64]>, k: usize) -> f64 {
    let mut det = 1.0;
    let mut b = b;
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))
            .unwrap();
        if a[pivot * k + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for c in 0..k {
                a.swap(pivot * k + c, col * k + c);
            }
            if let Some(b) = b.as_deref_mut() {
                for c in 0..k {
                    b.swap(pivot * k + c, col * k + c);
                }
            }
            det = -det;
        }
        let d = a[col * k + col];
        det *= d;
        for row in col + 1..k {
            let f = a[row * k + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..k {
                a[row * k + c] -= f * a[col * k + c];
            }
            if let Some(b) = b.as_deref_mut() {
                for c in 0..k {
                    b[row * k + c] -= f * b[col * k + c];
                }
            }
        }
    }
    det
}

pub fn determinant(m: &[f64], k: usize) -> f64 {
    if k == 2 {
        return m[0] * m[3] - m[1] * m[2];
    }
    let mut a = m.to_vec();
    eliminate(&mut a, None, k)
}

pub fn invert(m: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 2 {
        let det = determinant(m, 2);
        if det.abs() <= SINGULAR_DET {
            return Err(Error::SingularMatrix(det.abs()));
        }
        return Ok(vec![m[3] / det, -m[1] / det, -m[2] / det, m[0] / det]);
    }
    let mut a = m.to_vec();
    let mut inv = vec![0.0; k * k];
    for i in 0..k {
        inv[i * k + i] = 1.0;
    }
    let det = eliminate(&mut a, Some(&mut inv), k);
    if det.abs() <= SINGULAR_DET {
        return Err(Error::SingularMatrix(det.abs()));
    }
    // back substitution on each column of the right-hand side
    for row in (0..k).rev() {
        let d = a[row * k + row];
        for c in 0..k {
            let mut v = inv[row * k + c];
            for j in row + 1..k {
                v -= a[row * k + j] * inv[j * k + c];
            }
            inv[row * k + c] = v / d;
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matmul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                out[i * k + j] = (0..k).map(|l| a[i * k + l] * b[l * k + j]).sum();
            }
        }
        out
    }

    #[test]
    fn inverse_of_symmetric_noise() {
        let k = 4;
        let eps = 0.3;
        let m: Vec<f64> = (0..k * k)
            .map(|i| if i / k == i % k { 1.0 - eps } else { eps / 3.0 })
            .collect();
        let inv = invert(&m, k).unwrap();
        let id = matmul(&m, &inv, k);
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[i * k + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn needs_pivoting() {
        let m = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let inv = invert(&m, 3).unwrap();
        assert_eq!(matmul(&m, &inv, 3), vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert!((determinant(&m, 3) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular() {
        assert!(matches!(
            invert(&[0.5, 0.5, 0.5, 0.5], 2),
            Err(Error::SingularMatrix(_))
        ));
        let m = [1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0];
        assert!(invert(&m, 3).is_err());
    }
}
