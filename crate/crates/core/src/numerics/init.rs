use super::{RngState, Tensor};

pub fn init_zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape.to_vec())
}

/// Independent draws from `N(mean, std²)`.
pub fn init_normal(shape: &[usize], mean: f64, std: f64, rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| mean + std * rng.normal()).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Orthogonal `rows x cols` matrix from the QR factorisation of a
/// standard-normal matrix. For `rows >= cols` the columns are orthonormal,
/// otherwise the rows are.
///
/// Gram-Schmidt yields an `R` factor with positive diagonal, which is the
/// sign-corrected `Q`. Each column is orthogonalised twice to hold the
/// orthonormality error near machine precision.
pub fn init_orthogonal(rows: usize, cols: usize, rng: &mut RngState) -> Tensor {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // column-major tall x short
    let mut cols_v: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| rng.normal()).collect())
        .collect();
    for j in 0..short {
        for _ in 0..2 {
            for i in 0..j {
                let proj: f64 = cols_v[i].iter().zip(&cols_v[j]).map(|(a, b)| a * b).sum();
                let (done, rest) = cols_v.split_at_mut(j);
                for (x, q) in rest[0].iter_mut().zip(&done[i]) {
                    *x -= proj * q;
                }
            }
        }
        let norm = cols_v[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        cols_v[j].iter_mut().for_each(|x| *x /= norm);
    }
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[r * cols + c] = if rows >= cols {
                cols_v[c][r]
            } else {
                cols_v[r][c]
            };
        }
    }
    Tensor::new([rows, cols], data).expect("shape product matches")
}
