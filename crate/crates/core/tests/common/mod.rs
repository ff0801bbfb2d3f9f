//! Shared helpers for integration tests.

/// Solves the least-squares problem min ‖X·W − Y‖² through the normal
/// equations (XᵀX)W = XᵀY with Gaussian elimination and partial pivoting.
/// `x` is n×d row-major, `y` is n×k row-major; returns W as d×k.
pub fn least_squares(x: &[f64], n: usize, d: usize, y: &[f64], k: usize) -> Vec<f64> {
    let mut xtx = vec![0.0; d * d];
    for row in 0..n {
        let xr = &x[row * d..(row + 1) * d];
        for i in 0..d {
            for j in 0..d {
                xtx[i * d + j] += xr[i] * xr[j];
            }
        }
    }
    let mut xty = vec![0.0; d * k];
    for row in 0..n {
        let xr = &x[row * d..(row + 1) * d];
        let yr = &y[row * k..(row + 1) * k];
        for i in 0..d {
            for j in 0..k {
                xty[i * k + j] += xr[i] * yr[j];
            }
        }
    }
    // Mild ridge keeps the pivot nonsingular without moving the solution
    // meaningfully.
    for i in 0..d {
        xtx[i * d + i] += 1e-9;
    }

    // Forward elimination with partial pivoting on the augmented system.
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&a, &b| {
                xtx[a * d + col]
                    .abs()
                    .partial_cmp(&xtx[b * d + col].abs())
                    .unwrap()
            })
            .unwrap();
        if pivot != col {
            for j in 0..d {
                xtx.swap(col * d + j, pivot * d + j);
            }
            for j in 0..k {
                xty.swap(col * k + j, pivot * k + j);
            }
        }
        let diag = xtx[col * d + col];
        for row in col + 1..d {
            let factor = xtx[row * d + col] / diag;
            for j in col..d {
                xtx[row * d + j] -= factor * xtx[col * d + j];
            }
            for j in 0..k {
                xty[row * k + j] -= factor * xty[col * k + j];
            }
        }
    }
    // Back substitution.
    let mut w = vec![0.0; d * k];
    for col in (0..d).rev() {
        for j in 0..k {
            let mut acc = xty[col * k + j];
            for beyond in col + 1..d {
                acc -= xtx[col * d + beyond] * w[beyond * k + j];
            }
            w[col * k + j] = acc / xtx[col * d + col];
        }
    }
    w
}
