//! Tiny dense solves used by the projection and Newton routines.

use crate::real::Real;

/// Solves the `k x k` system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` for a (numerically) singular matrix.
pub(crate) fn solve_small<T: Real, const K: usize>(mut a: [[T; K]; K], mut b: [T; K]) -> Option<[T; K]> {
    for col in 0..K {
        let pivot = (col..K).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() <= T::min_positive_value() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..K {
            let f = a[row][col] / a[col][col];
            for c in col..K {
                let v = a[col][c];
                a[row][c] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = [T::zero(); K];
    for row in (0..K).rev() {
        let mut s = b[row];
        for c in row + 1..K {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_pivoted_system() {
        let a = [[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];
        let x = solve_small::<f64, 3>(a, [7.0, 3.0, 6.0]).unwrap();
        for (xi, ei) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((xi - ei).abs() < 1e-12);
        }
        assert!(solve_small([[1.0, 2.0], [2.0, 4.0]], [1.0, 2.0]).is_none());
    }
}
