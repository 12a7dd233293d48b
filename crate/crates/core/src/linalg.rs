//! Exact Gaussian elimination over the rationals.

use num_rational::BigRational;
use num_traits::{One, Zero};

/// Reduced row echelon form of `rows` (each of length `ncols`) together with
/// the pivot column of each nonzero row.
pub fn rref(mut rows: Vec<Vec<BigRational>>, ncols: usize) -> (Vec<Vec<BigRational>>, Vec<usize>) {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        let Some(p) = (r..rows.len()).find(|&i| !rows[i][c].is_zero()) else {
            continue;
        };
        rows.swap(r, p);
        let inv = rows[r][c].recip();
        for v in rows[r].iter_mut() {
            *v *= &inv;
        }
        let pivot_row = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let factor = row[c].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                if !pv.is_zero() {
                    *v -= &factor * pv;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    rows.truncate(r);
    (rows, pivots)
}

/// Basis of `{v : M v = 0}`, one vector per free column.
pub fn nullspace(rows: Vec<Vec<BigRational>>, ncols: usize) -> (usize, Vec<Vec<BigRational>>) {
    let (reduced, pivots) = rref(rows, ncols);
    let rank = pivots.len();
    let free: Vec<usize> = (0..ncols).filter(|c| !pivots.contains(c)).collect();
    let basis = free
        .iter()
        .map(|&f| {
            let mut v = vec![BigRational::zero(); ncols];
            v[f] = BigRational::one();
            for (row, &p) in reduced.iter().zip(&pivots) {
                v[p] = -row[f].clone();
            }
            v
        })
        .collect();
    (rank, basis)
}

pub fn determinant(m: &[Vec<BigRational>]) -> BigRational {
    let n = m.len();
    let mut a: Vec<Vec<BigRational>> = m.to_vec();
    let mut det = BigRational::one();
    for c in 0..n {
        let Some(p) = (c..n).find(|&i| !a[i][c].is_zero()) else {
            return BigRational::zero();
        };
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= &a[c][c];
        let inv = a[c][c].recip();
        for i in c + 1..n {
            if a[i][c].is_zero() {
                continue;
            }
            let factor = &a[i][c] * &inv;
            for k in c..n {
                let t = &factor * &a[c][k];
                a[i][k] -= t;
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64) -> BigRational {
        BigRational::from_integer(n.into())
    }

    #[test]
    fn nullspace_of_rank_deficient_matrix() {
        let rows = vec![vec![r(1), r(2), r(3)], vec![r(2), r(4), r(6)], vec![r(1), r(0), r(1)]];
        let (rank, basis) = nullspace(rows.clone(), 3);
        assert_eq!(rank, 2);
        assert_eq!(basis.len(), 1);
        for row in &rows {
            let dot: BigRational = row.iter().zip(&basis[0]).map(|(a, b)| a * b).sum();
            assert!(dot.is_zero());
        }
    }

    #[test]
    fn determinants() {
        assert_eq!(determinant(&[vec![r(1), r(2)], vec![r(2), r(1)]]), r(-3));
        assert_eq!(determinant(&[vec![r(0), r(1)], vec![r(1), r(0)]]), r(-1));
        assert_eq!(determinant(&[vec![r(1), r(2)], vec![r(2), r(4)]]), r(0));
        let m = vec![vec![r(1), r(2), r(4)], vec![r(2), r(3), r(2)], vec![r(4), r(2), r(1)]];
        assert_eq!(determinant(&m), r(-21));
    }
}
