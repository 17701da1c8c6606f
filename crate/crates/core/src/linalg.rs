//! Direct solver for banded linear systems with one dense bottom row.
//!
//! The global-balance system `pi Q = 0` is solved as `A x = e_{n-1}` where
//! `A = Q^T` with the last balance equation replaced by the normalization
//! row of ones. With states ordered level by level, `Q^T` is banded, so `A`
//! is banded except for that single dense row. Elimination runs without
//! pivoting: the leading block is (weakly column-) diagonally dominant, the
//! structure Markov generators always have, so pivots cannot degenerate
//! unless the chain is disconnected.

use crate::error::{Error, Result};

/// LU factorization of a banded matrix bordered by one dense last row.
#[derive(Debug, Clone)]
pub(crate) struct BorderedBandLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Band storage, column-major: `(i, j)` lives at `j * (kl+ku+1) + ku + i - j`
    /// for `j - ku <= i <= j + kl`, rows `0..n-1` only.
    band: Vec<f64>,
    /// Dense bottom row; after factoring, columns `0..n-1` hold multipliers
    /// and column `n-1` holds the final pivot.
    last: Vec<f64>,
}

impl BorderedBandLu {
    /// Factors the matrix given by `entries` (triplets `(i, j, value)` for
    /// rows `0..n-1`, within the band) and the dense `last_row`.
    ///
    /// Returns [`Error::SingularSystem`] when a pivot collapses.
    pub(crate) fn factor(
        n: usize,
        kl: usize,
        ku: usize,
        entries: &[(usize, usize, f64)],
        last_row: &[f64],
    ) -> Result<BorderedBandLu> {
        assert!(n >= 2, "system must have at least two unknowns");
        assert_eq!(last_row.len(), n);
        let ld = kl + ku + 1;
        let mut lu = BorderedBandLu {
            n,
            kl,
            ku,
            band: vec![0.0; ld * n],
            last: last_row.to_vec(),
        };

        let mut scale = 0.0f64;
        for &(i, j, v) in entries {
            debug_assert!(i < n - 1, "row {i} belongs to the dense border");
            debug_assert!(
                j < n && i + ku >= j && i <= j + kl,
                "entry ({i},{j}) outside band"
            );
            lu.band[j * ld + (ku + i) - j] += v;
            scale = scale.max(v.abs());
        }
        for &v in last_row {
            scale = scale.max(v.abs());
        }
        let tiny = scale * f64::EPSILON * (n as f64).max(16.0);

        for k in 0..n - 1 {
            let pivot = lu.band[k * ld + ku];
            if pivot.abs() <= tiny {
                return Err(Error::SingularSystem);
            }
            let inv = 1.0 / pivot;
            let row_end = (k + kl).min(n - 2);
            let col_end = (k + ku).min(n - 1);
            for i in k + 1..=row_end {
                let m = lu.band[k * ld + (ku + i) - k] * inv;
                lu.band[k * ld + (ku + i) - k] = m;
                if m != 0.0 {
                    for j in k + 1..=col_end {
                        let u = lu.band[j * ld + (ku + k) - j];
                        lu.band[j * ld + (ku + i) - j] -= m * u;
                    }
                }
            }
            let m = lu.last[k] * inv;
            lu.last[k] = m;
            if m != 0.0 {
                for j in k + 1..=col_end {
                    lu.last[j] -= m * lu.band[j * ld + (ku + k) - j];
                }
            }
        }
        if lu.last[n - 1].abs() <= tiny {
            return Err(Error::SingularSystem);
        }
        Ok(lu)
    }

    /// Solves `A x = rhs` in place using the stored factors.
    pub(crate) fn solve_into(&self, rhs: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let ld = kl + ku + 1;
        assert_eq!(rhs.len(), n);

        for k in 0..n - 1 {
            let rk = rhs[k];
            if rk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 2) {
                    rhs[i] -= self.band[k * ld + (ku + i) - k] * rk;
                }
                rhs[n - 1] -= self.last[k] * rk;
            }
        }
        rhs[n - 1] /= self.last[n - 1];
        for k in (0..n - 1).rev() {
            let mut s = rhs[k];
            for j in k + 1..=(k + ku).min(n - 1) {
                s -= self.band[j * ld + (ku + k) - j] * rhs[j];
            }
            rhs[k] = s / self.band[k * ld + ku];
        }
    }
}
