//! Banded LU factorisation with partial pivoting.
//!
//! Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl`
//! super-diagonals hold fill-in created by row interchanges.

use super::OracleError;

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: Vec::new(),
            factored: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku, "({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    /// Adds `v` to entry (i, j), which must lie within the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    /// In-place LU factorisation.
    pub fn factor(&mut self) -> Result<(), OracleError> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        self.pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(OracleError::SingularJacobian { row: k });
            }
            self.pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last_row {
                let sik = self.slot(i, k);
                let l = self.data[sik] / pivot;
                self.data[sik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let skj = self.slot(k, j);
                    let sij = self.slot(i, j);
                    self.data[sij] -= l * self.data[skj];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place using the factorisation.
    pub fn solve(&self, b: &mut [f64]) {
        assert!(self.factored, "solve called before factor");
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.data[self.slot(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                acc -= self.data[self.slot(k, j)] * b[j];
            }
            b[k] = acc / self.data[self.slot(k, k)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_random_banded_systems_against_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 2), (40, 3, 1), (60, 5, 5)] {
            let mut dense = vec![vec![0.0; n]; n];
            let mut a = BandedMatrix::zeros(n, kl, ku);
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    // weak diagonal so that pivoting actually happens
                    let v: f64 = rng.random_range(-1.0..1.0) + if i == j { 0.05 } else { 0.0 };
                    dense[i][j] = v;
                    a.add(i, j, v);
                }
            }
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dense[i][j] * x[j]).sum()).collect();
            a.factor().unwrap();
            a.solve(&mut b);
            for i in 0..n {
                assert!((b[i] - x[i]).abs() < 1e-8, "n={n} i={i}: {} vs {}", b[i], x[i]);
            }
        }
    }

    #[test]
    fn singular_matrix_detected() {
        let mut a = BandedMatrix::zeros(3, 1, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 1.0);
        a.add(2, 2, 1.0);
        assert!(matches!(a.factor(), Err(OracleError::SingularJacobian { .. })));
    }
}
