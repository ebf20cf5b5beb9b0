//! General band matrices with partial-pivoting LU.
//!
//! Storage follows the LAPACK `gbtrf` convention: column-major with
//! `ldab = 2 kl + ku + 1` rows, entry `(i, j)` at `ab[j * ldab + kl + ku + i - j]`;
//! the top `kl` rows hold fill-in produced by pivoting.

#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i <= j + self.kl && j <= i + self.ku
    }

    fn index(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    /// # Panics
    /// If `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let idx = self.index(i, j);
        self.ab[idx] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[self.index(i, j)]
        } else {
            0.0
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.ab[self.index(i, j)] * x[j];
            }
        }
        y
    }

    /// `max_j |a_ij|` for every row.
    pub fn row_max_abs(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, o) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *o = o.max(self.ab[self.index(i, j)].abs());
            }
        }
        out
    }

    /// LU factorisation with row interchanges.
    pub fn factor(mut self) -> BandLu {
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let kv = ku + kl;
        let ab = &mut self.ab;
        let mut ipiv = vec![0usize; n];
        let mut zero_pivot = None;

        for j in (ku + 1)..kv.min(n) {
            for i in (kv - j)..kl {
                ab[i + j * ldab] = 0.0;
            }
        }

        let mut ju = 0usize;
        for j in 0..n {
            if j + kv < n {
                for i in 0..kl {
                    ab[i + (j + kv) * ldab] = 0.0;
                }
            }
            let km = kl.min(n - 1 - j);
            let col = j * ldab + kv;
            let mut jp = 0;
            let mut best = ab[col].abs();
            for i in 1..=km {
                let v = ab[col + i].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            ipiv[j] = j + jp;
            if ab[col + jp] != 0.0 {
                ju = ju.max((j + ku + jp).min(n - 1));
                if jp != 0 {
                    for t in 0..=(ju - j) {
                        ab.swap(col + jp + t * (ldab - 1), col + t * (ldab - 1));
                    }
                }
                if km > 0 {
                    let piv = ab[col];
                    for i in 1..=km {
                        ab[col + i] /= piv;
                    }
                    for t in 0..(ju - j) {
                        let yc = (j + 1 + t) * ldab + kv - 1 - t;
                        let y = ab[yc];
                        if y != 0.0 {
                            for i in 1..=km {
                                let xi = ab[col + i];
                                ab[yc + i] -= xi * y;
                            }
                        }
                    }
                }
            } else if zero_pivot.is_none() {
                zero_pivot = Some(j);
            }
        }
        BandLu {
            n,
            kl,
            ku,
            ldab,
            ab: self.ab,
            ipiv,
            zero_pivot,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    zero_pivot: Option<usize>,
}

impl BandLu {
    pub fn is_singular(&self) -> bool {
        self.zero_pivot.is_some()
    }

    /// `max |u_ii| / min |u_ii|`, a cheap lower bound on the condition number.
    pub fn pivot_ratio(&self) -> f64 {
        let kv = self.kl + self.ku;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for j in 0..self.n {
            let d = self.ab[j * self.ldab + kv].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// Solves `A x = b` in place. Meaningless if the factor is singular.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kd = self.ku + kl;
        let ab = &self.ab;
        if kl > 0 {
            for j in 0..n.saturating_sub(1) {
                let lm = kl.min(n - 1 - j);
                let l = self.ipiv[j];
                if l != j {
                    b.swap(l, j);
                }
                let bj = b[j];
                if bj != 0.0 {
                    for i in 1..=lm {
                        b[j + i] -= ab[j * ldab + kd + i] * bj;
                    }
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= ab[j * ldab + kd];
            let t = b[j];
            if t != 0.0 {
                for i in j.saturating_sub(kd)..j {
                    b[i] -= t * ab[j * ldab + kd + i - j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> (BandMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j.saturating_sub(ku)..=(j + kl).min(n - 1) {
                // small diagonal forces pivoting when there is room for it
                let diag = if kl > 0 && ku > 0 { 0.01 * rng.random::<f64>() } else { 2.0 + ku as f64 };
                let v = if i == j { diag } else { rng.random_range(-1.0..1.0) };
                band.set(i, j, v);
                dense[(i, j)] = v;
            }
        }
        (band, dense)
    }

    #[test]
    fn matches_dense_solve() {
        for (n, kl, ku, seed) in [(1, 0, 0, 1), (7, 2, 1, 2), (30, 5, 5, 3), (40, 0, 3, 4), (25, 4, 0, 5), (60, 11, 11, 6)] {
            let (band, dense) = random_band(n, kl, ku, seed);
            let x_true = DVector::from_iterator(n, (0..n).map(|i| (i as f64 * 0.37).sin() + 0.5));
            let b = &dense * &x_true;
            assert_eq!(band.mul_vec(x_true.as_slice()), b.as_slice().to_vec());
            let lu = band.factor();
            assert!(!lu.is_singular());
            let mut x = b.as_slice().to_vec();
            lu.solve_in_place(&mut x);
            let err = x.iter().zip(x_true.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "n={n} kl={kl} ku={ku} err={err}");
        }
    }

    #[test]
    fn detects_zero_column() {
        let mut band = BandMatrix::zeros(3, 1, 1);
        band.set(0, 0, 1.0);
        band.set(2, 2, 1.0);
        band.set(1, 2, 3.0);
        assert!(band.factor().is_singular());
    }

    #[test]
    fn out_of_band_reads_zero() {
        let band = BandMatrix::zeros(5, 1, 2);
        assert_eq!(band.get(4, 0), 0.0);
        assert!(band.in_band(0, 2));
        assert!(!band.in_band(0, 3));
    }
}
