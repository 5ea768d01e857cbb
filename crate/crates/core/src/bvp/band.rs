//! Banded LU factorization with partial pivoting.
//!
//! Storage follows the LAPACK `gbtrf` layout idea: every row keeps the
//! columns `[r - kl, r + kl + ku]`, leaving room for pivoting fill-in.

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPivot {
    pub column: usize,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(
            c + self.kl >= r && c <= r + self.kl + self.ku,
            "({r}, {c}) outside band"
        );
        r * self.width + (c + self.kl - r)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if c + self.kl < r || c > r + self.kl + self.ku {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(c + self.kl >= r && c <= r + self.ku, "({r}, {c}) outside declared band");
        let i = self.idx(r, c);
        self.data[i] = v;
    }

    /// In-place factorization; consumes the matrix into LU factors.
    pub fn factor(mut self) -> Result<BandLu, SingularPivot> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let mut pivots = Vec::with_capacity(n);
        // Pivots are judged against the original size of their column.
        let mut col_max = vec![0.0f64; n];
        for r in 0..n {
            for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                col_max[c] = col_max[c].max(self.data[self.idx(r, c)].abs());
            }
        }
        for k in 0..n {
            let tiny = col_max[k] * f64::EPSILON * 1e-3;
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for r in k + 1..=last_row {
                let v = self.data[self.idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > tiny) {
                return Err(SingularPivot { column: k });
            }
            pivots.push(p);
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let a = self.idx(k, c);
                    let b = self.idx(p, c);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for r in k + 1..=last_row {
                let ir = self.idx(r, k);
                let l = self.data[ir] / pivot;
                self.data[ir] = l;
                if l == 0.0 {
                    continue;
                }
                for c in k + 1..=last_col {
                    let kc = self.idx(k, c);
                    let rc = self.idx(r, c);
                    self.data[rc] -= l * self.data[kc];
                }
            }
        }
        Ok(BandLu { m: self, pivots })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        let kl = self.m.kl;
        let ku = self.m.ku;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + kl).min(n - 1) {
                    b[r] -= self.m.data[self.m.idx(r, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for c in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.m.data[self.m.idx(k, c)] * b[c];
            }
            b[k] = s / self.m.data[self.m.idx(k, k)];
        }
    }
}
