//! Symmetric positive-definite matrices in envelope (skyline) storage.
//!
//! Row `i` stores columns `first[i]..=i` contiguously. Cholesky factors keep the
//! same envelope, so fill-in is confined to it.

/// Lower triangle of a symmetric matrix in envelope storage.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeMatrix {
    first: Vec<usize>,
    ptr: Vec<usize>,
    vals: Vec<f64>,
}

impl EnvelopeMatrix {
    /// Builds a zero matrix whose envelope covers every listed `(row, col)` pair
    /// (either triangle) and the diagonal.
    pub fn from_pattern(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in entries {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            assert!(r < n, "entry ({i}, {j}) outside a {n}x{n} matrix");
            first[r] = first[r].min(c);
        }
        let mut ptr = Vec::with_capacity(n + 1);
        ptr.push(0);
        for i in 0..n {
            ptr.push(ptr[i] + i - first[i] + 1);
        }
        let vals = vec![0.0; ptr[n]];
        EnvelopeMatrix { first, ptr, vals }
    }

    pub fn n(&self) -> usize {
        self.first.len()
    }

    /// Stored entries in the lower triangle.
    pub fn stored(&self) -> usize {
        self.vals.len()
    }

    pub fn first(&self, i: usize) -> usize {
        self.first[i]
    }

    pub fn set_zero(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    fn pos(&self, i: usize, j: usize) -> Option<usize> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        (c >= self.first[r]).then(|| self.ptr[r] + c - self.first[r])
    }

    /// Adds `v` at `(i, j)` and its mirror; panics outside the envelope.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self.pos(i, j).expect("entry outside the envelope");
        self.vals[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pos(i, j).map_or(0.0, |p| self.vals[p])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vals[self.ptr[i]..self.ptr[i + 1]]
    }

    /// Symmetric matrix-vector product.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let f = self.first[i];
            let row = self.row(i);
            let mut s = 0.0;
            for (k, &a) in row[..row.len() - 1].iter().enumerate() {
                s += a * x[f + k];
                y[f + k] += a * x[i];
            }
            y[i] += s + row[row.len() - 1] * x[i];
        }
        y
    }

    /// Principal submatrix on the increasing index list `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> EnvelopeMatrix {
        debug_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        let mut pairs = Vec::new();
        for (a, &i) in idx.iter().enumerate() {
            let lo = idx.partition_point(|&j| j < self.first[i]);
            pairs.push((a, lo));
        }
        let mut sub = EnvelopeMatrix::from_pattern(idx.len(), pairs);
        for (a, &i) in idx.iter().enumerate() {
            for b in sub.first[a]..=a {
                let v = self.get(i, idx[b]);
                let p = sub.ptr[a] + b - sub.first[a];
                sub.vals[p] = v;
            }
        }
        sub
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut d = vec![vec![0.0; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.get(i, j);
            }
        }
        d
    }

    /// Cholesky factorization; on failure returns the index of the first
    /// non-positive pivot.
    pub fn cholesky(&self) -> Result<EnvelopeCholesky, usize> {
        let mut l = self.clone();
        let n = l.n();
        for i in 0..n {
            let fi = l.first[i];
            let (head, tail) = l.vals.split_at_mut(l.ptr[i]);
            let row_i = &mut tail[..i - fi + 1];
            for j in fi..i {
                let fj = l.first[j];
                let k0 = fi.max(fj);
                let row_j = &head[l.ptr[j]..l.ptr[j + 1]];
                let a = &row_i[k0 - fi..j - fi];
                let b = &row_j[k0 - fj..j - fj];
                let s = row_i[j - fi] - dot(a, b);
                row_i[j - fi] = s / row_j[j - fj];
            }
            let off = &row_i[..i - fi];
            let d = row_i[i - fi] - dot(off, off);
            if !(d > 0.0 && d.is_finite()) {
                return Err(i);
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky { l })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for r in 0..4 {
            acc[r] += a[4 * c + r] * b[4 * c + r];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Lower Cholesky factor `L` with `A = L L'`.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    l: EnvelopeMatrix,
}

impl EnvelopeCholesky {
    pub fn n(&self) -> usize {
        self.l.n()
    }

    fn diag(&self, i: usize) -> f64 {
        self.l.vals[self.l.ptr[i + 1] - 1]
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n()).map(|i| 2.0 * self.diag(i).ln()).sum()
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, x: &mut [f64]) {
        for i in 0..self.n() {
            let f = self.l.first[i];
            let row = self.l.row(i);
            let s = dot(&row[..i - f], &x[f..i]);
            x[i] = (x[i] - s) / row[i - f];
        }
    }

    /// Solves `L' x = y` in place.
    pub fn backward(&self, x: &mut [f64]) {
        for i in (0..self.n()).rev() {
            let f = self.l.first[i];
            let row = self.l.row(i);
            x[i] /= row[i - f];
            let xi = x[i];
            for (k, &a) in row[..i - f].iter().enumerate() {
                x[f + k] -= a * xi;
            }
        }
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        self.forward(x);
        self.backward(x);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Entries of the inverse on the envelope (Takahashi recursion).
    pub fn selected_inverse(&self) -> EnvelopeMatrix {
        let l = &self.l;
        let n = l.n();
        let mut below: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..n {
            for i in l.first[k]..k {
                below[i].push(k);
            }
        }
        let mut z = EnvelopeMatrix {
            first: l.first.clone(),
            ptr: l.ptr.clone(),
            vals: vec![0.0; l.vals.len()],
        };
        let mut lcol = Vec::new();
        let mut zcol = Vec::new();
        for i in (0..n).rev() {
            let lii = self.diag(i);
            let ks = &below[i];
            lcol.clear();
            lcol.extend(ks.iter().map(|&k| l.vals[l.ptr[k] + i - l.first[k]]));
            zcol.clear();
            for &j in ks {
                let s: f64 = ks
                    .iter()
                    .zip(&lcol)
                    .map(|(&k, &lki)| {
                        let (r, c) = if k >= j { (k, j) } else { (j, k) };
                        lki * z.vals[z.ptr[r] + c - z.first[r]]
                    })
                    .sum();
                zcol.push(-s / lii);
            }
            for (&j, &v) in ks.iter().zip(&zcol) {
                let p = z.ptr[j] + i - z.first[j];
                z.vals[p] = v;
            }
            let s: f64 = lcol.iter().zip(&zcol).map(|(a, b)| a * b).sum();
            let p = z.ptr[i + 1] - 1;
            z.vals[p] = 1.0 / (lii * lii) - s / lii;
        }
        z
    }

    /// Diagonal of the inverse.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let z = self.selected_inverse();
        (0..z.n()).map(|i| z.get(i, i)).collect()
    }
}
