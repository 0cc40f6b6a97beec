//! Dense Hermitian positive-(semi)definite solves for the per-bin normal
//! equations.

use num_complex::Complex64;

/// Returned when the matrix has no usable pivot left at step `pivot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular {
    pub pivot: usize,
}

/// Square Hermitian matrix, stored in full row-major form.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl HermitianMatrix {
    pub fn zeros(dim: usize) -> Self {
        HermitianMatrix { dim, data: vec![Complex64::new(0.0, 0.0); dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut Complex64 {
        &mut self.data[i * self.dim + j]
    }

    /// `self += weight · v vᴴ`, updating the lower triangle only.
    /// Call [`HermitianMatrix::mirror_lower`] once accumulation is done.
    #[inline]
    pub fn add_outer_lower(&mut self, v: &[Complex64], weight: f64) {
        let dim = self.dim;
        for i in 0..dim {
            let vi = v[i] * weight;
            if vi == Complex64::new(0.0, 0.0) {
                continue;
            }
            let row = &mut self.data[i * dim..i * dim + i + 1];
            for (a, vj) in row.iter_mut().zip(&v[..=i]) {
                *a += vi * vj.conj();
            }
        }
    }

    pub fn mirror_lower(&mut self) {
        for i in 0..self.dim {
            let d = self.get(i, i);
            *self.at(i, i) = Complex64::new(d.re, 0.0);
            for j in 0..i {
                let v = self.get(i, j).conj();
                *self.at(j, i) = v;
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i).re).sum()
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.dim {
            self.at(i, i).re += value;
        }
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Solves `A x = b` by Cholesky factorization with diagonal pivoting.
    ///
    /// A pivot no larger than `dim · ε · max(diag(A))` is treated as a
    /// rank deficiency rather than silently regularized.
    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>, Singular> {
        let n = self.dim;
        assert_eq!(b.len(), n, "right-hand side length");
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut a = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let max_diag = (0..n).map(|i| a.get(i, i).re).fold(0.0, f64::max);
        let tol = n as f64 * f64::EPSILON * max_diag;

        for j in 0..n {
            let p = (j..n)
                .max_by(|&x, &y| a.get(x, x).re.total_cmp(&a.get(y, y).re))
                .unwrap();
            let pivot = a.get(p, p).re;
            if !(pivot > tol) {
                return Err(Singular { pivot: j });
            }
            if p != j {
                a.swap_symmetric(j, p);
                perm.swap(j, p);
            }
            let ljj = pivot.sqrt();
            *a.at(j, j) = Complex64::new(ljj, 0.0);
            for i in j + 1..n {
                let v = a.get(i, j) / ljj;
                *a.at(i, j) = v;
            }
            for i in j + 1..n {
                let lij = a.get(i, j);
                for l in j + 1..=i {
                    let llj = a.get(l, j);
                    *a.at(i, l) -= lij * llj.conj();
                }
            }
        }

        // Forward substitution L z = Pᵀ b.
        let mut z: Vec<Complex64> = perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = z[i];
            for l in 0..i {
                s -= a.get(i, l) * z[l];
            }
            z[i] = s / a.get(i, i).re;
        }
        // Back substitution Lᴴ w = z.
        for i in (0..n).rev() {
            let mut s = z[i];
            for l in i + 1..n {
                s -= a.get(l, i).conj() * z[l];
            }
            z[i] = s / a.get(i, i).re;
        }
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for (j, &p) in perm.iter().enumerate() {
            x[p] = z[j];
        }
        Ok(x)
    }

    /// Swaps rows and columns `i` and `j` of the lower triangle (`i < j`),
    /// keeping the factored columns `< i` consistent.
    fn swap_symmetric(&mut self, i: usize, j: usize) {
        let n = self.dim;
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        for c in 0..i {
            self.data.swap(i * n + c, j * n + c);
        }
        self.data.swap(i * n + i, j * n + j);
        for c in i + 1..j {
            let a = self.get(c, i);
            let b = self.get(j, c);
            *self.at(c, i) = b.conj();
            *self.at(j, c) = a.conj();
        }
        let v = self.get(j, i).conj();
        *self.at(j, i) = v;
        for r in j + 1..n {
            self.data.swap(r * n + i, r * n + j);
        }
    }
}
