//! Implicit diffusion operator `I - dt·L` with zero-flux boundaries.
//!
//! `L` is the standard 3-point (1D) or 5-point (2D) finite-volume Laplacian
//! with harmonic-mean face diffusivities; the zero-flux condition means
//! boundary faces carry no coupling. The resulting matrix is a symmetric
//! M-matrix with unit row sums.

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy)]
struct Coupling {
    left: usize,
    right: usize,
    /// `dt · D_face / h_axis²`.
    weight: f64,
}

#[derive(Debug, Clone)]
enum Factor {
    /// Forward-sweep multipliers `c'` and pivots of the Thomas algorithm.
    Tridiagonal { upper: Vec<f64>, pivot: Vec<f64> },
    Iterative,
}

#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    n: usize,
    couplings: Vec<Coupling>,
    diag: Vec<f64>,
    factor: Factor,
    tol: f64,
    max_iter: usize,
}

impl DiffusionOperator {
    /// Assembles `I - dt·L` for cell diffusivities `cell_d`.
    pub fn new(grid: &Grid, cell_d: &[f64], dt: f64, tol: f64) -> Self {
        let n = grid.cell_count();
        let h = grid.spacing();
        let couplings: Vec<Coupling> = grid
            .interior_faces()
            .iter()
            .map(|f| {
                let d = crate::models::DiffusionModel::face_value(cell_d, f.left, f.right);
                Coupling {
                    left: f.left,
                    right: f.right,
                    weight: dt * d / (h[f.axis] * h[f.axis]),
                }
            })
            .collect();
        let mut diag = vec![1.0; n];
        for c in &couplings {
            diag[c.left] += c.weight;
            diag[c.right] += c.weight;
        }
        let factor = if grid.dim() == 1 {
            // Couplings are ordered (0,1), (1,2), ...
            let off: Vec<f64> = couplings.iter().map(|c| -c.weight).collect();
            let mut upper = vec![0.0; n];
            let mut pivot = vec![0.0; n];
            pivot[0] = diag[0];
            for i in 0..n {
                if i > 0 {
                    pivot[i] = diag[i] - off[i - 1] * upper[i - 1];
                }
                if i + 1 < n {
                    upper[i] = off[i] / pivot[i];
                }
            }
            Factor::Tridiagonal { upper, pivot }
        } else {
            Factor::Iterative
        };
        Self {
            n,
            couplings,
            diag,
            factor,
            tol,
            max_iter: 10 * n + 100,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `y = (I - dt·L) x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for c in &self.couplings {
            let flux = c.weight * (x[c.left] - x[c.right]);
            y[c.left] += flux;
            y[c.right] -= flux;
        }
        y
    }

    /// Solves `(I - dt·L) x = b`. The matrix is symmetric, so this is also its transpose solve.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match &self.factor {
            Factor::Tridiagonal { upper, pivot } => Ok(self.thomas(upper, pivot, b)),
            Factor::Iterative => self.pcg(b),
        }
    }

    fn thomas(&self, upper: &[f64], pivot: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        y[0] = b[0] / pivot[0];
        for i in 1..n {
            let off = -self.couplings[i - 1].weight;
            y[i] = (b[i] - off * y[i - 1]) / pivot[i];
        }
        for i in (0..n - 1).rev() {
            y[i] -= upper[i] * y[i + 1];
        }
        y
    }

    /// Jacobi-preconditioned CG started from `x₀ = b`.
    ///
    /// The residual starts orthogonal to the constants and the preconditioned
    /// residual is projected back onto that subspace, so every iterate has the
    /// mass of `b` up to round-off regardless of the stopping point.
    fn pcg(&self, b: &[f64]) -> Result<Vec<f64>> {
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok(vec![0.0; self.n]);
        }
        let target = self.tol * b_norm;
        let mut x = b.to_vec();
        let ax = self.apply(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        if norm(&r) <= target {
            return Ok(x);
        }
        let mut z = self.precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for it in 0..self.max_iter {
            let ap = self.apply(&p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::LinearSolve {
                    residual: norm(&r) / b_norm,
                    iterations: it,
                });
            }
            let alpha = rz / pap;
            for i in 0..self.n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= target {
                return Ok(x);
            }
            z = self.precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..self.n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::LinearSolve {
            residual: norm(&r) / b_norm,
            iterations: self.max_iter,
        })
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(r, d)| r / d).collect();
        let mean = z.iter().sum::<f64>() / self.n as f64;
        z.iter_mut().for_each(|v| *v -= mean);
        z
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn residual(op: &DiffusionOperator, x: &[f64], b: &[f64]) -> f64 {
        let ax = op.apply(x);
        norm(&ax.iter().zip(b).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(b)
    }

    #[test]
    fn thomas_solves_and_conserves() {
        let g = build_grid(1, &[1.0], &[17]).unwrap();
        let d: Vec<f64> = (0..17).map(|i| 0.1 + 0.01 * i as f64).collect();
        let op = DiffusionOperator::new(&g, &d, 0.05, 1e-10);
        let b: Vec<f64> = (0..17).map(|i| ((i * 7) % 5) as f64 / 5.0).collect();
        let x = op.solve(&b).unwrap();
        assert!(residual(&op, &x, &b) < 1e-14);
        let sb: f64 = b.iter().sum();
        let sx: f64 = x.iter().sum();
        assert!((sb - sx).abs() < 1e-13);
        assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn pcg_solves_and_conserves() {
        let g = build_grid(2, &[1.0, 2.0], &[12, 9]).unwrap();
        let n = g.cell_count();
        let d: Vec<f64> = (0..n).map(|i| 0.05 + 0.001 * (i % 13) as f64).collect();
        let op = DiffusionOperator::new(&g, &d, 0.1, 1e-10);
        let b: Vec<f64> = (0..n).map(|i| ((i * 31) % 11) as f64 / 11.0).collect();
        let x = op.solve(&b).unwrap();
        assert!(residual(&op, &x, &b) <= 1e-10);
        let sb: f64 = b.iter().sum();
        let sx: f64 = x.iter().sum();
        assert!((sb - sx).abs() < 1e-12 * n as f64);
    }

    #[test]
    fn constants_are_fixed_points() {
        for g in [
            build_grid(1, &[1.0], &[9]).unwrap(),
            build_grid(2, &[1.0, 1.0], &[5, 6]).unwrap(),
        ] {
            let n = g.cell_count();
            let op = DiffusionOperator::new(&g, &vec![0.3; n], 0.7, 1e-10);
            let x = op.solve(&vec![0.25; n]).unwrap();
            assert!(x.iter().all(|v| (v - 0.25).abs() < 1e-14));
        }
    }

    #[test]
    fn zero_rhs() {
        let g = build_grid(2, &[1.0, 1.0], &[4, 4]).unwrap();
        let op = DiffusionOperator::new(&g, &[0.1; 16], 0.1, 1e-10);
        assert_eq!(op.solve(&[0.0; 16]).unwrap(), vec![0.0; 16]);
    }

    #[test]
    fn unreachable_tolerance_reports_residual() {
        let g = build_grid(2, &[1.0, 1.0], &[6, 6]).unwrap();
        let mut op = DiffusionOperator::new(&g, &[1.0; 36], 10.0, 1e-30);
        op.max_iter = 2;
        let b: Vec<f64> = (0..36).map(|i| (i % 5) as f64).collect();
        match op.solve(&b) {
            Err(Error::LinearSolve { residual, iterations }) => {
                assert!(residual > 0.0);
                assert_eq!(iterations, 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
