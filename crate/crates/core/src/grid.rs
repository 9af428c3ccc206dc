//! Uniform cell-centered meshes of an interval or a rectangle.

use std::sync::Arc;

use crate::error::{Error, Result};

/// A point in physical space. The second coordinate is zero on 1D grids.
pub type Point = [f64; 2];

/// Uniform cell-centered finite-volume mesh of `[0, L_x]` or `[0, L_x] x [0, L_y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: Vec<f64>,
    n: Vec<usize>,
    h: Vec<f64>,
    cell_volume: f64,
    total_volume: f64,
}

/// A face shared by two cells along one axis. `left` has the smaller index coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorFace {
    pub axis: usize,
    pub left: usize,
    pub right: usize,
    /// Index into the per-axis face arrays (boundary faces included).
    pub slot: usize,
    pub center: Point,
}

/// A face on the domain boundary with its outward normal sign along `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub axis: usize,
    pub cell: usize,
    /// +1 when the outward normal points along the positive axis, -1 otherwise.
    pub outward: f64,
    pub slot: usize,
    pub center: Point,
}

/// Builds a grid; `extents` and `resolutions` must have `dim` entries.
pub fn build_grid(dim: usize, extents: &[f64], resolutions: &[usize]) -> Result<Grid> {
    Grid::new(dim, extents, resolutions)
}

impl Grid {
    pub fn new(dim: usize, extents: &[f64], resolutions: &[usize]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if extents.len() != dim || resolutions.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents and resolutions, got {} and {}",
                extents.len(),
                resolutions.len()
            )));
        }
        if let Some(bad) = extents.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidGrid(format!("extents must be positive, got {bad}")));
        }
        if let Some(bad) = resolutions.iter().find(|&&r| r < 2) {
            return Err(Error::InvalidGrid(format!("resolution must be at least 2, got {bad}")));
        }
        let h: Vec<f64> = extents
            .iter()
            .zip(resolutions)
            .map(|(e, &r)| e / r as f64)
            .collect();
        let cell_volume: f64 = h.iter().product();
        let count: usize = resolutions.iter().product();
        Ok(Self {
            dim,
            extents: extents.to_vec(),
            n: resolutions.to_vec(),
            h,
            cell_volume,
            total_volume: cell_volume * count as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.n
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// |Ω|.
    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    pub fn cell_count(&self) -> usize {
        self.n.iter().product()
    }

    fn nx(&self) -> usize {
        self.n[0]
    }

    fn ny(&self) -> usize {
        if self.dim == 2 {
            self.n[1]
        } else {
            1
        }
    }

    /// Linear index of cell `(i, j)`; `j` is ignored in 1D.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.nx() * j
    }

    pub fn cell_center(&self, idx: usize) -> Point {
        let i = idx % self.nx();
        let j = idx / self.nx();
        let x = (i as f64 + 0.5) * self.h[0];
        let y = if self.dim == 2 {
            (j as f64 + 0.5) * self.h[1]
        } else {
            0.0
        };
        [x, y]
    }

    pub fn cell_centers(&self) -> Vec<Point> {
        (0..self.cell_count()).map(|c| self.cell_center(c)).collect()
    }

    /// Area (length in 2D, unity in 1D) of a face normal to `axis`.
    pub fn face_area(&self, axis: usize) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            self.h[1 - axis]
        }
    }

    /// Number of face slots normal to `axis`, boundary faces included.
    pub fn face_slots(&self, axis: usize) -> usize {
        match axis {
            0 => (self.nx() + 1) * self.ny(),
            _ => self.nx() * (self.ny() + 1),
        }
    }

    fn face_center(&self, axis: usize, slot: usize) -> Point {
        if axis == 0 {
            let k = slot % (self.nx() + 1);
            let j = slot / (self.nx() + 1);
            let y = if self.dim == 2 {
                (j as f64 + 0.5) * self.h[1]
            } else {
                0.0
            };
            [k as f64 * self.h[0], y]
        } else {
            let i = slot % self.nx();
            let k = slot / self.nx();
            [(i as f64 + 0.5) * self.h[0], k as f64 * self.h[1]]
        }
    }

    pub fn interior_faces(&self) -> Vec<InteriorFace> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut faces = Vec::new();
        for j in 0..ny {
            for k in 1..nx {
                let slot = k + (nx + 1) * j;
                faces.push(InteriorFace {
                    axis: 0,
                    left: self.index(k - 1, j),
                    right: self.index(k, j),
                    slot,
                    center: self.face_center(0, slot),
                });
            }
        }
        if self.dim == 2 {
            for k in 1..ny {
                for i in 0..nx {
                    let slot = i + nx * k;
                    faces.push(InteriorFace {
                        axis: 1,
                        left: self.index(i, k - 1),
                        right: self.index(i, k),
                        slot,
                        center: self.face_center(1, slot),
                    });
                }
            }
        }
        faces
    }

    pub fn boundary_faces(&self) -> Vec<BoundaryFace> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut faces = Vec::new();
        for j in 0..ny {
            for (k, cell_i, outward) in [(0, 0, -1.0), (nx, nx - 1, 1.0)] {
                let slot = k + (nx + 1) * j;
                faces.push(BoundaryFace {
                    axis: 0,
                    cell: self.index(cell_i, j),
                    outward,
                    slot,
                    center: self.face_center(0, slot),
                });
            }
        }
        if self.dim == 2 {
            for i in 0..nx {
                for (k, cell_j, outward) in [(0, 0, -1.0), (ny, ny - 1, 1.0)] {
                    let slot = i + nx * k;
                    faces.push(BoundaryFace {
                        axis: 1,
                        cell: self.index(i, cell_j),
                        outward,
                        slot,
                        center: self.face_center(1, slot),
                    });
                }
            }
        }
        faces
    }

    /// Face centers for every slot normal to `axis`.
    pub fn face_centers(&self, axis: usize) -> Vec<Point> {
        (0..self.face_slots(axis))
            .map(|s| self.face_center(axis, s))
            .collect()
    }

    /// Midpoint quadrature of cell values.
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        self.cell_volume * values.iter().sum::<f64>()
    }
}

/// One value per cell of a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::ShapeMismatch {
                expected: grid.cell_count(),
                found: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.cell_count();
        Self {
            grid,
            values: vec![value; n],
        }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..grid.cell_count()).map(|c| f(grid.cell_center(c))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `∫_Ω` by midpoint quadrature.
    pub fn integrate(&self) -> f64 {
        self.grid.integrate_values(&self.values)
    }

    /// `∫_Ω |self - other|`.
    pub fn l1_distance(&self, other: &ScalarField) -> f64 {
        self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }
}

/// Free-function form of [`ScalarField::integrate`].
pub fn integrate(field: &ScalarField) -> f64 {
    field.integrate()
}
