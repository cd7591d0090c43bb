//! Cell- and vertex-indexed fields, finite-difference gradients and discrete
//! kernel convolutions.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::geometry::{Dim, Grid};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Vertex,
    Cell,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub loc: Location,
    /// Entries per axis (`[n, 1]` in 1D).
    pub dims: [usize; 2],
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(loc: Location, dims: [usize; 2]) -> Self {
        Self::constant(loc, dims, 0.0)
    }

    pub fn constant(loc: Location, dims: [usize; 2], c: f64) -> Self {
        ScalarField {
            loc,
            dims,
            values: vec![c; dims[0] * dims[1]],
        }
    }

    pub fn from_values(loc: Location, dims: [usize; 2], values: Vec<f64>) -> Self {
        assert_eq!(values.len(), dims[0] * dims[1], "field length does not match its dimensions");
        ScalarField { loc, dims, values }
    }

    pub fn on_cells(grid: &Grid, values: Vec<f64>) -> Self {
        Self::from_values(Location::Cell, grid.cells, values)
    }

    pub fn on_vertices(grid: &Grid, values: Vec<f64>) -> Self {
        Self::from_values(Location::Vertex, grid.vertex_dims(), values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.dims[0] + i]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            loc: self.loc,
            dims: self.dims,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub loc: Location,
    pub dims: [usize; 2],
    pub values: Vec<[f64; 2]>,
}

impl VectorField {
    pub fn zeros(loc: Location, dims: [usize; 2]) -> Self {
        VectorField {
            loc,
            dims,
            values: vec![[0.0; 2]; dims[0] * dims[1]],
        }
    }

    pub fn from_values(loc: Location, dims: [usize; 2], values: Vec<[f64; 2]>) -> Self {
        assert_eq!(values.len(), dims[0] * dims[1], "field length does not match its dimensions");
        VectorField { loc, dims, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn component(&self, axis: usize) -> ScalarField {
        ScalarField {
            loc: self.loc,
            dims: self.dims,
            values: self.values.iter().map(|v| v[axis]).collect(),
        }
    }

    pub fn norms(&self) -> ScalarField {
        ScalarField {
            loc: self.loc,
            dims: self.dims,
            values: self.values.iter().map(|v| norm(*v)).collect(),
        }
    }
}

#[inline]
pub fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Finite-difference gradient of a vertex field: central differences inside,
/// one-sided on the boundary.
pub fn gradient(grid: &Grid, f: &ScalarField) -> VectorField {
    assert_eq!(f.loc, Location::Vertex, "gradient expects a vertex field");
    let [nx, ny] = grid.vertex_dims();
    let h = grid.h;
    let diff = |n: usize, k: usize, get: &dyn Fn(usize) -> f64, h: f64| -> f64 {
        if n < 2 {
            0.0
        } else if k == 0 {
            (get(1) - get(0)) / h
        } else if k == n - 1 {
            (get(n - 1) - get(n - 2)) / h
        } else {
            (get(k + 1) - get(k - 1)) / (2.0 * h)
        }
    };
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let gx = diff(nx, i, &|ii| f.values[j * nx + ii], h[0]);
            let gy = if grid.dim == Dim::Two {
                diff(ny, j, &|jj| f.values[jj * nx + i], h[1])
            } else {
                0.0
            };
            out.push([gx, gy]);
        }
    }
    VectorField::from_values(Location::Vertex, [nx, ny], out)
}

/// Averages a vertex field onto cells.
pub fn vertex_to_cell(grid: &Grid, f: &ScalarField) -> ScalarField {
    let values = (0..grid.n_cells())
        .map(|c| {
            let (sum, n) = grid.cell_vertices(c).fold((0.0, 0), |(s, n), v| (s + f.values[v], n + 1));
            sum / n as f64
        })
        .collect();
    ScalarField::on_cells(grid, values)
}

/// Averages a cell field onto vertices using the adjacent open cells.
pub fn cell_to_vertex(grid: &Grid, f: &ScalarField) -> ScalarField {
    let values = (0..grid.n_vertices())
        .map(|v| {
            let (sum, n) = grid.vertex_cells(v).fold((0.0, 0), |(s, n), c| (s + f.values[c], n + 1));
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect();
    ScalarField::on_vertices(grid, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Bump,
    Indicator,
    Gaussian,
}

/// Gaussian support in multiples of sigma.
pub const GAUSSIAN_TRUNCATION: f64 = 4.0;

/// A radial kernel sampled on the grid spacing. Stencil weights already carry
/// the `h^d` quadrature factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub param: f64,
    pub dim: Dim,
    pub stencil: Vec<(isize, isize, f64)>,
}

impl Kernel {
    /// Continuous kernel value at distance `r`.
    pub fn eval(&self, r: f64) -> f64 {
        kernel_value(self.kind, self.param, self.dim, r)
    }

    pub fn support(&self) -> f64 {
        match self.kind {
            KernelKind::Gaussian => GAUSSIAN_TRUNCATION * self.param,
            _ => self.param,
        }
    }

    /// Half-width of the stencil in cells per axis.
    pub fn reach(&self) -> [usize; 2] {
        let mut r = [0usize; 2];
        for &(di, dj, _) in &self.stencil {
            r[0] = r[0].max(di.unsigned_abs());
            r[1] = r[1].max(dj.unsigned_abs());
        }
        r
    }
}

fn kernel_value(kind: KernelKind, p: f64, dim: Dim, r: f64) -> f64 {
    match kind {
        KernelKind::Indicator => {
            if r <= p * (1.0 + 1e-9) {
                1.0
            } else {
                0.0
            }
        }
        KernelKind::Bump => {
            if r < p {
                (-p * p / (p * p - r * r)).exp()
            } else {
                0.0
            }
        }
        KernelKind::Gaussian => {
            if r > GAUSSIAN_TRUNCATION * p {
                return 0.0;
            }
            let s2 = p * p;
            let norm = match dim {
                Dim::One => (2.0 * std::f64::consts::PI * s2).sqrt(),
                Dim::Two => 2.0 * std::f64::consts::PI * s2,
            };
            (-r * r / (2.0 * s2)).exp() / norm
        }
    }
}

pub fn make_kernel(kind: KernelKind, param: f64, grid: &Grid) -> Result<Kernel> {
    if !(param > 0.0) {
        return config(format!("kernel parameter must be positive, got {param}"));
    }
    let dim = grid.dim;
    let h = grid.h;
    let support = match kind {
        KernelKind::Gaussian => GAUSSIAN_TRUNCATION * param,
        _ => param,
    };
    let hmin = match dim {
        Dim::One => h[0],
        Dim::Two => h[0].min(h[1]),
    };
    let measure = grid.cell_measure();
    if param < hmin {
        log::warn!("kernel parameter {param} is below the grid spacing {hmin}; using a single-point stencil");
        return Ok(Kernel {
            kind,
            param,
            dim,
            stencil: vec![(0, 0, kernel_value(kind, param, dim, 0.0) * measure)],
        });
    }
    let ri = (support / h[0] + 1e-9).floor() as isize;
    let rj = match dim {
        Dim::One => 0,
        Dim::Two => (support / h[1] + 1e-9).floor() as isize,
    };
    let mut stencil = Vec::new();
    for dj in -rj..=rj {
        for di in -ri..=ri {
            let r = (di as f64 * h[0]).hypot(dj as f64 * if dim == Dim::Two { h[1] } else { 0.0 });
            let w = kernel_value(kind, param, dim, r);
            if w > 0.0 {
                stencil.push((di, dj, w * measure));
            }
        }
    }
    Ok(Kernel {
        kind,
        param,
        dim,
        stencil,
    })
}

/// `sum_j K(x_i - x_j) f_j h^d` with the stencil truncated at the grid edge.
pub fn convolve(f: &ScalarField, k: &Kernel, parallel: bool) -> ScalarField {
    let [nx, ny] = f.dims;
    let values = par::map_range(nx * ny, parallel, |idx| {
        let (i, j) = ((idx % nx) as isize, (idx / nx) as isize);
        let mut acc = 0.0;
        for &(di, dj, w) in &k.stencil {
            let (a, b) = (i + di, j + dj);
            if a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny {
                acc += w * f.values[b as usize * nx + a as usize];
            }
        }
        acc
    });
    ScalarField {
        loc: f.loc,
        dims: f.dims,
        values,
    }
}

pub fn convolve_vector(f: &VectorField, k: &Kernel, parallel: bool) -> VectorField {
    let [nx, ny] = f.dims;
    let values = par::map_range(nx * ny, parallel, |idx| {
        let (i, j) = ((idx % nx) as isize, (idx / nx) as isize);
        let mut acc = [0.0; 2];
        for &(di, dj, w) in &k.stencil {
            let (a, b) = (i + di, j + dj);
            if a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny {
                let v = f.values[b as usize * nx + a as usize];
                acc[0] += w * v[0];
                acc[1] += w * v[1];
            }
        }
        acc
    });
    VectorField {
        loc: f.loc,
        dims: f.dims,
        values,
    }
}
