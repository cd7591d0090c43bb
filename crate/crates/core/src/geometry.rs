//! Rectangular corridors, their Cartesian discretization, vision discs and the
//! wall-proximity layer profile.
//!
//! Densities live on cells, potentials on vertices. A 1D grid is stored as a
//! single row of cells with one row of vertices (`vertex_dims()[1] == 1`).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::eikonal::CostModel;
use crate::error::{config, Result};
use crate::fields::{Location, ScalarField};

pub type Point = [f64; 2];

pub(crate) const GEOM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dim {
    One,
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn outward_normal(self) -> Point {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Top => [0.0, 1.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x[0] && p[0] <= self.x[1] && p[1] >= self.y[0] && p[1] <= self.y[1]
    }

    pub fn distance(&self, p: Point) -> f64 {
        let dx = (self.x[0] - p[0]).max(0.0).max(p[0] - self.x[1]);
        let dy = (self.y[0] - p[1]).max(0.0).max(p[1] - self.y[1]);
        dx.hypot(dy)
    }
}

/// An exit: a segment of one side of the bounding rectangle (a single point in 1D).
#[derive(Clone, Debug, PartialEq)]
pub struct ExitSpec {
    pub index: usize,
    pub from: Point,
    pub to: Point,
    pub side: Side,
    pub normal: Point,
}

impl ExitSpec {
    /// Interval covered along the side (y for left/right, x for bottom/top).
    pub fn interval(&self) -> (f64, f64) {
        let axis = along_axis(self.side);
        let (a, b) = (self.from[axis], self.to[axis]);
        (a.min(b), a.max(b))
    }

    pub fn distance(&self, p: Point) -> f64 {
        segment_distance(p, self.from, self.to)
    }

    pub fn length(&self) -> f64 {
        (self.to[0] - self.from[0]).hypot(self.to[1] - self.from[1])
    }
}

fn along_axis(side: Side) -> usize {
    match side {
        Side::Left | Side::Right => 1,
        Side::Bottom | Side::Top => 0,
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Polygonal (rectangular) walking domain with classified boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub x: [f64; 2],
    /// `None` for a 1D corridor.
    pub y: Option<[f64; 2]>,
    pub exits: Vec<ExitSpec>,
    pub wall_width: f64,
    pub obstacles: Vec<Rect>,
}

impl Domain {
    /// 1D corridor `[x0, x1]` with exits at the given end points.
    pub fn new_1d(x: [f64; 2], exit_points: &[f64]) -> Result<Self> {
        if !(x[1] > x[0]) {
            return config(format!("empty interval [{}, {}]", x[0], x[1]));
        }
        if exit_points.is_empty() {
            return config("at least one exit is required");
        }
        let mut exits = Vec::with_capacity(exit_points.len());
        for (index, &p) in exit_points.iter().enumerate() {
            let side = if (p - x[0]).abs() <= GEOM_TOL {
                Side::Left
            } else if (p - x[1]).abs() <= GEOM_TOL {
                Side::Right
            } else {
                return config(format!("exit {index} at x = {p} is not an end point of the corridor"));
            };
            if exits.iter().any(|e: &ExitSpec| e.side == side) {
                return config(format!("exit {index} duplicates another exit"));
            }
            exits.push(ExitSpec {
                index,
                from: [p, 0.0],
                to: [p, 0.0],
                side,
                normal: side.outward_normal(),
            });
        }
        Ok(Domain {
            x,
            y: None,
            exits,
            wall_width: 0.0,
            obstacles: Vec::new(),
        })
    }

    /// 2D rectangle with exit segments on its sides.
    pub fn new_2d(
        x: [f64; 2],
        y: [f64; 2],
        exit_segments: &[(Point, Point)],
        wall_width: f64,
        obstacles: Vec<Rect>,
    ) -> Result<Self> {
        if !(x[1] > x[0] && y[1] > y[0]) {
            return config("degenerate rectangle");
        }
        if exit_segments.is_empty() {
            return config("at least one exit is required");
        }
        let mut exits: Vec<ExitSpec> = Vec::with_capacity(exit_segments.len());
        for (index, &(from, to)) in exit_segments.iter().enumerate() {
            let on = |axis: usize, v: f64| (from[axis] - v).abs() <= GEOM_TOL && (to[axis] - v).abs() <= GEOM_TOL;
            let side = if on(0, x[0]) {
                Side::Left
            } else if on(0, x[1]) {
                Side::Right
            } else if on(1, y[0]) {
                Side::Bottom
            } else if on(1, y[1]) {
                Side::Top
            } else {
                return config(format!("exit {index} does not lie on a side of the domain"));
            };
            let axis = along_axis(side);
            let range = if axis == 0 { x } else { y };
            let (lo, hi) = (from[axis].min(to[axis]), from[axis].max(to[axis]));
            if hi - lo <= GEOM_TOL {
                return config(format!("exit {index} has zero length"));
            }
            if lo < range[0] - GEOM_TOL || hi > range[1] + GEOM_TOL {
                return config(format!("exit {index} extends beyond its side"));
            }
            for other in exits.iter().filter(|e| e.side == side) {
                let (olo, ohi) = other.interval();
                if lo.max(olo) < hi.min(ohi) - GEOM_TOL {
                    return config(format!("exits {} and {index} overlap", other.index));
                }
            }
            exits.push(ExitSpec {
                index,
                from,
                to,
                side,
                normal: side.outward_normal(),
            });
        }
        for (i, o) in obstacles.iter().enumerate() {
            if !(o.x[1] > o.x[0] && o.y[1] > o.y[0]) {
                return config(format!("obstacle {i} is degenerate"));
            }
        }
        Ok(Domain {
            x,
            y: Some(y),
            exits,
            wall_width,
            obstacles,
        })
    }

    pub fn dim(&self) -> Dim {
        if self.y.is_some() {
            Dim::Two
        } else {
            Dim::One
        }
    }

    pub fn y_range(&self) -> [f64; 2] {
        self.y.unwrap_or([0.0, 0.0])
    }

    pub fn diameter(&self) -> f64 {
        let [y0, y1] = self.y_range();
        (self.x[1] - self.x[0]).hypot(y1 - y0)
    }

    /// Smallest extent of the rectangle.
    pub fn thickness(&self) -> f64 {
        match self.y {
            Some([y0, y1]) => (self.x[1] - self.x[0]).min(y1 - y0),
            None => self.x[1] - self.x[0],
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        let [y0, y1] = self.y_range();
        p[0] >= self.x[0] - GEOM_TOL
            && p[0] <= self.x[1] + GEOM_TOL
            && (self.y.is_none() || (p[1] >= y0 - GEOM_TOL && p[1] <= y1 + GEOM_TOL))
    }

    pub fn center(&self) -> Point {
        let [y0, y1] = self.y_range();
        [0.5 * (self.x[0] + self.x[1]), 0.5 * (y0 + y1)]
    }
}

/// Vision disc (interval in 1D) of diameter `diameter`; `+inf` is global vision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisionSpec {
    pub diameter: f64,
}

impl VisionSpec {
    pub fn new(diameter: f64) -> Result<Self> {
        if !(diameter >= 0.0) {
            return config(format!("vision diameter must be >= 0, got {diameter}"));
        }
        Ok(VisionSpec { diameter })
    }

    pub fn global() -> Self {
        VisionSpec {
            diameter: f64::INFINITY,
        }
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    /// True when the disc around any point of the domain covers the whole domain.
    pub fn covers(&self, domain: &Domain) -> bool {
        self.diameter.is_infinite() || self.radius() >= domain.diameter()
    }
}

impl Serialize for VisionSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.diameter.is_finite() {
            s.serialize_f64(self.diameter)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for VisionSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let diameter = match Raw::deserialize(d)? {
            Raw::Num(v) => v,
            Raw::Text(t) if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity" | "global") => f64::INFINITY,
            Raw::Text(t) => return Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        };
        VisionSpec::new(diameter).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceClass {
    Wall,
    Exit(usize),
}

/// A cell face on the boundary of the walkable region.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    /// Side of `cell` the face lies on.
    pub side: Side,
    pub class: FaceClass,
    pub midpoint: Point,
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub dim: Dim,
    pub cells: [usize; 2],
    pub h: [f64; 2],
    pub origin: Point,
    /// Cells covered by obstacles.
    pub blocked: Vec<bool>,
    /// Vertices touching at least one open cell.
    pub passable: Vec<bool>,
    pub boundary: Vec<BoundaryFace>,
    /// Zero-potential vertex set per exit.
    pub exit_vertices: Vec<Vec<usize>>,
    pub exits: Vec<ExitSpec>,
}

impl Grid {
    pub fn vertex_dims(&self) -> [usize; 2] {
        match self.dim {
            Dim::One => [self.cells[0] + 1, 1],
            Dim::Two => [self.cells[0] + 1, self.cells[1] + 1],
        }
    }

    pub fn n_vertices(&self) -> usize {
        let [a, b] = self.vertex_dims();
        a * b
    }

    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn n_exits(&self) -> usize {
        self.exits.len()
    }

    #[inline]
    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.cells[0] + 1) + i
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.cells[0] + i
    }

    #[inline]
    pub fn vertex_ij(&self, v: usize) -> (usize, usize) {
        let nx = self.cells[0] + 1;
        (v % nx, v / nx)
    }

    #[inline]
    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.cells[0], c / self.cells[0])
    }

    pub fn vertex_pos(&self, v: usize) -> Point {
        let (i, j) = self.vertex_ij(v);
        [
            self.origin[0] + i as f64 * self.h[0],
            match self.dim {
                Dim::One => self.origin[1],
                Dim::Two => self.origin[1] + j as f64 * self.h[1],
            },
        ]
    }

    pub fn cell_center(&self, c: usize) -> Point {
        let (i, j) = self.cell_ij(c);
        [
            self.origin[0] + (i as f64 + 0.5) * self.h[0],
            match self.dim {
                Dim::One => self.origin[1],
                Dim::Two => self.origin[1] + (j as f64 + 0.5) * self.h[1],
            },
        ]
    }

    /// Length (1D) or area (2D) of one cell.
    pub fn cell_measure(&self) -> f64 {
        match self.dim {
            Dim::One => self.h[0],
            Dim::Two => self.h[0] * self.h[1],
        }
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.cells[0] as f64 * self.h[0], match self.dim {
            Dim::One => 0.0,
            Dim::Two => self.cells[1] as f64 * self.h[1],
        }]
    }

    pub fn contains(&self, p: Point) -> bool {
        let e = self.extent();
        let inside_x = p[0] >= self.origin[0] - GEOM_TOL && p[0] <= self.origin[0] + e[0] + GEOM_TOL;
        match self.dim {
            Dim::One => inside_x,
            Dim::Two => inside_x && p[1] >= self.origin[1] - GEOM_TOL && p[1] <= self.origin[1] + e[1] + GEOM_TOL,
        }
    }

    pub fn nearest_vertex(&self, p: Point) -> usize {
        let [nx, ny] = self.vertex_dims();
        let i = (((p[0] - self.origin[0]) / self.h[0]).round().max(0.0) as usize).min(nx - 1);
        let j = match self.dim {
            Dim::One => 0,
            Dim::Two => (((p[1] - self.origin[1]) / self.h[1]).round().max(0.0) as usize).min(ny - 1),
        };
        self.vertex_index(i, j)
    }

    /// Cell containing `p` (clamped to the grid).
    pub fn locate_cell(&self, p: Point) -> usize {
        let i = (((p[0] - self.origin[0]) / self.h[0]).floor().max(0.0) as usize).min(self.cells[0] - 1);
        let j = match self.dim {
            Dim::One => 0,
            Dim::Two => (((p[1] - self.origin[1]) / self.h[1]).floor().max(0.0) as usize).min(self.cells[1] - 1),
        };
        self.cell_index(i, j)
    }

    pub fn exit_faces(&self, k: usize) -> impl Iterator<Item = &BoundaryFace> {
        self.boundary.iter().filter(move |f| f.class == FaceClass::Exit(k))
    }

    pub fn wall_faces(&self) -> impl Iterator<Item = &BoundaryFace> {
        self.boundary.iter().filter(|f| f.class == FaceClass::Wall)
    }

    /// Cells adjacent to each vertex that are open.
    pub fn vertex_cells(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.vertex_ij(v);
        let (ncx, ncy) = (self.cells[0], self.cells[1]);
        let two = self.dim == Dim::Two;
        let mut out = [usize::MAX; 4];
        let mut n = 0;
        for (di, dj) in [(0usize, 0usize), (1, 0), (0, 1), (1, 1)] {
            if !two && dj == 1 {
                continue;
            }
            if i < di || i - di >= ncx {
                continue;
            }
            let cj = if two {
                if j < dj || j - dj >= ncy {
                    continue;
                }
                j - dj
            } else {
                0
            };
            let c = self.cell_index(i - di, cj);
            if !self.blocked[c] {
                out[n] = c;
                n += 1;
            }
        }
        out.into_iter().take(n)
    }

    /// Vertices at the corners (ends in 1D) of a cell.
    pub fn cell_vertices(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.cell_ij(c);
        let n = if self.dim == Dim::Two { 4 } else { 2 };
        [(0, 0), (1, 0), (0, 1), (1, 1)]
            .into_iter()
            .take(n)
            .map(move |(di, dj)| self.vertex_index(i + di, j + dj))
    }
}

/// Discretizes the domain into `resolution` cells per axis (only the first
/// entry is used in 1D).
pub fn build_grid(domain: &Domain, resolution: &[usize]) -> Result<Grid> {
    let dim = domain.dim();
    let nx = *resolution.first().ok_or_else(|| crate::Error::Config("empty resolution".into()))?;
    let ny = match dim {
        Dim::One => 1,
        Dim::Two => *resolution
            .get(1)
            .ok_or_else(|| crate::Error::Config("2D domain needs two cell counts".into()))?,
    };
    if nx < 3 || (dim == Dim::Two && ny < 3) {
        return config(format!("need at least 3 cells per axis, got {nx}x{ny}"));
    }
    let [y0, y1] = domain.y_range();
    let h = [
        (domain.x[1] - domain.x[0]) / nx as f64,
        match dim {
            Dim::One => 1.0,
            Dim::Two => (y1 - y0) / ny as f64,
        },
    ];
    let origin = [domain.x[0], y0];
    let mut grid = Grid {
        dim,
        cells: [nx, ny],
        h,
        origin,
        blocked: vec![false; nx * ny],
        passable: Vec::new(),
        boundary: Vec::new(),
        exit_vertices: vec![Vec::new(); domain.exits.len()],
        exits: domain.exits.clone(),
    };

    for c in 0..grid.n_cells() {
        let p = grid.cell_center(c);
        grid.blocked[c] = domain.obstacles.iter().any(|o| o.contains(p));
    }

    let classify = |side: Side, mid: Point| -> FaceClass {
        for e in domain.exits.iter().filter(|e| e.side == side) {
            match dim {
                Dim::One => return FaceClass::Exit(e.index),
                Dim::Two => {
                    let (lo, hi) = e.interval();
                    let t = mid[along_axis(side)];
                    if t > lo + GEOM_TOL && t < hi - GEOM_TOL {
                        return FaceClass::Exit(e.index);
                    }
                }
            }
        }
        FaceClass::Wall
    };

    let mut boundary = Vec::new();
    match dim {
        Dim::One => {
            for (side, cell, x) in [(Side::Left, 0, domain.x[0]), (Side::Right, nx - 1, domain.x[1])] {
                let mid = [x, 0.0];
                boundary.push(BoundaryFace {
                    cell,
                    side,
                    class: classify(side, mid),
                    midpoint: mid,
                });
            }
        }
        Dim::Two => {
            for j in 0..ny {
                let yc = y0 + (j as f64 + 0.5) * h[1];
                for (side, i, x) in [(Side::Left, 0, domain.x[0]), (Side::Right, nx - 1, domain.x[1])] {
                    let cell = grid.cell_index(i, j);
                    if grid.blocked[cell] {
                        continue;
                    }
                    let mid = [x, yc];
                    boundary.push(BoundaryFace {
                        cell,
                        side,
                        class: classify(side, mid),
                        midpoint: mid,
                    });
                }
            }
            for i in 0..nx {
                let xc = domain.x[0] + (i as f64 + 0.5) * h[0];
                for (side, j, y) in [(Side::Bottom, 0, y0), (Side::Top, ny - 1, y1)] {
                    let cell = grid.cell_index(i, j);
                    if grid.blocked[cell] {
                        continue;
                    }
                    let mid = [xc, y];
                    boundary.push(BoundaryFace {
                        cell,
                        side,
                        class: classify(side, mid),
                        midpoint: mid,
                    });
                }
            }
            // obstacle walls
            for c in 0..grid.n_cells() {
                if grid.blocked[c] {
                    continue;
                }
                let (i, j) = grid.cell_ij(c);
                let center = grid.cell_center(c);
                let nbrs = [
                    (Side::Left, i > 0, i.wrapping_sub(1), j),
                    (Side::Right, i + 1 < nx, i + 1, j),
                    (Side::Bottom, j > 0, i, j.wrapping_sub(1)),
                    (Side::Top, j + 1 < ny, i, j + 1),
                ];
                for (side, exists, ni, nj) in nbrs {
                    if exists && grid.blocked[grid.cell_index(ni, nj)] {
                        let n = side.outward_normal();
                        boundary.push(BoundaryFace {
                            cell: c,
                            side,
                            class: FaceClass::Wall,
                            midpoint: [center[0] + 0.5 * h[0] * n[0], center[1] + 0.5 * h[1] * n[1]],
                        });
                    }
                }
            }
        }
    }
    grid.boundary = boundary;

    for e in &domain.exits {
        if !grid.boundary.iter().any(|f| f.class == FaceClass::Exit(e.index)) {
            return config(format!("exit {} is not aligned with any boundary edge", e.index));
        }
    }

    let [vnx, vny] = grid.vertex_dims();
    grid.passable = (0..vnx * vny).map(|v| grid.vertex_cells(v).next().is_some()).collect();

    for e in &domain.exits {
        let verts = &mut grid.exit_vertices[e.index];
        match dim {
            Dim::One => verts.push(if e.side == Side::Left { 0 } else { vnx - 1 }),
            Dim::Two => {
                let (lo, hi) = e.interval();
                let line: Vec<(usize, usize)> = match e.side {
                    Side::Left => (0..vny).map(|j| (0, j)).collect(),
                    Side::Right => (0..vny).map(|j| (vnx - 1, j)).collect(),
                    Side::Bottom => (0..vnx).map(|i| (i, 0)).collect(),
                    Side::Top => (0..vnx).map(|i| (i, vny - 1)).collect(),
                };
                for (i, j) in line {
                    let v = i + j * vnx;
                    let t = origin[along_axis(e.side)] + [i, j][along_axis(e.side)] as f64 * h[along_axis(e.side)];
                    if t >= lo - GEOM_TOL && t <= hi + GEOM_TOL && grid.passable[v] {
                        verts.push(v);
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Vertices inside the vision disc (interval in 1D) centered at `x`. The
/// vertex nearest to `x` is always visible.
pub fn vision_mask(grid: &Grid, x: Point, vision: VisionSpec) -> Vec<bool> {
    let n = grid.n_vertices();
    if vision.diameter.is_infinite() {
        return vec![true; n];
    }
    let r = vision.radius();
    let mut mask: Vec<bool> = (0..n).map(|v| in_disc(grid.vertex_pos(v), x, r)).collect();
    mask[grid.nearest_vertex(x)] = true;
    mask
}

#[inline]
pub(crate) fn in_disc(p: Point, center: Point, radius: f64) -> bool {
    let d2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
    let r = radius * (1.0 + 1e-12) + 1e-12;
    d2 <= r * r
}

/// Wall-proximity profile on vertices: 1 on walls, decaying linearly to 0 at
/// distance `w`, and ramped to 0 on exits inside right triangles of leg `w`
/// next to every exit end point.
pub fn layer_profile(grid: &Grid, domain: &Domain) -> Result<ScalarField> {
    let n = grid.n_vertices();
    if domain.dim() == Dim::One {
        return Ok(ScalarField::zeros(Location::Vertex, grid.vertex_dims()));
    }
    let w = domain.wall_width;
    if !(w > 0.0) {
        return config("wall layer width must be positive");
    }
    if w > 0.5 * domain.thickness() {
        return config(format!(
            "wall layer width {w} exceeds half the domain thickness {}",
            0.5 * domain.thickness()
        ));
    }
    let [y0, y1] = domain.y_range();
    let [x0, x1] = domain.x;
    let values = (0..n)
        .map(|v| {
            let p = grid.vertex_pos(v);
            let mut chi: f64 = 0.0;
            for side in Side::ALL {
                let (d, foot) = match side {
                    Side::Left => (p[0] - x0, [x0, p[1].clamp(y0, y1)]),
                    Side::Right => (x1 - p[0], [x1, p[1].clamp(y0, y1)]),
                    Side::Bottom => (p[1] - y0, [p[0].clamp(x0, x1), y0]),
                    Side::Top => (y1 - p[1], [p[0].clamp(x0, x1), y1]),
                };
                if d >= w {
                    continue;
                }
                let to_exit = domain
                    .exits
                    .iter()
                    .map(|e| e.distance(foot))
                    .fold(f64::INFINITY, f64::min);
                let to_exit = if to_exit <= GEOM_TOL { 0.0 } else { to_exit };
                let val = (1.0 - d.max(0.0) / w).min(to_exit / w);
                chi = chi.max(val.clamp(0.0, 1.0));
            }
            for o in &domain.obstacles {
                chi = chi.max((1.0 - o.distance(p) / w).clamp(0.0, 1.0));
            }
            chi
        })
        .collect();
    Ok(ScalarField::from_values(Location::Vertex, grid.vertex_dims(), values))
}

/// Fixed wall cost `chi / f(rho_max - eps)`, capped at the model's wall cap.
pub fn wall_cost(chi: &ScalarField, cm: &CostModel) -> ScalarField {
    let base = 1.0 / cm.speed(cm.rho_max - cm.wall_epsilon);
    let cap = cm.wall_cap.unwrap_or(f64::INFINITY);
    chi.map(|c| (c * base).min(cap))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor(exits: &[(Point, Point)]) -> Domain {
        Domain::new_2d([0.0, 1.0], [0.0, 0.5], exits, 0.025, Vec::new()).unwrap()
    }

    #[test]
    fn unit_interval_has_two_exit_edges() {
        let d = Domain::new_1d([0.0, 1.0], &[0.0, 1.0]).unwrap();
        let g = build_grid(&d, &[10]).unwrap();
        assert_eq!(g.exit_faces(0).count() + g.exit_faces(1).count(), 2);
        assert_eq!(g.wall_faces().count(), 0);
        assert_eq!(g.exit_vertices, vec![vec![0], vec![10]]);
    }

    #[test]
    fn full_side_exits_leave_walls_on_top_and_bottom() {
        let d = corridor(&[([0.0, 0.0], [0.0, 0.5]), ([1.0, 0.0], [1.0, 0.5])]);
        let g = build_grid(&d, &[20, 10]).unwrap();
        assert_eq!(g.wall_faces().count(), 40);
        assert!(g.wall_faces().all(|f| matches!(f.side, Side::Bottom | Side::Top)));
        assert_eq!(g.exit_faces(0).count(), 10);
        assert_eq!(g.exit_vertices[0].len(), 11);
    }

    #[test]
    fn partial_left_exit_covers_low_cells() {
        let d = corridor(&[([0.0, 0.0], [0.0, 0.1]), ([1.0, 0.5], [1.0, 0.4])]);
        let g = build_grid(&d, &[40, 20]).unwrap();
        let faces: Vec<_> = g.exit_faces(0).collect();
        assert!(!faces.is_empty());
        for f in g.boundary.iter().filter(|f| f.side == Side::Left) {
            let center_y = g.cell_center(f.cell)[1];
            assert_eq!(f.class == FaceClass::Exit(0), center_y < 0.1, "cell center y = {center_y}");
        }
        assert_eq!(g.exit_faces(1).count(), 4);
        assert_eq!(g.exits[1].normal, [1.0, 0.0]);
    }

    #[test]
    fn misplaced_exits_are_rejected() {
        assert!(Domain::new_2d([0.0, 1.0], [0.0, 0.5], &[([0.5, 0.0], [0.5, 0.1])], 0.02, vec![]).is_err());
        assert!(Domain::new_2d([0.0, 1.0], [0.0, 0.5], &[], 0.02, vec![]).is_err());
        assert!(Domain::new_1d([0.0, 1.0], &[0.5]).is_err());
        // too short to contain any face midpoint on a coarse grid
        let d = corridor(&[([0.0, 0.0], [0.0, 0.01])]);
        assert!(build_grid(&d, &[10, 5]).is_err());
        assert!(Domain::new_2d(
            [0.0, 1.0],
            [0.0, 0.5],
            &[([0.0, 0.0], [0.0, 0.3]), ([0.0, 0.2], [0.0, 0.5])],
            0.02,
            vec![]
        )
        .is_err());
        assert!(build_grid(&corridor(&[([0.0, 0.0], [0.0, 0.5])]), &[2, 5]).is_err());
    }

    #[test]
    fn vision_mask_limits() {
        let d = Domain::new_1d([0.0, 1.0], &[0.0, 1.0]).unwrap();
        let g = build_grid(&d, &[1000]).unwrap();
        let all = vision_mask(&g, [0.5, 0.0], VisionSpec::global());
        assert!(all.iter().all(|&b| b));
        let none = vision_mask(&g, [0.5, 0.0], VisionSpec::new(0.0).unwrap());
        assert_eq!(none.iter().filter(|&&b| b).count(), 1);
        assert!(none[500]);
        let m = vision_mask(&g, [0.5, 0.0], VisionSpec::new(0.75).unwrap());
        for (v, &b) in m.iter().enumerate() {
            let x = g.vertex_pos(v)[0];
            assert_eq!(b, (0.125..=0.875).contains(&x), "x = {x}");
        }
    }

    #[test]
    fn vision_mask_is_mirror_symmetric() {
        let d = corridor(&[([0.0, 0.0], [0.0, 0.5]), ([1.0, 0.0], [1.0, 0.5])]);
        let g = build_grid(&d, &[40, 20]).unwrap();
        let [nx, ny] = g.vertex_dims();
        let x = g.vertex_pos(g.vertex_index(13, 7));
        let xm = g.vertex_pos(g.vertex_index(nx - 1 - 13, 7));
        let vis = VisionSpec::new(0.3).unwrap();
        let a = vision_mask(&g, x, vis);
        let b = vision_mask(&g, xm, vis);
        for j in 0..ny {
            for i in 0..nx {
                assert_eq!(a[g.vertex_index(i, j)], b[g.vertex_index(nx - 1 - i, j)]);
            }
        }
    }

    #[test]
    fn layer_profile_values() {
        let d = corridor(&[([0.0, 0.0], [0.0, 0.1]), ([1.0, 0.5], [1.0, 0.4])]);
        let g = build_grid(&d, &[400, 200]).unwrap();
        let chi = layer_profile(&g, &d).unwrap();
        let w = d.wall_width;
        let at = |x: f64, y: f64| chi.values[g.nearest_vertex([x, y])];
        // half a layer width from the bottom wall, far from exits
        assert!((at(0.5, 0.5 * w) - 0.5).abs() < 1e-9);
        assert_eq!(at(0.5, 0.25), 0.0);
        assert!((at(0.5, 0.0) - 1.0).abs() < 1e-12);
        for &v in g.exit_vertices.iter().flatten() {
            assert_eq!(chi.values[v], 0.0);
        }
        assert!(chi.values.iter().all(|&c| (0.0..=1.0).contains(&c)));
        // wall vertices away from the exit ramps are exactly 1
        assert!((at(0.0, 0.3) - 1.0).abs() < 1e-12);
        assert!((at(0.0, 0.1 + w) - 1.0).abs() < 1e-12);
        // inside the ramp triangle next to the left exit
        assert!((at(0.0, 0.1 + 0.5 * w) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn layer_profile_rejects_thick_layers() {
        let d = Domain::new_2d([0.0, 1.0], [0.0, 0.5], &[([0.0, 0.0], [0.0, 0.5])], 0.3, vec![]).unwrap();
        let g = build_grid(&d, &[20, 10]).unwrap();
        assert!(layer_profile(&g, &d).is_err());
    }

    #[test]
    fn wall_cost_examples() {
        let cm = CostModel::default();
        let chi = ScalarField::from_values(Location::Vertex, [3, 1], vec![0.0, 1.0, 0.5]);
        let w = wall_cost(&chi, &cm);
        assert_eq!(w.values[0], 0.0);
        assert!((w.values[1] - 40.0).abs() < 1e-9);
        assert!((w.values[2] - 20.0).abs() < 1e-9);
        let capped = CostModel {
            wall_cap: Some(10.0),
            ..CostModel::default()
        };
        assert_eq!(wall_cost(&chi, &capped).values[1], 10.0);
    }

    #[test]
    fn obstacles_block_cells_and_add_wall_faces() {
        let d = Domain::new_2d(
            [0.0, 1.0],
            [0.0, 0.5],
            &[([0.0, 0.0], [0.0, 0.5])],
            0.02,
            vec![Rect { x: [0.4, 0.6], y: [0.2, 0.3] }],
        )
        .unwrap();
        let g = build_grid(&d, &[20, 10]).unwrap();
        assert_eq!(g.blocked.iter().filter(|&&b| b).count(), 4 * 2);
        let obstacle_faces = g
            .wall_faces()
            .filter(|f| f.midpoint[0] > 0.0 && f.midpoint[0] < 1.0 && f.midpoint[1] > 0.0 && f.midpoint[1] < 0.5)
            .count();
        assert_eq!(obstacle_faces, 2 * 4 + 2 * 2);
        assert!(!g.passable[g.nearest_vertex([0.5, 0.25])]);
        assert!(g.passable[g.nearest_vertex([0.4, 0.25])]);
    }
}
