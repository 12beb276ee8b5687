//! Cartesian grid, two-point flux transmissibilities and pressure systems.
//!
//! Cells are numbered row-major: cell `(i, j)` with `i` along x lives at
//! `j * nx + i`. Faces are enumerated once per grid in a fixed order
//! (interior x-faces, interior y-faces, then the west, east, south and north
//! boundary faces) and every per-face array in the crate follows that order.
//! An interior face joins cells `a < b` and its flux is positive from `a` to
//! `b`; a boundary face flux is positive when leaving the domain.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    West,
    East,
    South,
    North,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    Cell(usize),
    Boundary(Side),
}

/// One grid face. `geom` is face area over center distance (half-cell
/// distance on the boundary), with unit thickness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub a: usize,
    pub neighbor: Neighbor,
    pub geom: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub dx: f64,
    pub dy: f64,
    pub cell_volume: f64,
    faces: Vec<Face>,
    n_interior: usize,
}

pub fn build_grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid> {
    if nx < 3 || ny < 3 {
        return Err(Error::InvalidGrid(format!(
            "need at least 3 cells per axis, got {nx}x{ny}"
        )));
    }
    if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
        return Err(Error::InvalidGrid(format!(
            "domain extents must be positive and finite, got {lx}x{ly}"
        )));
    }
    let dx = lx / nx as f64;
    let dy = ly / ny as f64;
    let mut faces = Vec::with_capacity((nx - 1) * ny + nx * (ny - 1) + 2 * (nx + ny));
    for j in 0..ny {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            faces.push(Face { a, neighbor: Neighbor::Cell(a + 1), geom: dy / dx });
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let a = j * nx + i;
            faces.push(Face { a, neighbor: Neighbor::Cell(a + nx), geom: dx / dy });
        }
    }
    let n_interior = faces.len();
    for j in 0..ny {
        faces.push(Face { a: j * nx, neighbor: Neighbor::Boundary(Side::West), geom: 2.0 * dy / dx });
    }
    for j in 0..ny {
        faces.push(Face {
            a: j * nx + nx - 1,
            neighbor: Neighbor::Boundary(Side::East),
            geom: 2.0 * dy / dx,
        });
    }
    for i in 0..nx {
        faces.push(Face { a: i, neighbor: Neighbor::Boundary(Side::South), geom: 2.0 * dx / dy });
    }
    for i in 0..nx {
        faces.push(Face {
            a: (ny - 1) * nx + i,
            neighbor: Neighbor::Boundary(Side::North),
            geom: 2.0 * dx / dy,
        });
    }
    Ok(Grid { nx, ny, lx, ly, dx, dy, cell_volume: dx * dy, faces, n_interior })
}

impl Grid {
    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (i, j) = self.coords(cell);
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn interior_faces(&self) -> &[Face] {
        &self.faces[..self.n_interior]
    }

    pub fn boundary_faces(&self) -> &[Face] {
        &self.faces[self.n_interior..]
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_cells() {
            return Err(Error::ShapeMismatch { expected: self.n_cells(), actual: len });
        }
        Ok(())
    }
}

/// Per-cell isotropic permeability in m².
#[derive(Debug, Clone, PartialEq)]
pub struct PermeabilityField {
    values: Vec<f64>,
}

impl PermeabilityField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!("permeability {v} in cell {i} is not positive and finite")));
        }
        Ok(Self { values })
    }

    pub fn uniform(n: usize, k: f64) -> Result<Self> {
        Self::new(vec![k; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Per-cell volumetric source rate in m³/s; positive injects.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceField {
    pub values: Vec<f64>,
}

impl SourceField {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }
}

/// Per-cell pressure in Pa.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureField {
    pub values: Vec<f64>,
}

impl PressureField {
    pub fn at(&self, cell: usize) -> f64 {
        self.values[cell]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SideCondition {
    Dirichlet(f64),
    NoFlow,
}

/// Outer boundary conditions, one per side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary {
    pub west: SideCondition,
    pub east: SideCondition,
    pub south: SideCondition,
    pub north: SideCondition,
}

impl Boundary {
    pub fn dirichlet(p: f64) -> Self {
        let c = SideCondition::Dirichlet(p);
        Self { west: c, east: c, south: c, north: c }
    }

    pub fn no_flow() -> Self {
        let c = SideCondition::NoFlow;
        Self { west: c, east: c, south: c, north: c }
    }

    pub fn side(&self, side: Side) -> SideCondition {
        match side {
            Side::West => self.west,
            Side::East => self.east,
            Side::South => self.south,
            Side::North => self.north,
        }
    }

    /// Dirichlet value for a boundary face, `None` for no-flow sides.
    pub fn pressure(&self, side: Side) -> Option<f64> {
        match self.side(side) {
            SideCondition::Dirichlet(p) => Some(p),
            SideCondition::NoFlow => None,
        }
    }
}

/// Harmonic two-point coefficient of the cell products `m = k λ`.
#[inline]
pub(crate) fn harmonic(ma: f64, mb: f64) -> f64 {
    2.0 * ma * mb / (ma + mb)
}

/// Face transmissibilities aligned with [`Grid::faces`]. No-flow boundary
/// faces get zero.
pub fn transmissibilities(
    grid: &Grid,
    perm: &PermeabilityField,
    mobility: &[f64],
    boundary: &Boundary,
) -> Result<Vec<f64>> {
    grid.check_len(perm.len())?;
    grid.check_len(mobility.len())?;
    if let Some((i, m)) = mobility.iter().enumerate().find(|(_, m)| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidInput(format!("mobility {m} in cell {i} is not positive and finite")));
    }
    let k = perm.values();
    let trans = grid
        .faces()
        .iter()
        .map(|f| match f.neighbor {
            Neighbor::Cell(b) => f.geom * harmonic(k[f.a] * mobility[f.a], k[b] * mobility[b]),
            Neighbor::Boundary(side) => match boundary.side(side) {
                SideCondition::Dirichlet(_) => f.geom * k[f.a] * mobility[f.a],
                SideCondition::NoFlow => 0.0,
            },
        })
        .collect();
    Ok(trans)
}

/// Sparse symmetric 5-point system `A p = rhs`.
///
/// Off-diagonal couplings are stored once per interior face, so the matrix is
/// symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub diag: Vec<f64>,
    pub couplings: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Builds the TPFA system from precomputed transmissibilities.
    pub fn from_transmissibilities(grid: &Grid, trans: &[f64], sources: &SourceField, boundary: &Boundary) -> Result<Self> {
        grid.check_len(sources.values.len())?;
        if trans.len() != grid.n_faces() {
            return Err(Error::ShapeMismatch { expected: grid.n_faces(), actual: trans.len() });
        }
        let n = grid.n_cells();
        let mut diag = vec![0.0; n];
        let mut rhs = sources.values.clone();
        let mut couplings = Vec::with_capacity(grid.interior_faces().len());
        for (f, &t) in grid.faces().iter().zip(trans) {
            match f.neighbor {
                Neighbor::Cell(b) => {
                    diag[f.a] += t;
                    diag[b] += t;
                    couplings.push((f.a, b, -t));
                }
                Neighbor::Boundary(side) => {
                    if let Some(p) = boundary.pressure(side) {
                        diag[f.a] += t;
                        rhs[f.a] += t * p;
                    }
                }
            }
        }
        Ok(Self { diag, couplings, rhs })
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, d), xi) in y.iter_mut().zip(&self.diag).zip(x) {
            *yi = d * xi;
        }
        for &(a, b, c) in &self.couplings {
            y[a] += c * x[b];
            y[b] += c * x[a];
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut m = vec![vec![0.0; n]; n];
        for (i, d) in self.diag.iter().enumerate() {
            m[i][i] = *d;
        }
        for &(a, b, c) in &self.couplings {
            m[a][b] += c;
            m[b][a] += c;
        }
        m
    }

    /// ‖A x − b‖ / ‖b‖, or ‖A x‖ when `b = 0`.
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.n()];
        self.matvec(x, &mut ax);
        let r = ax.iter().zip(&self.rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let nb = self.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        if nb > 0.0 {
            r / nb
        } else {
            r
        }
    }
}

pub fn assemble_pressure_system(
    grid: &Grid,
    perm: &PermeabilityField,
    mobility: &[f64],
    sources: &SourceField,
    boundary: &Boundary,
) -> Result<LinearSystem> {
    let trans = transmissibilities(grid, perm, mobility, boundary)?;
    LinearSystem::from_transmissibilities(grid, &trans, sources, boundary)
}

/// Signed face volumetric fluxes, aligned with [`Grid::faces`].
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    pub values: Vec<f64>,
}

impl FluxField {
    /// Flux leaving `cell` through face `face`. Zero if the face does not
    /// touch the cell.
    pub fn outflow(&self, grid: &Grid, face: usize, cell: usize) -> f64 {
        let f = &grid.faces()[face];
        if f.a == cell {
            self.values[face]
        } else if f.neighbor == Neighbor::Cell(cell) {
            -self.values[face]
        } else {
            0.0
        }
    }

    /// Net outflow of every cell through its faces.
    pub fn net_outflow(&self, grid: &Grid) -> Vec<f64> {
        let mut out = vec![0.0; grid.n_cells()];
        for (f, v) in grid.faces().iter().zip(&self.values) {
            out[f.a] += v;
            if let Neighbor::Cell(b) = f.neighbor {
                out[b] -= v;
            }
        }
        out
    }
}

/// Darcy fluxes `v = T (p_a − p_b)`; boundary faces use the Dirichlet value.
pub fn face_fluxes(grid: &Grid, trans: &[f64], pressure: &PressureField, boundary: &Boundary) -> FluxField {
    let p = &pressure.values;
    let values = grid
        .faces()
        .iter()
        .zip(trans)
        .map(|(f, &t)| match f.neighbor {
            Neighbor::Cell(b) => t * (p[f.a] - p[b]),
            Neighbor::Boundary(side) => match boundary.pressure(side) {
                Some(pb) => t * (p[f.a] - pb),
                None => 0.0,
            },
        })
        .collect();
    FluxField { values }
}
