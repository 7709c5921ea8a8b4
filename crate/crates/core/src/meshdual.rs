//! Tensor-product rectangular meshes, the global Lobatto and Gauss lattices,
//! the dual partition of control volumes and the equation numbering.
//!
//! Lattice nodes are addressed by `(ix, iy)` with `ix` in `0..=k*m` and `iy` in
//! `0..=k*n`. Node `ix = e*k + a` is local Lobatto node `a` of element column
//! `e`; interface coordinates are shared by the two neighbouring elements and
//! are stored once. Gauss coordinate `gx[i]` sits strictly between Lobatto
//! coordinates `xs[i]` and `xs[i + 1]`, so the control volume of interior node
//! `(ix, iy)` is `[gx[ix-1], gx[ix]] x [gy[iy-1], gy[iy]]`.

use thiserror::Error;

use crate::polyquad::{gauss_rule, lobatto_points, LobattoSet, QuadError, QuadRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("lattice node ({0}, {1}) is not interior")]
    NotInterior(usize, usize),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }

    pub fn strictly_contains(&self, x: f64, y: f64) -> bool {
        self.x0 < x && x < self.x1 && self.y0 < y && y < self.y1
    }
}

/// Element `tau_{ex,ey} = [x_ex, x_{ex+1}] x [y_ey, y_{ey+1}]` (zero based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementId {
    pub ex: usize,
    pub ey: usize,
}

fn check_breaks(name: &str, breaks: &[f64]) -> Result<(), MeshError> {
    if breaks.len() < 2 {
        return Err(MeshError::InvalidDomain(format!(
            "{name} needs at least two breaks"
        )));
    }
    if breaks.iter().any(|b| !b.is_finite()) {
        return Err(MeshError::InvalidDomain(format!(
            "{name} has non-finite breaks"
        )));
    }
    if !breaks.windows(2).all(|w| w[0] < w[1]) {
        return Err(MeshError::InvalidDomain(format!(
            "{name} must be strictly increasing"
        )));
    }
    Ok(())
}

/// Rectangular tensor-product partition of `[a, b] x [c, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMesh {
    x_breaks: Vec<f64>,
    y_breaks: Vec<f64>,
}

impl TensorMesh {
    pub fn new(x_breaks: Vec<f64>, y_breaks: Vec<f64>) -> Result<Self, MeshError> {
        check_breaks("x_breaks", &x_breaks)?;
        check_breaks("y_breaks", &y_breaks)?;
        Ok(Self { x_breaks, y_breaks })
    }

    pub fn x_breaks(&self) -> &[f64] {
        &self.x_breaks
    }

    pub fn y_breaks(&self) -> &[f64] {
        &self.y_breaks
    }

    /// Number of element columns `m`.
    pub fn nx(&self) -> usize {
        self.x_breaks.len() - 1
    }

    /// Number of element rows `n`.
    pub fn ny(&self) -> usize {
        self.y_breaks.len() - 1
    }

    pub fn num_elements(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn hx(&self, ex: usize) -> f64 {
        self.x_breaks[ex + 1] - self.x_breaks[ex]
    }

    pub fn hy(&self, ey: usize) -> f64 {
        self.y_breaks[ey + 1] - self.y_breaks[ey]
    }

    /// Longest element edge.
    pub fn h(&self) -> f64 {
        let hx = (0..self.nx()).map(|e| self.hx(e)).fold(0.0, f64::max);
        let hy = (0..self.ny()).map(|e| self.hy(e)).fold(0.0, f64::max);
        hx.max(hy)
    }

    /// `max h / min h` over all element edges.
    pub fn quasi_uniformity(&self) -> f64 {
        let edges = (0..self.nx())
            .map(|e| self.hx(e))
            .chain((0..self.ny()).map(|e| self.hy(e)));
        let (lo, hi) = edges.fold((f64::INFINITY, 0.0f64), |(lo, hi), h| {
            (lo.min(h), hi.max(h))
        });
        hi / lo
    }

    pub fn domain(&self) -> Rect {
        Rect::new(
            self.x_breaks[0],
            *self.x_breaks.last().unwrap(),
            self.y_breaks[0],
            *self.y_breaks.last().unwrap(),
        )
    }

    pub fn element_rect(&self, el: ElementId) -> Rect {
        Rect::new(
            self.x_breaks[el.ex],
            self.x_breaks[el.ex + 1],
            self.y_breaks[el.ey],
            self.y_breaks[el.ey + 1],
        )
    }

    pub fn elements(&self) -> impl Iterator<Item = ElementId> + '_ {
        (0..self.ny()).flat_map(move |ey| (0..self.nx()).map(move |ex| ElementId { ex, ey }))
    }

    /// Element column containing `x`; ties at an interface go to the lower
    /// index. `None` outside `[a, b]`.
    pub fn locate_x(&self, x: f64) -> Option<usize> {
        locate(&self.x_breaks, x)
    }

    pub fn locate_y(&self, y: f64) -> Option<usize> {
        locate(&self.y_breaks, y)
    }

    /// Mesh with every element split in half in both directions.
    pub fn refined(&self) -> Self {
        let split = |b: &[f64]| {
            let mut out = Vec::with_capacity(2 * b.len() - 1);
            for w in b.windows(2) {
                out.push(w[0]);
                out.push(0.5 * (w[0] + w[1]));
            }
            out.push(*b.last().unwrap());
            out
        };
        Self {
            x_breaks: split(&self.x_breaks),
            y_breaks: split(&self.y_breaks),
        }
    }
}

fn locate(breaks: &[f64], x: f64) -> Option<usize> {
    let last = breaks.len() - 1;
    if !(breaks[0] <= x && x <= breaks[last]) {
        return None;
    }
    // first break >= x, minus one
    let idx = breaks.partition_point(|&b| b < x);
    Some(idx.saturating_sub(1).min(last - 1))
}

fn uniform_breaks(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    let h = (hi - lo) / cells as f64;
    (0..=cells)
        .map(|i| if i == cells { hi } else { lo + h * i as f64 })
        .collect()
}

/// Equispaced `m x n` mesh of `[a, b] x [c, d]`.
pub fn build_uniform_mesh(
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    m: usize,
    n: usize,
) -> Result<TensorMesh, MeshError> {
    if !(a < b) || !(c < d) {
        return Err(MeshError::InvalidDomain(format!(
            "degenerate domain [{a}, {b}] x [{c}, {d}]"
        )));
    }
    if m == 0 || n == 0 {
        return Err(MeshError::InvalidDomain(
            "element counts must be positive".into(),
        ));
    }
    TensorMesh::new(uniform_breaks(a, b, m), uniform_breaks(c, d, n))
}

/// Affine images of reference nodes on every cell of `breaks`. Lobatto
/// endpoints are taken from the breaks directly so interfaces are bit-exact.
fn map_lobatto(breaks: &[f64], set: &LobattoSet) -> Vec<f64> {
    let k = set.degree();
    let mut out = Vec::with_capacity(k * (breaks.len() - 1) + 1);
    for w in breaks.windows(2) {
        let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
        out.push(w[0]);
        out.extend(set.nodes()[1..k].iter().map(|t| mid + half * t));
    }
    out.push(*breaks.last().unwrap());
    out
}

fn map_gauss(breaks: &[f64], rule: &QuadRule) -> Vec<f64> {
    breaks
        .windows(2)
        .flat_map(|w| {
            let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            rule.nodes().iter().map(move |t| mid + half * t)
        })
        .collect()
}

/// Global Lobatto lattice: the trial degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct LobattoLattice {
    k: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl LobattoLattice {
    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Lattice extent `(k*m + 1, k*n + 1)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.xs.len(), self.ys.len())
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, x fastest.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.xs.len() + ix
    }

    pub fn coords(&self, node: usize) -> (usize, usize) {
        (node % self.xs.len(), node / self.xs.len())
    }

    pub fn point(&self, ix: usize, iy: usize) -> (f64, f64) {
        (self.xs[ix], self.ys[iy])
    }

    pub fn is_interior(&self, ix: usize, iy: usize) -> bool {
        ix > 0 && iy > 0 && ix + 1 < self.xs.len() && iy + 1 < self.ys.len()
    }

    /// One flag per flat index; false exactly on the boundary.
    pub fn interior_mask(&self) -> Vec<bool> {
        (0..self.len())
            .map(|p| {
                let (ix, iy) = self.coords(p);
                self.is_interior(ix, iy)
            })
            .collect()
    }

    pub fn num_interior(&self) -> usize {
        (self.xs.len() - 2) * (self.ys.len() - 2)
    }

    /// Flat index of local node `(a, b)` of element `el`.
    pub fn local_node(&self, el: ElementId, a: usize, b: usize) -> usize {
        self.index(el.ex * self.k + a, el.ey * self.k + b)
    }
}

/// Global Gauss lattice and the control volumes it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGrid {
    k: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl DualGrid {
    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    /// Control volume of interior lattice node `(ix, iy)`.
    pub fn control_volume(&self, ix: usize, iy: usize) -> Result<Rect, MeshError> {
        let interior = ix > 0 && iy > 0 && ix < self.gx.len() && iy < self.gy.len();
        if !interior {
            return Err(MeshError::NotInterior(ix, iy));
        }
        Ok(Rect::new(
            self.gx[ix - 1],
            self.gx[ix],
            self.gy[iy - 1],
            self.gy[iy],
        ))
    }

    /// Element column that owns Gauss coordinate `gx[i]`.
    pub fn gauss_element_x(&self, i: usize) -> usize {
        i / self.k
    }

    pub fn gauss_element_y(&self, j: usize) -> usize {
        j / self.k
    }

    /// Pieces of `K*` of node `(ix, iy)` cut by the primal mesh. The pieces
    /// tile the control volume; each lies in exactly one element.
    pub fn elements_overlapping(
        &self,
        mesh: &TensorMesh,
        ix: usize,
        iy: usize,
    ) -> Result<Vec<(ElementId, Rect)>, MeshError> {
        let cv = self.control_volume(ix, iy)?;
        let split = |lo_el: usize, hi_el: usize, lo: f64, hi: f64, breaks: &[f64]| {
            if lo_el == hi_el {
                vec![(lo_el, lo, hi)]
            } else {
                vec![(lo_el, lo, breaks[hi_el]), (hi_el, breaks[hi_el], hi)]
            }
        };
        let xs = split(
            self.gauss_element_x(ix - 1),
            self.gauss_element_x(ix),
            cv.x0,
            cv.x1,
            mesh.x_breaks(),
        );
        let ys = split(
            self.gauss_element_y(iy - 1),
            self.gauss_element_y(iy),
            cv.y0,
            cv.y1,
            mesh.y_breaks(),
        );
        let mut out = Vec::with_capacity(4);
        for &(ey, y0, y1) in &ys {
            for &(ex, x0, x1) in &xs {
                out.push((ElementId { ex, ey }, Rect::new(x0, x1, y0, y1)));
            }
        }
        Ok(out)
    }
}

/// Interior lattice node <-> equation index, lexicographic with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    nxs: usize,
    nys: usize,
}

impl DofMap {
    pub fn new(lattice: &LobattoLattice) -> Self {
        let (nxs, nys) = lattice.shape();
        Self { nxs, nys }
    }

    pub fn len(&self) -> usize {
        (self.nxs - 2) * (self.nys - 2)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Equation index of lattice node `(ix, iy)`, `None` on the boundary.
    pub fn equation(&self, ix: usize, iy: usize) -> Option<usize> {
        if ix == 0 || iy == 0 || ix + 1 >= self.nxs || iy + 1 >= self.nys {
            None
        } else {
            Some((iy - 1) * (self.nxs - 2) + (ix - 1))
        }
    }

    /// Equation index of a flat lattice index.
    pub fn equation_of_node(&self, node: usize) -> Option<usize> {
        self.equation(node % self.nxs, node / self.nxs)
    }

    /// Lattice coordinates `(ix, iy)` of equation `eq`.
    pub fn node(&self, eq: usize) -> (usize, usize) {
        let w = self.nxs - 2;
        (eq % w + 1, eq / w + 1)
    }
}

/// Affine-mapped Lobatto and Gauss lattices of `mesh` for degree `k`.
pub fn build_lattices(
    mesh: &TensorMesh,
    k: usize,
) -> Result<(LobattoLattice, DualGrid), MeshError> {
    let lob = lobatto_points(k)?;
    let gauss = gauss_rule(k)?;
    let lattice = LobattoLattice {
        k,
        xs: map_lobatto(mesh.x_breaks(), &lob),
        ys: map_lobatto(mesh.y_breaks(), &lob),
    };
    let dual = DualGrid {
        k,
        gx: map_gauss(mesh.x_breaks(), &gauss),
        gy: map_gauss(mesh.y_breaks(), &gauss),
    };
    Ok((lattice, dual))
}
