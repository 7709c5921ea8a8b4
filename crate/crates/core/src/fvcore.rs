//! Finite volume system assembly and the identities behind it.
//!
//! The trial space is the continuous bi-`k` space on the Lobatto lattice,
//! represented in the tensor Lagrange basis; the test space holds one
//! constant per control volume. Row `P` of the stiffness matrix is the
//! outward flux functional `-oint_{dK_P*} d(phi_Q)/dn ds` applied to every
//! trial basis function `phi_Q`.

use rayon::prelude::*;
use thiserror::Error;

use crate::linsolve::CsrMatrix;
use crate::meshdual::{
    build_lattices, DofMap, DualGrid, ElementId, LobattoLattice, MeshError, Rect, TensorMesh,
};
use crate::polyquad::{
    gauss_rule, gauss_rule_any, lobatto_points, LobattoSet, NodalBasis, QuadError, QuadRule,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FvError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("field has {got} coefficients, lattice has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field is nonzero on the boundary at lattice node {0}")]
    NonzeroBoundary(usize),
    #[error("jump system inconsistent: residual {residual:.3e} exceeds {tolerance:.3e}")]
    InconsistentJump { residual: f64, tolerance: f64 },
    #[error("load quadrature order {q} below the minimum {min}")]
    LoadQuadrature { q: usize, min: usize },
}

/// Mesh, degree, lattices and reference rules for one discrete problem.
#[derive(Debug, Clone)]
pub struct Discretization {
    mesh: TensorMesh,
    k: usize,
    lattice: LobattoLattice,
    dual: DualGrid,
    dof: DofMap,
    gauss: QuadRule,
    lobatto: LobattoSet,
    basis: NodalBasis,
    /// `gauss_deriv[i][a] = l_a'(G_i)` on the reference interval.
    gauss_deriv: Vec<Vec<f64>>,
    /// `gauss_value[i][a] = l_a(G_i)`.
    gauss_value: Vec<Vec<f64>>,
}

impl Discretization {
    pub fn new(mesh: TensorMesh, k: usize) -> Result<Self, FvError> {
        let (lattice, dual) = build_lattices(&mesh, k)?;
        let dof = DofMap::new(&lattice);
        let gauss = gauss_rule(k)?;
        let lobatto = lobatto_points(k)?;
        let basis = NodalBasis::new(&lobatto);
        let (mut gauss_value, mut gauss_deriv) = (Vec::with_capacity(k), Vec::with_capacity(k));
        for &g in gauss.nodes() {
            let (mut v, mut d) = (vec![0.0; k + 1], vec![0.0; k + 1]);
            basis.eval_all(g, &mut v, &mut d);
            gauss_value.push(v);
            gauss_deriv.push(d);
        }
        Ok(Self {
            mesh,
            k,
            lattice,
            dual,
            dof,
            gauss,
            lobatto,
            basis,
            gauss_deriv,
            gauss_value,
        })
    }

    pub fn mesh(&self) -> &TensorMesh {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn lattice(&self) -> &LobattoLattice {
        &self.lattice
    }

    pub fn dual(&self) -> &DualGrid {
        &self.dual
    }

    pub fn dof(&self) -> &DofMap {
        &self.dof
    }

    pub fn gauss(&self) -> &QuadRule {
        &self.gauss
    }

    pub fn lobatto(&self) -> &LobattoSet {
        &self.lobatto
    }

    pub fn basis(&self) -> &NodalBasis {
        &self.basis
    }

    /// Reference coordinate of `x` in element column `ex`.
    pub fn ref_x(&self, ex: usize, x: f64) -> f64 {
        let b = self.mesh.x_breaks();
        (2.0 * x - b[ex] - b[ex + 1]) / (b[ex + 1] - b[ex])
    }

    pub fn ref_y(&self, ey: usize, y: f64) -> f64 {
        let b = self.mesh.y_breaks();
        (2.0 * y - b[ey] - b[ey + 1]) / (b[ey + 1] - b[ey])
    }

    /// Gauss lattice extent `(k*m, k*n)`.
    pub fn gauss_shape(&self) -> (usize, usize) {
        (self.dual.gx().len(), self.dual.gy().len())
    }

    /// Weight `A^x_{tau,i} A^y_{tau,j}` of global Gauss point `(gi, gj)`.
    pub fn gauss_weight(&self, gi: usize, gj: usize) -> f64 {
        let (k, w) = (self.k, self.gauss.weights());
        let (ex, ey) = (gi / k, gj / k);
        0.25 * self.mesh.hx(ex) * self.mesh.hy(ey) * w[gi % k] * w[gj % k]
    }
}

/// Value and derivatives of a bi-`k` field at a point of one element.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldSample {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxy: f64,
}

/// A function of the bi-`k` space, one coefficient per Lobatto lattice node.
///
/// Members of the trial space vanish on the boundary; [`TrialField::new`]
/// enforces that. [`TrialField::extended`] lifts the restriction for
/// interpolants of functions that do not vanish on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialField {
    k: usize,
    shape: (usize, usize),
    coeffs: Vec<f64>,
}

impl TrialField {
    pub fn new(disc: &Discretization, coeffs: Vec<f64>) -> Result<Self, FvError> {
        let field = Self::extended(disc, coeffs)?;
        if let Some(node) = field.boundary_violation(disc) {
            return Err(FvError::NonzeroBoundary(node));
        }
        Ok(field)
    }

    pub fn extended(disc: &Discretization, coeffs: Vec<f64>) -> Result<Self, FvError> {
        let expected = disc.lattice.len();
        if coeffs.len() != expected {
            return Err(FvError::LengthMismatch {
                expected,
                got: coeffs.len(),
            });
        }
        Ok(Self {
            k: disc.k,
            shape: disc.lattice.shape(),
            coeffs,
        })
    }

    pub fn zeros(disc: &Discretization) -> Self {
        Self {
            k: disc.k,
            shape: disc.lattice.shape(),
            coeffs: vec![0.0; disc.lattice.len()],
        }
    }

    /// Trial field from a solution vector in equation order.
    pub fn from_interior(disc: &Discretization, values: &[f64]) -> Result<Self, FvError> {
        if values.len() != disc.dof.len() {
            return Err(FvError::LengthMismatch {
                expected: disc.dof.len(),
                got: values.len(),
            });
        }
        let mut f = Self::zeros(disc);
        for (eq, &v) in values.iter().enumerate() {
            let (ix, iy) = disc.dof.node(eq);
            f.coeffs[disc.lattice.index(ix, iy)] = v;
        }
        Ok(f)
    }

    /// Nodal interpolant of `f` on the whole lattice, boundary included.
    pub fn interpolate(disc: &Discretization, f: impl Fn(f64, f64) -> f64) -> Self {
        let lat = &disc.lattice;
        let coeffs = (0..lat.len())
            .map(|p| {
                let (ix, iy) = lat.coords(p);
                let (x, y) = lat.point(ix, iy);
                f(x, y)
            })
            .collect();
        Self {
            k: disc.k,
            shape: lat.shape(),
            coeffs,
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.coeffs[iy * self.shape.0 + ix]
    }

    /// Values at the interior nodes in equation order.
    pub fn interior_values(&self, disc: &Discretization) -> Vec<f64> {
        (0..disc.dof.len())
            .map(|eq| {
                let (ix, iy) = disc.dof.node(eq);
                self.get(ix, iy)
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn boundary_violation(&self, disc: &Discretization) -> Option<usize> {
        (0..self.coeffs.len()).find(|&p| {
            let (ix, iy) = disc.lattice.coords(p);
            !disc.lattice.is_interior(ix, iy) && self.coeffs[p] != 0.0
        })
    }

    pub fn vanishes_on_boundary(&self, disc: &Discretization) -> bool {
        self.boundary_violation(disc).is_none()
    }

    /// Evaluates the element polynomial of `el` at `(x, y)`; the point need
    /// not lie inside `el`.
    pub fn eval_in_element(
        &self,
        disc: &Discretization,
        el: ElementId,
        x: f64,
        y: f64,
    ) -> FieldSample {
        let k = self.k;
        let (mut vx, mut dx) = (vec![0.0; k + 1], vec![0.0; k + 1]);
        let (mut vy, mut dy) = (vec![0.0; k + 1], vec![0.0; k + 1]);
        disc.basis.eval_all(disc.ref_x(el.ex, x), &mut vx, &mut dx);
        disc.basis.eval_all(disc.ref_y(el.ey, y), &mut vy, &mut dy);
        let sx = 2.0 / disc.mesh.hx(el.ex);
        let sy = 2.0 / disc.mesh.hy(el.ey);
        let mut s = FieldSample::default();
        for b in 0..=k {
            let (mut row_v, mut row_d) = (0.0, 0.0);
            for a in 0..=k {
                let c = self.get(el.ex * k + a, el.ey * k + b);
                row_v += c * vx[a];
                row_d += c * dx[a];
            }
            s.value += row_v * vy[b];
            s.dx += row_d * vy[b];
            s.dy += row_v * dy[b];
            s.dxy += row_d * dy[b];
        }
        s.dx *= sx;
        s.dy *= sy;
        s.dxy *= sx * sy;
        s
    }

    /// Sample at global Gauss point `(gi, gj)`, inside its owning element.
    pub fn eval_at_gauss(&self, disc: &Discretization, gi: usize, gj: usize) -> FieldSample {
        let k = self.k;
        let el = ElementId {
            ex: gi / k,
            ey: gj / k,
        };
        let (vx, dx) = (&disc.gauss_value[gi % k], &disc.gauss_deriv[gi % k]);
        let (vy, dy) = (&disc.gauss_value[gj % k], &disc.gauss_deriv[gj % k]);
        let sx = 2.0 / disc.mesh.hx(el.ex);
        let sy = 2.0 / disc.mesh.hy(el.ey);
        let mut s = FieldSample::default();
        for b in 0..=k {
            let (mut row_v, mut row_d) = (0.0, 0.0);
            for a in 0..=k {
                let c = self.get(el.ex * k + a, el.ey * k + b);
                row_v += c * vx[a];
                row_d += c * dx[a];
            }
            s.value += row_v * vy[b];
            s.dx += row_d * vy[b];
            s.dy += row_v * dy[b];
            s.dxy += row_d * dy[b];
        }
        s.dx *= sx;
        s.dy *= sy;
        s.dxy *= sx * sy;
        s
    }
}

/// A member of the test space: one constant per lattice node, zero on the
/// boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    shape: (usize, usize),
    values: Vec<f64>,
}

impl DualField {
    pub fn new(disc: &Discretization, values: Vec<f64>) -> Result<Self, FvError> {
        let expected = disc.lattice.len();
        if values.len() != expected {
            return Err(FvError::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        for (p, &v) in values.iter().enumerate() {
            let (ix, iy) = disc.lattice.coords(p);
            if !disc.lattice.is_interior(ix, iy) && v != 0.0 {
                return Err(FvError::NonzeroBoundary(p));
            }
        }
        Ok(Self {
            shape: disc.lattice.shape(),
            values,
        })
    }

    pub fn zeros(disc: &Discretization) -> Self {
        Self {
            shape: disc.lattice.shape(),
            values: vec![0.0; disc.lattice.len()],
        }
    }

    /// Dual field from per-equation values.
    pub fn from_interior(disc: &Discretization, values: &[f64]) -> Result<Self, FvError> {
        if values.len() != disc.dof.len() {
            return Err(FvError::LengthMismatch {
                expected: disc.dof.len(),
                got: values.len(),
            });
        }
        let mut f = Self::zeros(disc);
        for (eq, &v) in values.iter().enumerate() {
            let (ix, iy) = disc.dof.node(eq);
            f.values[iy * f.shape.0 + ix] = v;
        }
        Ok(f)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.shape.0 + ix]
    }

    fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.values[iy * self.shape.0 + ix] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One straight piece of a control-volume edge inside a single element.
struct EdgePiece {
    el: ElementId,
    /// +1 for the right/top edge, -1 for the left/bottom edge.
    sign: f64,
    /// Fixed coordinate of the edge and its local Gauss index in the element.
    normal_gauss: usize,
    /// Tangential extent.
    t0: f64,
    t1: f64,
}

fn split_range(
    lo: f64,
    hi: f64,
    lo_el: usize,
    hi_el: usize,
    breaks: &[f64],
) -> Vec<(usize, f64, f64)> {
    if lo_el == hi_el {
        vec![(lo_el, lo, hi)]
    } else {
        vec![(lo_el, lo, breaks[hi_el]), (hi_el, breaks[hi_el], hi)]
    }
}

/// The four edges of `K*` of node `(ix, iy)` cut into single-element pieces:
/// `(vertical pieces, horizontal pieces)`.
fn edge_pieces(disc: &Discretization, ix: usize, iy: usize) -> (Vec<EdgePiece>, Vec<EdgePiece>) {
    let k = disc.k;
    let cv = disc.dual.control_volume(ix, iy).expect("interior node");
    let ys = split_range(cv.y0, cv.y1, (iy - 1) / k, iy / k, disc.mesh.y_breaks());
    let xs = split_range(cv.x0, cv.x1, (ix - 1) / k, ix / k, disc.mesh.x_breaks());
    let mut vertical = Vec::with_capacity(4);
    for (gi, sign) in [(ix - 1, -1.0), (ix, 1.0)] {
        for &(ey, t0, t1) in &ys {
            vertical.push(EdgePiece {
                el: ElementId { ex: gi / k, ey },
                sign,
                normal_gauss: gi % k,
                t0,
                t1,
            });
        }
    }
    let mut horizontal = Vec::with_capacity(4);
    for (gj, sign) in [(iy - 1, -1.0), (iy, 1.0)] {
        for &(ex, t0, t1) in &xs {
            horizontal.push(EdgePiece {
                el: ElementId { ex, ey: gj / k },
                sign,
                normal_gauss: gj % k,
                t0,
                t1,
            });
        }
    }
    (vertical, horizontal)
}

/// Flux row of interior node `(ix, iy)` over all lattice nodes, boundary
/// included: entry `Q` is `-oint_{dK*} d(phi_Q)/dn ds`. Sorted by node, no
/// duplicates.
pub fn flux_row(disc: &Discretization, ix: usize, iy: usize) -> Vec<(usize, f64)> {
    let k = disc.k;
    let (vertical, horizontal) = edge_pieces(disc, ix, iy);
    let mut vals = vec![0.0; k + 1];
    let mut integ = vec![0.0; k + 1];
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(8 * (k + 1) * (k + 1));

    // tangential integrals of the cardinal functions over [t0, t1] mapped to
    // the reference interval of the element
    let tangential =
        |t0: f64, t1: f64, to_ref: &dyn Fn(f64) -> f64, integ: &mut [f64], vals: &mut [f64]| {
            integ.iter_mut().for_each(|v| *v = 0.0);
            let (mid, half) = (0.5 * (t0 + t1), 0.5 * (t1 - t0));
            for (t, w) in disc.gauss.iter() {
                disc.basis.values_into(to_ref(mid + half * t), vals);
                for (acc, v) in integ.iter_mut().zip(vals.iter()) {
                    *acc += half * w * v;
                }
            }
        };

    for piece in &vertical {
        let el = piece.el;
        tangential(
            piece.t0,
            piece.t1,
            &|y| disc.ref_y(el.ey, y),
            &mut integ,
            &mut vals,
        );
        let scale = -piece.sign * 2.0 / disc.mesh.hx(el.ex);
        let dphi = &disc.gauss_deriv[piece.normal_gauss];
        for b in 0..=k {
            for a in 0..=k {
                let v = scale * dphi[a] * integ[b];
                entries.push((disc.lattice.local_node(el, a, b), v));
            }
        }
    }
    for piece in &horizontal {
        let el = piece.el;
        tangential(
            piece.t0,
            piece.t1,
            &|x| disc.ref_x(el.ex, x),
            &mut integ,
            &mut vals,
        );
        let scale = -piece.sign * 2.0 / disc.mesh.hy(el.ey);
        let dphi = &disc.gauss_deriv[piece.normal_gauss];
        for b in 0..=k {
            for a in 0..=k {
                let v = scale * integ[a] * dphi[b];
                entries.push((disc.lattice.local_node(el, a, b), v));
            }
        }
    }
    entries.sort_by_key(|&(n, _)| n);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (n, v) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == n => last.1 += v,
            _ => merged.push((n, v)),
        }
    }
    merged
}

/// Stiffness matrix over the interior equations. Rows are computed in
/// parallel; the result does not depend on the worker count.
pub fn assemble_stiffness(disc: &Discretization) -> CsrMatrix {
    let n = disc.dof.len();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|eq| {
            let (ix, iy) = disc.dof.node(eq);
            flux_row(disc, ix, iy)
                .into_iter()
                .filter_map(|(node, v)| disc.dof.equation_of_node(node).map(|c| (c, v)))
                .collect()
        })
        .collect();
    CsrMatrix::from_rows(n, rows)
}

/// Default load quadrature order for degree `k`.
pub fn default_load_order(k: usize) -> usize {
    k + 2
}

/// `int_{K*} f` for every interior node, tensor `q`-point Gauss on each
/// single-element piece of the control volume.
pub fn assemble_load<F>(disc: &Discretization, f: F, q: usize) -> Result<Vec<f64>, FvError>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    if q < disc.k + 1 {
        return Err(FvError::LoadQuadrature { q, min: disc.k + 1 });
    }
    let rule = gauss_rule_any(q)?;
    let load = (0..disc.dof.len())
        .into_par_iter()
        .map(|eq| {
            let (ix, iy) = disc.dof.node(eq);
            let pieces = disc
                .dual
                .elements_overlapping(&disc.mesh, ix, iy)
                .expect("interior node");
            pieces
                .iter()
                .map(|(_, r)| integrate_rect(&rule, r, &f))
                .sum()
        })
        .collect();
    Ok(load)
}

fn integrate_rect(rule: &QuadRule, r: &Rect, f: &impl Fn(f64, f64) -> f64) -> f64 {
    let (mx, hx) = (0.5 * (r.x0 + r.x1), 0.5 * (r.x1 - r.x0));
    let (my, hy) = (0.5 * (r.y0 + r.y1), 0.5 * (r.y1 - r.y0));
    let mut s = 0.0;
    for (ty, wy) in rule.iter() {
        let y = my + hy * ty;
        for (tx, wx) in rule.iter() {
            s += wx * wy * f(mx + hx * tx, y);
        }
    }
    s * hx * hy
}

/// Assembled finite volume system `A u = b` over the interior nodes.
#[derive(Debug, Clone)]
pub struct FvSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof: DofMap,
}

pub fn assemble_system<F>(disc: &Discretization, f: F, q: usize) -> Result<FvSystem, FvError>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    Ok(FvSystem {
        matrix: assemble_stiffness(disc),
        rhs: assemble_load(disc, f, q)?,
        dof: disc.dof.clone(),
    })
}

/// Outward flux `oint_{dK*} du/dn ds` of a field through the control volume
/// of `(ix, iy)`, evaluated from the field gradient (not from the assembled
/// rows).
pub fn control_volume_flux(disc: &Discretization, u: &TrialField, ix: usize, iy: usize) -> f64 {
    let (vertical, horizontal) = edge_pieces(disc, ix, iy);
    let mut flux = 0.0;
    for p in &vertical {
        let x = disc.dual.gx()[p.el.ex * disc.k + p.normal_gauss];
        flux += p.sign
            * disc
                .gauss
                .integrate_on(p.t0, p.t1, |y| u.eval_in_element(disc, p.el, x, y).dx);
    }
    for p in &horizontal {
        let y = disc.dual.gy()[p.el.ey * disc.k + p.normal_gauss];
        flux += p.sign
            * disc
                .gauss
                .integrate_on(p.t0, p.t1, |x| u.eval_in_element(disc, p.el, x, y).dy);
    }
    flux
}

/// `a_h(w, v)` as `sum_P v_P * (flux row of P) . w`.
pub fn bilinear_flux_form(disc: &Discretization, w: &TrialField, v: &DualField) -> f64 {
    let (nxs, nys) = disc.lattice.shape();
    let mut total = 0.0;
    for iy in 1..nys - 1 {
        for ix in 1..nxs - 1 {
            let vp = v.get(ix, iy);
            if vp == 0.0 {
                continue;
            }
            let row: f64 = flux_row(disc, ix, iy)
                .iter()
                .map(|&(q, a)| a * w.coeffs[q])
                .sum();
            total += vp * row;
        }
    }
    total
}

/// Double-layer jump of `v` at global Gauss point `(gi, gj)`: the signed sum
/// of the four surrounding lattice values.
pub fn jump(v: &DualField, gi: usize, gj: usize) -> f64 {
    v.get(gi + 1, gj + 1) + v.get(gi, gj) - v.get(gi, gj + 1) - v.get(gi + 1, gj)
}

/// Discrete inner product `<f1, f2>` over the Gauss lattice.
pub fn discrete_inner(
    disc: &Discretization,
    f1: impl Fn(f64, f64) -> f64,
    f2: impl Fn(f64, f64) -> f64,
) -> f64 {
    let (gx, gy) = (disc.dual.gx(), disc.dual.gy());
    let mut s = 0.0;
    for (gj, &y) in gy.iter().enumerate() {
        for (gi, &x) in gx.iter().enumerate() {
            s += disc.gauss_weight(gi, gj) * f1(x, y) * f2(x, y);
        }
    }
    s
}

/// Same as [`discrete_inner`] for values already sampled on the Gauss
/// lattice (x fastest).
pub fn discrete_inner_sampled(disc: &Discretization, a: &[f64], b: &[f64]) -> f64 {
    let (ngx, ngy) = disc.gauss_shape();
    let mut s = 0.0;
    for gj in 0..ngy {
        for gi in 0..ngx {
            let p = gj * ngx + gi;
            s += disc.gauss_weight(gi, gj) * a[p] * b[p];
        }
    }
    s
}

/// `(d_x^{-1} d_y w, d_y^{-1} d_x w)` on the Gauss lattice, x fastest. The
/// antiderivatives start at the left and bottom edges of the domain and are
/// integrated exactly per element.
pub fn antiderivative_terms(disc: &Discretization, w: &TrialField) -> (Vec<f64>, Vec<f64>) {
    let k = disc.k;
    let rule = gauss_rule_any(k + 1).expect("k + 1 <= 13");
    let (gx, gy) = (disc.dual.gx(), disc.dual.gy());
    let (ngx, ngy) = (gx.len(), gy.len());
    let xb = disc.mesh.x_breaks();
    let yb = disc.mesh.y_breaks();
    let mut ix_dy = vec![0.0; ngx * ngy];
    let mut iy_dx = vec![0.0; ngx * ngy];

    for gj in 0..ngy {
        let (ey, y) = (gj / k, gy[gj]);
        let mut running = 0.0;
        for ex in 0..disc.mesh.nx() {
            let el = ElementId { ex, ey };
            let dy = |x: f64| w.eval_in_element(disc, el, x, y).dy;
            for i in 0..k {
                let gi = ex * k + i;
                ix_dy[gj * ngx + gi] = running + rule.integrate_on(xb[ex], gx[gi], dy);
            }
            running += rule.integrate_on(xb[ex], xb[ex + 1], dy);
        }
    }
    for gi in 0..ngx {
        let (ex, x) = (gi / k, gx[gi]);
        let mut running = 0.0;
        for ey in 0..disc.mesh.ny() {
            let el = ElementId { ex, ey };
            let dx = |y: f64| w.eval_in_element(disc, el, x, y).dx;
            for j in 0..k {
                let gj = ey * k + j;
                iy_dx[gj * ngx + gi] = running + rule.integrate_on(yb[ey], gy[gj], dx);
            }
            running += rule.integrate_on(yb[ey], yb[ey + 1], dx);
        }
    }
    (ix_dy, iy_dx)
}

/// `a_h(w, v)` in jump form:
/// `-sum_g (d_x^{-1} d_y w + d_y^{-1} d_x w)(g) * jump(v, g)`.
pub fn apply_bilinear_jump_form(disc: &Discretization, w: &TrialField, v: &DualField) -> f64 {
    let (ix_dy, iy_dx) = antiderivative_terms(disc, w);
    let (ngx, ngy) = disc.gauss_shape();
    let mut s = 0.0;
    for gj in 0..ngy {
        for gi in 0..ngx {
            let p = gj * ngx + gi;
            s -= (ix_dy[p] + iy_dx[p]) * jump(v, gi, gj);
        }
    }
    s
}

/// `d2_xy v` on the Gauss lattice, x fastest.
pub fn mixed_derivative_at_gauss(disc: &Discretization, v: &TrialField) -> Vec<f64> {
    let (ngx, ngy) = disc.gauss_shape();
    let mut out = Vec::with_capacity(ngx * ngy);
    for gj in 0..ngy {
        for gi in 0..ngx {
            out.push(v.eval_at_gauss(disc, gi, gj).dxy);
        }
    }
    out
}

/// Prescribed jumps `A^x A^y d2_xy v(g)` on the Gauss lattice.
pub fn prescribed_jumps(disc: &Discretization, v: &TrialField) -> Vec<f64> {
    let (ngx, _) = disc.gauss_shape();
    mixed_derivative_at_gauss(disc, v)
        .into_iter()
        .enumerate()
        .map(|(p, d)| disc.gauss_weight(p % ngx, p / ngx) * d)
        .collect()
}

/// Largest violation of the jump equations by `pv` relative to the jumps
/// prescribed by `v`.
pub fn jump_residual(disc: &Discretization, v: &TrialField, pv: &DualField) -> f64 {
    let r = prescribed_jumps(disc, v);
    let (ngx, ngy) = disc.gauss_shape();
    let mut worst = 0.0f64;
    for gj in 0..ngy {
        for gi in 0..ngx {
            worst = worst.max((jump(pv, gi, gj) - r[gj * ngx + gi]).abs());
        }
    }
    worst
}

/// The trial-to-test map: the dual field whose double-layer jumps equal
/// `A^x A^y d2_xy v` at every Gauss point. Built by a lower-left sweep; the
/// equations the sweep does not use are then checked.
pub fn pi_map(disc: &Discretization, v: &TrialField) -> Result<DualField, FvError> {
    if let Some(node) = v.boundary_violation(disc) {
        return Err(FvError::NonzeroBoundary(node));
    }
    let r = prescribed_jumps(disc, v);
    let (ngx, ngy) = disc.gauss_shape();
    let mut out = DualField::zeros(disc);
    for gj in 0..ngy - 1 {
        for gi in 0..ngx - 1 {
            let val =
                r[gj * ngx + gi] - out.get(gi, gj) + out.get(gi, gj + 1) + out.get(gi + 1, gj);
            out.set(gi + 1, gj + 1, val);
        }
    }
    let residual = jump_residual(disc, v, &out);
    let tolerance = 1e-10 * v.max_abs();
    if residual > tolerance {
        return Err(FvError::InconsistentJump {
            residual,
            tolerance,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::solve_direct;
    use crate::meshdual::build_uniform_mesh;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_disc(m: usize, k: usize) -> Discretization {
        Discretization::new(build_uniform_mesh(0.0, 1.0, 0.0, 1.0, m, m).unwrap(), k).unwrap()
    }

    fn random_trial(disc: &Discretization, rng: &mut ChaCha8Rng) -> TrialField {
        let vals: Vec<f64> = (0..disc.dof().len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        TrialField::from_interior(disc, &vals).unwrap()
    }

    fn random_dual(disc: &Discretization, rng: &mut ChaCha8Rng) -> DualField {
        let vals: Vec<f64> = (0..disc.dof().len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        DualField::from_interior(disc, &vals).unwrap()
    }

    /// Oversampled flux oracle: `-oint d(phi_Q)/dn` with a 20-point composite
    /// rule on each edge, evaluating the basis function by brute force.
    fn oracle_flux(disc: &Discretization, ix: usize, iy: usize, q: usize) -> f64 {
        let mut coeffs = vec![0.0; disc.lattice().len()];
        coeffs[q] = 1.0;
        let phi = TrialField::extended(disc, coeffs).unwrap();
        let grad = |x: f64, y: f64| {
            let ex = disc.mesh().locate_x(x).unwrap();
            let ey = disc.mesh().locate_y(y).unwrap();
            let s = phi.eval_in_element(disc, ElementId { ex, ey }, x, y);
            (s.dx, s.dy)
        };
        let cv = disc.dual().control_volume(ix, iy).unwrap();
        let rule = gauss_rule_any(20).unwrap();
        let breaks_y: Vec<f64> = std::iter::once(cv.y0)
            .chain(
                disc.mesh()
                    .y_breaks()
                    .iter()
                    .copied()
                    .filter(|&b| cv.y0 < b && b < cv.y1),
            )
            .chain(std::iter::once(cv.y1))
            .collect();
        let breaks_x: Vec<f64> = std::iter::once(cv.x0)
            .chain(
                disc.mesh()
                    .x_breaks()
                    .iter()
                    .copied()
                    .filter(|&b| cv.x0 < b && b < cv.x1),
            )
            .chain(std::iter::once(cv.x1))
            .collect();
        let mut flux = 0.0;
        for w in breaks_y.windows(2) {
            flux += rule.integrate_on(w[0], w[1], |y| grad(cv.x1, y).0 - grad(cv.x0, y).0);
        }
        for w in breaks_x.windows(2) {
            flux += rule.integrate_on(w[0], w[1], |x| grad(x, cv.y1).1 - grad(x, cv.y0).1);
        }
        -flux
    }

    #[test]
    fn k1_center_entry_matches_hat_flux() {
        let disc = unit_disc(2, 1);
        let a = assemble_stiffness(&disc);
        assert_eq!(a.dim(), 1);
        // hat centred at (0.5, 0.5): on [0.25, 0.5] the x-slope is 2*(2y) etc.
        // by symmetry flux through each edge is -int_{0.25}^{0.75} 2*(1-2|y-0.5|) dy = -0.75
        assert_abs_diff_eq!(a.get(0, 0), 3.0, epsilon = 1e-14);
        let center = disc.lattice().index(1, 1);
        assert_abs_diff_eq!(
            a.get(0, 0),
            oracle_flux(&disc, 1, 1, center),
            epsilon = 1e-13
        );
    }

    #[test]
    fn k2_rows_match_oversampled_oracle() {
        let disc = unit_disc(2, 2);
        let (nxs, nys) = disc.lattice().shape();
        for iy in 1..nys - 1 {
            for ix in 1..nxs - 1 {
                let row = flux_row(&disc, ix, iy);
                let scale = row.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
                for q in 0..disc.lattice().len() {
                    let got = row.iter().find(|e| e.0 == q).map_or(0.0, |e| e.1);
                    let want = oracle_flux(&disc, ix, iy, q);
                    assert!(
                        (got - want).abs() <= 1e-11 * scale,
                        "({ix},{iy}) q={q}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn rows_annihilate_constants_and_respect_sparsity() {
        for k in 1..=5 {
            let mesh =
                TensorMesh::new(vec![0.0, 0.3, 0.45, 1.0], vec![0.0, 0.6, 0.8, 1.2]).unwrap();
            let disc = Discretization::new(mesh, k).unwrap();
            let (nxs, nys) = disc.lattice().shape();
            for iy in 1..nys - 1 {
                for ix in 1..nxs - 1 {
                    let row = flux_row(&disc, ix, iy);
                    assert!(row.len() <= (2 * k + 1) * (2 * k + 1));
                    let sum: f64 = row.iter().map(|e| e.1).sum();
                    assert_abs_diff_eq!(sum, 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn stiffness_is_deterministic_across_thread_counts() {
        let disc = unit_disc(3, 3);
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let a1 = serial.install(|| assemble_stiffness(&disc));
        let a4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| assemble_stiffness(&disc));
        assert_eq!(a1, a4);
    }

    #[test]
    fn load_examples() {
        let disc = unit_disc(2, 1);
        let ones = assemble_load(&disc, |_, _| 1.0, 3).unwrap();
        assert_abs_diff_eq!(ones[0], 0.25, epsilon = 1e-15);
        let xs = assemble_load(&disc, |x, _| x, 3).unwrap();
        assert_abs_diff_eq!(xs[0], 0.125, epsilon = 1e-15);
        let zero = assemble_load(&disc, |_, _| 0.0, 3).unwrap();
        assert_eq!(zero, vec![0.0]);
        assert!(matches!(
            assemble_load(&disc, |_, _| 1.0, 1),
            Err(FvError::LoadQuadrature { .. })
        ));

        let disc = unit_disc(3, 3);
        let ones = assemble_load(&disc, |_, _| 1.0, 5).unwrap();
        for (eq, b) in ones.iter().enumerate() {
            let (ix, iy) = disc.dof().node(eq);
            assert_abs_diff_eq!(
                *b,
                disc.dual().control_volume(ix, iy).unwrap().area(),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn jump_examples() {
        let disc = unit_disc(2, 2);
        let (nxs, _) = disc.lattice().shape();
        // a constant on all interior nodes: jumps telescope to zero at Gauss
        // points whose four corners are interior
        let c = DualField::from_interior(&disc, &vec![2.5; disc.dof().len()]).unwrap();
        assert_eq!(jump(&c, 1, 1), 0.0);
        let mut v = DualField::zeros(&disc);
        v.set(2, 2, 1.0);
        assert_eq!(jump(&v, 1, 1), 1.0);
        assert_eq!(jump(&v, 2, 1), -1.0);
        // separable field
        let alpha = |i: usize| (i as f64 * 0.7).sin();
        let beta = |j: usize| (j as f64 * 1.3).cos() + 2.0;
        let mut s = DualField::zeros(&disc);
        for iy in 1..nxs - 1 {
            for ix in 1..nxs - 1 {
                s.set(ix, iy, alpha(ix) * beta(iy));
            }
        }
        let (i, j) = (2, 1);
        let want = (alpha(i + 1) - alpha(i)) * (beta(j + 1) - beta(j));
        assert_abs_diff_eq!(jump(&s, i, j), want, epsilon = 1e-14);
    }

    #[test]
    fn discrete_inner_examples() {
        for k in 1..=4 {
            let disc = unit_disc(3, k);
            assert_abs_diff_eq!(
                discrete_inner(&disc, |_, _| 1.0, |_, _| 1.0),
                1.0,
                epsilon = 1e-14
            );
            assert_abs_diff_eq!(
                discrete_inner(&disc, |x, _| x, |_, _| 1.0),
                0.5,
                epsilon = 1e-14
            );
        }
        let one = Discretization::new(TensorMesh::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap(), 1)
            .unwrap();
        assert_abs_diff_eq!(
            discrete_inner(&one, |x, _| x * x, |_, _| 1.0),
            0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn pi_map_zero_and_validation() {
        let disc = unit_disc(3, 2);
        let z = pi_map(&disc, &TrialField::zeros(&disc)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let bad = TrialField::interpolate(&disc, |x, _| x);
        assert!(matches!(
            pi_map(&disc, &bad),
            Err(FvError::NonzeroBoundary(_))
        ));
    }

    #[test]
    fn prescribed_jumps_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 1..=4 {
            let disc = unit_disc(3, k);
            let v = random_trial(&disc, &mut rng);
            let r = prescribed_jumps(&disc, &v);
            let scale = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(r.iter().sum::<f64>().abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn pi_map_k1_matches_least_squares() {
        let disc = unit_disc(2, 1);
        let v = TrialField::from_interior(&disc, &[1.0]).unwrap();
        let r = prescribed_jumps(&disc, &v);
        // corner signs of the single unknown in the four jump equations
        let signs = [1.0, -1.0, -1.0, 1.0];
        let ls = signs.iter().zip(&r).map(|(s, r)| s * r).sum::<f64>() / 4.0;
        let pv = pi_map(&disc, &v).unwrap();
        assert_abs_diff_eq!(pv.get(1, 1), ls, epsilon = 1e-14);
        // h = 1/2, weights 1/4 per Gauss point, d2_xy of the hat = +-4
        assert_abs_diff_eq!(ls, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn pi_map_agrees_with_reverse_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in 1..=4 {
            let disc = unit_disc(3, k);
            let v = random_trial(&disc, &mut rng);
            let forward = pi_map(&disc, &v).unwrap();
            // sweep from the upper-right corner instead
            let r = prescribed_jumps(&disc, &v);
            let (ngx, ngy) = disc.gauss_shape();
            let mut back = DualField::zeros(&disc);
            for gj in (1..ngy).rev() {
                for gi in (1..ngx).rev() {
                    let val = r[gj * ngx + gi] - back.get(gi + 1, gj + 1)
                        + back.get(gi, gj + 1)
                        + back.get(gi + 1, gj);
                    back.set(gi, gj, val);
                }
            }
            for (a, b) in forward.values().iter().zip(back.values()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-11 * v.max_abs().max(1.0));
            }
        }
    }

    #[test]
    fn jump_form_matches_flux_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let disc = unit_disc(3, 2);
        for _ in 0..10 {
            let w = random_trial(&disc, &mut rng);
            let v = random_dual(&disc, &mut rng);
            let flux = bilinear_flux_form(&disc, &w, &v);
            let jumpf = apply_bilinear_jump_form(&disc, &w, &v);
            assert!(
                (flux - jumpf).abs() <= 1e-11 * flux.abs().max(1.0),
                "{flux} vs {jumpf}"
            );
        }
        let w = random_trial(&disc, &mut rng);
        assert_eq!(
            apply_bilinear_jump_form(&disc, &w, &DualField::zeros(&disc)),
            0.0
        );
        let v = random_dual(&disc, &mut rng);
        assert_eq!(
            apply_bilinear_jump_form(&disc, &TrialField::zeros(&disc), &v),
            0.0
        );
    }

    #[test]
    fn trial_field_is_continuous_across_interfaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let disc = unit_disc(2, 3);
        let w = random_trial(&disc, &mut rng);
        for s in 0..10 {
            let y = 0.05 + 0.09 * s as f64;
            let ey = disc.mesh().locate_y(y).unwrap();
            let left = w
                .eval_in_element(&disc, ElementId { ex: 0, ey }, 0.5, y)
                .value;
            let right = w
                .eval_in_element(&disc, ElementId { ex: 1, ey }, 0.5, y)
                .value;
            assert_abs_diff_eq!(left, right, epsilon = 1e-13);
        }
    }

    #[test]
    fn conservation_after_solve() {
        let disc = unit_disc(4, 3);
        let f = |x: f64, y: f64| (x * 3.0).sin() + y * y;
        let sys = assemble_system(&disc, f, default_load_order(3)).unwrap();
        let sol = solve_direct(&sys.matrix, &sys.rhs).unwrap();
        let u = TrialField::from_interior(&disc, &sol.x).unwrap();
        let bmax = crate::linsolve::inf_norm(&sys.rhs);
        for eq in 0..disc.dof().len() {
            let (ix, iy) = disc.dof().node(eq);
            let defect = control_volume_flux(&disc, &u, ix, iy) + sys.rhs[eq];
            assert!(defect.abs() <= 1e-9 * bmax, "eq {eq}: {defect}");
        }
    }

    #[test]
    fn field_constructors_validate() {
        let disc = unit_disc(2, 2);
        assert!(matches!(
            TrialField::new(&disc, vec![0.0; 3]),
            Err(FvError::LengthMismatch { .. })
        ));
        let mut c = vec![0.0; disc.lattice().len()];
        c[0] = 1.0;
        assert_eq!(
            TrialField::new(&disc, c.clone()),
            Err(FvError::NonzeroBoundary(0))
        );
        assert!(TrialField::extended(&disc, c.clone()).is_ok());
        assert_eq!(DualField::new(&disc, c), Err(FvError::NonzeroBoundary(0)));
    }
}
