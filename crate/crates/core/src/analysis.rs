//! Field evaluation, the Lobatto-series projectors and interpolants, error
//! measures and convergence rates.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fvcore::{Discretization, FvError, TrialField};
use crate::meshdual::{ElementId, TensorMesh};
use crate::polyquad::{gauss_rule_any, legendre, lobatto_poly, QuadRule};

/// Errors at or below this are treated as roundoff; rates involving them are
/// not reported.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("point ({0}, {1}) lies outside the domain")]
    OutOfDomain(f64, f64),
    #[error("invalid refinement sequence: {0}")]
    InvalidSequence(String),
    #[error(transparent)]
    Fv(#[from] FvError),
}

pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;

/// Closed-form solution of `-Lap u = f`: value, gradient and source.
#[derive(Clone)]
pub struct ExactSolution {
    u: ScalarFn,
    grad: VectorFn,
    f: ScalarFn,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ExactSolution { .. }")
    }
}

impl ExactSolution {
    pub fn new(
        u: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        grad: impl Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            u: Arc::new(u),
            grad: Arc::new(grad),
            f: Arc::new(f),
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        (self.u)(x, y)
    }

    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        (self.grad)(x, y)
    }

    pub fn source(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }

    /// Largest `|Lap_h u + f|` at `samples` random points of `[x0,x1]x[y0,y1]`,
    /// with a 7-point sixth-order central difference in each direction.
    pub fn laplacian_defect(&self, domain: [f64; 4], samples: usize, seed: u64) -> f64 {
        const C: [f64; 4] = [-49.0 / 18.0, 1.5, -0.15, 1.0 / 90.0];
        let step = 1e-2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let x = rng.gen_range(domain[0]..domain[1]);
            let y = rng.gen_range(domain[2]..domain[3]);
            let mut lap = 2.0 * C[0] * self.value(x, y);
            for (j, c) in C.iter().enumerate().skip(1) {
                let d = step * j as f64;
                lap += c
                    * (self.value(x + d, y)
                        + self.value(x - d, y)
                        + self.value(x, y + d)
                        + self.value(x, y - d));
            }
            lap /= step * step;
            worst = worst.max((lap + self.source(x, y)).abs());
        }
        worst
    }
}

/// Value and gradient of a field at `(x, y)`; the containing element is
/// located with ties broken toward the lower index.
pub fn eval_field(
    disc: &Discretization,
    v: &TrialField,
    x: f64,
    y: f64,
) -> Result<(f64, [f64; 2]), AnalysisError> {
    let mesh = disc.mesh();
    match (mesh.locate_x(x), mesh.locate_y(y)) {
        (Some(ex), Some(ey)) => {
            let s = v.eval_in_element(disc, ElementId { ex, ey }, x, y);
            Ok((s.value, [s.dx, s.dy]))
        }
        _ => Err(AnalysisError::OutOfDomain(x, y)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    X,
    Y,
}

/// Lobatto-series coefficients `b_0..=b_p` of `g` on `[a, b]`, with `b_r`
/// for `r >= 2` computed from values only:
/// `b_r = (2r-1)/2 * ([g P_{r-1}]_{-1}^{1} - int g P'_{r-1})`.
pub fn lobatto_coefficients(
    g: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    p: usize,
    rule: &QuadRule,
) -> Vec<f64> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let (ga, gb) = (g(a), g(b));
    let samples: Vec<(f64, f64, f64)> = rule
        .iter()
        .map(|(s, w)| (s, w, g(mid + half * s)))
        .collect();
    let mut coef = vec![ga, gb];
    for r in 2..=p {
        let sign = if (r - 1) % 2 == 0 { 1.0 } else { -1.0 };
        let boundary = gb - sign * ga;
        let interior: f64 = samples
            .iter()
            .map(|&(s, w, v)| w * v * legendre(r - 1, s).1)
            .sum();
        coef.push(0.5 * (2 * r - 1) as f64 * (boundary - interior));
    }
    coef.truncate(p + 1);
    coef
}

/// Lobatto-series coefficients from derivative samples:
/// `b_r = (2r-1)/2 * int d_s g * phi_r'(s) ds`.
pub fn lobatto_coefficients_from_derivative(
    g: impl Fn(f64) -> f64,
    dg: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    p: usize,
    rule: &QuadRule,
) -> Vec<f64> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut coef = vec![g(a), g(b)];
    for r in 2..=p {
        let integral: f64 = rule
            .iter()
            .map(|(s, w)| w * half * dg(mid + half * s) * legendre(r - 1, s).0)
            .sum();
        coef.push(0.5 * (2 * r - 1) as f64 * integral);
    }
    coef.truncate(p + 1);
    coef
}

fn sum_series(coef: &[f64], s: f64) -> f64 {
    coef.iter()
        .enumerate()
        .map(|(r, c)| c * lobatto_poly(r, s))
        .sum()
}

/// `Q_p` along `dir` of a generic function, from values only.
pub fn project_values(
    mesh: &TensorMesh,
    dir: Direction,
    p: usize,
    rule: &QuadRule,
    g: &dyn Fn(f64, f64) -> f64,
    x: f64,
    y: f64,
) -> f64 {
    match dir {
        Direction::X => {
            let ex = mesh.locate_x(x).expect("x inside mesh");
            let (a, b) = (mesh.x_breaks()[ex], mesh.x_breaks()[ex + 1]);
            let coef = lobatto_coefficients(|t| g(t, y), a, b, p, rule);
            sum_series(&coef, (2.0 * x - a - b) / (b - a))
        }
        Direction::Y => {
            let ey = mesh.locate_y(y).expect("y inside mesh");
            let (a, b) = (mesh.y_breaks()[ey], mesh.y_breaks()[ey + 1]);
            let coef = lobatto_coefficients(|t| g(x, t), a, b, p, rule);
            sum_series(&coef, (2.0 * y - a - b) / (b - a))
        }
    }
}

/// The projector `Q_p` along one direction applied to an exact solution,
/// with coefficients from the solution gradient.
pub struct BandProjection<'a> {
    mesh: &'a TensorMesh,
    u: &'a ExactSolution,
    dir: Direction,
    p: usize,
    rule: QuadRule,
}

/// `Q^x_p u` or `Q^y_p u`; coefficients use a `(k + 6)`-point rule.
pub fn project_band<'a>(
    u: &'a ExactSolution,
    dir: Direction,
    p: usize,
    mesh: &'a TensorMesh,
    k: usize,
) -> BandProjection<'a> {
    BandProjection {
        mesh,
        u,
        dir,
        p,
        rule: gauss_rule_any(k + 6).expect("rule order"),
    }
}

impl BandProjection<'_> {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let u = self.u;
        match self.dir {
            Direction::X => {
                let ex = self.mesh.locate_x(x).expect("x inside mesh");
                let (a, b) = (self.mesh.x_breaks()[ex], self.mesh.x_breaks()[ex + 1]);
                let coef = lobatto_coefficients_from_derivative(
                    |t| u.value(t, y),
                    |t| u.gradient(t, y)[0],
                    a,
                    b,
                    self.p,
                    &self.rule,
                );
                sum_series(&coef, (2.0 * x - a - b) / (b - a))
            }
            Direction::Y => {
                let ey = self.mesh.locate_y(y).expect("y inside mesh");
                let (a, b) = (self.mesh.y_breaks()[ey], self.mesh.y_breaks()[ey + 1]);
                let coef = lobatto_coefficients_from_derivative(
                    |t| u.value(x, t),
                    |t| u.gradient(x, t)[1],
                    a,
                    b,
                    self.p,
                    &self.rule,
                );
                sum_series(&coef, (2.0 * y - a - b) / (b - a))
            }
        }
    }

    /// `u - Q_p u` at `(x, y)`.
    pub fn residual(&self, x: f64, y: f64) -> f64 {
        self.u.value(x, y) - self.value(x, y)
    }
}

/// `u_I = Q^x_k Q^y_k u`, sampled on the Lobatto lattice. The result is bi-`k`
/// on every element, so the nodal field represents it exactly.
pub fn interpolant_u_i(u: &ExactSolution, disc: &Discretization) -> TrialField {
    let k = disc.degree();
    let rule = gauss_rule_any(k + 6).expect("rule order");
    let mesh = disc.mesh();
    let lat = disc.lattice();
    let qy =
        |x: f64, y: f64| project_values(mesh, Direction::Y, k, &rule, &|x, y| u.value(x, y), x, y);
    let coeffs: Vec<f64> = (0..lat.len())
        .into_par_iter()
        .map(|p| {
            let (ix, iy) = lat.coords(p);
            let (x, y) = lat.point(ix, iy);
            project_values(mesh, Direction::X, k, &rule, &qy, x, y)
        })
        .collect();
    TrialField::extended(disc, coeffs).expect("lattice-sized")
}

/// `u~_I`: `u` sampled at every Lobatto lattice node, boundary set to zero.
pub fn lobatto_interpolant(u: &ExactSolution, disc: &Discretization) -> TrialField {
    let lat = disc.lattice();
    let coeffs = (0..lat.len())
        .map(|p| {
            let (ix, iy) = lat.coords(p);
            if lat.is_interior(ix, iy) {
                let (x, y) = lat.point(ix, iy);
                u.value(x, y)
            } else {
                0.0
            }
        })
        .collect();
    TrialField::new(disc, coeffs).expect("boundary zeroed")
}

/// Vector norm used for the gradient error at Gauss points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradNorm {
    /// `|a| + |b|`; the measure the reference tables are reproduced with.
    #[default]
    L1,
    Euclidean,
    Max,
}

impl GradNorm {
    pub fn apply(self, v: [f64; 2]) -> f64 {
        match self {
            GradNorm::L1 => v[0].abs() + v[1].abs(),
            GradNorm::Euclidean => v[0].hypot(v[1]),
            GradNorm::Max => v[0].abs().max(v[1].abs()),
        }
    }
}

/// Maximum errors at mesh vertices, Lobatto points and (gradient) Gauss points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointErrors {
    pub e_n: f64,
    pub e_l: f64,
    pub e_g: f64,
}

pub fn point_errors(
    disc: &Discretization,
    u_h: &TrialField,
    u: &ExactSolution,
    norm: GradNorm,
) -> PointErrors {
    let k = disc.degree();
    let lat = disc.lattice();
    let (mut e_n, mut e_l) = (0.0f64, 0.0f64);
    for p in 0..lat.len() {
        let (ix, iy) = lat.coords(p);
        let (x, y) = lat.point(ix, iy);
        let err = (u.value(x, y) - u_h.coeffs()[p]).abs();
        e_l = e_l.max(err);
        if ix % k == 0 && iy % k == 0 {
            e_n = e_n.max(err);
        }
    }
    let (gx, gy) = (disc.dual().gx(), disc.dual().gy());
    let e_g = (0..gy.len())
        .into_par_iter()
        .map(|gj| {
            let mut worst = 0.0f64;
            for (gi, &x) in gx.iter().enumerate() {
                let s = u_h.eval_at_gauss(disc, gi, gj);
                let g = u.gradient(x, gy[gj]);
                worst = worst.max(norm.apply([g[0] - s.dx, g[1] - s.dy]));
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    PointErrors { e_n, e_l, e_g }
}

/// `(||a - b||_0, |a - b|_1)` for two functions given as value/gradient
/// closures, by tensor `q`-point Gauss on every element. `b` is evaluated
/// inside the element so one-sided limits are used at interfaces.
fn norms_by_element(
    disc: &Discretization,
    q: usize,
    a: &(dyn Fn(f64, f64) -> (f64, [f64; 2]) + Sync),
    b: &TrialField,
) -> (f64, f64) {
    let rule = gauss_rule_any(q).expect("rule order");
    let mesh = disc.mesh();
    let elements: Vec<ElementId> = mesh.elements().collect();
    let (l2, h1) = elements
        .par_iter()
        .map(|&el| {
            let r = mesh.element_rect(el);
            let (mx, hx) = (0.5 * (r.x0 + r.x1), 0.5 * (r.x1 - r.x0));
            let (my, hy) = (0.5 * (r.y0 + r.y1), 0.5 * (r.y1 - r.y0));
            let (mut l2, mut h1) = (0.0, 0.0);
            for (ty, wy) in rule.iter() {
                for (tx, wx) in rule.iter() {
                    let (x, y) = (mx + hx * tx, my + hy * ty);
                    let (va, ga) = a(x, y);
                    let s = b.eval_in_element(disc, el, x, y);
                    let w = wx * wy * hx * hy;
                    l2 += w * (va - s.value).powi(2);
                    h1 += w * ((ga[0] - s.dx).powi(2) + (ga[1] - s.dy).powi(2));
                }
            }
            (l2, h1)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |p, q| (p.0 + q.0, p.1 + q.1));
    (l2.sqrt(), h1.sqrt())
}

/// `(||u - u_h||_0, |u - u_h|_1)` with `q >= k + 3` points per direction.
pub fn norm_errors(
    disc: &Discretization,
    u_h: &TrialField,
    u: &ExactSolution,
    q: usize,
) -> (f64, f64) {
    let q = q.max(disc.degree() + 3);
    norms_by_element(disc, q, &|x, y| (u.value(x, y), u.gradient(x, y)), u_h)
}

/// `(||a - b||_0, |a - b|_1)` for two bi-`k` fields.
pub fn field_difference_norms(disc: &Discretization, a: &TrialField, b: &TrialField) -> (f64, f64) {
    let q = disc.degree() + 1;
    norms_by_element(
        disc,
        q,
        &|x, y| {
            let el = ElementId {
                ex: disc.mesh().locate_x(x).unwrap(),
                ey: disc.mesh().locate_y(y).unwrap(),
            };
            let s = a.eval_in_element(disc, el, x, y);
            (s.value, [s.dx, s.dy])
        },
        b,
    )
}

/// `max |a - b|` over the Lobatto lattice.
pub fn lattice_max_difference(a: &TrialField, b: &TrialField) -> f64 {
    a.coeffs()
        .iter()
        .zip(b.coeffs())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Errors of one refinement level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelErrors {
    /// Elements per direction.
    pub n: usize,
    pub h: f64,
    pub e_g: f64,
    pub e_l: f64,
    pub e_n: f64,
    pub l2: f64,
    pub h1: f64,
    pub residual: f64,
}

/// `log2` rates between a level and the one before it; `None` where either
/// error is at or below [`ROUNDOFF_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub g: Option<f64>,
    pub l: Option<f64>,
    pub n: Option<f64>,
    pub l2: Option<f64>,
    pub h1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelErrors>,
    /// `rates[i]` compares level `i` with level `i - 1`; `rates[0]` is empty.
    pub rates: Vec<Rates>,
}

/// `log2(coarse / fine)`, or `None` under the roundoff floor.
pub fn rate(coarse: f64, fine: f64) -> Option<f64> {
    (coarse > ROUNDOFF_FLOOR && fine > ROUNDOFF_FLOOR).then(|| (coarse / fine).log2())
}

pub fn rate_table(levels: Vec<LevelErrors>) -> Result<ConvergenceReport, AnalysisError> {
    if levels.len() < 2 {
        return Err(AnalysisError::InvalidSequence(
            "need at least two levels".into(),
        ));
    }
    for w in levels.windows(2) {
        let ratio = w[0].h / w[1].h;
        if (ratio - 2.0).abs() > 1e-12 {
            return Err(AnalysisError::InvalidSequence(format!(
                "h {} -> {} does not halve",
                w[0].h, w[1].h
            )));
        }
    }
    let mut rates = vec![Rates::default()];
    for w in levels.windows(2) {
        let (c, f) = (&w[0], &w[1]);
        rates.push(Rates {
            g: rate(c.e_g, f.e_g),
            l: rate(c.e_l, f.e_l),
            n: rate(c.e_n, f.e_n),
            l2: rate(c.l2, f.l2),
            h1: rate(c.h1, f.h1),
        });
    }
    Ok(ConvergenceReport { levels, rates })
}
