//! Legendre and Lobatto polynomial kernels, Gauss quadrature and the 1D
//! Lagrange basis on Lobatto nodes.
//!
//! Everything here lives on the reference interval `[-1, 1]`. Element-level
//! code maps nodes affinely onto `[x_{i-1}, x_i]`.

use thiserror::Error;

/// Largest supported polynomial degree / rule order.
pub const MAX_ORDER: usize = 12;

const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("rule order {0} outside supported range 1..={MAX_ORDER}")]
    InvalidOrder(usize),
    #[error("Newton iteration for root {index} of order {order} did not converge")]
    NoConvergence { order: usize, index: usize },
}

/// Legendre polynomial `P_r(t)` and its derivative, via the three-term
/// recurrence `(n+1) P_{n+1} = (2n+1) t P_n - n P_{n-1}` together with
/// `P'_{n+1} = P'_{n-1} + (2n+1) P_n`.
pub fn legendre(r: usize, t: f64) -> (f64, f64) {
    if r == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, t);
    let (mut d_prev, mut d) = (0.0, 1.0);
    for n in 1..r {
        let nf = n as f64;
        let p_next = ((2.0 * nf + 1.0) * t * p - nf * p_prev) / (nf + 1.0);
        let d_next = d_prev + (2.0 * nf + 1.0) * p;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d)
}

/// Lobatto polynomial `phi_r(t)`: the two linear hats for `r < 2`, otherwise
/// `phi_r = int_{-1}^t P_{r-1} = (P_r - P_{r-2}) / (2r - 1)`.
pub fn lobatto_poly(r: usize, t: f64) -> f64 {
    match r {
        0 => 0.5 * (1.0 - t),
        1 => 0.5 * (1.0 + t),
        _ => (legendre(r, t).0 - legendre(r - 2, t).0) / (2 * r - 1) as f64,
    }
}

/// Derivative of [`lobatto_poly`]; equals `P_{r-1}` for `r >= 2`.
pub fn lobatto_poly_deriv(r: usize, t: f64) -> f64 {
    match r {
        0 => -0.5,
        1 => 0.5,
        _ => legendre(r - 1, t).0,
    }
}

/// A `k`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    k: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadRule {
    pub fn order(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(node, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Applies the rule to `f` on `[-1, 1]`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(t, w)| w * f(t)).sum()
    }

    /// Applies the rule to `f` on `[a, b]`.
    pub fn integrate_on(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        half * self.iter().map(|(t, w)| w * f(mid + half * t)).sum::<f64>()
    }
}

/// Newton iteration on `g` from `x0`; `g` returns `(value, derivative)`.
fn newton(g: impl Fn(f64) -> (f64, f64), x0: f64) -> Option<f64> {
    let mut x = x0;
    for _ in 0..NEWTON_MAX_ITER {
        let (v, d) = g(x);
        let dx = v / d;
        x -= dx;
        if dx.abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            // one more step to settle at the rounding level
            let (v, d) = g(x);
            return Some(x - v / d);
        }
    }
    None
}

fn check_order(k: usize) -> Result<(), QuadError> {
    if (1..=MAX_ORDER).contains(&k) {
        Ok(())
    } else {
        Err(QuadError::InvalidOrder(k))
    }
}

/// Ascending zeros of `P_k`. Only the positive half is iterated; the negative
/// half is mirrored so the set is exactly antisymmetric.
fn legendre_roots(k: usize) -> Result<Vec<f64>, QuadError> {
    let mut nodes = vec![0.0; k];
    for j in 0..k / 2 {
        // cosine estimate of the j-th largest root
        let guess = (std::f64::consts::PI * (j as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let root = newton(|t| legendre(k, t), guess)
            .ok_or(QuadError::NoConvergence { order: k, index: j })?;
        nodes[k - 1 - j] = root;
        nodes[j] = -root;
    }
    Ok(nodes)
}

/// Gauss–Legendre rule with `k` points, `1 <= k <= 12`.
pub fn gauss_rule(k: usize) -> Result<QuadRule, QuadError> {
    check_order(k)?;
    let nodes = legendre_roots(k)?;
    let weights = nodes
        .iter()
        .map(|&g| {
            let d = legendre(k, g).1;
            2.0 / ((1.0 - g * g) * d * d)
        })
        .collect();
    Ok(QuadRule { k, nodes, weights })
}

/// Gauss rule for orders beyond [`MAX_ORDER`], used only by oversampled
/// integrals (error norms, projector coefficients, test oracles).
pub fn gauss_rule_any(k: usize) -> Result<QuadRule, QuadError> {
    if k == 0 || k > 64 {
        return Err(QuadError::InvalidOrder(k));
    }
    let nodes = legendre_roots(k)?;
    let weights = nodes
        .iter()
        .map(|&g| {
            let d = legendre(k, g).1;
            2.0 / ((1.0 - g * g) * d * d)
        })
        .collect();
    Ok(QuadRule { k, nodes, weights })
}

/// The `k + 1` Lobatto points of degree `k`: `-1`, the zeros of `P_k'`, `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LobattoSet {
    k: usize,
    nodes: Vec<f64>,
}

impl LobattoSet {
    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// Lobatto points for degree `k`, `1 <= k <= 12`.
pub fn lobatto_points(k: usize) -> Result<LobattoSet, QuadError> {
    check_order(k)?;
    let gauss = legendre_roots(k)?;
    let kf = k as f64;
    // P_k'' from the Legendre equation, valid in the open interval
    let dp = |t: f64| {
        let (p, d) = legendre(k, t);
        (d, (2.0 * t * d - kf * (kf + 1.0) * p) / (1.0 - t * t))
    };
    let mut nodes = vec![0.0; k + 1];
    nodes[0] = -1.0;
    nodes[k] = 1.0;
    // interior zeros interlace the Gauss roots; iterate the upper half and mirror
    for i in 1..=(k - 1) / 2 {
        let guess = 0.5 * (gauss[k - 1 - i] + gauss[k - i]);
        let root = newton(dp, guess).ok_or(QuadError::NoConvergence { order: k, index: i })?;
        nodes[k - i] = root;
        nodes[i] = -root;
    }
    Ok(LobattoSet { k, nodes })
}

/// Lagrange cardinal basis on a Lobatto node set, evaluated in barycentric
/// form. Derivatives go through the nodal differentiation matrix, which stays
/// accurate arbitrarily close to a node.
#[derive(Debug, Clone)]
pub struct NodalBasis {
    nodes: Vec<f64>,
    bary: Vec<f64>,
    /// `diff[m][i] = l_i'(x_m)`
    diff: Vec<Vec<f64>>,
}

impl NodalBasis {
    pub fn new(set: &LobattoSet) -> Self {
        Self::from_nodes(set.nodes().to_vec())
    }

    /// Basis on arbitrary distinct nodes.
    pub fn from_nodes(nodes: Vec<f64>) -> Self {
        let n = nodes.len();
        let bary: Vec<f64> = (0..n)
            .map(|i| {
                let prod: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| nodes[i] - nodes[j])
                    .product();
                1.0 / prod
            })
            .collect();
        let mut diff = vec![vec![0.0; n]; n];
        for m in 0..n {
            let mut diag = 0.0;
            for i in 0..n {
                if i != m {
                    let v = (bary[i] / bary[m]) / (nodes[m] - nodes[i]);
                    diff[m][i] = v;
                    diag -= v;
                }
            }
            diff[m][m] = diag;
        }
        Self { nodes, bary, diff }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Values of all cardinal functions at `t`, written into `out`.
    pub fn values_into(&self, t: f64, out: &mut [f64]) {
        if let Some(m) = self.nodes.iter().position(|&x| x == t) {
            out.iter_mut()
                .enumerate()
                .for_each(|(i, o)| *o = if i == m { 1.0 } else { 0.0 });
            return;
        }
        let mut denom = 0.0;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.bary[i] / (t - self.nodes[i]);
            denom += *o;
        }
        out.iter_mut().for_each(|o| *o /= denom);
    }

    /// Values and derivatives of all cardinal functions at `t`.
    pub fn eval_all(&self, t: f64, values: &mut [f64], derivs: &mut [f64]) {
        self.values_into(t, values);
        for (i, d) in derivs.iter_mut().enumerate() {
            *d = values
                .iter()
                .zip(&self.diff)
                .map(|(v, row)| v * row[i])
                .sum();
        }
    }

    /// Value and derivative of the `i`-th cardinal function at `t`.
    pub fn eval(&self, i: usize, t: f64) -> (f64, f64) {
        let n = self.len();
        let (mut v, mut d) = (vec![0.0; n], vec![0.0; n]);
        self.eval_all(t, &mut v, &mut d);
        (v[i], d[i])
    }
}

/// Value and derivative of the `i`-th Lagrange cardinal polynomial on `nodes`.
pub fn nodal_basis_1d(nodes: &LobattoSet, i: usize, t: f64) -> (f64, f64) {
    NodalBasis::new(nodes).eval(i, t)
}
