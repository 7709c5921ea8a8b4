//! Property and invariant suite behind the `verify` command.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::lobatto_interpolant;
use crate::fvcore::{
    antiderivative_terms, apply_bilinear_jump_form, bilinear_flux_form, discrete_inner_sampled,
    jump_residual, mixed_derivative_at_gauss, pi_map, Discretization, DualField, TrialField,
};
use crate::meshdual::{build_uniform_mesh, TensorMesh};
use crate::polyquad::{gauss_rule, MAX_ORDER};
use crate::study::{
    polynomial_solution, separable_solution, solve_level, SolverSettings, CONSERVATION_BOUND,
};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub bound: f64,
    pub cases: usize,
    pub seconds: f64,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} worst {:.3e} (bound {:.1e}, {} cases, {:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.bound,
            self.cases,
            self.seconds
        )
    }
}

fn timed(
    name: &'static str,
    bound: f64,
    below: bool,
    body: impl FnOnce() -> (f64, usize),
) -> CheckResult {
    let start = Instant::now();
    let (worst, cases) = body();
    let passed = if below { worst <= bound } else { worst > bound };
    CheckResult {
        name,
        passed,
        worst,
        bound,
        cases,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_trial(disc: &Discretization, rng: &mut ChaCha8Rng) -> TrialField {
    let vals: Vec<f64> = (0..disc.dof().len())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    TrialField::from_interior(disc, &vals).expect("sized by dof map")
}

fn random_dual(disc: &Discretization, rng: &mut ChaCha8Rng) -> DualField {
    let vals: Vec<f64> = (0..disc.dof().len())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    DualField::from_interior(disc, &vals).expect("sized by dof map")
}

/// Uniform and graded meshes used by the algebraic checks.
fn test_meshes() -> Vec<TensorMesh> {
    vec![
        build_uniform_mesh(0.0, 1.0, 0.0, 1.0, 3, 3).unwrap(),
        build_uniform_mesh(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap(),
        TensorMesh::new(vec![0.0, 0.2, 0.55, 1.0], vec![-1.0, -0.3, 0.4, 0.5, 2.0]).unwrap(),
    ]
}

pub fn gauss_exactness() -> CheckResult {
    timed("gauss exactness", 1e-13, true, || {
        let mut worst = 0.0f64;
        let mut cases = 0;
        for k in 1..=MAX_ORDER {
            let rule = gauss_rule(k).unwrap();
            for p in 0..2 * k {
                let exact = if p % 2 == 0 {
                    2.0 / (p as f64 + 1.0)
                } else {
                    0.0
                };
                worst = worst.max((rule.integrate(|t| t.powi(p as i32)) - exact).abs());
                cases += 1;
            }
        }
        (worst, cases)
    })
}

/// `|flux - jump| / (1 + |flux|)` over random pairs.
pub fn flux_jump_duality(seed: u64) -> CheckResult {
    timed("flux/jump duality", 1e-11, true, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut cases = 0;
        for mesh in test_meshes() {
            for k in 1..=4 {
                let disc = Discretization::new(mesh.clone(), k).unwrap();
                for _ in 0..3 {
                    let w = random_trial(&disc, &mut rng);
                    let v = random_dual(&disc, &mut rng);
                    let a = bilinear_flux_form(&disc, &w, &v);
                    let b = apply_bilinear_jump_form(&disc, &w, &v);
                    worst = worst.max((a - b).abs() / (1.0 + a.abs()));
                    cases += 1;
                }
            }
        }
        (worst, cases)
    })
}

/// Jump residual of `Pi v` relative to `||v||_inf`.
pub fn pi_consistency(seed: u64) -> CheckResult {
    timed("pi-map consistency", 1e-10, true, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut cases = 0;
        for mesh in test_meshes() {
            for k in 1..=4 {
                let disc = Discretization::new(mesh.clone(), k).unwrap();
                for _ in 0..3 {
                    let v = random_trial(&disc, &mut rng);
                    let r = match pi_map(&disc, &v) {
                        Ok(pv) => jump_residual(&disc, &v, &pv) / v.max_abs(),
                        Err(_) => f64::INFINITY,
                    };
                    worst = worst.max(r);
                    cases += 1;
                }
            }
        }
        (worst, cases)
    })
}

/// `a_h(w, Pi v)` against `-<d_x^{-1} d_y w + d_y^{-1} d_x w, d2_xy v>`.
pub fn quadrature_identity(seed: u64) -> CheckResult {
    timed("quadrature-of-FEM identity", 1e-10, true, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut cases = 0;
        for mesh in test_meshes() {
            for k in 1..=4 {
                let disc = Discretization::new(mesh.clone(), k).unwrap();
                for _ in 0..3 {
                    let w = random_trial(&disc, &mut rng);
                    let v = random_trial(&disc, &mut rng);
                    let pv = pi_map(&disc, &v).unwrap();
                    let lhs = bilinear_flux_form(&disc, &w, &pv);
                    let (ix_dy, iy_dx) = antiderivative_terms(&disc, &w);
                    let dxy = mixed_derivative_at_gauss(&disc, &v);
                    let rhs = -discrete_inner_sampled(&disc, &ix_dy, &dxy)
                        - discrete_inner_sampled(&disc, &iy_dx, &dxy);
                    worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
                    cases += 1;
                }
            }
        }
        (worst, cases)
    })
}

/// Smallest `a_h(v, Pi v)` over 100 random fields per degree on a 4x4 mesh;
/// must stay positive.
pub fn coercivity(seed: u64) -> CheckResult {
    timed("coercivity a_h(v, Pi v) > 0", 0.0, false, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = build_uniform_mesh(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        let mut worst = f64::INFINITY;
        let mut cases = 0;
        for k in 1..=4 {
            let disc = Discretization::new(mesh.clone(), k).unwrap();
            for _ in 0..100 {
                let v = random_trial(&disc, &mut rng);
                let pv = pi_map(&disc, &v).unwrap();
                worst = worst.min(bilinear_flux_form(&disc, &v, &pv));
                cases += 1;
            }
        }
        (worst, cases)
    })
}

/// Max lattice error of the solved `x(1-x)y(1-y)` problem.
pub fn polynomial_exactness() -> CheckResult {
    timed("polynomial exactness", 1e-10, true, || {
        let sol = polynomial_solution();
        let mut worst = 0.0f64;
        let mut cases = 0;
        for k in 2..=4 {
            for n in [2, 4] {
                let level = solve_level(&sol, k, n, k + 2, SolverSettings::default()).unwrap();
                let exact = lobatto_interpolant(&sol, &level.disc);
                worst = worst.max(crate::analysis::lattice_max_difference(&level.u_h, &exact));
                cases += 1;
            }
        }
        (worst, cases)
    })
}

/// Relative control-volume imbalance after solving.
pub fn local_conservation() -> CheckResult {
    timed("local conservation", CONSERVATION_BOUND, true, || {
        let sol = separable_solution();
        let mut worst = 0.0f64;
        let mut cases = 0;
        for k in 1..=4 {
            for n in [2, 4] {
                let level = solve_level(&sol, k, n, k + 2, SolverSettings::default()).unwrap();
                worst = worst.max(level.conservation_defect());
                cases += 1;
            }
        }
        (worst, cases)
    })
}

/// Every check, in a fixed order.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        gauss_exactness(),
        flux_jump_duality(seed),
        pi_consistency(seed.wrapping_add(1)),
        quadrature_identity(seed.wrapping_add(2)),
        coercivity(seed.wrapping_add(3)),
        polynomial_exactness(),
        local_conservation(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in run_all(7) {
            assert!(r.passed, "{r}");
            assert!(r.cases > 0);
        }
    }
}
