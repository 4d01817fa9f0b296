//! Positive p-harmonic reference functions G vanishing on ∂Ω.
//!
//! Numeric collar solves minimize the p-Dirichlet energy with G = 0 on ∂Ω
//! and G = 1 on the inner interface {δ = width}: straight SOR for p = 2,
//! and for p ≠ 2 a lagged-coefficient preconditioned descent with Armijo
//! backtracking (each step solves the frozen-coefficient 5-point system and
//! is accepted only if the raw p-energy drops). Exact references cover the
//! interval (G affine) and the exterior power |x|^{(p-n)/(p-1)}.

use crate::geometry::{DomainSpec, Shape};
use crate::grid::{assemble_edge_op, Grid, GridField, GridMode, NodeKind, FLUX_KAPPA};
use crate::{Error, PExp, Real, Result};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GKind {
    NumericCollar,
    RadialExterior,
    Exact1D,
}

/// Solver knobs for the collar solve.
#[derive(Clone, Copy, Debug)]
pub struct CollarSolve {
    pub max_sweeps: usize,
    pub max_outer: usize,
    /// Target max-norm of the discrete p-Laplacian of G.
    pub plap_tol: Real,
}

impl Default for CollarSolve {
    fn default() -> Self {
        CollarSolve { max_sweeps: 60_000, max_outer: 600, plap_tol: 1e-6 }
    }
}

/// A positive p-harmonic reference G on a grid, with its gradient field and
/// the operator-residual budget the barrier layer must absorb.
#[derive(Clone, Debug)]
pub struct ReferenceG {
    kind: GKind,
    pe: PExp,
    collar_width: Real,
    field: GridField,
    grad: Vec<[Real; 2]>,
    grad_mag: Vec<Real>,
    /// Max |Δ_p G| over interior nodes: 0 for exact kinds, the solver
    /// residual for numeric ones.
    plap_budget: Real,
    /// Analytic Δ_p G is available and identically zero.
    exact: bool,
}

impl ReferenceG {
    pub fn kind(&self) -> GKind {
        self.kind
    }

    pub fn pe(&self) -> PExp {
        self.pe
    }

    pub fn collar_width(&self) -> Real {
        self.collar_width
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.field.grid()
    }

    pub fn field(&self) -> &GridField {
        &self.field
    }

    pub fn value(&self, id: usize) -> Real {
        self.field.values[id]
    }

    pub fn grad_mag(&self, id: usize) -> Real {
        self.grad_mag[id]
    }

    pub fn grad(&self, id: usize) -> [Real; 2] {
        self.grad[id]
    }

    pub fn plap_budget(&self) -> Real {
        self.plap_budget
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// Exact affine reference on the interval collar [a, a + width]:
    /// G(x) = (x - a)/width, the 1-D p-harmonic profile for every p.
    pub fn exact_1d(domain: &DomainSpec, pe: PExp, width: Real, h: Real) -> Result<ReferenceG> {
        let Shape::Interval { a, b } = *domain.shape() else {
            return Err(Error::InvalidParameter("exact_1d needs an interval".into()));
        };
        if !(width > 0.0 && a + width < b) {
            return Err(Error::InvalidParameter("collar width does not fit the interval".into()));
        }
        let grid = Grid::radial_window(domain, 1, h, a, a + width)?;
        let field = GridField::sample(&grid, |x| (x[0] - a) / width);
        let n = grid.n_nodes();
        Ok(ReferenceG {
            kind: GKind::Exact1D,
            pe,
            collar_width: width,
            field,
            grad: vec![[1.0 / width, 0.0]; n],
            grad_mag: vec![1.0 / width; n],
            plap_budget: 0.0,
            exact: true,
        })
    }

    /// The exact exterior reference G(x) = |x|^{(p-n)/(p-1)} sampled on a
    /// radial window [r_lo, r_hi]; gradients are analytic.
    pub fn radial_exterior(domain: &DomainSpec, pe: PExp, h: Real, r_lo: Real, r_hi: Real) -> Result<ReferenceG> {
        if pe.is_conformal() {
            return Err(Error::DegenerateDimension(pe.p()));
        }
        if !domain.is_exterior() {
            return Err(Error::InvalidParameter("radial_exterior needs an exterior shape".into()));
        }
        let e = pe.radial_harmonic_exponent();
        let grid = Grid::radial_window(domain, pe.n(), h, r_lo, r_hi)?;
        let field = GridField::sample(&grid, |x| x[0].powf(e));
        let n = grid.n_nodes();
        let mut grad = vec![[0.0, 0.0]; n];
        let mut grad_mag = vec![0.0; n];
        for id in 0..n {
            let r = grid.coords(id)[0];
            let d = e * r.powf(e - 1.0);
            grad[id] = [d, 0.0];
            grad_mag[id] = d.abs();
        }
        Ok(ReferenceG {
            kind: GKind::RadialExterior,
            pe,
            collar_width: r_hi - r_lo,
            field,
            grad,
            grad_mag,
            plap_budget: 0.0,
            exact: true,
        })
    }

    /// Wrap an arbitrary field as a reference (used for synthetic checks).
    pub fn from_field(field: GridField, pe: PExp, collar_width: Real, kind: GKind) -> Result<ReferenceG> {
        let grad = field.grad()?;
        let grad_mag = grad.iter().map(|g| (g[0] * g[0] + g[1] * g[1]).sqrt()).collect();
        let plap_budget = field.discrete_p_laplacian(pe)?.linf();
        Ok(ReferenceG { kind, pe, collar_width, field, grad, grad_mag, plap_budget, exact: false })
    }
}

/// Solve -Δ_p G = 0 on the collar {δ < width} with G = 0 on ∂Ω and G = 1 on
/// the inner interface, starting from G⁰ = δ/width.
pub fn solve_collar_green(
    domain: &DomainSpec,
    pe: PExp,
    width: Real,
    h: Real,
    opts: CollarSolve,
) -> Result<ReferenceG> {
    let grid = match *domain.shape() {
        Shape::Interval { a, b } => {
            if !(width > 0.0 && a + width < b) {
                return Err(Error::InvalidParameter("collar width does not fit the interval".into()));
            }
            Grid::radial_window(domain, 1, h, a, a + width)?
        }
        Shape::ExteriorBall { r } => Grid::radial_window(domain, pe.n(), h, r, r + width)?,
        _ => Grid::cartesian_collar(domain, h, width)?,
    };
    let mut field = GridField::zeros(&grid);
    field.interface_value = 1.0;
    for id in 0..grid.n_nodes() {
        match grid.kind(id) {
            NodeKind::Interior => field.values[id] = (grid.delta(id) / width).clamp(0.0, 1.0),
            NodeKind::Boundary => {
                // Radial interface end nodes carry 1; true boundary nodes
                // (δ = 0) carry 0.
                field.values[id] = if grid.delta(id) > 0.5 * width { 1.0 } else { 0.0 };
            }
            NodeKind::Outside => {}
        }
    }
    let p = pe.p();
    let mut history = Vec::new();
    // Residual target on the EdgeOp scale: the p-Laplacian is residual/cell.
    let cell = match grid.mode() {
        GridMode::Cartesian2D => h * h,
        GridMode::Radial1D => h,
    };
    let target = 0.3 * opts.plap_tol * cell;
    let omega = sor_omega(width, grid.h());

    if p == 2.0 {
        let op = assemble_edge_op(&grid, &field, None);
        let mut res = vec![0.0; grid.n_nodes()];
        let mut converged = false;
        let mut sweeps = 0;
        while sweeps < opts.max_sweeps {
            for _ in 0..20 {
                op.sor_sweep(&grid, &mut field.values, true, None, omega);
                sweeps += 1;
            }
            op.residual(&grid, &field.values, &mut res);
            let worst = max_radial_scaled(&grid, &res);
            history.push(worst / cell);
            if worst <= target {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Solver {
                message: format!("p=2 collar SOR did not reach tolerance in {sweeps} sweeps"),
                tail: tail(&history),
            });
        }
    } else {
        let kappa = if p < 2.0 { FLUX_KAPPA } else { 0.0 };
        let mut converged = false;
        let mut res = vec![0.0; grid.n_nodes()];
        // (max-norm, l2-norm) of the cell-scaled residual: the max norm is
        // the convergence target, the l2 norm drives step acceptance (one
        // stiff cut link must not throttle the global step, and near the
        // optimum energy differences sink below f64 resolution, so the
        // backtracking objective is the residual itself).
        let norms_of = |f: &GridField, res: &mut Vec<Real>| -> (Real, Real) {
            let op = assemble_edge_op(&grid, f, Some((p, kappa)));
            op.residual(&grid, &f.values, res);
            let mx = max_radial_scaled(&grid, res) / cell;
            let l2 = res.iter().map(|r| r * r).sum::<Real>().sqrt() / cell;
            (mx, l2)
        };
        let (mut worst, mut l2) = norms_of(&field, &mut res);
        let mut stuck = 0usize;
        for _outer in 0..opts.max_outer {
            history.push(worst);
            if worst <= 0.9 * opts.plap_tol {
                converged = true;
                break;
            }
            // Preconditioned direction: solve the frozen-coefficient system
            // A d = r by SOR from zero. For p > 2 the full step overshoots
            // at stiff cut links, so backtrack along a damped ladder.
            let op = assemble_edge_op(&grid, &field, Some((p, kappa)));
            let mut dir = vec![0.0; grid.n_nodes()];
            for _ in 0..300 {
                let step = op.sor_sweep(&grid, &mut dir, false, Some(&res), omega);
                if step < 1e-15 {
                    break;
                }
            }
            let mut tres = vec![0.0; grid.n_nodes()];
            let mut accepted = false;
            // Damped step for p > 2 (the full lagged step overshoots there),
            // full step otherwise; halve on residual growth.
            let mut t = if p > 2.0 { 0.6 } else { 1.0 };
            for _ in 0..7 {
                let mut trial = field.clone();
                for id in grid.interior_indices() {
                    trial.values[id] -= t * dir[id];
                }
                let (worst_t, l2_t) = norms_of(&trial, &mut tres);
                if l2_t < l2 * 1.0000001 {
                    field = trial;
                    std::mem::swap(&mut res, &mut tres);
                    worst = worst_t;
                    l2 = l2_t;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                stuck += 1;
                if stuck >= 3 {
                    break;
                }
            } else {
                stuck = 0;
            }
        }
        if !converged {
            return Err(Error::Solver {
                message: "collar descent stalled above tolerance".into(),
                tail: tail(&history),
            });
        }
    }

    for id in grid.interior_indices() {
        if !(field.values[id] > 0.0) {
            let c = grid.coords(id);
            return Err(Error::NonpositiveReference { x: c[0], y: c[1], g: field.values[id] });
        }
    }
    let plap = field.discrete_p_laplacian(pe)?;
    let plap_budget = plap.linf();
    let grad = field.grad()?;
    let grad_mag = grad.iter().map(|g| (g[0] * g[0] + g[1] * g[1]).sqrt()).collect();
    Ok(ReferenceG {
        kind: GKind::NumericCollar,
        pe,
        collar_width: width,
        field,
        grad,
        grad_mag,
        plap_budget,
        exact: false,
    })
}

fn tail(history: &[Real]) -> Vec<Real> {
    history.iter().rev().take(6).rev().copied().collect()
}

fn max_radial_scaled(grid: &Grid, res: &[Real]) -> Real {
    // Radial residuals carry the r^{n-1} cell weight; normalize it away so
    // the tolerance means the same thing at every radius.
    let mut worst: Real = 0.0;
    for id in grid.interior_indices() {
        let w = match grid.mode() {
            GridMode::Cartesian2D => 1.0,
            GridMode::Radial1D => {
                let r = grid.coords(id)[0].abs().max(1e-12);
                r.powi(grid.radial_n() as i32 - 1)
            }
        };
        worst = worst.max(res[id].abs() / w);
    }
    worst
}

pub(crate) fn sor_omega(strip_width: Real, h: Real) -> Real {
    let m = (strip_width / h).max(4.0);
    let s = (std::f64::consts::PI / m).sin();
    (2.0 / (1.0 + s)).clamp(1.2, 1.97)
}

/// Minimum one-sided normal difference quotient of G over boundary-adjacent
/// nodes, and the Hopf verdict min > 10·h·(mean interior gradient scale).
pub fn hopf_check(g: &ReferenceG) -> (Real, bool) {
    let grid = g.grid();
    let (nx, ny) = grid.dims();
    let h = grid.h();
    let mut min_q = Real::INFINITY;
    for j in 0..ny {
        for i in 0..nx {
            let id = grid.idx(i, j);
            if grid.kind(id) != NodeKind::Interior {
                continue;
            }
            let steps: [(i64, i64, usize); 4] = [(-1, 0, 0), (1, 0, 1), (0, -1, 2), (0, 1, 3)];
            for (di, dj, dir) in steps {
                if grid.mode() == GridMode::Radial1D && dir >= 2 {
                    continue;
                }
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if ii < 0 || jj < 0 || ii >= nx as i64 || jj >= ny as i64 {
                    continue;
                }
                let nid = grid.idx(ii as usize, jj as usize);
                // The quotient divides by the node's true boundary distance,
                // which is the honest one-sided step even when the grid edge
                // is cut arbitrarily close to the node.
                let adjacent_wall = match grid.kind(nid) {
                    NodeKind::Boundary => g.value(nid).abs() < 1e-12,
                    NodeKind::Outside => {
                        grid.cut_target(id, dir) == crate::grid::CutKind::Boundary
                    }
                    NodeKind::Interior => false,
                };
                if adjacent_wall {
                    let d = grid.delta(id).max(1e-3 * h);
                    min_q = min_q.min((g.value(id) - g.field().cut_value).abs() / d);
                }
            }
        }
    }
    let mut scale = 0.0;
    let mut count = 0usize;
    for id in grid.interior_indices() {
        scale += g.grad_mag(id);
        count += 1;
    }
    let scale = if count > 0 { scale / count as Real } else { 0.0 };
    let verdict = min_q.is_finite() && min_q > 10.0 * h * scale;
    (min_q, verdict)
}

/// Which ratio the asymptotics bands measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatioMode {
    /// |∇G| δ / G near ∂Ω; trends to 1.
    Boundary,
    /// |∇G| |x| / G near infinity; trends to |p−n|/(p−1).
    Infinity,
}

/// Band extremes of the reference ratio per level: nodes with the band
/// coordinate in [ℓ/1.35, 1.35ℓ]. Boundary mode bands on δ, infinity mode
/// on |x|.
pub fn ratio_asymptotics(
    g: &ReferenceG,
    levels: &[Real],
    mode: RatioMode,
) -> Result<Vec<(Real, (Real, Real))>> {
    let grid = g.grid();
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let (lo, hi) = (level / 1.35, level * 1.35);
        let mut inf = Real::INFINITY;
        let mut sup = Real::NEG_INFINITY;
        let mut seen = false;
        for id in grid.interior_indices() {
            let coordinate = match mode {
                RatioMode::Boundary => grid.delta(id),
                RatioMode::Infinity => {
                    let c = grid.coords(id);
                    (c[0] * c[0] + c[1] * c[1]).sqrt()
                }
            };
            if coordinate < lo || coordinate > hi {
                continue;
            }
            let gv = g.value(id);
            if gv <= 0.0 {
                continue;
            }
            let ratio = g.grad_mag(id) * coordinate / gv;
            inf = inf.min(ratio);
            sup = sup.max(ratio);
            seen = true;
        }
        if !seen {
            return Err(Error::EmptyRegion(format!("no nodes in ratio band at level {level}")));
        }
        out.push((level, (inf, sup)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalars::PExponent;

    fn pexp(p: Real, n: u32) -> PExp {
        PExponent::new(p, n).unwrap()
    }

    #[test]
    fn interval_collar_is_affine_for_all_p() {
        let d = DomainSpec::new(Shape::Interval { a: 0.0, b: 1.0 }).unwrap();
        for p in [1.5, 2.0, 3.0] {
            let g = solve_collar_green(&d, pexp(p, 1), 0.25, 1.0 / 256.0, CollarSolve::default()).unwrap();
            let grid = g.grid().clone();
            for id in grid.interior_indices() {
                let x = grid.coords(id)[0];
                assert!(
                    (g.value(id) - x / 0.25).abs() < 1e-6,
                    "p={p}: G({x}) = {} vs {}",
                    g.value(id),
                    x / 0.25
                );
            }
        }
    }

    #[test]
    fn exact_1d_reference() {
        let d = DomainSpec::new(Shape::Interval { a: 0.0, b: 1.0 }).unwrap();
        let g = ReferenceG::exact_1d(&d, pexp(2.0, 1), 0.25, 1.0 / 64.0).unwrap();
        let (min_q, verdict) = hopf_check(&g);
        assert!((min_q - 4.0).abs() < 1e-10);
        assert!(verdict);
        let rows = ratio_asymptotics(&g, &[0.1, 0.05, 0.02], RatioMode::Boundary).unwrap();
        for (_, (lo, hi)) in rows {
            assert!((lo - 1.0).abs() < 1e-10 && (hi - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn disk_collar_matches_log_profile() {
        let d = DomainSpec::new(Shape::Disk { r: 1.0 }).unwrap();
        let pe = pexp(2.0, 2);
        let g = solve_collar_green(&d, pe, 0.3, 1.0 / 256.0, CollarSolve::default()).unwrap();
        let grid = g.grid().clone();
        let oracle = |r: Real| r.ln() / (0.7f64).ln();
        let mut worst: Real = 0.0;
        for id in grid.interior_indices() {
            if grid.delta(id) < 2.0 * grid.h() {
                continue;
            }
            let c = grid.coords(id);
            let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
            worst = worst.max((g.value(id) - oracle(r)).abs());
        }
        assert!(worst < 5e-3, "collar solve off the radial oracle by {worst}");
        assert!(g.plap_budget() <= 1e-6, "residual budget {}", g.plap_budget());
        let (min_q, verdict) = hopf_check(&g);
        assert!(verdict, "Hopf verdict failed with min quotient {min_q}");
        // Radial oracle slope at the wall: 1/|log 0.7| ≈ 2.8.
        let slope = 1.0 / (0.7f64).ln().abs();
        assert!((min_q - slope).abs() / slope < 0.05, "min quotient {min_q} vs {slope}");
    }

    #[test]
    fn annulus_inner_collar_matches_log_profile() {
        let d = DomainSpec::new(Shape::Annulus { r: 1.0, outer: 3.0 }).unwrap();
        let pe = pexp(2.0, 2);
        let g = solve_collar_green(&d, pe, 0.3, 1.0 / 256.0, CollarSolve::default()).unwrap();
        let grid = g.grid().clone();
        let oracle = |r: Real| (r / 1.0).ln() / (1.3f64).ln();
        let mut worst: Real = 0.0;
        for id in grid.interior_indices() {
            let c = grid.coords(id);
            let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
            // Inner component only.
            if r > 1.35 || grid.delta(id) < 2.0 * grid.h() {
                continue;
            }
            worst = worst.max((g.value(id) - oracle(r)).abs());
        }
        assert!(worst < 5e-3, "annulus collar off the radial oracle by {worst}");
    }

    #[test]
    fn annulus_radial_p3_collar_against_power_profile() {
        // p ≠ 2 solver path against the exact radial p-harmonic profile
        // r^{(p-2)/(p-1)} in 2-D, on the inner collar (coarse grid).
        let d = DomainSpec::new(Shape::Annulus { r: 1.0, outer: 3.0 }).unwrap();
        let pe = pexp(3.0, 2);
        let g = solve_collar_green(&d, pe, 0.3, 1.0 / 64.0, CollarSolve::default()).unwrap();
        let grid = g.grid().clone();
        let e = (3.0 - 2.0) / (3.0 - 1.0);
        let phi = |r: Real| (r.powf(e) - 1.0) / ((1.3f64).powf(e) - 1.0);
        let mut worst: Real = 0.0;
        for id in grid.interior_indices() {
            let c = grid.coords(id);
            let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
            if r > 1.35 || grid.delta(id) < 2.0 * grid.h() {
                continue;
            }
            worst = worst.max((g.value(id) - phi(r)).abs());
        }
        assert!(worst < 2e-2, "p=3 collar off the radial power profile by {worst}");
    }

    #[test]
    fn hopf_fails_on_quadratic_touchdown() {
        // Synthetic G = δ² has vanishing normal derivative: verdict negative.
        let d = DomainSpec::new(Shape::Disk { r: 1.0 }).unwrap();
        let grid = Grid::cartesian_collar(&d, 1.0 / 128.0, 0.3).unwrap();
        let mut f = GridField::zeros(&grid);
        for id in 0..grid.n_nodes() {
            if grid.kind(id) != NodeKind::Outside {
                f.values[id] = (grid.delta(id) / 0.3).powi(2);
            }
        }
        let g = ReferenceG::from_field(f, pexp(2.0, 2), 0.3, GKind::NumericCollar).unwrap();
        let (_, verdict) = hopf_check(&g);
        assert!(!verdict);
    }

    #[test]
    fn radial_exterior_ratio_is_exact() {
        let d = DomainSpec::new(Shape::ExteriorBall { r: 1.0 }).unwrap();
        let pe = pexp(2.0, 3);
        let g = ReferenceG::radial_exterior(&d, pe, 1.0 / 64.0, 2.0, 30.0).unwrap();
        let rows = ratio_asymptotics(&g, &[4.0, 10.0, 25.0], RatioMode::Infinity).unwrap();
        for (_, (lo, hi)) in rows {
            assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn comparison_with_linear_growth() {
        // c δ ≤ G ≤ c^{-1} δ on the collar: the measured G/δ stays in a
        // moderate band for the catalog shapes at width 0.3.
        let pe = pexp(2.0, 2);
        // A collar wider than a pinch swallows it whole and G then decays
        // exponentially along the pinched passage (no interface feeds it),
        // so the dumbbell runs with a collar below its neck half-width.
        for (shape, width) in [
            (Shape::Disk { r: 1.0 }, 0.3),
            (Shape::Annulus { r: 1.0, outer: 3.0 }, 0.3),
            (Shape::Dumbbell { bulb_r: 1.0, neck_half_width: 0.15, neck_length: 1.5 }, 0.1),
        ] {
            let d = DomainSpec::new(shape).unwrap();
            let g = solve_collar_green(&d, pe, width, 1.0 / 128.0, CollarSolve::default()).unwrap();
            let grid = g.grid().clone();
            let mut lo = Real::INFINITY;
            let mut hi: Real = 0.0;
            for id in grid.interior_indices() {
                // Sub-cell nodes measure the cut representation, not G.
                if grid.delta(id) < grid.h() {
                    continue;
                }
                // G is defined up to scale; width·G is the δ-comparable
                // normalization (the initial profile is δ/width).
                let ratio = width * g.value(id) / grid.delta(id);
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            assert!(lo > 0.1 && hi < 10.0, "width·G/δ range [{lo}, {hi}]");
        }
    }
}
