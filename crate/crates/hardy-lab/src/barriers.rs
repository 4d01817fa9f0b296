//! Power barriers G^α ± G^β and their sub/supersolution certificates.
//!
//! The p-Laplacian of a barrier is evaluated pointwise through the closed
//! form
//!   Δ_p(G^α ± G^β) = |m|^{p-2} [ m Δ_p G
//!       + (p-1)|∇G|^p ((α²-α)G^{α-2} ± (β²-β)G^{β-2}) ],
//!   m = αG^{α-1} ± βG^{β-1},
//! with Δ_p G = 0 for p-harmonic references (numeric references contribute
//! their solver residual to the tolerance budget instead). A certificate
//! checks the sign of −Δ_p v − λ w^{-p} I_p v node-wise over an explicit
//! collar or exterior tail, against the true boundary distance or against
//! |x|.

use crate::geometry::Region;
use crate::grid::{GridField, NodeKind};
use crate::pharmonic::ReferenceG;
use crate::scalars::lambda_of_alpha;
use crate::{Error, PExp, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BarrierSign {
    /// G^α + G^β, the subsolution candidate.
    Plus,
    /// G^α − G^β, the supersolution candidate.
    Minus,
}

/// A barrier candidate over a region of the reference's grid. The exponents
/// live in (0, 1]; λ is the zeroth-order coefficient of the equation the
/// certificate targets (λ_α near a boundary, λ_α·|(p-n)/(p-1)|^p at
/// infinity).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BarrierSpec {
    pub alpha: Real,
    pub beta: Real,
    pub sign: BarrierSign,
    pub lambda: Real,
    pub region: Region,
}

impl BarrierSpec {
    pub fn new(alpha: Real, beta: Real, sign: BarrierSign, lambda: Real, region: Region) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(BarrierSpec { alpha, beta, sign, lambda, region })
    }

    fn sgn(&self) -> Real {
        match self.sign {
            BarrierSign::Plus => 1.0,
            BarrierSign::Minus => -1.0,
        }
    }
}

/// Which singular weight the certificate is taken against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CertWeight {
    /// The true distance to ∂Ω.
    DeltaBoundary,
    /// |x|, the weight of the radial comparison equation at infinity.
    AbsXInfinity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CertVerdict {
    CertifiedSub,
    CertifiedSuper,
    Violated,
}

/// Node-wise certificate summary.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ResidualReport {
    pub min_residual: Real,
    pub max_residual: Real,
    pub sign_verdict: CertVerdict,
    pub violation_locus: Vec<[Real; 2]>,
    /// Distance of the worst node's residual from 0 on the certified side.
    pub margin: Real,
    pub weight: CertWeight,
    pub region: Region,
    /// Inner exclusion width for numeric references (gradient noise there
    /// would poison the sign check); 0 for exact references.
    pub min_delta: Real,
    pub nodes_checked: usize,
}

fn barrier_parts(g: &ReferenceG, b: &BarrierSpec, id: usize) -> Result<(Real, Real, Real)> {
    let gv = g.value(id);
    if !(gv > 0.0) {
        let c = g.grid().coords(id);
        return Err(Error::NonpositiveReference { x: c[0], y: c[1], g: gv });
    }
    let value = gv.powf(b.alpha) + b.sgn() * gv.powf(b.beta);
    let m = b.alpha * gv.powf(b.alpha - 1.0) + b.sgn() * b.beta * gv.powf(b.beta - 1.0);
    Ok((gv, value, m))
}

fn plap_at(g: &ReferenceG, b: &BarrierSpec, id: usize) -> Result<Real> {
    let p = g.pe().p();
    let (gv, _, m) = barrier_parts(g, b, id)?;
    let curv = (b.alpha * b.alpha - b.alpha) * gv.powf(b.alpha - 2.0)
        + b.sgn() * (b.beta * b.beta - b.beta) * gv.powf(b.beta - 2.0);
    Ok(m.abs().powf(p - 2.0) * (p - 1.0) * g.grad_mag(id).powf(p) * curv)
}

fn region_nodes<'a>(g: &'a ReferenceG, b: &'a BarrierSpec, min_delta: Real) -> impl Iterator<Item = usize> + 'a {
    let grid = g.grid();
    let domain = grid.domain().clone();
    (0..grid.n_nodes()).filter(move |&id| {
        if grid.kind(id) != NodeKind::Interior || grid.delta(id) < min_delta {
            return false;
        }
        let c = grid.coords(id);
        let x: &[Real] = if domain.dim() == 1 { &c[..1] } else { &c[..] };
        b.region.contains(&domain, x)
    })
}

/// The barrier itself sampled over its region (0 outside).
pub fn barrier_values(g: &ReferenceG, b: &BarrierSpec) -> Result<GridField> {
    let mut out = GridField::zeros(g.grid());
    let ids: Vec<usize> = region_nodes(g, b, 0.0).collect();
    for id in ids {
        let (_, value, _) = barrier_parts(g, b, id)?;
        out.values[id] = value;
    }
    Ok(out)
}

/// Δ_p(G^α ± G^β) from the closed form, over the barrier's region.
pub fn plap_of_barrier(g: &ReferenceG, b: &BarrierSpec) -> Result<GridField> {
    let mut out = GridField::zeros(g.grid());
    let ids: Vec<usize> = region_nodes(g, b, 0.0).collect();
    for id in ids {
        out.values[id] = plap_at(g, b, id)?;
    }
    Ok(out)
}

/// Certify the barrier as a sub- or supersolution of
/// −Δ_p v = λ w^{-p} I_p v on its region. The tolerance at a node is
/// 1e-8 × (local magnitude of the two residual terms) plus the reference's
/// Δ_p G budget carried through the closed form's first term.
pub fn certify(g: &ReferenceG, b: &BarrierSpec, weight: CertWeight) -> Result<ResidualReport> {
    let grid = g.grid();
    let p = g.pe().p();
    let min_delta = if g.is_exact() { 0.0 } else { 3.0 * grid.h() };
    let mut min_res = Real::INFINITY;
    let mut max_res = Real::NEG_INFINITY;
    let mut sub_ok = true;
    let mut super_ok = true;
    let mut locus = Vec::new();
    let mut nodes = 0usize;
    let mut positive = true;
    let ids: Vec<usize> = region_nodes(g, b, min_delta).collect();
    for id in ids {
        nodes += 1;
        let (_, value, m) = barrier_parts(g, b, id)?;
        let c = grid.coords(id);
        if value <= 0.0 {
            positive = false;
            if locus.len() < 8 {
                locus.push([c[0], c[1]]);
            }
            continue;
        }
        let plap = plap_at(g, b, id)?;
        let w = match weight {
            CertWeight::DeltaBoundary => grid.delta(id),
            CertWeight::AbsXInfinity => (c[0] * c[0] + c[1] * c[1]).sqrt(),
        };
        let zeroth = b.lambda * w.powf(-p) * value.powf(p - 1.0);
        let residual = -plap - zeroth;
        let scale = plap.abs() + zeroth.abs();
        let tol = 1e-8 * scale + m.abs().powf(p - 1.0) * g.plap_budget();
        min_res = min_res.min(residual);
        max_res = max_res.max(residual);
        let sub_here = residual <= tol;
        let super_here = residual >= -tol;
        if !sub_here && !super_here && locus.len() < 8 {
            locus.push([c[0], c[1]]);
        }
        sub_ok &= sub_here;
        super_ok &= super_here;
    }
    if nodes == 0 {
        return Err(Error::EmptyRegion("no interior nodes in barrier region".into()));
    }
    let sign_verdict = if !positive {
        CertVerdict::Violated
    } else {
        match b.sign {
            BarrierSign::Plus if sub_ok => CertVerdict::CertifiedSub,
            BarrierSign::Minus if super_ok => CertVerdict::CertifiedSuper,
            _ if sub_ok => CertVerdict::CertifiedSub,
            _ if super_ok => CertVerdict::CertifiedSuper,
            _ => CertVerdict::Violated,
        }
    };
    let margin = match sign_verdict {
        CertVerdict::CertifiedSub => -max_res,
        CertVerdict::CertifiedSuper => min_res,
        CertVerdict::Violated => match b.sign {
            BarrierSign::Plus => -max_res,
            BarrierSign::Minus => min_res,
        },
    };
    Ok(ResidualReport {
        min_residual: min_res,
        max_residual: max_res,
        sign_verdict,
        violation_locus: locus,
        margin,
        weight,
        region: b.region,
        min_delta,
        nodes_checked: nodes,
    })
}

/// How a window scan grows or shrinks its certified regions.
#[derive(Clone, Copy, Debug)]
pub enum ScanMode {
    /// Bisect the largest collar width (within the reference's collar) on
    /// which the pair certifies.
    Boundary,
    /// Bisect the smallest tail radius M in [m_min, m_max] on which the
    /// pair certifies.
    ExteriorTail { m_min: Real, m_max: Real },
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct WindowRow {
    pub beta: Real,
    pub certified: bool,
    /// Largest certified collar width, or smallest certified tail radius.
    pub extent: Real,
}

/// For each β, the extremal region on which BOTH the Plus barrier certifies
/// as a subsolution and the Minus barrier as a supersolution, bisected to
/// two significant digits. Failures are recorded, never raised.
pub fn window_scan(
    g: &ReferenceG,
    pe: PExp,
    alpha: Real,
    betas: &[Real],
    mode: ScanMode,
    weight: CertWeight,
) -> Result<Vec<WindowRow>> {
    let lambda = match mode {
        ScanMode::Boundary => lambda_of_alpha(pe, alpha),
        ScanMode::ExteriorTail { .. } => {
            lambda_of_alpha(pe, alpha)
                * ((pe.p() - pe.n_real()) / (pe.p() - 1.0)).abs().powf(pe.p())
        }
    };
    let pair_ok = |beta: Real, region: Region| -> bool {
        for (sign, want) in [
            (BarrierSign::Plus, CertVerdict::CertifiedSub),
            (BarrierSign::Minus, CertVerdict::CertifiedSuper),
        ] {
            let Ok(spec) = BarrierSpec::new(alpha, beta, sign, lambda, region) else {
                return false;
            };
            match certify(g, &spec, weight) {
                Ok(rep) if rep.sign_verdict == want => {}
                _ => return false,
            }
        }
        true
    };
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let row = match mode {
            ScanMode::Boundary => {
                let w_max = g.collar_width();
                let w_min = (4.5 * g.grid().h()).min(w_max);
                let collar = |w: Real| g.grid().domain().collar(w).expect("positive width");
                if !pair_ok(beta, collar(w_min)) {
                    WindowRow { beta, certified: false, extent: 0.0 }
                } else if pair_ok(beta, collar(w_max)) {
                    WindowRow { beta, certified: true, extent: w_max }
                } else {
                    let (mut lo, mut hi) = (w_min, w_max);
                    while hi / lo > 1.01 {
                        let mid = (lo * hi).sqrt();
                        if pair_ok(beta, collar(mid)) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    WindowRow { beta, certified: true, extent: lo }
                }
            }
            ScanMode::ExteriorTail { m_min, m_max } => {
                let tail = |m: Real| g.grid().domain().tail(m).expect("tail radius above boundary");
                if pair_ok(beta, tail(m_min)) {
                    WindowRow { beta, certified: true, extent: m_min }
                } else if !pair_ok(beta, tail(m_max)) {
                    WindowRow { beta, certified: false, extent: Real::INFINITY }
                } else {
                    let (mut lo, mut hi) = (m_min, m_max);
                    while hi / lo > 1.01 {
                        let mid = (lo * hi).sqrt();
                        if pair_ok(beta, tail(mid)) {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    WindowRow { beta, certified: true, extent: hi }
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, Shape};
    use crate::grid::Grid;
    use crate::pharmonic::{solve_collar_green, CollarSolve, GKind};
    use crate::scalars::PExponent;

    fn pexp(p: Real, n: u32) -> PExp {
        PExponent::new(p, n).unwrap()
    }

    fn ext_ball() -> DomainSpec {
        DomainSpec::new(Shape::ExteriorBall { r: 1.0 }).unwrap()
    }

    #[test]
    fn alpha_equals_beta_reduces_to_pure_power_identity() {
        // Plus barrier with α = β is 2G^α; for p-harmonic radial G the
        // closed form must match −2^{p-1} λ_α W I_p(G^α) exactly.
        let d = ext_ball();
        let pe = pexp(3.0, 2);
        let g = ReferenceG::radial_exterior(&d, pe, 1.0 / 128.0, 2.0, 10.0).unwrap();
        let alpha = 0.6;
        let lam = lambda_of_alpha(pe, alpha);
        let region = d.tail(2.0).unwrap();
        let spec = BarrierSpec::new(alpha, alpha, BarrierSign::Plus, lam, region).unwrap();
        let plap = plap_of_barrier(&g, &spec).unwrap();
        let grid = g.grid().clone();
        let e = pe.radial_harmonic_exponent();
        for id in grid.interior_indices() {
            let r = grid.coords(id)[0];
            if r <= 2.0 {
                continue;
            }
            let gval = r.powf(e);
            let w = (e.abs() * r.powf(e - 1.0) / gval).powf(pe.p());
            let want = -(2.0f64).powf(pe.p() - 1.0) * lam * w * gval.powf(alpha * (pe.p() - 1.0));
            assert!(
                (plap.values[id] - want).abs() <= 1e-10 * want.abs(),
                "at r={r}: {} vs {}",
                plap.values[id],
                want
            );
        }
    }

    #[test]
    fn affine_barrier_is_p_harmonic_in_1d() {
        // α = β = 1 on G(x) = x/w: the barrier is affine, Δ_p = 0.
        let d = DomainSpec::new(Shape::Interval { a: 0.0, b: 1.0 }).unwrap();
        let pe = pexp(3.0, 1);
        let g = ReferenceG::exact_1d(&d, pe, 0.25, 1.0 / 128.0).unwrap();
        let region = d.collar(0.25).unwrap();
        let spec = BarrierSpec::new(1.0, 1.0, BarrierSign::Plus, 0.0, region).unwrap();
        let plap = plap_of_barrier(&g, &spec).unwrap();
        assert!(plap.linf() < 1e-12);
    }

    #[test]
    fn closed_form_matches_finite_differences() {
        // Radial exterior G, p = 2, n = 3, α = 0.5, β = 0.8, Plus: the
        // closed form against the discrete p-Laplacian of the sampled
        // barrier, 1% on r ∈ [2, 20].
        let d = ext_ball();
        let pe = pexp(2.0, 3);
        let h = 1.0 / 512.0;
        let g = ReferenceG::radial_exterior(&d, pe, h, 1.5, 21.0).unwrap();
        let region = d.tail(2.0).unwrap();
        let spec = BarrierSpec::new(0.5, 0.8, BarrierSign::Plus, 0.25, region).unwrap();
        let closed = plap_of_barrier(&g, &spec).unwrap();
        let sampled = barrier_values(&g, &spec).unwrap();
        let fd = sampled.discrete_p_laplacian(pe).unwrap();
        let grid = g.grid().clone();
        let deep = grid.deep_interior(2);
        let mut checked = 0;
        for id in grid.interior_indices() {
            let r = grid.coords(id)[0];
            if r < 2.0 + 2.0 * h || r > 20.0 || !deep[id] {
                continue;
            }
            let rel = (closed.values[id] - fd.values[id]).abs() / closed.values[id].abs();
            assert!(rel <= 0.01, "closed {} vs fd {} at r={r}", closed.values[id], fd.values[id]);
            checked += 1;
        }
        assert!(checked > 1000);
    }

    #[test]
    fn exterior_certificates_p2_n3() {
        let d = ext_ball();
        let pe = pexp(2.0, 3);
        let g = ReferenceG::radial_exterior(&d, pe, 1.0 / 256.0, 1.2, 60.0).unwrap();
        let region = d.tail(10.0).unwrap();
        // α = (p-1)/p, β inside the subsolinf(i) window; λ = λ_α·1 = 0.25.
        let plus = BarrierSpec::new(0.5, 0.8, BarrierSign::Plus, 0.25, region).unwrap();
        for w in [CertWeight::AbsXInfinity, CertWeight::DeltaBoundary] {
            let rep = certify(&g, &plus, w).unwrap();
            assert_eq!(rep.sign_verdict, CertVerdict::CertifiedSub, "weight {w:?}: {rep:?}");
        }
        // The Minus companion is a supersolution on a far enough tail.
        let minus = BarrierSpec::new(0.5, 0.8, BarrierSign::Minus, 0.25, region).unwrap();
        let rep = certify(&g, &minus, CertWeight::AbsXInfinity).unwrap();
        assert_eq!(rep.sign_verdict, CertVerdict::CertifiedSuper, "{rep:?}");
    }

    #[test]
    fn one_d_subsolution_certificate() {
        // G(x) = x near 0, α = 0.5, β = 0.9, p = 2, λ = 1/4: the residual
        // reduces to −(λ_{0.5} − λ_{0.9}-route) x^{β-2} < 0, certified sub.
        let d = DomainSpec::new(Shape::Interval { a: 0.0, b: 1.0 }).unwrap();
        let pe = pexp(2.0, 1);
        let g = ReferenceG::exact_1d(&d, pe, 0.2, 1.0 / 512.0).unwrap();
        let region = d.collar(0.2).unwrap();
        let spec = BarrierSpec::new(0.5, 0.9, BarrierSign::Plus, 0.25, region).unwrap();
        let rep = certify(&g, &spec, CertWeight::DeltaBoundary).unwrap();
        assert_eq!(rep.sign_verdict, CertVerdict::CertifiedSub, "{rep:?}");
    }

    #[test]
    fn certification_monotone_in_lambda() {
        // A Plus barrier with intrinsic coefficient λ_{0.55} ≈ 0.2475 is a
        // subsolution for every λ at or above it, with margin growing in λ;
        // the Minus companion is a supersolution for every λ at or below it.
        let d = ext_ball();
        let pe = pexp(2.0, 3);
        let g = ReferenceG::radial_exterior(&d, pe, 1.0 / 128.0, 1.2, 40.0).unwrap();
        let region = d.tail(8.0).unwrap();
        let base = BarrierSpec::new(0.55, 0.8, BarrierSign::Plus, 0.26, region).unwrap();
        let rep = certify(&g, &base, CertWeight::AbsXInfinity).unwrap();
        assert_eq!(rep.sign_verdict, CertVerdict::CertifiedSub, "{rep:?}");
        let stronger = BarrierSpec::new(0.55, 0.8, BarrierSign::Plus, 0.3, region).unwrap();
        let rep2 = certify(&g, &stronger, CertWeight::AbsXInfinity).unwrap();
        assert_eq!(rep2.sign_verdict, CertVerdict::CertifiedSub);
        assert!(rep2.margin >= rep.margin);
        let minus = BarrierSpec::new(0.55, 0.8, BarrierSign::Minus, 0.2, region).unwrap();
        let m1 = certify(&g, &minus, CertWeight::AbsXInfinity).unwrap();
        assert_eq!(m1.sign_verdict, CertVerdict::CertifiedSuper, "{m1:?}");
        let weaker = BarrierSpec::new(0.55, 0.8, BarrierSign::Minus, 0.15, region).unwrap();
        let m2 = certify(&g, &weaker, CertWeight::AbsXInfinity).unwrap();
        assert_eq!(m2.sign_verdict, CertVerdict::CertifiedSuper);
        assert!(m2.margin >= m1.margin);
    }

    #[test]
    fn out_of_window_pair_fails() {
        // p = 4 > n = 2 needs β < α ≤ (p-1)/p; β > α makes the Minus
        // barrier eventually negative, so the pair cannot certify on any
        // tested tail.
        let d = ext_ball();
        let pe = pexp(4.0, 2);
        let g = ReferenceG::radial_exterior(&d, pe, 1.0 / 64.0, 1.2, 80.0).unwrap();
        let rows = window_scan(
            &g,
            pe,
            0.75,
            &[0.8],
            ScanMode::ExteriorTail { m_min: 2.0, m_max: 40.0 },
            CertWeight::AbsXInfinity,
        )
        .unwrap();
        assert!(!rows[0].certified, "{rows:?}");
        // The in-window companion β < α certifies on some tail. (Pairs with
        // β close to α need G^{β-α} = r^{(p-n)(β-α)/(p-1)} to decay, which
        // at desk scale restricts the scan to well-separated exponents.)
        let rows = window_scan(
            &g,
            pe,
            0.75,
            &[0.4, 0.5],
            ScanMode::ExteriorTail { m_min: 2.0, m_max: 40.0 },
            CertWeight::AbsXInfinity,
        )
        .unwrap();
        for r in &rows {
            assert!(r.certified, "{rows:?}");
        }
    }

    #[test]
    fn boundary_window_scan_on_disk() {
        // Disk(1), p = 2, α = 0.55: β ∈ {0.6, 0.7, 0.8} all certify on some
        // positive width with the numeric collar reference.
        let d = DomainSpec::new(Shape::Disk { r: 1.0 }).unwrap();
        let pe = pexp(2.0, 2);
        // β = 0.6 sits near the window edge (λ_α − λ_β ≈ 0.0075) and its
        // certified collar is ~0.013, so the scan needs h = 1/512 to see it.
        let g = solve_collar_green(&d, pe, 0.3, 1.0 / 512.0, CollarSolve::default()).unwrap();
        let rows = window_scan(&g, pe, 0.55, &[0.6, 0.7, 0.8], ScanMode::Boundary, CertWeight::DeltaBoundary)
            .unwrap();
        for r in &rows {
            assert!(r.certified && r.extent > 0.0, "{rows:?}");
        }
        // The certified width grows as β moves off the window edge.
        assert!(rows[0].extent <= rows[1].extent && rows[1].extent <= rows[2].extent, "{rows:?}");
    }

    #[test]
    fn minus_positivity_checked_nodewise() {
        // A synthetic reference exceeding 1 makes G^α − G^β negative where
        // G > 1; the verdict must be Violated, not a panic.
        let d = ext_ball();
        let pe = pexp(4.0, 2);
        let grid = Grid::radial_window(&d, 2, 1.0 / 64.0, 2.0, 30.0).unwrap();
        let f = GridField::sample(&grid, |x| x[0].powf(pe.radial_harmonic_exponent()));
        let g = ReferenceG::from_field(f, pe, 28.0, GKind::RadialExterior).unwrap();
        let region = d.tail(3.0).unwrap();
        let spec = BarrierSpec::new(0.5, 0.8, BarrierSign::Minus, 0.1, region).unwrap();
        let rep = certify(&g, &spec, CertWeight::AbsXInfinity).unwrap();
        assert_eq!(rep.sign_verdict, CertVerdict::Violated);
        assert!(!rep.violation_locus.is_empty());
    }
}
