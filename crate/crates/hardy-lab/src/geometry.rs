//! Domain catalog and distance-to-boundary geometry.
//!
//! Every shape answers three queries: is a point inside, how far is it from
//! the boundary, and where does it project onto the boundary (with the unit
//! inner normal there). Interval, disk, annulus and exterior ball use closed
//! forms. The dumbbell boundary is built from segments and circular arcs
//! joined with C^{1,1} fillets, so its projections are exact per piece. The
//! parabolic graph boundary y = |x|^{1+γ} has no closed-form projection and
//! uses a dense polyline with local refinement.

use crate::{Error, Real, Result};

const TAU: Real = std::f64::consts::TAU;

/// Catalog shapes. Lengths are in the same unit as query points.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Shape {
    /// Open interval (a, b) on the line.
    Interval { a: Real, b: Real },
    /// Open disk of radius r centered at the origin.
    Disk { r: Real },
    /// Open annulus r < |x| < outer.
    Annulus { r: Real, outer: Real },
    /// Two unit-separated bulbs of radius `bulb_r` joined by a straight neck
    /// of half-width `neck_half_width` and length `neck_length`, with
    /// tangent circular fillets at the junctions.
    Dumbbell { bulb_r: Real, neck_half_width: Real, neck_length: Real },
    /// The region above the graph y = |x|^{1+gamma}, below the lid
    /// y = height.
    ParabolicGraph { gamma: Real, height: Real },
    /// Exterior of the closed ball of radius r (any ambient dimension; the
    /// geometric queries depend on |x| only).
    ExteriorBall { r: Real },
}

/// Boundary point paired with the unit inner normal there.
#[derive(Clone, Debug)]
pub struct BoundaryPoint {
    pub position: Vec<Real>,
    pub inner_normal: Vec<Real>,
}

/// A region mask over a domain: a boundary collar {δ < width} or, for
/// exterior shapes, the tail {|x| > radius}.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Region {
    Collar { width: Real, degenerate: bool },
    Tail { radius: Real },
}

impl Region {
    pub fn contains(&self, d: &DomainSpec, x: &[Real]) -> bool {
        if !d.inside(x) {
            return false;
        }
        match *self {
            Region::Collar { width, .. } => d.distance_unchecked(x) < width,
            Region::Tail { radius } => norm(x) > radius,
        }
    }
}

#[derive(Clone, Debug)]
enum Piece {
    Segment {
        a: [Real; 2],
        b: [Real; 2],
        inward: [Real; 2],
    },
    Arc {
        center: [Real; 2],
        radius: Real,
        th0: Real,
        th1: Real,
        /// True when the domain lies outside the circle (fillets), so the
        /// inner normal points away from the center.
        omega_outside: bool,
    },
    Graph {
        gamma: Real,
        t0: Real,
        t1: Real,
        /// Uniform-in-t samples of (t, |t|^{1+γ}).
        ts: Vec<Real>,
    },
}

/// Derived dumbbell quantities shared by the inside test and the pieces.
#[derive(Clone, Copy, Debug)]
struct DumbbellGeom {
    half_neck: Real,
    w: Real,
    rho: Real,
    bulb_r: Real,
    center_x: Real,
    /// Tangency point of the upper-right fillet on the right bulb.
    tx: Real,
    /// Bulb-side tangency angle measured from the bulb center.
    psi: Real,
}

impl DumbbellGeom {
    fn new(bulb_r: Real, w: Real, half_neck: Real) -> Self {
        let rho = w.min((bulb_r - w) / 2.0);
        let reach = ((bulb_r + rho).powi(2) - (w + rho).powi(2)).sqrt();
        let center_x = half_neck + reach;
        // Unit vector from bulb center toward fillet center.
        let ux = -reach / (bulb_r + rho);
        let uy = (w + rho) / (bulb_r + rho);
        let tx = half_neck - rho * ux;
        let psi = uy.atan2(ux);
        DumbbellGeom { half_neck, w, rho, bulb_r, center_x, tx, psi }
    }

    fn inside(&self, x: Real, y: Real) -> bool {
        let (xx, yy) = (x.abs(), y.abs());
        let in_bulb = (xx - self.center_x).powi(2) + yy * yy < self.bulb_r * self.bulb_r;
        let in_neck = xx < self.half_neck && yy < self.w;
        let top = self.w + self.rho;
        let in_wedge = xx >= self.half_neck
            && xx <= self.tx
            && yy < top
            && (xx - self.half_neck).powi(2) + (yy - top).powi(2) > self.rho * self.rho;
        in_bulb || in_neck || in_wedge
    }
}

/// A catalog entry: the shape plus the Hölder exponent of the boundary
/// gradient (γ = 1 for the piecewise-circular shapes, the graph exponent for
/// the parabolic shape).
#[derive(Clone, Debug)]
pub struct DomainSpec {
    shape: Shape,
    regularity_gamma: Real,
    pieces: Vec<Piece>,
    dumbbell: Option<DumbbellGeom>,
}

fn norm(x: &[Real]) -> Real {
    x.iter().map(|v| v * v).sum::<Real>().sqrt()
}

fn lift_angle(theta: Real, th0: Real) -> Real {
    let mut t = theta;
    while t < th0 {
        t += TAU;
    }
    while t >= th0 + TAU {
        t -= TAU;
    }
    t
}

/// Boundary polyline density for graph boundaries, points per unit length.
const GRAPH_POLYLINE_DENSITY: Real = 1e4;

impl DomainSpec {
    pub fn new(shape: Shape) -> Result<Self> {
        let mut gamma = 1.0;
        let mut pieces = Vec::new();
        let mut dumbbell = None;
        match shape {
            Shape::Interval { a, b } => {
                if !(a < b) {
                    return Err(Error::InvalidParameter(format!("interval needs a < b, got ({a}, {b})")));
                }
            }
            Shape::Disk { r } | Shape::ExteriorBall { r } => {
                if !(r > 0.0) {
                    return Err(Error::InvalidParameter(format!("radius must be positive, got {r}")));
                }
            }
            Shape::Annulus { r, outer } => {
                if !(r > 0.0 && outer > r) {
                    return Err(Error::InvalidParameter(format!(
                        "annulus needs 0 < r < outer, got ({r}, {outer})"
                    )));
                }
            }
            Shape::Dumbbell { bulb_r, neck_half_width, neck_length } => {
                if !(bulb_r > 0.0 && neck_half_width > 0.0 && neck_length > 0.0) {
                    return Err(Error::InvalidParameter("dumbbell parameters must be positive".into()));
                }
                if !(neck_half_width < bulb_r) {
                    return Err(Error::InvalidParameter(
                        "dumbbell neck half-width must be below the bulb radius".into(),
                    ));
                }
                let g = DumbbellGeom::new(bulb_r, neck_half_width, neck_length / 2.0);
                pieces = dumbbell_pieces(&g);
                dumbbell = Some(g);
            }
            Shape::ParabolicGraph { gamma: gg, height } => {
                if !(gg > 0.0 && gg <= 1.0) {
                    return Err(Error::InvalidParameter(format!("graph exponent must lie in (0, 1], got {gg}")));
                }
                if !(height > 0.0) {
                    return Err(Error::InvalidParameter("graph height must be positive".into()));
                }
                gamma = gg;
                pieces = parabolic_pieces(gg, height);
            }
        }
        Ok(DomainSpec { shape, regularity_gamma: gamma, pieces, dumbbell })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn regularity_gamma(&self) -> Real {
        self.regularity_gamma
    }

    pub fn is_exterior(&self) -> bool {
        matches!(self.shape, Shape::ExteriorBall { .. })
    }

    /// Geometric dimension of query points (1 for the interval, 2 otherwise).
    pub fn dim(&self) -> usize {
        match self.shape {
            Shape::Interval { .. } => 1,
            _ => 2,
        }
    }

    /// True for shapes whose boundary distance depends on |x| only.
    pub fn is_radial(&self) -> bool {
        matches!(
            self.shape,
            Shape::Disk { .. } | Shape::Annulus { .. } | Shape::ExteriorBall { .. }
        )
    }

    pub fn inside(&self, x: &[Real]) -> bool {
        match self.shape {
            Shape::Interval { a, b } => a < x[0] && x[0] < b,
            Shape::Disk { r } => norm(x) < r,
            Shape::Annulus { r, outer } => {
                let s = norm(x);
                r < s && s < outer
            }
            Shape::ExteriorBall { r } => norm(x) > r,
            Shape::Dumbbell { .. } => self.dumbbell.as_ref().unwrap().inside(x[0], x[1]),
            Shape::ParabolicGraph { gamma, height } => {
                x[1] > x[0].abs().powf(1.0 + gamma) && x[1] < height
            }
        }
    }

    /// Distance from an interior point to ∂Ω.
    pub fn distance(&self, x: &[Real]) -> Result<Real> {
        if !self.inside(x) {
            return Err(Error::OutsideDomain { x: x[0], y: x.get(1).copied().unwrap_or(0.0) });
        }
        Ok(self.distance_unchecked(x))
    }

    /// Distance to ∂Ω without the interior check (valid on either side).
    pub fn distance_unchecked(&self, x: &[Real]) -> Real {
        match self.shape {
            Shape::Interval { a, b } => (x[0] - a).min(b - x[0]).abs().min((x[0] - a).abs().min((b - x[0]).abs())),
            Shape::Disk { r } => (r - norm(x)).abs(),
            Shape::Annulus { r, outer } => {
                let s = norm(x);
                (s - r).abs().min((outer - s).abs())
            }
            Shape::ExteriorBall { r } => (norm(x) - r).abs(),
            Shape::Dumbbell { .. } | Shape::ParabolicGraph { .. } => {
                self.pieces
                    .iter()
                    .map(|p| piece_closest(p, x[0], x[1]).0)
                    .fold(Real::INFINITY, Real::min)
            }
        }
    }

    /// Closest boundary point and unit inner normal; ties at the cut locus
    /// are broken by the smallest polar angle of the boundary point, then by
    /// the smaller radius.
    pub fn project_boundary(&self, x: &[Real]) -> Result<BoundaryPoint> {
        if !self.inside(x) {
            return Err(Error::OutsideDomain { x: x[0], y: x.get(1).copied().unwrap_or(0.0) });
        }
        Ok(self.project_boundary_unchecked(x))
    }

    fn project_boundary_unchecked(&self, x: &[Real]) -> BoundaryPoint {
        match self.shape {
            Shape::Interval { a, b } => {
                let (pos, nrm) = if x[0] - a <= b - x[0] { (a, 1.0) } else { (b, -1.0) };
                BoundaryPoint { position: vec![pos], inner_normal: vec![nrm] }
            }
            Shape::Disk { r } => {
                let u = unit_or_east(x);
                BoundaryPoint {
                    position: vec![r * u[0], r * u[1]],
                    inner_normal: vec![-u[0], -u[1]],
                }
            }
            Shape::ExteriorBall { r } => {
                let u = unit_or_east(x);
                let k = x.len();
                let mut position = vec![0.0; k];
                let mut inner_normal = vec![0.0; k];
                let s = norm(x);
                for i in 0..k {
                    let ui = if s > 0.0 { x[i] / s } else { u.get(i).copied().unwrap_or(0.0) };
                    position[i] = r * ui;
                    inner_normal[i] = ui;
                }
                BoundaryPoint { position, inner_normal }
            }
            Shape::Annulus { r, outer } => {
                let u = unit_or_east(x);
                let s = norm(x);
                // Tie at the mid circle goes to the inner wall.
                if s - r <= outer - s {
                    BoundaryPoint {
                        position: vec![r * u[0], r * u[1]],
                        inner_normal: vec![u[0], u[1]],
                    }
                } else {
                    BoundaryPoint {
                        position: vec![outer * u[0], outer * u[1]],
                        inner_normal: vec![-u[0], -u[1]],
                    }
                }
            }
            Shape::Dumbbell { .. } | Shape::ParabolicGraph { .. } => {
                let mut best: Option<(Real, [Real; 2], [Real; 2])> = None;
                for p in &self.pieces {
                    let (dist, pos, nrm) = piece_closest(p, x[0], x[1]);
                    let better = match &best {
                        None => true,
                        Some((bd, bpos, _)) => {
                            if dist < bd - 1e-12 {
                                true
                            } else if dist > bd + 1e-12 {
                                false
                            } else {
                                let ang = pos[1].atan2(pos[0]);
                                let bang = bpos[1].atan2(bpos[0]);
                                ang < bang - 1e-14
                                    || (ang <= bang + 1e-14
                                        && norm(&pos) < norm(&bpos[..]) - 1e-14)
                            }
                        }
                    };
                    if better {
                        best = Some((dist, pos, nrm));
                    }
                }
                let (_, pos, nrm) = best.expect("shape has boundary pieces");
                BoundaryPoint { position: pos.to_vec(), inner_normal: nrm.to_vec() }
            }
        }
    }

    /// Distance from an arbitrary point (either side) to ∂Ω.
    pub fn boundary_distance(&self, x: &[Real]) -> Real {
        self.distance_unchecked(x)
    }

    /// Unit inner normal at a point lying on ∂Ω.
    pub fn boundary_normal_at(&self, x: &[Real]) -> Result<BoundaryPoint> {
        if self.boundary_distance(x) > 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "point ({}, {}) is not on the boundary",
                x[0],
                x.get(1).copied().unwrap_or(0.0)
            )));
        }
        match self.shape {
            Shape::Interval { a, .. } => {
                let nrm = if (x[0] - a).abs() < 1e-8 { 1.0 } else { -1.0 };
                Ok(BoundaryPoint { position: x.to_vec(), inner_normal: vec![nrm] })
            }
            Shape::Disk { .. } => {
                let u = unit_or_east(x);
                Ok(BoundaryPoint { position: x.to_vec(), inner_normal: vec![-u[0], -u[1]] })
            }
            Shape::ExteriorBall { .. } => {
                let u = unit_or_east(x);
                Ok(BoundaryPoint { position: x.to_vec(), inner_normal: vec![u[0], u[1]] })
            }
            Shape::Annulus { r, .. } => {
                let u = unit_or_east(x);
                let sgn = if (norm(x) - r).abs() < 1e-6 { 1.0 } else { -1.0 };
                Ok(BoundaryPoint { position: x.to_vec(), inner_normal: vec![sgn * u[0], sgn * u[1]] })
            }
            Shape::Dumbbell { .. } | Shape::ParabolicGraph { .. } => {
                let mut best = (Real::INFINITY, [0.0; 2], [0.0; 2]);
                for p in &self.pieces {
                    let c = piece_closest(p, x[0], x[1]);
                    if c.0 < best.0 {
                        best = c;
                    }
                }
                Ok(BoundaryPoint { position: x.to_vec(), inner_normal: best.2.to_vec() })
            }
        }
    }

    /// Sup over sampled x ∈ Ω ∩ B(P, r) of |dist(x, Π) − δ(x)| / |x − P|,
    /// where Π is the tangent hyperplane at the boundary point P. For C^{1,γ}
    /// shapes the ratios decrease to 0 with r.
    pub fn tangent_gap_diagnostic(&self, p_bnd: &[Real], radii: &[Real]) -> Result<Vec<(Real, Real)>> {
        let bp = self.boundary_normal_at(p_bnd)?;
        let nu = &bp.inner_normal;
        let mut out = Vec::with_capacity(radii.len());
        for &r in radii {
            let mut sup: Real = 0.0;
            if self.dim() == 1 {
                // Tangent "plane" is the endpoint itself: d(x, Π) = |x − P|
                // only in the degenerate sense; the meaningful 1-D statement
                // is d(x, Π) = |x − P| = δ(x) on the near side.
                for j in 1..=32 {
                    let x = [p_bnd[0] + nu[0] * r * j as Real / 32.0];
                    if self.inside(&x) {
                        let gap = ((x[0] - p_bnd[0]).abs() - self.distance_unchecked(&x)).abs();
                        sup = sup.max(gap / (x[0] - p_bnd[0]).abs());
                    }
                }
            } else {
                let n_ang = 72;
                let n_rad = 24;
                for i in 0..n_ang {
                    let phi = TAU * i as Real / n_ang as Real;
                    let (c, s) = (phi.cos(), phi.sin());
                    for j in 1..=n_rad {
                        let rho = r * j as Real / n_rad as Real;
                        let x = [p_bnd[0] + rho * c, p_bnd[1] + rho * s];
                        if !self.inside(&x) {
                            continue;
                        }
                        let d_plane =
                            ((x[0] - p_bnd[0]) * nu[0] + (x[1] - p_bnd[1]) * nu[1]).abs();
                        let gap = (d_plane - self.distance_unchecked(&x)).abs();
                        sup = sup.max(gap / rho);
                    }
                }
            }
            out.push((r, sup));
        }
        Ok(out)
    }

    /// Boundary collar {x ∈ Ω : δ(x) < width}. A width at or beyond the
    /// inradius covers the whole bounded domain; that case is flagged, not
    /// rejected.
    pub fn collar(&self, width: Real) -> Result<Region> {
        if !(width > 0.0) {
            return Err(Error::InvalidParameter(format!("collar width must be positive, got {width}")));
        }
        let degenerate = width >= self.inradius();
        Ok(Region::Collar { width, degenerate })
    }

    /// Exterior tail {|x| > radius}; only meaningful for exterior shapes.
    pub fn tail(&self, radius: Real) -> Result<Region> {
        if !self.is_exterior() {
            return Err(Error::InvalidParameter("tail regions require an exterior shape".into()));
        }
        let Shape::ExteriorBall { r } = self.shape else { unreachable!() };
        if !(radius > r) {
            return Err(Error::InvalidParameter(format!("tail radius must exceed the boundary radius {r}")));
        }
        Ok(Region::Tail { radius })
    }

    /// Largest distance-to-boundary over the domain (∞ for exterior shapes).
    pub fn inradius(&self) -> Real {
        match self.shape {
            Shape::Interval { a, b } => (b - a) / 2.0,
            Shape::Disk { r } => r,
            Shape::Annulus { r, outer } => (outer - r) / 2.0,
            Shape::ExteriorBall { .. } => Real::INFINITY,
            Shape::Dumbbell { .. } => {
                let g = self.dumbbell.as_ref().unwrap();
                g.bulb_r
            }
            Shape::ParabolicGraph { gamma, height } => {
                let xmax = height.powf(1.0 / (1.0 + gamma));
                let mut best: Real = 0.0;
                for i in 0..=60 {
                    for j in 1..60 {
                        let x = [
                            -xmax + 2.0 * xmax * i as Real / 60.0,
                            height * j as Real / 60.0,
                        ];
                        if self.inside(&x) {
                            best = best.max(self.distance_unchecked(&x));
                        }
                    }
                }
                best
            }
        }
    }

    /// The shape with every length multiplied by s. The parabolic graph is
    /// not dilation-covariant and is rejected.
    pub fn scaled(&self, s: Real) -> Result<DomainSpec> {
        if !(s > 0.0) {
            return Err(Error::InvalidParameter("scale factor must be positive".into()));
        }
        let shape = match self.shape {
            Shape::Interval { a, b } => Shape::Interval { a: s * a, b: s * b },
            Shape::Disk { r } => Shape::Disk { r: s * r },
            Shape::Annulus { r, outer } => Shape::Annulus { r: s * r, outer: s * outer },
            Shape::Dumbbell { bulb_r, neck_half_width, neck_length } => Shape::Dumbbell {
                bulb_r: s * bulb_r,
                neck_half_width: s * neck_half_width,
                neck_length: s * neck_length,
            },
            Shape::ExteriorBall { r } => Shape::ExteriorBall { r: s * r },
            Shape::ParabolicGraph { .. } => {
                return Err(Error::InvalidParameter(
                    "the graph shape is not dilation-covariant".into(),
                ))
            }
        };
        DomainSpec::new(shape)
    }

    /// Bounding box of the 2-D bounded shapes, padded by `pad`.
    pub fn bounding_box(&self, pad: Real) -> Result<([Real; 2], [Real; 2])> {
        match self.shape {
            Shape::Disk { r } => Ok(([-r - pad, -r - pad], [r + pad, r + pad])),
            Shape::Annulus { outer, .. } => {
                Ok(([-outer - pad, -outer - pad], [outer + pad, outer + pad]))
            }
            Shape::Dumbbell { .. } => {
                let g = self.dumbbell.as_ref().unwrap();
                let xr = g.center_x + g.bulb_r;
                Ok(([-xr - pad, -g.bulb_r - pad], [xr + pad, g.bulb_r + pad]))
            }
            Shape::ParabolicGraph { gamma, height } => {
                let xmax = height.powf(1.0 / (1.0 + gamma));
                Ok(([-xmax - pad, -pad], [xmax + pad, height + pad]))
            }
            _ => Err(Error::InvalidParameter(
                "bounding box applies to bounded 2-D shapes".into(),
            )),
        }
    }
}

fn unit_or_east(x: &[Real]) -> [Real; 2] {
    let s = norm(x);
    if s > 0.0 {
        [x[0] / s, x.get(1).copied().unwrap_or(0.0) / s]
    } else {
        [1.0, 0.0]
    }
}

fn dumbbell_pieces(g: &DumbbellGeom) -> Vec<Piece> {
    let (l, w, rho, c) = (g.half_neck, g.w, g.rho, g.center_x);
    let top = w + rho;
    let reach = c - l;
    let ux = -reach / (g.bulb_r + rho);
    let uy = top / (g.bulb_r + rho);
    // Fillet arc endpoint angle toward the bulb tangency, upper right.
    let th_t = (-uy).atan2(-ux);
    let psi = g.psi;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let pi = std::f64::consts::PI;
    vec![
        Piece::Segment { a: [-l, w], b: [l, w], inward: [0.0, -1.0] },
        Piece::Segment { a: [-l, -w], b: [l, -w], inward: [0.0, 1.0] },
        // Fillets: domain outside the fillet circles.
        Piece::Arc { center: [l, top], radius: rho, th0: -half_pi, th1: th_t, omega_outside: true },
        Piece::Arc { center: [l, -top], radius: rho, th0: -th_t, th1: half_pi, omega_outside: true },
        Piece::Arc { center: [-l, top], radius: rho, th0: pi - th_t, th1: pi + half_pi, omega_outside: true },
        Piece::Arc { center: [-l, -top], radius: rho, th0: half_pi, th1: pi + th_t, omega_outside: true },
        // Bulb arcs: domain inside the bulb circles.
        Piece::Arc { center: [c, 0.0], radius: g.bulb_r, th0: -psi, th1: psi, omega_outside: false },
        Piece::Arc { center: [-c, 0.0], radius: g.bulb_r, th0: pi - psi, th1: pi + psi, omega_outside: false },
    ]
}

fn parabolic_pieces(gamma: Real, height: Real) -> Vec<Piece> {
    let xmax = height.powf(1.0 / (1.0 + gamma));
    let max_slope = (1.0 + gamma) * xmax.powf(gamma);
    let n = ((2.0 * xmax * GRAPH_POLYLINE_DENSITY * (1.0 + max_slope * max_slope).sqrt()).ceil()
        as usize)
        .clamp(1000, 600_000);
    let ts: Vec<Real> = (0..=n)
        .map(|i| -xmax + 2.0 * xmax * i as Real / n as Real)
        .collect();
    vec![
        Piece::Graph { gamma, t0: -xmax, t1: xmax, ts },
        Piece::Segment { a: [-xmax, height], b: [xmax, height], inward: [0.0, -1.0] },
    ]
}

fn graph_y(gamma: Real, t: Real) -> Real {
    t.abs().powf(1.0 + gamma)
}

fn graph_dy(gamma: Real, t: Real) -> Real {
    if t == 0.0 {
        0.0
    } else {
        (1.0 + gamma) * t.abs().powf(gamma) * t.signum()
    }
}

/// (distance, closest point, inner normal) of a point against one piece.
fn piece_closest(p: &Piece, qx: Real, qy: Real) -> (Real, [Real; 2], [Real; 2]) {
    match p {
        Piece::Segment { a, b, inward } => {
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = (((qx - a[0]) * dx + (qy - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let pos = [a[0] + t * dx, a[1] + t * dy];
            let d = ((qx - pos[0]).powi(2) + (qy - pos[1]).powi(2)).sqrt();
            (d, pos, *inward)
        }
        Piece::Arc { center, radius, th0, th1, omega_outside } => {
            let (ex, ey) = (qx - center[0], qy - center[1]);
            let rq = (ex * ex + ey * ey).sqrt();
            let theta = lift_angle(ey.atan2(ex), *th0);
            let pos = if theta <= *th1 && rq > 0.0 {
                [center[0] + radius * ex / rq, center[1] + radius * ey / rq]
            } else {
                let p0 = [center[0] + radius * th0.cos(), center[1] + radius * th0.sin()];
                let p1 = [center[0] + radius * th1.cos(), center[1] + radius * th1.sin()];
                let d0 = (qx - p0[0]).powi(2) + (qy - p0[1]).powi(2);
                let d1 = (qx - p1[0]).powi(2) + (qy - p1[1]).powi(2);
                if d0 <= d1 {
                    p0
                } else {
                    p1
                }
            };
            let d = ((qx - pos[0]).powi(2) + (qy - pos[1]).powi(2)).sqrt();
            let mut nrm = [(pos[0] - center[0]) / radius, (pos[1] - center[1]) / radius];
            if !omega_outside {
                nrm = [-nrm[0], -nrm[1]];
            }
            (d, pos, nrm)
        }
        Piece::Graph { gamma, t0, t1, ts } => {
            // The graph is x-monotone, so the minimizer satisfies
            // |t − qx| ≤ |q − (qx, f(qx))|; restrict the scan to that window.
            let d0 = (qy - graph_y(*gamma, qx.clamp(*t0, *t1))).abs().max(1e-12)
                + (qx - qx.clamp(*t0, *t1)).abs();
            let lo = (qx - d0 - 1e-9).max(*t0);
            let hi = (qx + d0 + 1e-9).min(*t1);
            let n = ts.len() - 1;
            let step = (t1 - t0) / n as Real;
            let i_lo = (((lo - t0) / step).floor() as usize).min(n);
            let i_hi = (((hi - t0) / step).ceil() as usize).min(n);
            let mut best_i = i_lo;
            let mut best_d2 = Real::INFINITY;
            for i in i_lo..=i_hi {
                let t = ts[i];
                let d2 = (qx - t).powi(2) + (qy - graph_y(*gamma, t)).powi(2);
                if d2 < best_d2 {
                    best_d2 = d2;
                    best_i = i;
                }
            }
            let bl = if best_i > 0 { ts[best_i - 1] } else { ts[0] };
            let bh = if best_i < n { ts[best_i + 1] } else { ts[n] };
            let t = refine_graph_projection(*gamma, qx, qy, bl, bh);
            let pos = [t, graph_y(*gamma, t)];
            let d = ((qx - pos[0]).powi(2) + (qy - pos[1]).powi(2)).sqrt();
            let slope = graph_dy(*gamma, t);
            let scale = (1.0 + slope * slope).sqrt();
            (d, pos, [-slope / scale, 1.0 / scale])
        }
    }
}

/// Minimize the squared distance to the graph over [lo, hi]: golden-section
/// to bracket exhaustion, then Newton polish away from the origin where the
/// curvature is smooth. Accurate to ~1e-10 in the parameter.
fn refine_graph_projection(gamma: Real, qx: Real, qy: Real, mut lo: Real, mut hi: Real) -> Real {
    let phi2 = (3.0 - 5.0f64.sqrt()) / 2.0;
    let f = |t: Real| (qx - t).powi(2) + (qy - graph_y(gamma, t)).powi(2);
    let mut x1 = lo + phi2 * (hi - lo);
    let mut x2 = hi - phi2 * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..90 {
        if hi - lo < 1e-13 {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = lo + phi2 * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = hi - phi2 * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut t = 0.5 * (lo + hi);
    if t.abs() > 1e-4 {
        for _ in 0..4 {
            let fy = graph_y(gamma, t);
            let dy = graph_dy(gamma, t);
            let ddy = (1.0 + gamma) * gamma * t.abs().powf(gamma - 1.0);
            let g = (t - qx) + (fy - qy) * dy;
            let gp = 1.0 + dy * dy + (fy - qy) * ddy;
            if gp.abs() < 1e-14 {
                break;
            }
            let step = g / gp;
            let tn = t - step;
            if tn <= lo - 1e-9 || tn >= hi + 1e-9 || !tn.is_finite() {
                break;
            }
            t = tn;
            if step.abs() < 1e-12 {
                break;
            }
        }
    }
    t
}
