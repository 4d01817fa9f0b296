//! Closed-form constants and exponent algebra.
//!
//! Houses the one-dimensional Hardy constant c_p = ((p-1)/p)^p, the punctured
//! space constant c*_{p,n} = |(p-n)/p|^p, their minimum c_{p,n}, the
//! coefficient map λ_α = (p-1)α^{p-1}(1-α) with its two monotone inverse
//! branches, and the radial power exponent β(μ) solving
//! -β|β|^{p-2}[β(p-1)+n-p] = μ with β ≤ (p-n)/p.
//!
//! Everything here is a pure function of (p, n) and is generic over the
//! floating-point type; the rest of the crate instantiates at f64.

use crate::{Error, Result};
use num_traits::{Float, FromPrimitive};

/// Floating-point scalar the closed-form layer accepts: f32 or f64.
pub trait Scalar: Float + FromPrimitive + std::fmt::Debug {}
impl<T: Float + FromPrimitive + std::fmt::Debug> Scalar for T {}

fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable")
}

/// Integrability exponent p ∈ (1, ∞) together with the ambient dimension n.
///
/// n = 1 is admitted only for the interval oracle; multi-dimensional domains
/// require n ≥ 2. When p = n the exterior constants degenerate to 0 and the
/// operations built on them return 0 rather than failing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PExponent<T> {
    p: T,
    n: u32,
}

impl<T: Scalar> PExponent<T> {
    pub fn new(p: T, n: u32) -> Result<Self> {
        if !(p > T::one()) || !p.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "p must be a finite real > 1, got {p:?}"
            )));
        }
        if n < 1 {
            return Err(Error::InvalidParameter("dimension n must be >= 1".into()));
        }
        Ok(Self { p, n })
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn n_real(&self) -> T {
        lit(self.n as f64)
    }

    /// True when p = n, the degenerate case for exterior-domain constants.
    pub fn is_conformal(&self) -> bool {
        self.p == self.n_real()
    }

    /// The branch meeting point α = (p-1)/p where λ_α attains c_p.
    pub fn critical_alpha(&self) -> T {
        (self.p - T::one()) / self.p
    }

    /// Exponent (p-n)/(p-1) of the radial p-harmonic power |x|^{(p-n)/(p-1)}.
    pub fn radial_harmonic_exponent(&self) -> T {
        (self.p - self.n_real()) / (self.p - T::one())
    }
}

/// Which monotone branch of λ_α an inverse refers to: Lower is
/// α ∈ [0, (p-1)/p] (λ_α increasing), Upper is α ∈ [(p-1)/p, 1] (decreasing).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AlphaBranch {
    Lower,
    Upper,
}

/// c_p = ((p-1)/p)^p, the Hardy constant of an interval.
pub fn hardy_one_d_constant<T: Scalar>(pe: PExponent<T>) -> T {
    pe.critical_alpha().powf(pe.p())
}

/// c*_{p,n} = |(p-n)/p|^p, the Hardy constant of the punctured space;
/// exactly 0 when p = n.
pub fn hardy_point_constant<T: Scalar>(pe: PExponent<T>) -> T {
    if pe.is_conformal() {
        return T::zero();
    }
    ((pe.p() - pe.n_real()) / pe.p()).abs().powf(pe.p())
}

/// c_{p,n} = min(c_p, c*_{p,n}), the exterior-domain threshold.
pub fn exterior_threshold<T: Scalar>(pe: PExponent<T>) -> T {
    hardy_one_d_constant(pe).min(hardy_point_constant(pe))
}

/// λ_α = (p-1) α^{p-1} (1-α) for α ∈ [0, 1].
///
/// Increasing on [0, (p-1)/p], decreasing on [(p-1)/p, 1], with maximum
/// λ_{(p-1)/p} = c_p.
pub fn lambda_of_alpha<T: Scalar>(pe: PExponent<T>, alpha: T) -> T {
    let one = T::one();
    (pe.p() - one) * alpha.powf(pe.p() - one) * (one - alpha)
}

/// Slack admitted beyond the closed-form range before an input is rejected.
fn range_slack<T: Scalar>() -> T {
    lit(1e-12)
}

/// Bisection on a monotone bracket, run to floating-point exhaustion.
/// `ascending` states whether f increases along [lo, hi]; the invariant kept
/// is f(lo) ≤ target ≤ f(hi) (with the roles swapped when descending).
fn bisect<T: Scalar, F: Fn(T) -> T>(mut lo: T, mut hi: T, target: T, ascending: bool, f: F) -> T {
    let two = lit(2.0);
    for _ in 0..200 {
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            return mid;
        }
        let v = f(mid);
        let go_right = if ascending { v < target } else { v > target };
        if go_right {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / two
}

/// Inverse of λ_α on the requested branch. λ must lie in [0, c_p] up to a
/// 1e-12 slack; branch endpoints are returned exactly for λ = 0 and λ = c_p.
pub fn alpha_of_lambda<T: Scalar>(pe: PExponent<T>, lambda: T, branch: AlphaBranch) -> Result<T> {
    let cp = hardy_one_d_constant(pe);
    if lambda > cp + range_slack() || lambda < -range_slack::<T>() {
        return Err(Error::OutOfRange {
            what: "lambda",
            value: lambda.to_f64().unwrap_or(f64::NAN),
            max: cp.to_f64().unwrap_or(f64::NAN),
        });
    }
    let lambda = lambda.max(T::zero()).min(cp);
    let astar = pe.critical_alpha();
    if lambda == T::zero() {
        return Ok(match branch {
            AlphaBranch::Lower => T::zero(),
            AlphaBranch::Upper => T::one(),
        });
    }
    if lambda == cp {
        return Ok(astar);
    }
    let root = match branch {
        AlphaBranch::Lower => bisect(T::zero(), astar, lambda, true, |a| lambda_of_alpha(pe, a)),
        AlphaBranch::Upper => bisect(astar, T::one(), lambda, false, |a| lambda_of_alpha(pe, a)),
    };
    Ok(root)
}

/// Left-hand side of the radial power equation, -β|β|^{p-2}[β(p-1)+n-p].
///
/// For v = |x|^β one has -Δ_p v = (this)(β) · |x|^{β(p-1)-p} I_p v, so the
/// roots of `radial_power_coefficient(β) = μ` are the exponents of positive
/// radial solutions of -Δ_p v = μ |x|^{-p} I_p v.
pub fn radial_power_coefficient<T: Scalar>(pe: PExponent<T>, beta: T) -> T {
    let one = T::one();
    -beta * beta.abs().powf(pe.p() - lit(2.0)) * (beta * (pe.p() - one) + pe.n_real() - pe.p())
}

/// The exponent β(μ) ≤ (p-n)/p of the minimal-growth radial solution at
/// infinity: the unique root of the power equation on the closed side of the
/// double root location (p-n)/p. β(c*_{p,n}) = (p-n)/p, and β(0) is the
/// p-harmonic exponent (p-n)/(p-1) for p < n and 0 for p > n.
pub fn beta_root_at_infinity<T: Scalar>(pe: PExponent<T>, mu: T) -> Result<T> {
    if pe.is_conformal() {
        return Err(Error::DegenerateDimension(pe.p().to_f64().unwrap_or(f64::NAN)));
    }
    let cstar = hardy_point_constant(pe);
    if mu > cstar + range_slack() || mu < -range_slack::<T>() {
        return Err(Error::OutOfRange {
            what: "mu",
            value: mu.to_f64().unwrap_or(f64::NAN),
            max: cstar.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mu = mu.max(T::zero()).min(cstar);
    let vertex = (pe.p() - pe.n_real()) / pe.p();
    // Bracket on the closed side of the vertex: the coefficient rises
    // monotonically from 0 at the far root to c* at the vertex.
    let far = if pe.p() < pe.n_real() {
        pe.radial_harmonic_exponent()
    } else {
        T::zero()
    };
    if mu == T::zero() {
        return Ok(far);
    }
    if mu == cstar {
        return Ok(vertex);
    }
    Ok(bisect(far, vertex, mu, true, |b| {
        radial_power_coefficient(pe, b)
    }))
}

/// The pair (α₁, α₂) with λ_{α₁} = λ_{α₂} = |(p-1)/(p-n)|^p λ, α₁ on the
/// Upper branch and α₂ on the Lower branch. These are the exponents entering
/// the two-sided |x|^{α_i(p-n)/(p-1)} estimates at infinity.
pub fn exterior_alpha_pair<T: Scalar>(pe: PExponent<T>, lambda: T) -> Result<(T, T)> {
    if pe.is_conformal() {
        return Err(Error::DegenerateDimension(pe.p().to_f64().unwrap_or(f64::NAN)));
    }
    let scale = ((pe.p() - T::one()) / (pe.p() - pe.n_real())).abs().powf(pe.p());
    let scaled = scale * lambda;
    let a1 = alpha_of_lambda(pe, scaled, AlphaBranch::Upper)?;
    let a2 = alpha_of_lambda(pe, scaled, AlphaBranch::Lower)?;
    Ok((a1, a2))
}

/// First-order window constant A = (p-2)λ_α β/α + λ_β α^{p-2}/β^{p-2} from
/// the barrier expansion; the certified windows rely on A < (p-1)λ_α.
pub fn window_constant_a<T: Scalar>(pe: PExponent<T>, alpha: T, beta: T) -> T {
    let two = lit(2.0);
    let la = lambda_of_alpha(pe, alpha);
    let lb = lambda_of_alpha(pe, beta);
    (pe.p() - two) * la * beta / alpha + lb * (alpha / beta).powf(pe.p() - two)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Real;
    use proptest::prelude::*;

    fn pe(p: Real, n: u32) -> PExponent<Real> {
        PExponent::new(p, n).unwrap()
    }

    #[test]
    fn one_d_constant_values() {
        assert!((hardy_one_d_constant(pe(2.0, 1)) - 0.25).abs() < 1e-15);
        assert!((hardy_one_d_constant(pe(4.0, 1)) - 0.31640625).abs() < 1e-15);
        // p -> 1+ limit collapses to 0.
        assert!(hardy_one_d_constant(pe(1.0001, 1)) < 1e-3);
    }

    #[test]
    fn point_constant_values() {
        assert_eq!(hardy_point_constant(pe(2.0, 2)), 0.0);
        assert!((hardy_point_constant(pe(2.0, 4)) - 1.0).abs() < 1e-15);
        assert!((hardy_point_constant(pe(3.0, 2)) - 1.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn exterior_threshold_values() {
        assert!((exterior_threshold(pe(2.0, 3)) - 0.25).abs() < 1e-15);
        assert_eq!(exterior_threshold(pe(2.0, 2)), 0.0);
        assert!((exterior_threshold(pe(2.0, 5)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lambda_endpoints_and_peak() {
        for p in [1.5, 2.0, 3.0, 4.0] {
            let e = pe(p, 2);
            assert_eq!(lambda_of_alpha(e, 0.0), 0.0);
            assert_eq!(lambda_of_alpha(e, 1.0), 0.0);
            let peak = lambda_of_alpha(e, e.critical_alpha());
            assert!((peak - hardy_one_d_constant(e)).abs() < 1e-12);
        }
        assert!((lambda_of_alpha(pe(2.0, 2), 0.5) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lambda_monotone_on_each_branch() {
        for p in [1.5, 2.0, 3.0, 4.0] {
            let e = pe(p, 2);
            let astar = e.critical_alpha();
            let m = 1000;
            let mut prev = lambda_of_alpha(e, 0.0);
            for k in 1..=m {
                let a = astar * k as Real / m as Real;
                let v = lambda_of_alpha(e, a);
                assert!(v > prev, "not increasing at p={p}, alpha={a}");
                prev = v;
            }
            let mut prev = lambda_of_alpha(e, astar);
            for k in 1..=m {
                let a = astar + (1.0 - astar) * k as Real / m as Real;
                let v = lambda_of_alpha(e, a);
                assert!(v < prev, "not decreasing at p={p}, alpha={a}");
                prev = v;
            }
        }
    }

    #[test]
    fn alpha_of_lambda_examples() {
        let e = pe(2.0, 2);
        assert!((alpha_of_lambda(e, 0.25, AlphaBranch::Upper).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(alpha_of_lambda(e, 0.0, AlphaBranch::Upper).unwrap(), 1.0);
        assert_eq!(alpha_of_lambda(e, 0.0, AlphaBranch::Lower).unwrap(), 0.0);
        // λ_{0.8} = 1 * 0.8 * 0.2 = 0.16 on the upper branch.
        let a = alpha_of_lambda(e, 0.16, AlphaBranch::Upper).unwrap();
        assert!((a - 0.8).abs() < 1e-12);
        assert!((lambda_of_alpha(e, 0.8) - 0.16).abs() < 1e-15);
        assert!(alpha_of_lambda(e, 0.26, AlphaBranch::Upper).is_err());
    }

    #[test]
    fn beta_root_examples() {
        let e = pe(2.0, 3);
        assert!((beta_root_at_infinity(e, 0.25).unwrap() - (-0.5)).abs() < 1e-12);
        assert!((beta_root_at_infinity(e, 0.0).unwrap() - (-1.0)).abs() < 1e-15);
        let e42 = pe(4.0, 2);
        assert_eq!(beta_root_at_infinity(e42, 0.0).unwrap(), 0.0);
        // β(c*) = (p-n)/p in all cases.
        for (p, n) in [(2.0, 3), (2.0, 4), (3.0, 2), (4.0, 2)] {
            let e = pe(p, n);
            let b = beta_root_at_infinity(e, hardy_point_constant(e)).unwrap();
            assert!(
                (b - (p - n as Real) / p).abs() < 1e-10,
                "beta(c*) mismatch at p={p}, n={n}"
            );
        }
        assert!(beta_root_at_infinity(e, 0.3).is_err());
        assert!(beta_root_at_infinity(pe(2.0, 2), 0.0).is_err());
    }

    #[test]
    fn exterior_pair_examples() {
        let e = pe(2.0, 3);
        // |(p-1)/(p-n)|^p = 1 at (2, 3): the threshold λ = c*_{2,3} scales to
        // exactly c_2 and the pair degenerates at the critical exponent...
        let (a1, a2) = exterior_alpha_pair(e, 0.25).unwrap();
        assert!((a1 - 0.5).abs() < 1e-12 && (a2 - 0.5).abs() < 1e-12);
        // ...and anything beyond it is out of range.
        assert!(exterior_alpha_pair(e, 0.2501).is_err());
        // λ = 1/16: α² − α + 1/16 = 0, α = 1/2 ± √3/4; the upper root is the
        // infinity exponent magnitude, cross-checked by the β route.
        let (a1, a2) = exterior_alpha_pair(e, 1.0 / 16.0).unwrap();
        let s3 = (3.0f64).sqrt() / 4.0;
        assert!((a1 - (0.5 + s3)).abs() < 1e-12);
        assert!((a2 - (0.5 - s3)).abs() < 1e-12);
        let beta = beta_root_at_infinity(e, 1.0 / 16.0).unwrap();
        assert!((a1 * e.radial_harmonic_exponent() - beta).abs() < 1e-10);
        let (a1, a2) = exterior_alpha_pair(pe(2.0, 4), 0.0).unwrap();
        assert_eq!((a1, a2), (1.0, 0.0));
    }

    #[test]
    fn window_constant_below_p_minus_one_lambda() {
        // A < (p-1)λ_α over both admissible windows, sampled.
        for p in [1.5, 2.0, 3.0, 4.0] {
            let e = pe(p, 2);
            let astar = e.critical_alpha();
            for i in 0..40 {
                let alpha = astar + (1.0 - astar) * (i as Real / 40.0) * 0.95;
                for j in 1..20 {
                    let beta = alpha + (1.0 - alpha) * j as Real / 20.0 * 0.95;
                    if beta <= alpha || beta >= 1.0 {
                        continue;
                    }
                    let a = window_constant_a(e, alpha, beta);
                    assert!(
                        a < (p - 1.0) * lambda_of_alpha(e, alpha) + 1e-12,
                        "A >= (p-1)λ_α at p={p}, α={alpha}, β={beta}"
                    );
                }
                // Mirror window β < α ≤ (p-1)/p.
                let alpha_low = astar * (0.2 + 0.8 * i as Real / 40.0);
                for j in 1..10 {
                    let beta = alpha_low * j as Real / 10.0;
                    if beta <= 0.0 || beta >= alpha_low {
                        continue;
                    }
                    let a = window_constant_a(e, alpha_low, beta);
                    assert!(a < (p - 1.0) * lambda_of_alpha(e, alpha_low) + 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn alpha_roundtrip_upper(p in 1.2f64..5.0, t in 0.001f64..0.999) {
            let e = pe(p, 2);
            let astar = e.critical_alpha();
            let alpha = astar + (1.0 - astar) * t;
            let lam = lambda_of_alpha(e, alpha);
            let back = alpha_of_lambda(e, lam, AlphaBranch::Upper).unwrap();
            prop_assert!((back - alpha).abs() < 1e-10);
        }

        #[test]
        fn alpha_roundtrip_lower(p in 1.2f64..5.0, t in 0.001f64..0.999) {
            let e = pe(p, 2);
            let alpha = e.critical_alpha() * t;
            let lam = lambda_of_alpha(e, alpha);
            let back = alpha_of_lambda(e, lam, AlphaBranch::Lower).unwrap();
            prop_assert!((back - alpha).abs() < 1e-10);
        }

        #[test]
        fn beta_residual_small(p in 1.2f64..5.0, n in 2u32..6, t in 0.0f64..1.0) {
            let e = pe(p, n);
            prop_assume!(!e.is_conformal());
            let mu = hardy_point_constant(e) * t;
            let beta = beta_root_at_infinity(e, mu).unwrap();
            let resid = radial_power_coefficient(e, beta) - mu;
            prop_assert!(resid.abs() < 1e-10, "residual {} at p={}, n={}, mu={}", resid, p, n, mu);
            prop_assert!(beta <= (p - n as Real) / p + 1e-12);
        }

        #[test]
        fn exterior_pair_matches_beta_root(p in 1.2f64..5.0, n in 2u32..6, t in 0.0f64..0.999) {
            let e = pe(p, n);
            prop_assume!(!e.is_conformal());
            let mu = hardy_point_constant(e) * t;
            let (a1, a2) = exterior_alpha_pair(e, mu).unwrap();
            let alpha = if p < n as Real { a1 } else { a2 };
            let beta_from_alpha = alpha * e.radial_harmonic_exponent();
            let beta = beta_root_at_infinity(e, mu).unwrap();
            prop_assert!((beta_from_alpha - beta).abs() < 1e-8);
        }
    }
}
