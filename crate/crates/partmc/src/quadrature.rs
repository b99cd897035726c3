//! Adaptive Gauss-Kronrod quadrature.
//!
//! Oracle-grade numerical integration for the exact region-mass and moment
//! checks: 7-15 point Gauss-Kronrod with recursive bisection in 1-D, and a
//! tensor-product of the 1-D rule in 2-D. Absolute-tolerance driven; the
//! defaults throughout the crate target 1e-8, well below any Monte Carlo
//! tolerance these oracles gate.

/// Positive-half Kronrod abscissae of the 15-point rule.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.000000000000000,
];

/// 15-point Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];

/// 7-point Gauss weights for abscissae 1, 3, 5, 7 of `XGK`.
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One Gauss-Kronrod panel on `[a, b]`: returns (K15 value, |K15 - G7|).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (i, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * x;
        let fsum = f(center - dx) + f(center + dx);
        kronrod += WGK[i] * fsum;
        if i % 2 == 1 {
            gauss += WG[i / 2] * fsum;
        }
    }
    kronrod *= half;
    gauss *= half;
    (kronrod, (kronrod - gauss).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (value, err) = gk15(f, a, b);
    if err <= tol || depth == 0 || (b - a).abs() < f64::EPSILON * (a.abs() + b.abs() + 1.0) {
        return value;
    }
    let mid = 0.5 * (a + b);
    adapt(f, a, mid, 0.5 * tol, depth - 1) + adapt(f, mid, b, 0.5 * tol, depth - 1)
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    // Seed the recursion with a few panels so narrow features away from the
    // first midpoint are not missed by the error estimate.
    let pieces = 8;
    let h = (b - a) / pieces as f64;
    let mut total = 0.0;
    for i in 0..pieces {
        let lo = a + h * i as f64;
        let hi = if i + 1 == pieces { b } else { a + h * (i + 1) as f64 };
        total += adapt(&f, lo, hi, tol / pieces as f64, 52);
    }
    total
}

/// Integrate `f(x, y)` over the box `xr × yr` to absolute tolerance `tol`.
///
/// Tensor-product rule: the outer integral in `x` is adaptive with budget
/// `tol/2`, each inner integral in `y` runs at a tolerance small enough that
/// the accumulated inner error stays below `tol/2`.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(f: F, xr: (f64, f64), yr: (f64, f64), tol: f64) -> f64 {
    let width = (xr.1 - xr.0).abs().max(f64::MIN_POSITIVE);
    let inner_tol = 0.5 * tol / width;
    integrate_1d(
        |x| integrate_1d(|y| f(x, y), yr.0, yr.1, inner_tol),
        xr.0,
        xr.1,
        0.5 * tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate_1d(|x| 3.0 * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_mass() {
        let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = integrate_1d(f, -10.0, 10.0, 1e-10);
        assert!((v - 1.0).abs() < 1e-10, "got {v}");
    }

    #[test]
    fn handles_jump_discontinuity() {
        // indicator of [0, 0.3] against a smooth weight
        let f = |x: f64| if (0.0..=0.3).contains(&x) { x.cos() } else { 0.0 };
        let v = integrate_1d(f, -1.0, 1.0, 1e-9);
        assert!((v - 0.3_f64.sin()).abs() < 1e-8, "got {v}");
    }

    #[test]
    fn two_dim_gaussian_mass() {
        let f = |x: f64, y: f64| (-0.5 * (x * x + y * y)).exp() / (2.0 * std::f64::consts::PI);
        let v = integrate_2d(f, (-8.0, 8.0), (-8.0, 8.0), 1e-8);
        assert!((v - 1.0).abs() < 1e-8, "got {v}");
    }

    #[test]
    fn two_dim_indicator_area() {
        // quarter disc of radius 1 inside the unit box
        let f = |x: f64, y: f64| if x * x + y * y <= 1.0 { 1.0 } else { 0.0 };
        let v = integrate_2d(f, (0.0, 1.0), (0.0, 1.0), 1e-6);
        assert!((v - std::f64::consts::FRAC_PI_4).abs() < 1e-5, "got {v}");
    }
}
