//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the test suites. Deliberately knows nothing about
//! the tape's backward pass: it only re-evaluates a closure.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_diff<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Largest relative error between two gradient vectors. The denominator is
/// floored at 1e-4: central differences carry ~1e-10 of cancellation noise
/// per unit of function value, so structurally-zero components (e.g. a
/// linear bias normalized away by batch statistics) would otherwise
/// dominate. Components above the floor are compared at full relative
/// precision.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}
