//! Classic fixed-step fourth-order Runge-Kutta.

use nalgebra::DVector;

/// Advance `y' = f(c, y)` by one step of size `dt`.
///
/// `f` receives the stage offset `c` in `{0, 1/2, 1}` as a fraction of the
/// step, so callers can interpolate externally supplied inputs.
pub fn rk4_step<F>(y: &DVector<f64>, dt: f64, mut f: F) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(0.0, y);
    let k2 = f(0.5, &(y + &k1 * (0.5 * dt)));
    let k3 = f(0.5, &(y + &k2 * (0.5 * dt)));
    let k4 = f(1.0, &(y + &k3 * dt));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_fourth_order() {
        let err = |dt: f64| {
            let mut y = DVector::from_element(1, 1.0);
            let steps = (1.0 / dt).round() as usize;
            for _ in 0..steps {
                y = rk4_step(&y, dt, |_, y| -y);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }
}
