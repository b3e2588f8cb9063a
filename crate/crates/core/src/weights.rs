//! Boundary weights: the two-point problem
//! `theta'' - theta = g' - i w g`, `theta(0) = 0`, `theta'(T) = 0`,
//! solved independently at every boundary sample.
//!
//! The solver works with `a = (theta + theta') / 2` and
//! `b = (theta - theta') / 2`, which satisfy `a' = a + r/2` and
//! `b' = -b - r/2`. Integrating `a` backward and `b` forward only ever
//! multiplies by `exp(-h)`, so nothing overflows for long horizons. The
//! right side is treated as piecewise linear and integrated exactly.

use crate::error::Result;
use crate::forward::{time_weights, BoundaryTrace};
use crate::model::C64;

#[derive(Clone, Debug)]
pub struct WeightFunction {
    pub theta: BoundaryTrace,
    pub dtheta: BoundaryTrace,
    /// `theta''`, equal to `theta + r` by the equation.
    pub theta_dd: BoundaryTrace,
    pub abs_eta: f64,
}

/// Second-order time derivative on a uniform grid: centered inside,
/// one-sided at the ends.
pub fn time_derivative(v: &[C64], dt: f64) -> Vec<C64> {
    let n = v.len();
    let mut d = vec![C64::default(); n];
    if n < 3 {
        if n == 2 {
            let s = (v[1] - v[0]) / dt;
            d[0] = s;
            d[1] = s;
        }
        return d;
    }
    d[0] = (v[0] * -3.0 + v[1] * 4.0 - v[2]) / (2.0 * dt);
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * dt);
    }
    d[n - 1] = (v[n - 1] * 3.0 - v[n - 2] * 4.0 + v[n - 3]) / (2.0 * dt);
    d
}

fn column(t: &BoundaryTrace, k: usize) -> Vec<C64> {
    (0..t.n_times()).map(|n| t.at(n, k)).collect()
}

/// Right side `r = g' - i w g` of the weight equation at every sample.
pub fn weight_source(g: &BoundaryTrace, abs_eta: f64) -> BoundaryTrace {
    let dt = g.dt();
    let iw = C64::new(0.0, abs_eta);
    let mut r = g.clone();
    for k in 0..g.n_arc() {
        let col = column(g, k);
        let d = time_derivative(&col, dt);
        for n in 0..g.n_times() {
            r.values[n * g.n_arc() + k] = d[n] - iw * col[n];
        }
    }
    r
}

/// Solves the two-point problem for one time series.
pub fn solve_theta_series(r: &[C64], dt: f64) -> (Vec<C64>, Vec<C64>) {
    let n = r.len();
    let t_final = dt * (n - 1) as f64;
    let q = (-dt).exp();
    let e1 = -(-dt).exp_m1();
    let lin_fwd = (dt - e1) / dt;
    let lin_bwd = (e1 - dt * q) / dt;
    let mut a = vec![C64::default(); n];
    let mut b = vec![C64::default(); n];
    for i in 0..n - 1 {
        let (r0, r1) = (r[i], r[i + 1]);
        b[i + 1] = b[i] * q - (r0 * e1 + (r1 - r0) * lin_fwd) * 0.5;
    }
    for i in (0..n - 1).rev() {
        let (r0, r1) = (r[i], r[i + 1]);
        a[i] = a[i + 1] * q - (r0 * e1 + (r1 - r0) * lin_bwd) * 0.5;
    }
    let et = (-t_final).exp();
    let d = (b[n - 1] - a[0] * et) / (1.0 + et * et);
    let c = -(a[0] + d * et);
    let mut theta = vec![C64::default(); n];
    let mut dtheta = vec![C64::default(); n];
    for i in 0..n {
        let t = i as f64 * dt;
        let ai = a[i] + d * (t - t_final).exp();
        let bi = b[i] + c * (-t).exp();
        theta[i] = ai + bi;
        dtheta[i] = ai - bi;
    }
    (theta, dtheta)
}

/// Weight function for a control sampled on a uniform time grid. `abs_eta`
/// is the temporal frequency `c |eta|` of the probe.
pub fn solve_theta(g: &BoundaryTrace, abs_eta: f64) -> WeightFunction {
    let r = weight_source(g, abs_eta);
    let dt = g.dt();
    let mut theta = g.clone();
    let mut dtheta = g.clone();
    let mut theta_dd = g.clone();
    let m = g.n_arc();
    for k in 0..m {
        let rc = column(&r, k);
        let (th, dth) = solve_theta_series(&rc, dt);
        for n in 0..g.n_times() {
            theta.values[n * m + k] = th[n];
            dtheta.values[n * m + k] = dth[n];
            theta_dd.values[n * m + k] = th[n] + rc[n];
        }
    }
    WeightFunction {
        theta,
        dtheta,
        theta_dd,
        abs_eta,
    }
}

/// Largest one-interval defect of `theta` against the exact propagator of
/// `theta'' - theta = r` with piecewise-linear `r`, relative to `max |theta|`.
pub fn ode_residual(w: &WeightFunction, g: &BoundaryTrace) -> f64 {
    let r = weight_source(g, w.abs_eta);
    let dt = g.dt();
    let (ch, sh) = (dt.cosh(), dt.sinh());
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for k in 0..g.n_arc() {
        for n in 0..g.n_times() {
            scale = scale.max(w.theta.at(n, k).norm());
        }
        for n in 0..g.n_times() - 1 {
            let (th, dth) = (w.theta.at(n, k), w.dtheta.at(n, k));
            let (r0, r1) = (r.at(n, k), r.at(n + 1, k));
            let s = (r1 - r0) / dt;
            let pred = -r1 + (th + r0) * ch + (dth + s) * sh;
            let dpred = -s + (th + r0) * sh + (dth + s) * ch;
            worst = worst
                .max((pred - w.theta.at(n + 1, k)).norm())
                .max((dpred - w.dtheta.at(n + 1, k)).norm());
        }
    }
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Residual of the Volterra form
/// `theta'(t) + int_t^T exp(-i w (s - t)) (theta(s) - i w theta'(s)) ds - g(t)`,
/// as a space-time L2 norm relative to that of `g` (absolute when `g = 0`).
///
/// Differentiating shows the residual `R` obeys `R' = i w R` whenever `theta`
/// solves the two-point problem, so `|R| = |g(T)|` everywhere: the Volterra
/// form holds exactly when the control vanishes at the final time.
pub fn volterra_residual(w: &WeightFunction, g: &BoundaryTrace) -> Result<f64> {
    w.theta.same_sampling(g)?;
    let dt = g.dt();
    let nt = g.n_times();
    let decay = C64::from_polar(1.0, -w.abs_eta * dt);
    let iw = C64::new(0.0, w.abs_eta);
    let tw = time_weights(&g.times);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..g.n_arc() {
        let f: Vec<C64> = (0..nt)
            .map(|n| w.theta.at(n, k) - iw * w.dtheta.at(n, k))
            .collect();
        let mut j = C64::default();
        for n in (0..nt).rev() {
            if n + 1 < nt {
                j = decay * j + (f[n] + decay * f[n + 1]) * (0.5 * dt);
            }
            let res = w.dtheta.at(n, k) + j - g.at(n, k);
            num += tw[n] * g.weights[k] * res.norm_sqr();
            den += tw[n] * g.weights[k] * g.at(n, k).norm_sqr();
        }
    }
    Ok(if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(times: usize, t_final: f64, f: impl Fn(f64) -> C64) -> BoundaryTrace {
        let dt = t_final / (times - 1) as f64;
        let ts: Vec<f64> = (0..times).map(|n| n as f64 * dt).collect();
        let mut tr = BoundaryTrace::zeros(ts.clone(), vec![0.0], vec![1.0]);
        for (n, t) in ts.iter().enumerate() {
            tr.values[n] = f(*t);
        }
        tr
    }

    #[test]
    fn zero_control_gives_zero_weight() {
        let g = single(50, 2.0, |_| C64::default());
        let w = solve_theta(&g, 3.0);
        assert!(w.theta.values.iter().all(|v| *v == C64::default()));
        assert_eq!(volterra_residual(&w, &g).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_at_zero_frequency() {
        let g = single(1001, 1.0, |t| C64::new(t, 0.0));
        let w = solve_theta(&g, 0.0);
        let e = std::f64::consts::E;
        let want = 2.0 * e / (1.0 + e * e) - 1.0;
        let got = w.theta.at(1000, 0);
        assert!((got.re - want).abs() < 1e-10 && got.im.abs() < 1e-15, "{got}");
        assert!((want + 0.35195).abs() < 1e-5);
    }

    #[test]
    fn boundary_conditions_hold() {
        let g = single(801, 6.0, |t| C64::new((2.0 * t).sin(), t.cos() * t));
        let w = solve_theta(&g, 4.0);
        let max = w.theta.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert_eq!(w.theta.at(0, 0), C64::default());
        assert!(w.dtheta.at(800, 0).norm() <= 1e-12 * max);
        assert!(ode_residual(&w, &g) <= 1e-8);
    }

    #[test]
    fn long_horizon_stays_finite() {
        let g = single(20001, 800.0, |t| C64::new(t.sin(), 0.0));
        let w = solve_theta(&g, 1.0);
        assert!(w.theta.values.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
    }

    #[test]
    fn volterra_residual_equals_terminal_control() {
        let g = single(2001, 1.0, |t| C64::new(t, 0.0));
        let w = solve_theta(&g, 0.0);
        let r = volterra_residual(&w, &g).unwrap();
        // |R| = g(T) = 1 everywhere, and ||g|| = sqrt(1/3).
        assert!((r - 3f64.sqrt()).abs() < 1e-5, "{r}");
    }

    #[test]
    fn volterra_holds_for_vanishing_endpoint() {
        let pi = std::f64::consts::PI;
        let mut prev = 0.0;
        for (i, n) in [4001usize, 8001].into_iter().enumerate() {
            let g = single(n, 1.0, |t| C64::new((pi * t).sin(), 0.0));
            let w = solve_theta(&g, 0.0);
            let r = volterra_residual(&w, &g).unwrap();
            assert!(r <= 1e-6, "{r}");
            if i == 1 {
                let ratio = prev / r;
                assert!(ratio > 3.0 && ratio < 5.0, "{ratio}");
            }
            prev = r;
        }
    }

    #[test]
    fn volterra_holds_at_nonzero_frequency() {
        let pi = std::f64::consts::PI;
        let g = single(8001, 2.0, |t| C64::new((pi * t / 2.0).sin().powi(2), 0.0) * C64::from_polar(1.0, 3.0 * t));
        let w = solve_theta(&g, 3.0);
        assert!(volterra_residual(&w, &g).unwrap() <= 1e-5);
    }

    #[test]
    fn shortcut_identity_is_exact() {
        let g = single(401, 2.0, |t| C64::new(t.sin(), (3.0 * t).cos()));
        let w = solve_theta(&g, 2.0);
        let r = weight_source(&g, 2.0);
        for n in 0..401 {
            let lhs = w.theta.at(n, 0) - w.theta_dd.at(n, 0);
            assert!((lhs + r.at(n, 0)).norm() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn solve_theta_is_linear(re in -3.0f64..3.0, im in -3.0f64..3.0, w in 0.0f64..8.0, f in 0.5f64..4.0) {
                let g = single(301, 3.0, |t| C64::new((f * t).sin(), t * t));
                let c = C64::new(re, im);
                let a = solve_theta(&g.map(|v| v * c), w);
                let b = solve_theta(&g, w);
                for (x, y) in a.theta.values.iter().zip(&b.theta.values) {
                    prop_assert!((x - y * c).norm() <= 1e-10 * (1.0 + x.norm()));
                }
            }
        }
    }
}
