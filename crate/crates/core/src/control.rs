//! Boundary control of the auxiliary wave system: find tangential boundary
//! data `g` on `(0, T)` that drives `w(0) = beta eta_perp e^{i eta x}`,
//! `w'(0) = 0` to rest at time `T`.
//!
//! The discrete system is the same leapfrog curl-curl scheme as the forward
//! solver with background coefficients. The minimal-norm control is found by
//! preconditioned conjugate gradients on the HUM Gramian, parametrized by the
//! terminal position and velocity of the adjoint solution. The
//! preconditioner is the inverse of the adjoint energy metric.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{BoundaryDrive, BoundaryTrace, InitialData, Simulation};
use crate::model::{DomainSpec, GridSpec, InclusionRegion, InclusionSpec, PlaneWaveProbe, Rect, C64};
use crate::yee::Lattice;

/// `6t^5 - 15t^4 + 10t^3` clamped to `[0, 1]`.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Tensorized cutoff: 1 on `inner`, 0 outside `outer`, smooth in between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffField {
    pub margin: f64,
    pub inner: Rect,
    pub outer: Rect,
}

impl CutoffField {
    pub fn value(&self, p: [f64; 2]) -> f64 {
        let ramp = |x: f64, o0: f64, i0: f64, i1: f64, o1: f64| {
            if x <= i0 {
                smoothstep((x - o0) / (i0 - o0))
            } else if x >= i1 {
                smoothstep((o1 - x) / (o1 - i1))
            } else {
                1.0
            }
        };
        ramp(p[0], self.outer.x0, self.inner.x0, self.inner.x1, self.outer.x1)
            * ramp(p[1], self.outer.y0, self.inner.y0, self.inner.y1, self.outer.y1)
    }

    /// Values at the cell centers of a lattice.
    pub fn on_cells(&self, lattice: &Lattice) -> Vec<f64> {
        let mut out = vec![0.0; lattice.n_cells()];
        for j in 0..lattice.ny {
            for i in 0..lattice.nx {
                out[lattice.cell(i, j)] = self.value(lattice.cell_center(i, j));
            }
        }
        out
    }
}

/// Cutoff equal to 1 on the bounding box of the inclusions inflated by
/// `margin / 2` and 0 within `margin / 2` of the boundary. Without inclusions
/// the plateau is the domain inset by `margin`.
pub fn cutoff_beta(
    domain: &DomainSpec,
    inclusions: &[InclusionSpec],
    margin: f64,
) -> Result<CutoffField> {
    let r = &domain.rect;
    if !(margin > 0.0) {
        return Err(Error::Margin(format!("margin must be positive, got {margin}")));
    }
    let half = 0.5 * margin;
    let outer = Rect {
        x0: r.x0 + half,
        y0: r.y0 + half,
        x1: r.x1 - half,
        y1: r.y1 - half,
    };
    let inner = if inclusions.is_empty() {
        Rect {
            x0: r.x0 + margin,
            y0: r.y0 + margin,
            x1: r.x1 - margin,
            y1: r.y1 - margin,
        }
    } else {
        let mut b = Rect {
            x0: f64::INFINITY,
            y0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for inc in inclusions {
            let reach = InclusionRegion::new(inc)?.reach + half;
            b.x0 = b.x0.min(inc.center[0] - reach);
            b.y0 = b.y0.min(inc.center[1] - reach);
            b.x1 = b.x1.max(inc.center[0] + reach);
            b.y1 = b.y1.max(inc.center[1] + reach);
        }
        b
    };
    if !(inner.x0 > outer.x0 && inner.y0 > outer.y0 && inner.x1 < outer.x1 && inner.y1 < outer.y1)
    {
        return Err(Error::Margin(format!(
            "margin {margin} leaves no room between the inclusions and the boundary"
        )));
    }
    Ok(CutoffField {
        margin,
        inner,
        outer,
    })
}

/// Safety factor on the diameter crossing time.
pub const CONTROL_TIME_FACTOR: f64 = 1.5;

#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub domain: DomainSpec,
    pub probe: PlaneWaveProbe,
    pub beta: CutoffField,
    /// Multiplies the initial data; the control scales with it.
    pub amplitude: C64,
}

impl ControlProblem {
    pub fn new(domain: DomainSpec, probe: PlaneWaveProbe, beta: CutoffField) -> Self {
        Self {
            domain,
            probe,
            beta,
            amplitude: C64::new(1.0, 0.0),
        }
    }

    pub fn min_time(&self) -> f64 {
        CONTROL_TIME_FACTOR * self.domain.rect.diameter() * (self.domain.eps0 * self.domain.mu0).sqrt()
    }

    pub fn check_geometric_control(&self) -> Result<()> {
        if !self.domain.full_boundary() {
            return Err(Error::GeometricControl(
                "control boundary must be the whole boundary".into(),
            ));
        }
        let t_min = self.min_time();
        if self.domain.t_final < t_min {
            return Err(Error::GeometricControl(format!(
                "T = {} is below the control time {t_min}",
                self.domain.t_final
            )));
        }
        Ok(())
    }

    /// Discretely divergence-free initial field `curl^T (beta Psi)` on all edges.
    pub fn initial_field(&self, lattice: &Lattice) -> Vec<C64> {
        let beta = self.beta.on_cells(lattice);
        let mut s = vec![C64::default(); lattice.n_cells()];
        for j in 0..lattice.ny {
            for i in 0..lattice.nx {
                let k = lattice.cell(i, j);
                if beta[k] != 0.0 {
                    s[k] = self.probe.stream(lattice.cell_center(i, j), 0.0) * beta[k] * self.amplitude;
                }
            }
        }
        let mut e = vec![C64::default(); lattice.n_edges()];
        lattice.curl_t_add(&s, 1.0, &mut e);
        for b in lattice.boundary_edges() {
            e[b.edge] = C64::default();
        }
        e
    }
}

/// Time taper: 0 at both ends, 1 on the middle of the interval.
pub fn taper(t: f64, t_final: f64) -> f64 {
    let w = t_final / 8.0;
    smoothstep(t / w) * smoothstep((t_final - t) / w)
}

#[derive(Clone, Debug)]
pub struct BoundaryControl {
    /// Counterclockwise tangential control on the control lattice boundary.
    pub g: BoundaryTrace,
    pub iterations: usize,
    /// Terminal over initial energy of the controlled discrete system.
    pub ratio: f64,
    pub converged: bool,
    /// Energy ratio after each iteration.
    pub history: Vec<f64>,
    /// CG quadratic functional after each iteration; its decrease is the
    /// decrease of the error in the Gramian norm.
    pub functional: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ControlSummary {
    pub iterations: usize,
    pub ratio: f64,
    pub converged: bool,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub gamma: String,
    pub nodes: usize,
    pub steps: usize,
}

impl BoundaryControl {
    pub fn summary(&self) -> ControlSummary {
        ControlSummary {
            iterations: self.iterations,
            ratio: self.ratio,
            converged: self.converged,
            t_final: self.g.t_final(),
            gamma: "full boundary".into(),
            nodes: self.g.n_arc(),
            steps: self.g.n_times().saturating_sub(1),
        }
    }
}

/// Pseudo-inverse of the Neumann five-point Laplacian on the cell grid,
/// applied in a cosine basis.
struct NeumannSolver {
    nx: usize,
    ny: usize,
    cx: Vec<f64>,
    cy: Vec<f64>,
    eig: Vec<f64>,
}

impl NeumannSolver {
    fn new(lattice: &Lattice) -> Self {
        let basis = |n: usize| {
            let mut m = vec![0.0; n * n];
            for p in 0..n {
                let s = if p == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                for i in 0..n {
                    m[p * n + i] = s * (PI * p as f64 * (i as f64 + 0.5) / n as f64).cos();
                }
            }
            m
        };
        let (nx, ny, h) = (lattice.nx, lattice.ny, lattice.h);
        let mut eig = vec![0.0; nx * ny];
        for q in 0..ny {
            for p in 0..nx {
                let a = (PI * p as f64 / (2.0 * nx as f64)).sin();
                let b = (PI * q as f64 / (2.0 * ny as f64)).sin();
                eig[q * nx + p] = 4.0 / (h * h) * (a * a + b * b);
            }
        }
        Self {
            nx,
            ny,
            cx: basis(nx),
            cy: basis(ny),
            eig,
        }
    }

    fn transform(&self, v: &[C64], inverse: bool) -> Vec<C64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut tmp = vec![C64::default(); nx * ny];
        for j in 0..ny {
            for p in 0..nx {
                let mut acc = C64::default();
                for i in 0..nx {
                    let c = if inverse { self.cx[i * nx + p] } else { self.cx[p * nx + i] };
                    acc += v[j * nx + i] * c;
                }
                tmp[j * nx + p] = acc;
            }
        }
        let mut out = vec![C64::default(); nx * ny];
        for q in 0..ny {
            for p in 0..nx {
                let mut acc = C64::default();
                for j in 0..ny {
                    let c = if inverse { self.cy[j * ny + q] } else { self.cy[q * ny + j] };
                    acc += tmp[j * nx + p] * c;
                }
                out[q * nx + p] = acc;
            }
        }
        out
    }

    /// Applies the pseudo-inverse `power` times.
    fn solve(&self, v: &[C64], power: i32) -> Vec<C64> {
        let mut f = self.transform(v, false);
        for (x, e) in f.iter_mut().zip(&self.eig) {
            *x = if *e == 0.0 {
                C64::default()
            } else {
                *x / e.powi(power)
            };
        }
        self.transform(&f, true)
    }
}

/// Discrete control system on one lattice with background coefficients.
struct WaveSystem {
    lattice: Lattice,
    interior: Vec<usize>,
    boundary: Vec<(usize, f64)>,
    eps0: f64,
    inv_mu: f64,
    dt: f64,
    n_steps: usize,
    sigma: f64,
    weight: Vec<f64>,
    cells: Vec<C64>,
    neumann: NeumannSolver,
}

impl WaveSystem {
    fn new(domain: &DomainSpec, grid: &GridSpec) -> Result<Self> {
        let lattice = Lattice::new(&domain.rect, grid)?;
        let limit = grid.cfl_limit(domain.eps0, domain.mu0);
        if grid.dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt: grid.dt, limit });
        }
        let n_steps = grid.steps(domain.t_final);
        let dt = domain.t_final / n_steps as f64;
        let weight = (0..=n_steps)
            .map(|n| taper(n as f64 * dt, domain.t_final).powi(2))
            .collect();
        let neumann = NeumannSolver::new(&lattice);
        Ok(Self {
            interior: lattice.interior_edges(),
            boundary: lattice
                .boundary_edges()
                .iter()
                .map(|b| (b.edge, b.sign))
                .collect(),
            eps0: domain.eps0,
            inv_mu: 1.0 / domain.mu0,
            dt,
            n_steps,
            sigma: dt * dt / domain.eps0,
            weight,
            cells: vec![C64::default(); lattice.n_cells()],
            neumann,
            lattice,
        })
    }

    fn zeros(&self) -> Vec<C64> {
        vec![C64::default(); self.lattice.n_edges()]
    }

    /// `out = curl^T (curl e) / mu` on all edges.
    fn apply(&mut self, e: &[C64], out: &mut [C64]) {
        self.lattice.curl(e, &mut self.cells);
        for c in self.cells.iter_mut() {
            *c *= self.inv_mu;
        }
        out.fill(C64::default());
        self.lattice.curl_t_add(&self.cells, 1.0, out);
    }

    fn energy(&mut self, x_prev: &[C64], x: &[C64]) -> f64 {
        let a = self.lattice.h * self.lattice.h;
        let kin: f64 = self
            .interior
            .iter()
            .map(|&k| ((x[k] - x_prev[k]) / self.dt).norm_sqr())
            .sum::<f64>()
            * self.eps0;
        let mut interior_only = x.to_vec();
        for &(k, _) in &self.boundary {
            interior_only[k] = C64::default();
        }
        self.lattice.curl(&interior_only, &mut self.cells);
        let mag: f64 = self.cells.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.inv_mu;
        (kin + mag) * a
    }

    /// Terminal pair `(x^{N-1}, x^N)` from initial field `x0` (zero velocity)
    /// and boundary edge values `b` (`(N+1) x n_boundary`, may be empty).
    fn evolve(&mut self, x0: &[C64], b: Option<&[C64]>) -> (Vec<C64>, Vec<C64>) {
        let nb = self.boundary.len();
        let mut prev = x0.to_vec();
        let mut acc = self.zeros();
        self.apply(&prev, &mut acc);
        let mut cur = prev.clone();
        for &k in &self.interior {
            cur[k] = prev[k] - acc[k] * (0.5 * self.sigma);
        }
        for n in 1..self.n_steps {
            if let Some(b) = b {
                for (idx, &(k, _)) in self.boundary.iter().enumerate() {
                    cur[k] = b[n * nb + idx];
                }
            }
            self.apply(&cur, &mut acc);
            for &k in &self.interior {
                prev[k] = cur[k] * 2.0 - prev[k] - acc[k] * self.sigma;
            }
            for &(k, _) in &self.boundary {
                prev[k] = C64::default();
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        (prev, cur)
    }

    /// Boundary edge values `weight_n F^T q^{n+1}` of the adjoint solution with
    /// terminal position `p` and velocity `v`.
    fn adjoint(&mut self, p: &[C64], v: &[C64]) -> Vec<C64> {
        let nb = self.boundary.len();
        let n = self.n_steps;
        let mut out = vec![C64::default(); (n + 1) * nb];
        let mut next = p.to_vec();
        let mut cur = self.zeros();
        for &k in &self.interior {
            cur[k] = p[k] - v[k] * self.dt;
        }
        let mut acc = self.zeros();
        self.apply(&next, &mut acc);
        self.emit(&acc, n - 1, &mut out);
        for m in (2..n).rev() {
            self.apply(&cur, &mut acc);
            self.emit(&acc, m - 1, &mut out);
            for &k in &self.interior {
                next[k] = cur[k] * 2.0 - acc[k] * self.sigma - next[k];
            }
            std::mem::swap(&mut next, &mut cur);
        }
        out
    }

    fn emit(&self, acc: &[C64], n: usize, out: &mut [C64]) {
        let nb = self.boundary.len();
        let w = -self.sigma * self.weight[n];
        for (idx, &(k, _)) in self.boundary.iter().enumerate() {
            out[n * nb + idx] = acc[k] * w;
        }
    }

    /// Transpose of the map from adjoint terminal data to multipliers:
    /// `((sigma A - I) s1 + s2, -dt s1)`.
    fn metric_transpose(&mut self, s1: &[C64], s2: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let mut acc = self.zeros();
        self.apply(s1, &mut acc);
        let mut a = self.zeros();
        let mut b = self.zeros();
        for &k in &self.interior {
            a[k] = acc[k] * self.sigma - s1[k] + s2[k];
            b[k] = -s1[k] * self.dt;
        }
        (a, b)
    }

    /// `scale curl^T L^{-power} curl v` on interior edges, with `L` the
    /// Neumann Laplacian on cells.
    fn stream_solve(&mut self, v: &[C64], power: i32, scale: f64) -> Vec<C64> {
        let mut ext = v.to_vec();
        for &(k, _) in &self.boundary {
            ext[k] = C64::default();
        }
        self.lattice.curl(&ext, &mut self.cells);
        let z = self.neumann.solve(&self.cells, power);
        let mut out = self.zeros();
        self.lattice.curl_t_add(&z, scale, &mut out);
        for &(k, _) in &self.boundary {
            out[k] = C64::default();
        }
        out
    }

    /// Inverse energy metric:
    /// `mu0 A^+` on positions, `1/eps0` on velocities.
    fn precondition(&mut self, a: &[C64], b: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let pa = self.stream_solve(a, 2, 1.0 / self.inv_mu);
        let pb = self.stream_solve(b, 1, 1.0 / self.eps0);
        (pa, pb)
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (u, v) in y.iter_mut().zip(x) {
        *u += a * v;
    }
}

fn control_trace(sys: &WaveSystem, b: &[C64]) -> BoundaryTrace {
    let lattice = &sys.lattice;
    let be = lattice.boundary_edges();
    let times = (0..=sys.n_steps).map(|n| n as f64 * sys.dt).collect();
    let mut g = BoundaryTrace::zeros(
        times,
        be.iter().map(|e| e.s).collect(),
        vec![lattice.h; be.len()],
    );
    let nb = be.len();
    for n in 0..=sys.n_steps {
        for idx in 0..nb {
            g.values[n * nb + idx] = b[n * nb + idx] * be[idx].sign;
        }
    }
    g
}

/// Minimal-norm tapered control driving the auxiliary system to rest.
pub fn synthesize_control(
    cp: &ControlProblem,
    grid: &GridSpec,
    tol: f64,
    max_iters: usize,
) -> Result<BoundaryControl> {
    cp.check_geometric_control()?;
    let mut sys = WaveSystem::new(&cp.domain, grid)?;
    let nb = sys.boundary.len();
    let x0 = cp.initial_field(&sys.lattice);
    let zero = sys.zeros();
    let e0 = sys.energy(&x0, &x0);
    let mut control = vec![C64::default(); (sys.n_steps + 1) * nb];
    if e0 == 0.0 {
        return Ok(BoundaryControl {
            g: control_trace(&sys, &control),
            iterations: 0,
            ratio: 0.0,
            converged: true,
            history: Vec::new(),
            functional: Vec::new(),
        });
    }
    // State residual: minus the terminal state of the controlled system.
    let (f1, f2) = sys.evolve(&x0, None);
    let mut s1: Vec<C64> = f1.iter().map(|v| -v).collect();
    let mut s2: Vec<C64> = f2.iter().map(|v| -v).collect();
    let (mut ra, mut rb) = sys.metric_transpose(&s1, &s2);
    let (mut za, mut zb) = sys.precondition(&ra, &rb);
    let (mut pa, mut pb) = (za.clone(), zb.clone());
    let mut rho = (dot(&ra, &za) + dot(&rb, &zb)).re;
    let (mut ya, mut yb) = (zero.clone(), zero.clone());
    let (rhs_a, rhs_b) = (ra.clone(), rb.clone());
    let mut history = Vec::new();
    let mut functional = Vec::new();
    let mut ratio = sys.energy(&s1, &s2) / e0;
    let mut iterations = 0;
    while ratio > tol && iterations < max_iters && rho > 0.0 {
        let b = sys.adjoint(&pa, &pb);
        let (t1, t2) = sys.evolve(&zero, Some(&b));
        let (ha, hb) = sys.metric_transpose(&t1, &t2);
        let curv = (dot(&pa, &ha) + dot(&pb, &hb)).re;
        if !(curv > 0.0) {
            break;
        }
        let a = C64::new(rho / curv, 0.0);
        axpy(&mut ya, a, &pa);
        axpy(&mut yb, a, &pb);
        axpy(&mut ra, -a, &ha);
        axpy(&mut rb, -a, &hb);
        axpy(&mut s1, -a, &t1);
        axpy(&mut s2, -a, &t2);
        axpy(&mut control, a, &b);
        iterations += 1;
        ratio = sys.energy(&s1, &s2) / e0;
        history.push(ratio);
        // J(y) = y^H H y / 2 - Re y^H rhs = -Re y^H (rhs + r) / 2
        let j = -0.5
            * (dot(&ya, &rhs_a) + dot(&ya, &ra) + dot(&yb, &rhs_b) + dot(&yb, &rb)).re;
        functional.push(j);
        log::debug!("control iteration {iterations}: energy ratio {ratio:.3e}");
        (za, zb) = sys.precondition(&ra, &rb);
        let rho_new = (dot(&ra, &za) + dot(&rb, &zb)).re;
        let beta = C64::new(rho_new / rho, 0.0);
        rho = rho_new;
        for (p, z) in pa.iter_mut().zip(&za) {
            *p = z + beta * *p;
        }
        for (p, z) in pb.iter_mut().zip(&zb) {
            *p = z + beta * *p;
        }
    }
    Ok(BoundaryControl {
        g: control_trace(&sys, &control),
        iterations,
        ratio,
        converged: ratio <= tol,
        history,
        functional,
    })
}

fn lerp_periodic(xs: &[f64], vals: &[C64], x: f64, period: f64) -> C64 {
    let n = xs.len();
    let x = x.rem_euclid(period);
    let idx = xs.partition_point(|&v| v <= x);
    let (i0, i1) = if idx == 0 || idx == n { (n - 1, 0) } else { (idx - 1, idx) };
    let (x0, mut x1) = (xs[i0], xs[i1]);
    let mut xx = x;
    if x1 <= x0 {
        x1 += period;
        if xx < x0 {
            xx += period;
        }
    }
    let f = (xx - x0) / (x1 - x0);
    vals[i0] * (1.0 - f) + vals[i1] * f
}

/// Linear interpolation of a control in time and periodic arclength.
pub fn resample_control(g: &BoundaryTrace, times: &[f64], arc: &[f64], weights: &[f64], perimeter: f64) -> BoundaryTrace {
    let nt = g.n_times();
    let mut out = BoundaryTrace::zeros(times.to_vec(), arc.to_vec(), weights.to_vec());
    let dt = g.dt();
    let mut row = vec![C64::default(); g.n_arc()];
    for (n, &t) in times.iter().enumerate() {
        let u = (t / dt).clamp(0.0, (nt - 1) as f64);
        let i0 = (u.floor() as usize).min(nt.saturating_sub(2));
        let f = u - i0 as f64;
        for (k, r) in row.iter_mut().enumerate() {
            *r = g.at(i0, k) * (1.0 - f) + g.at((i0 + 1).min(nt - 1), k) * f;
        }
        for (k, &s) in arc.iter().enumerate() {
            out.values[n * arc.len() + k] = lerp_periodic(&g.arc, &row, s, perimeter);
        }
    }
    out
}

/// Terminal fields `(E^{N-1}, E^N)` and initial energy of the controlled
/// system replayed by the forward solver on the lattice of `grid`.
fn replay(cp: &ControlProblem, grid: &GridSpec, ctrl: &BoundaryControl) -> Result<(WaveSystem, Simulation, f64)> {
    let mut sys = WaveSystem::new(&cp.domain, grid)?;
    let lattice = sys.lattice.clone();
    let be = lattice.boundary_edges();
    let times: Vec<f64> = (0..=sys.n_steps).map(|n| n as f64 * sys.dt).collect();
    let arc: Vec<f64> = be.iter().map(|b| b.s).collect();
    let g = resample_control(&ctrl.g, &times, &arc, &vec![lattice.h; arc.len()], cp.domain.rect.perimeter());
    let x0 = cp.initial_field(&lattice);
    let e0 = sys.energy(&x0, &x0);
    let mut sim = Simulation::from_parts(
        lattice.clone(),
        vec![sys.inv_mu; lattice.n_cells()],
        cp.domain.eps0,
        sys.dt,
        sys.n_steps,
        InitialData::Fields {
            e0: x0,
            e1: sys.zeros(),
        },
        BoundaryDrive::Table(g.values),
    )?;
    while !sim.done() {
        sim.advance()?;
    }
    Ok((sys, sim, e0))
}

/// Replays the controlled system with the forward solver on the lattice of
/// `grid` and returns the terminal over initial energy.
pub fn verify_quiescence(cp: &ControlProblem, grid: &GridSpec, ctrl: &BoundaryControl) -> Result<f64> {
    let (mut sys, sim, e0) = replay(cp, grid, ctrl)?;
    let et = sys.energy(sim.previous_field(), sim.field());
    Ok(if e0 == 0.0 { et } else { et / e0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain(t: f64) -> DomainSpec {
        DomainSpec::new(
            Rect {
                x0: 0.0,
                y0: 0.0,
                x1: 1.0,
                y1: 1.0,
            },
            t,
        )
    }

    fn problem(eta: [f64; 2], t: f64) -> ControlProblem {
        let d = domain(t);
        let beta = cutoff_beta(&d, &[], 0.4).unwrap();
        ControlProblem::new(d.clone(), PlaneWaveProbe::new(eta, &d).unwrap(), beta)
    }

    #[test]
    fn cutoff_properties() {
        let d = domain(1.0);
        let inc = InclusionSpec {
            center: [0.4, 0.6],
            alpha: 0.05,
            shape: crate::model::InclusionShape::disk(1.0),
            mu: 2.0,
        };
        let beta = cutoff_beta(&d, std::slice::from_ref(&inc), 0.2).unwrap();
        assert_eq!(beta.value(inc.center), 1.0);
        let lattice = Lattice::new(&d.rect, &GridSpec { h: 0.05, dt: 0.01 }).unwrap();
        for b in lattice.boundary_edges() {
            let (p, _) = lattice.edge_midpoint(b.edge);
            assert_eq!(beta.value(p), 0.0);
        }
        assert!(beta.on_cells(&lattice).iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(matches!(cutoff_beta(&d, &[inc], 0.9), Err(Error::Margin(_))));
    }

    #[test]
    fn initial_field_is_divergence_free() {
        let cp = problem([3.0, 1.0], 5.0);
        let lattice = Lattice::new(&cp.domain.rect, &GridSpec { h: 1.0 / 32.0, dt: 0.01 }).unwrap();
        let e = cp.initial_field(&lattice);
        assert!(lattice.divergence(&e).iter().all(|d| d.norm() < 1e-10));
    }

    #[test]
    fn neumann_solver_inverts_on_mean_free_fields() {
        let lattice = Lattice::new(&domain(1.0).rect, &GridSpec { h: 0.1, dt: 0.01 }).unwrap();
        let solver = NeumannSolver::new(&lattice);
        let mut v: Vec<C64> = (0..lattice.n_cells())
            .map(|k| C64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()))
            .collect();
        let mean = v.iter().sum::<C64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        let z = solver.solve(&v, 1);
        let mut e = vec![C64::default(); lattice.n_edges()];
        lattice.curl_t_add(&z, 1.0, &mut e);
        for b in lattice.boundary_edges() {
            e[b.edge] = C64::default();
        }
        let mut back = vec![C64::default(); lattice.n_cells()];
        lattice.curl(&e, &mut back);
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_initial_data_needs_no_control() {
        let mut cp = problem([3.0, 1.0], 3.0);
        cp.amplitude = C64::default();
        let c = synthesize_control(&cp, &GridSpec::with_courant(0.05, 0.8, 1.0, 1.0), 1e-3, 50).unwrap();
        assert_eq!(c.iterations, 0);
        assert!(c.g.values.iter().all(|v| *v == C64::default()));
    }

    #[test]
    fn short_horizon_is_refused() {
        let cp = problem([3.0, 1.0], 1.0);
        assert!(matches!(
            synthesize_control(&cp, &GridSpec::with_courant(0.05, 0.8, 1.0, 1.0), 1e-3, 50),
            Err(Error::GeometricControl(_))
        ));
    }

    #[test]
    fn control_reaches_rest_and_replays() {
        let cp = problem([3.0, 1.0], 3.0 * 2f64.sqrt());
        let grid = GridSpec::with_courant(1.0 / 20.0, 0.8, 1.0, 1.0);
        let c = synthesize_control(&cp, &grid, 1e-3, 200).unwrap();
        assert!(c.converged, "{} after {}", c.ratio, c.iterations);
        let n = c.g.n_times() - 1;
        assert!(c.g.row(0).iter().chain(c.g.row(n)).all(|v| v.norm() == 0.0));
        let replay = verify_quiescence(&cp, &grid, &c).unwrap();
        assert!((replay - c.ratio).abs() <= 1e-6 * c.ratio.max(1e-12) + 1e-12, "{replay} vs {}", c.ratio);
        assert!(c.functional.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs()));
    }

    #[test]
    fn uncontrolled_energy_is_nearly_conserved() {
        let cp = problem([3.0, 1.0], 3.0 * 2f64.sqrt());
        let grid = GridSpec::with_courant(1.0 / 20.0, 0.8, 1.0, 1.0);
        let mut c = synthesize_control(&cp, &grid, 1e-3, 200).unwrap();
        c.g.values.iter_mut().for_each(|v| *v = C64::default());
        let r = verify_quiescence(&cp, &grid, &c).unwrap();
        assert!((r - 1.0).abs() < 0.05, "{r}");
    }

    #[test]
    fn conjugate_probe_gives_conjugate_control() {
        let grid = GridSpec::with_courant(1.0 / 16.0, 0.8, 1.0, 1.0);
        let a = synthesize_control(&problem([2.0, 1.0], 4.3), &grid, 1e-3, 200).unwrap();
        let b = synthesize_control(&problem([-2.0, -1.0], 4.3), &grid, 1e-3, 200).unwrap();
        assert_eq!(a.iterations, b.iterations);
        for (x, y) in a.g.values.iter().zip(&b.g.values) {
            assert!((x.conj() - y).norm() <= 1e-12 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn control_is_linear_in_amplitude() {
        let grid = GridSpec::with_courant(1.0 / 16.0, 0.8, 1.0, 1.0);
        let cp = problem([2.0, 1.0], 4.3);
        let mut cp2 = cp.clone();
        cp2.amplitude = C64::new(2.0, 0.0);
        let a = synthesize_control(&cp, &grid, 1e-3, 200).unwrap();
        let b = synthesize_control(&cp2, &grid, 1e-3, 200).unwrap();
        for (x, y) in a.g.values.iter().zip(&b.g.values) {
            assert!((x * 2.0 - y).norm() <= 1e-12 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn controlled_field_stays_divergence_free() {
        let cp = problem([3.0, 4.0], 3.0 * 2f64.sqrt());
        let grid = GridSpec::with_courant(1.0 / 20.0, 0.8, 1.0, 1.0);
        let c = synthesize_control(&cp, &grid, 1e-3, 200).unwrap();
        let (_, sim, _) = replay(&cp, &grid, &c).unwrap();
        let lattice = sim.lattice();
        let scale = lattice.edge_norm(cp.initial_field(lattice).as_slice());
        let defect = lattice.divergence(sim.field()).iter().map(|d| d.norm()).fold(0.0, f64::max);
        assert!(defect <= 1e-6 * scale, "{defect} vs {scale}");
    }

    #[test]
    fn halving_dt_mismatch_is_second_order() {
        let cp = problem([2.0, 0.0], 3.0 * 2f64.sqrt());
        let mismatch = |h: f64| {
            let grid = GridSpec::with_courant(h, 0.8, 1.0, 1.0);
            let c = synthesize_control(&cp, &grid, 1e-3, 200).unwrap();
            verify_quiescence(&cp, &GridSpec { h, dt: grid.dt / 2.0 }, &c).unwrap()
        };
        let (a, b) = (mismatch(1.0 / 20.0), mismatch(1.0 / 40.0));
        assert!(a / b > 3.0, "{a} -> {b}");
    }

    #[test]
    #[ignore = "needs a very fine lattice; see README"]
    fn halving_dt_keeps_ratio_within_factor_two() {
        let cp = problem([2.0, 0.0], 3.0 * 2f64.sqrt());
        let grid = GridSpec::with_courant(1.0 / 160.0, 0.8, 1.0, 1.0);
        let c = synthesize_control(&cp, &grid, 1e-3, 200).unwrap();
        let r = verify_quiescence(&cp, &GridSpec { h: grid.h, dt: grid.dt / 2.0 }, &c).unwrap();
        assert!(r <= 2.0 * c.ratio, "{r} vs {}", c.ratio);
    }
}
