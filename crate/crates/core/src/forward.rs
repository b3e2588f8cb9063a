//! Leapfrog time stepping of `eps0 E'' + curl (1/mu) curl E = 0` on the
//! staggered lattice, with tangential Dirichlet data on the boundary edges,
//! plus analytic background traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    build_medium, validate_scenario, GridSpec, InclusionRegion, PlaneWaveProbe, Scenario, C64,
};
use crate::yee::{ArcSample, Axis, Lattice, Scalar};

/// Boundary curl samples indexed by (time sample, arc sample), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTrace {
    pub times: Vec<f64>,
    /// Counterclockwise arclength of each sample.
    pub arc: Vec<f64>,
    /// Arclength quadrature weight of each sample.
    pub weights: Vec<f64>,
    pub values: Vec<C64>,
}

impl BoundaryTrace {
    pub fn zeros(times: Vec<f64>, arc: Vec<f64>, weights: Vec<f64>) -> Self {
        let n = times.len() * arc.len();
        Self {
            times,
            arc,
            weights,
            values: vec![C64::new(0.0, 0.0); n],
        }
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_arc(&self) -> usize {
        self.arc.len()
    }

    pub fn at(&self, n: usize, k: usize) -> C64 {
        self.values[n * self.arc.len() + k]
    }

    pub fn row(&self, n: usize) -> &[C64] {
        let m = self.arc.len();
        &self.values[n * m..(n + 1) * m]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [C64] {
        let m = self.arc.len();
        &mut self.values[n * m..(n + 1) * m]
    }

    /// Uniform time step, taken from the first interval.
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn t_final(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn same_sampling(&self, other: &BoundaryTrace) -> Result<()> {
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs()))
        };
        if !close(&self.times, &other.times) {
            return Err(Error::GridMismatch(format!(
                "time grids differ ({} vs {} samples)",
                self.times.len(),
                other.times.len()
            )));
        }
        if !close(&self.arc, &other.arc) {
            return Err(Error::GridMismatch(format!(
                "arc grids differ ({} vs {} samples)",
                self.arc.len(),
                other.arc.len()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> BoundaryTrace {
        BoundaryTrace {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Space-time L2 norm with trapezoid weights in time.
    pub fn l2_norm(&self) -> f64 {
        let w = time_weights(&self.times);
        let mut acc = 0.0;
        for (n, wt) in w.iter().enumerate() {
            for (k, ws) in self.weights.iter().enumerate() {
                acc += wt * ws * self.at(n, k).norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Trapezoid weights on a (possibly non-uniform) time grid.
pub fn time_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for i in 1..n {
        let d = 0.5 * (times[i] - times[i - 1]);
        w[i - 1] += d;
        w[i] += d;
    }
    w
}

/// Pointwise `a - b`, with the first time row set to exactly zero.
pub fn trace_difference(a: &BoundaryTrace, b: &BoundaryTrace) -> Result<BoundaryTrace> {
    a.same_sampling(b)?;
    let mut out = a.clone();
    for (o, v) in out.values.iter_mut().zip(&b.values) {
        *o -= v;
    }
    if out.n_times() > 0 {
        out.row_mut(0).fill(C64::new(0.0, 0.0));
    }
    Ok(out)
}

/// Field snapshot at one time level.
#[derive(Clone, Debug)]
pub struct FieldState {
    pub e: Vec<C64>,
    pub curl: Vec<C64>,
    pub t: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub magnetic: Vec<f64>,
    pub total: Vec<f64>,
}

/// Tangential data imposed on the boundary edges.
#[derive(Clone, Debug)]
pub enum BoundaryDrive {
    Zero,
    Probe(PlaneWaveProbe),
    /// Counterclockwise tangential values, `(n_steps + 1) x n_boundary`
    /// row-major in [`Lattice::boundary_edges`] order.
    Table(Vec<C64>),
}

/// Initial state of a run.
#[derive(Clone, Debug)]
pub enum InitialData {
    /// Discretely divergence-free interpolant of the probe plane wave.
    Probe(PlaneWaveProbe),
    /// Edge values of `E(0)` and `E'(0)`.
    Fields { e0: Vec<C64>, e1: Vec<C64> },
}

/// A single leapfrog run. Owns its field buffers exclusively.
pub struct Simulation {
    lattice: Lattice,
    inv_mu: Vec<f64>,
    eps0: f64,
    dt: f64,
    n_steps: usize,
    step: usize,
    prev: Vec<C64>,
    cur: Vec<C64>,
    curl: Vec<C64>,
    prev_curl: Vec<C64>,
    acc: Vec<C64>,
    cells: Vec<C64>,
    interior: Vec<usize>,
    boundary: Vec<(usize, f64)>,
    drive: BoundaryDrive,
}

impl Simulation {
    /// Perturbed run for a scenario driven by a plane-wave probe.
    pub fn new(s: &Scenario, g: &GridSpec, p: &PlaneWaveProbe) -> Result<Self> {
        validate_scenario(s).into_result()?;
        g.check_cfl(s)?;
        let lattice = Lattice::new(&s.domain.rect, g)?;
        let medium = build_medium(s, g)?;
        let n_steps = g.steps(s.domain.t_final);
        let dt = s.domain.t_final / n_steps as f64;
        Self::from_parts(
            lattice,
            medium.inv_mu,
            s.domain.eps0,
            dt,
            n_steps,
            InitialData::Probe(*p),
            BoundaryDrive::Probe(*p),
        )
    }

    pub fn from_parts(
        lattice: Lattice,
        inv_mu: Vec<f64>,
        eps0: f64,
        dt: f64,
        n_steps: usize,
        init: InitialData,
        drive: BoundaryDrive,
    ) -> Result<Self> {
        let ne = lattice.n_edges();
        let nc = lattice.n_cells();
        if inv_mu.len() != nc {
            return Err(Error::GridMismatch("medium does not match lattice".into()));
        }
        let boundary: Vec<(usize, f64)> = lattice
            .boundary_edges()
            .iter()
            .map(|b| (b.edge, b.sign))
            .collect();
        if let BoundaryDrive::Table(v) = &drive {
            if v.len() != (n_steps + 1) * boundary.len() {
                return Err(Error::GridMismatch(format!(
                    "boundary table has {} values, expected {}",
                    v.len(),
                    (n_steps + 1) * boundary.len()
                )));
            }
        }
        let interior = lattice.interior_edges();
        let (e0, e1) = match init {
            InitialData::Probe(p) => probe_initial_data(&lattice, &p),
            InitialData::Fields { e0, e1 } => {
                if e0.len() != ne || e1.len() != ne {
                    return Err(Error::GridMismatch("initial data size".into()));
                }
                (e0, e1)
            }
        };
        let mut sim = Self {
            lattice,
            inv_mu,
            eps0,
            dt,
            n_steps,
            step: 0,
            prev: vec![C64::default(); ne],
            cur: e0,
            curl: vec![C64::default(); nc],
            prev_curl: vec![C64::default(); nc],
            acc: vec![C64::default(); ne],
            cells: vec![C64::default(); nc],
            interior,
            boundary,
            drive,
        };
        sim.apply_boundary(0);
        sim.lattice.curl(&sim.cur, &mut sim.curl);
        // Virtual level -1 chosen so that the first leapfrog step is the
        // second-order Taylor step E1 = E0 + dt E0' - dt^2/(2 eps0) A E0.
        sim.apply_operator();
        let half = 0.5 * dt * dt / eps0;
        for &k in &sim.interior {
            sim.prev[k] = sim.cur[k] - e1[k] * dt - sim.acc[k] * half;
        }
        for &(k, _) in &sim.boundary {
            sim.prev[k] = sim.cur[k] - e1[k] * dt;
        }
        sim.lattice.curl(&sim.prev, &mut sim.prev_curl);
        Ok(sim)
    }

    /// `acc = curl^T (inv_mu curl cur)`, using the cached curl.
    fn apply_operator(&mut self) {
        for ((c, &m), s) in self.cells.iter_mut().zip(&self.inv_mu).zip(&self.curl) {
            *c = *s * m;
        }
        self.acc.fill(C64::default());
        self.lattice.curl_t_add(&self.cells, 1.0, &mut self.acc);
    }

    fn boundary_value(&self, n: usize, idx: usize) -> C64 {
        let (k, sign) = self.boundary[idx];
        match &self.drive {
            BoundaryDrive::Zero => C64::default(),
            BoundaryDrive::Probe(p) => {
                let (x, axis) = self.lattice.edge_midpoint(k);
                let e = p.field(x, n as f64 * self.dt);
                match axis {
                    Axis::X => e[0],
                    Axis::Y => e[1],
                }
            }
            BoundaryDrive::Table(v) => v[n * self.boundary.len() + idx] * sign,
        }
    }

    fn apply_boundary(&mut self, n: usize) {
        for idx in 0..self.boundary.len() {
            let v = self.boundary_value(n, idx);
            self.cur[self.boundary[idx].0] = v;
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn done(&self) -> bool {
        self.step >= self.n_steps
    }

    pub fn field(&self) -> &[C64] {
        &self.cur
    }

    pub fn previous_field(&self) -> &[C64] {
        &self.prev
    }

    /// Cell-centered curl of the current field.
    pub fn curl(&self) -> &[C64] {
        &self.curl
    }

    pub fn inv_mu(&self) -> &[f64] {
        &self.inv_mu
    }

    pub fn state(&self) -> FieldState {
        FieldState {
            e: self.cur.clone(),
            curl: self.curl.clone(),
            t: self.time(),
        }
    }

    /// Advances one time level.
    pub fn advance(&mut self) -> Result<()> {
        self.apply_operator();
        let f = self.dt * self.dt / self.eps0;
        for &k in &self.interior {
            self.prev[k] = self.cur[k] * 2.0 - self.prev[k] - self.acc[k] * f;
        }
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.prev_curl, &mut self.curl);
        self.step += 1;
        self.apply_boundary(self.step);
        self.lattice.curl(&self.cur, &mut self.curl);
        if (self.step.is_multiple_of(16) || self.step == self.n_steps)
            && !self.curl.iter().all(|v| Scalar::is_finite(*v)) {
                return Err(Error::Unstable {
                    step: self.step,
                    t: self.time(),
                });
            }
        Ok(())
    }

    /// Energy between the previous and the current level:
    /// kinetic `eps0 |(E^n - E^{n-1}) / dt|^2`, magnetic `Re <C^n, C^{n-1}> / mu`.
    /// With zero boundary data the total is exactly conserved.
    pub fn energy(&self) -> (f64, f64) {
        let a = self.lattice.h * self.lattice.h;
        let kinetic: f64 = self
            .interior
            .iter()
            .map(|&k| ((self.cur[k] - self.prev[k]) / self.dt).norm_sqr())
            .sum::<f64>()
            * self.eps0
            * a;
        let magnetic: f64 = self
            .curl
            .iter()
            .zip(&self.prev_curl)
            .zip(&self.inv_mu)
            .map(|((c, p), m)| m * (c * p.conj()).re)
            .sum::<f64>()
            * a;
        (kinetic, magnetic)
    }

    /// Boundary curl samples of the current level, extrapolated to the boundary.
    pub fn sample_arc(&self, arc: &[ArcSample], out: &mut [C64]) {
        for (o, a) in out.iter_mut().zip(arc) {
            *o = self.curl[a.near] * 1.5 - self.curl[a.far] * 0.5;
        }
    }
}

/// Discretely divergence-free probe data: `E0 = curl^T Psi` from the cell
/// stream function, `E0' = -i omega E0`; boundary edges take the exact trace.
fn probe_initial_data(lattice: &Lattice, p: &PlaneWaveProbe) -> (Vec<C64>, Vec<C64>) {
    let mut psi = vec![C64::default(); lattice.n_cells()];
    for j in 0..lattice.ny {
        for i in 0..lattice.nx {
            psi[lattice.cell(i, j)] = p.stream(lattice.cell_center(i, j), 0.0);
        }
    }
    let mut e0 = vec![C64::default(); lattice.n_edges()];
    lattice.curl_t_add(&psi, 1.0, &mut e0);
    for b in lattice.boundary_edges() {
        let (x, axis) = lattice.edge_midpoint(b.edge);
        let e = p.field(x, 0.0);
        e0[b.edge] = match axis {
            Axis::X => e[0],
            Axis::Y => e[1],
        };
    }
    let w = C64::new(0.0, -p.omega());
    let e1 = e0.iter().map(|&v| v * w).collect();
    (e0, e1)
}

/// Arc samples of the lattice restricted to the measurement boundary.
pub fn measurement_arc(s: &Scenario, lattice: &Lattice) -> Vec<ArcSample> {
    lattice
        .arc_samples()
        .into_iter()
        .filter(|a| s.domain.in_gamma(a.s))
        .collect()
}

fn empty_trace(arc: &[ArcSample], h: f64, dt: f64, n_steps: usize) -> BoundaryTrace {
    BoundaryTrace::zeros(
        (0..=n_steps).map(|n| n as f64 * dt).collect(),
        arc.iter().map(|a| a.s).collect(),
        vec![h; arc.len()],
    )
}

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Keep a field snapshot every this many steps (and at the final step).
    pub snapshot_every: Option<usize>,
    pub record_energy: bool,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub trace: BoundaryTrace,
    pub snapshots: Vec<FieldState>,
    pub energy: Option<EnergyReport>,
}

/// Time-steps the perturbed system and records the boundary curl trace at every step.
pub fn run_perturbed(
    s: &Scenario,
    g: &GridSpec,
    p: &PlaneWaveProbe,
    opts: &ForwardOptions,
) -> Result<ForwardOutput> {
    let mut sim = Simulation::new(s, g, p)?;
    let arc = measurement_arc(s, sim.lattice());
    let mut trace = empty_trace(&arc, sim.lattice().h, sim.dt(), sim.n_steps());
    let mut snapshots = Vec::new();
    let mut energy = opts.record_energy.then(EnergyReport::default);
    loop {
        let n = sim.step_index();
        sim.sample_arc(&arc, trace.row_mut(n));
        if let Some(every) = opts.snapshot_every {
            if n % every.max(1) == 0 || sim.done() {
                snapshots.push(sim.state());
            }
        }
        if let Some(rep) = energy.as_mut() {
            let (k, m) = sim.energy();
            rep.times.push(sim.time());
            rep.kinetic.push(k);
            rep.magnetic.push(m);
            rep.total.push(k + m);
        }
        if sim.done() {
            break;
        }
        sim.advance()?;
    }
    Ok(ForwardOutput {
        trace,
        snapshots,
        energy,
    })
}

/// Homogeneous reference obtained by time stepping on the same lattice.
pub fn run_reference(s: &Scenario, g: &GridSpec, p: &PlaneWaveProbe) -> Result<BoundaryTrace> {
    Ok(run_perturbed(&s.background(), g, p, &ForwardOptions::default())?.trace)
}

/// Exact plane-wave curl on the trace sampling grid; no time stepping.
pub fn run_background(s: &Scenario, g: &GridSpec, p: &PlaneWaveProbe) -> Result<BoundaryTrace> {
    let lattice = Lattice::new(&s.domain.rect, g)?;
    let arc = measurement_arc(s, &lattice);
    let n_steps = g.steps(s.domain.t_final);
    let dt = s.domain.t_final / n_steps as f64;
    let mut trace = empty_trace(&arc, lattice.h, dt, n_steps);
    for n in 0..=n_steps {
        let t = n as f64 * dt;
        for (v, a) in trace.row_mut(n).iter_mut().zip(&arc) {
            *v = p.curl(a.point, t);
        }
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsymptoticsReport {
    /// `sup |curl E_a(y, t) - curl E(z, t)| / sup |curl E(z, t)|`.
    pub relative_error: f64,
    pub max_error: f64,
    pub reference_max: f64,
}

/// Compares the simulated curl just outside inclusion `j` (0-based) with the
/// leading-order boundary formula. For the scalar TE curl the field-gradient
/// correction has no normal projection, so the formula is `curl E(z_j, t)`.
pub fn check_inclusion_asymptotics(
    s: &Scenario,
    g: &GridSpec,
    p: &PlaneWaveProbe,
    j: usize,
    n_angles: usize,
) -> Result<AsymptoticsReport> {
    let inc = s
        .inclusions
        .get(j)
        .ok_or_else(|| Error::InvalidArgument(format!("no inclusion with index {j}")))?;
    let curve = inc.shape.curve()?;
    let required = 0.25 * inc.alpha * curve.min_radius();
    if g.h > required * (1.0 + 1e-9) {
        return Err(Error::GridTooCoarse { h: g.h, required });
    }
    let region = InclusionRegion::new(inc)?;
    let offset = 2.0 * g.h;
    let points: Vec<[f64; 2]> = (0..n_angles)
        .map(|m| {
            let t = 2.0 * std::f64::consts::PI * m as f64 / n_angles as f64;
            let y = curve.point(t);
            let d = curve.tangent(t);
            let norm = d[0].hypot(d[1]);
            let nu = [d[1] / norm, -d[0] / norm];
            [
                inc.center[0] + inc.alpha * y[0] + offset * nu[0],
                inc.center[1] + inc.alpha * y[1] + offset * nu[1],
            ]
        })
        .collect();
    debug_assert!(points.iter().all(|q| !region.contains(*q)));
    let mut sim = Simulation::new(s, g, p)?;
    let (mut max_err, mut ref_max) = (0.0f64, 0.0f64);
    loop {
        let t = sim.time();
        let exact = p.curl(inc.center, t);
        ref_max = ref_max.max(exact.norm());
        for q in &points {
            let v = sim.lattice().interpolate_cells(sim.curl(), *q);
            max_err = max_err.max((v - exact).norm());
        }
        if sim.done() {
            break;
        }
        sim.advance()?;
    }
    Ok(AsymptoticsReport {
        relative_error: max_err / ref_max,
        max_error: max_err,
        reference_max: ref_max,
    })
}

/// `sup_t` of the discrete L2 error of the homogeneous solution against the
/// exact plane wave, sampled at edge midpoints.
pub fn plane_wave_error(s: &Scenario, g: &GridSpec, p: &PlaneWaveProbe) -> Result<f64> {
    let mut sim = Simulation::new(&s.background(), g, p)?;
    let lattice = sim.lattice().clone();
    let mids: Vec<([f64; 2], Axis)> = (0..lattice.n_edges()).map(|k| lattice.edge_midpoint(k)).collect();
    let mut worst = 0.0f64;
    let mut err = vec![C64::default(); lattice.n_edges()];
    loop {
        let t = sim.time();
        for (k, (pt, axis)) in mids.iter().enumerate() {
            let f = p.field(*pt, t);
            let exact = match axis {
                Axis::X => f[0],
                Axis::Y => f[1],
            };
            err[k] = sim.field()[k] - exact;
        }
        worst = worst.max(lattice.edge_norm(&err));
        if sim.done() {
            break;
        }
        sim.advance()?;
    }
    Ok(worst)
}

/// Norms of the perturbed minus the homogeneous solution, each a supremum
/// over time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDifference {
    /// `sup_t ||E_a - E||_{L2}`.
    pub field: f64,
    /// `sup_t ||curl E_a - curl E||_{L2}`.
    pub curl: f64,
    /// `sup_t (||E_a - E||^2 + ||curl (E_a - E)||^2)^{1/2}`.
    pub combined: f64,
}

/// Steps the perturbed and homogeneous systems side by side on one lattice.
pub fn field_difference(s: &Scenario, g: &GridSpec, p: &PlaneWaveProbe) -> Result<FieldDifference> {
    let mut a = Simulation::new(s, g, p)?;
    let mut b = Simulation::new(&s.background(), g, p)?;
    let lattice = a.lattice().clone();
    let mut out = FieldDifference {
        field: 0.0,
        curl: 0.0,
        combined: 0.0,
    };
    let mut de = vec![C64::default(); lattice.n_edges()];
    let mut dc = vec![C64::default(); lattice.n_cells()];
    loop {
        for (d, (x, y)) in de.iter_mut().zip(a.field().iter().zip(b.field())) {
            *d = x - y;
        }
        for (d, (x, y)) in dc.iter_mut().zip(a.curl().iter().zip(b.curl())) {
            *d = x - y;
        }
        let (fe, fc) = (lattice.edge_norm(&de), lattice.cell_norm(&dc));
        out.field = out.field.max(fe);
        out.curl = out.curl.max(fc);
        out.combined = out.combined.max(fe.hypot(fc));
        if a.done() {
            break;
        }
        a.advance()?;
        b.advance()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DomainSpec, InclusionShape, InclusionSpec, Rect};

    fn scenario(inclusions: Vec<InclusionSpec>, t: f64) -> Scenario {
        Scenario {
            domain: DomainSpec::new(
                Rect {
                    x0: 0.0,
                    y0: 0.0,
                    x1: 1.0,
                    y1: 1.0,
                },
                t,
            ),
            inclusions,
            c0: 0.2,
        }
    }

    fn disk(mu: f64, alpha: f64) -> InclusionSpec {
        InclusionSpec {
            center: [0.5, 0.5],
            alpha,
            shape: InclusionShape::disk(1.0),
            mu,
        }
    }

    #[test]
    fn homogeneous_trace_matches_background() {
        let s = scenario(vec![], 0.5);
        let g = GridSpec::with_courant(1.0 / 64.0, 0.8, 1.0, 1.0);
        let p = PlaneWaveProbe::new([3.0, 2.0], &s.domain).unwrap();
        let a = run_perturbed(&s, &g, &p, &ForwardOptions::default()).unwrap().trace;
        let b = run_background(&s, &g, &p).unwrap();
        let d = trace_difference(&a, &b).unwrap();
        assert!(d.max_abs() < 0.05 * b.max_abs(), "{}", d.max_abs());
    }

    #[test]
    fn unit_contrast_gives_zero_difference() {
        let s = scenario(vec![disk(1.0, 0.1)], 0.4);
        let g = GridSpec::with_courant(1.0 / 40.0, 0.8, 1.0, 1.0);
        let p = PlaneWaveProbe::new([2.0, 1.0], &s.domain).unwrap();
        let a = run_perturbed(&s, &g, &p, &ForwardOptions::default()).unwrap().trace;
        let b = run_reference(&s, &g, &p).unwrap();
        assert_eq!(trace_difference(&a, &b).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn background_trace_has_constant_modulus() {
        let s = scenario(vec![], 0.3);
        let g = GridSpec::with_courant(0.05, 0.8, 1.0, 1.0);
        let p = PlaneWaveProbe::new([1.0, -4.0], &s.domain).unwrap();
        let b = run_background(&s, &g, &p).unwrap();
        let k = p.abs_eta();
        assert!(b.values.iter().all(|v| (v.norm() - k).abs() < 1e-12));
        assert_eq!(b.at(0, 3), p.curl(b_point(&s, &g, 3), 0.0));
    }

    fn b_point(s: &Scenario, g: &GridSpec, k: usize) -> [f64; 2] {
        let l = Lattice::new(&s.domain.rect, g).unwrap();
        measurement_arc(s, &l)[k].point
    }

    #[test]
    fn difference_first_row_is_zero_and_antisymmetric() {
        let s = scenario(vec![disk(2.0, 0.1)], 0.3);
        let g = GridSpec::with_courant(1.0 / 40.0, 0.8, 1.0, 0.5);
        let p = PlaneWaveProbe::new([2.0, 1.0], &s.domain).unwrap();
        let a = run_perturbed(&s, &g, &p, &ForwardOptions::default()).unwrap().trace;
        let b = run_background(&s, &g, &p).unwrap();
        let d1 = trace_difference(&a, &b).unwrap();
        let d2 = trace_difference(&b, &a).unwrap();
        assert!(d1.row(0).iter().all(|v| *v == C64::default()));
        assert!(d1.values.iter().zip(&d2.values).all(|(x, y)| (x + y).norm() == 0.0));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let s = scenario(vec![], 0.3);
        let p = PlaneWaveProbe::new([2.0, 1.0], &s.domain).unwrap();
        let a = run_background(&s, &GridSpec::with_courant(0.05, 0.8, 1.0, 1.0), &p).unwrap();
        let b = run_background(&s, &GridSpec::with_courant(0.1, 0.8, 1.0, 1.0), &p).unwrap();
        assert!(matches!(trace_difference(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn cfl_violation_is_refused() {
        let s = scenario(vec![], 0.3);
        let p = PlaneWaveProbe::new([2.0, 1.0], &s.domain).unwrap();
        let g = GridSpec { h: 0.05, dt: 0.05 };
        assert!(matches!(
            run_perturbed(&s, &g, &p, &ForwardOptions::default()),
            Err(Error::Cfl { .. })
        ));
    }

    #[test]
    fn divergence_stays_at_roundoff() {
        let s = scenario(vec![disk(3.0, 0.1)], 1.0);
        let g = GridSpec::with_courant(1.0 / 40.0, 0.9, 1.0, 1.0 / 3.0);
        let p = PlaneWaveProbe::new([4.0, -3.0], &s.domain).unwrap();
        let mut sim = Simulation::new(&s, &g, &p).unwrap();
        while !sim.done() {
            sim.advance().unwrap();
        }
        let norm = sim.lattice().edge_norm(sim.field());
        let div = sim.lattice().divergence(sim.field());
        let max = div.iter().map(|d| d.norm()).fold(0.0, f64::max);
        assert!(max * sim.lattice().h < 1e-6 * norm, "{max}");
    }

    #[test]
    fn undriven_energy_is_conserved() {
        let s = scenario(vec![disk(2.0, 0.1)], 1.0);
        let g = GridSpec::with_courant(1.0 / 32.0, 0.9, 1.0, 1.0);
        let lattice = Lattice::new(&s.domain.rect, &g).unwrap();
        let medium = build_medium(&s, &g).unwrap();
        let p = PlaneWaveProbe::new([3.0, 1.0], &s.domain).unwrap();
        let (mut e0, mut e1) = probe_initial_data(&lattice, &p);
        for b in lattice.boundary_edges() {
            e0[b.edge] = C64::default();
            e1[b.edge] = C64::default();
        }
        let n = g.steps(1.0);
        let mut sim = Simulation::from_parts(
            lattice,
            medium.inv_mu,
            1.0,
            1.0 / n as f64,
            n,
            InitialData::Fields { e0, e1 },
            BoundaryDrive::Zero,
        )
        .unwrap();
        sim.advance().unwrap();
        let (k, m) = sim.energy();
        let start = k + m;
        while !sim.done() {
            sim.advance().unwrap();
            let (k, m) = sim.energy();
            assert!(((k + m) - start).abs() < 1e-10 * start);
        }
    }
}
