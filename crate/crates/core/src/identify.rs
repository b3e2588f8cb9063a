//! Identification: the averaging functional `aleph(eta)` paired against the
//! boundary control, its sampling over a centered lattice of wave vectors,
//! inversion to a spatial image, peak localization and tensor fitting.
//!
//! For small inclusions the spectrum behaves like
//! `alpha^2 sum_j e^{2i eta.z_j} eta.Q_j eta`, so the inverse transform in
//! the rescaled variable `x = -y/2` concentrates at the centers `z_j`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{cutoff_beta, resample_control, synthesize_control, ControlProblem};
use crate::error::{Error, Result};
use crate::forward::{
    run_background, run_perturbed, run_reference, time_weights, trace_difference, BoundaryTrace,
    ForwardOptions,
};
use crate::harness::noise::{add_noise_stream, NoiseModel};
use crate::model::{validate_scenario, GridSpec, PlaneWaveProbe, Rect, Scenario, C64};
use crate::weights::{solve_theta, weight_source, WeightFunction};

/// Orientation constant relating the measured functional to the model
/// `alpha^2 sum_j e^{2i eta.z_j} eta.Q_j eta` with `Q_j = (mu0 - mu_j) M_j`.
/// Fixed by the single-disk end-to-end test.
pub const PIPELINE_SIGN: f64 = -1.0;

/// Centered uniform lattice of `n x n` wave vectors on `[-eta_max, eta_max]^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralGrid {
    pub eta_max: f64,
    pub n: usize,
}

impl SpectralGrid {
    pub fn new(eta_max: f64, n: usize) -> Result<Self> {
        let g = Self { eta_max, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_max > 0.0 && self.eta_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta_max must be positive, got {}",
                self.eta_max
            )));
        }
        if self.n < 3 || self.n.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "points per axis must be odd and at least 3, got {}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        2.0 * self.eta_max / (self.n - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Signed lattice coordinate of an axis index.
    pub fn offset(&self, i: usize) -> i64 {
        i as i64 - (self.n / 2) as i64
    }

    /// Wave vector at flat index `iy * n + ix`.
    pub fn eta(&self, idx: usize) -> [f64; 2] {
        let d = self.step();
        [
            self.offset(idx % self.n) as f64 * d,
            self.offset(idx / self.n) as f64 * d,
        ]
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.eta(i)).collect()
    }

    /// Flat index of `-eta`.
    pub fn mirror(&self, idx: usize) -> usize {
        self.len() - 1 - idx
    }

    pub fn origin(&self) -> usize {
        self.len() / 2
    }

    /// Pixel spacing of the inverse transform in the rescaled variable.
    pub fn pixel_spacing(&self) -> f64 {
        PI / (self.n as f64 * self.step())
    }

    /// Nominal resolution `pi / eta_max`.
    pub fn resolution(&self) -> f64 {
        PI / self.eta_max
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Homogeneous run on the same lattice; discretization error cancels.
    #[default]
    Simulated,
    /// Exact plane wave.
    Analytic,
}

/// Settings for the per-probe control and measurement pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlParams {
    /// Control lattice; the forward lattice when absent.
    pub grid: Option<GridSpec>,
    pub tol: f64,
    pub max_iters: usize,
    /// Cutoff margin around the inclusions and the boundary.
    pub margin: f64,
    pub reference: ReferenceMode,
    /// Obtain `aleph(-eta)` as the conjugate of `aleph(eta)` instead of
    /// simulating it; exact only up to solver tolerance.
    pub use_symmetry: bool,
    /// Perturbation of the measured difference traces; configured with the
    /// experiment rather than here.
    #[serde(skip)]
    pub noise: NoiseModel,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            grid: None,
            tol: 1e-3,
            max_iters: 200,
            margin: 0.1,
            reference: ReferenceMode::Simulated,
            use_symmetry: false,
            noise: NoiseModel::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum SampleStatus {
    Ok,
    /// `eta = 0`; assigned zero.
    Origin,
    /// Conjugate of the sample at `-eta`.
    Mirrored,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub control_iterations: usize,
    pub control_ratio: f64,
    pub control_converged: bool,
    pub forward_steps: usize,
    pub reference: ReferenceMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSample {
    pub eta: [f64; 2],
    /// Functional from the control (g-form).
    pub value: C64,
    /// Same functional from the weight function (theta-form).
    pub theta_value: C64,
    pub status: SampleStatus,
    pub provenance: Option<SampleProvenance>,
}

impl SpectralSample {
    pub fn is_usable(&self) -> bool {
        matches!(self.status, SampleStatus::Ok | SampleStatus::Mirrored)
    }
}

fn pair(dm: &BoundaryTrace, f: &BoundaryTrace) -> C64 {
    let tw = time_weights(&dm.times);
    let m = dm.n_arc();
    let mut acc = C64::default();
    for (n, w) in tw.iter().enumerate() {
        let row: C64 = (0..m)
            .map(|k| dm.weights[k] * f.values[n * m + k] * dm.values[n * m + k])
            .sum();
        acc += row * *w;
    }
    acc
}

/// `int int (theta - theta'') dm` by the trapezoid rule in time and the trace
/// weights on the boundary.
pub fn averaging_functional(dm: &BoundaryTrace, w: &WeightFunction) -> Result<C64> {
    dm.same_sampling(&w.theta)?;
    let f = BoundaryTrace {
        values: w
            .theta
            .values
            .iter()
            .zip(&w.theta_dd.values)
            .map(|(a, b)| a - b)
            .collect(),
        ..w.theta.clone()
    };
    Ok(pair(dm, &f))
}

/// `-int int (g' - i w g) dm`, with `g` sampled like `dm` and `abs_eta` the
/// temporal frequency `c |eta|`.
pub fn averaging_functional_g(dm: &BoundaryTrace, g: &BoundaryTrace, abs_eta: f64) -> Result<C64> {
    dm.same_sampling(g)?;
    Ok(-pair(dm, &weight_source(g, abs_eta)))
}

fn resample_like(src: &BoundaryTrace, like: &BoundaryTrace, perimeter: f64) -> BoundaryTrace {
    resample_control(src, &like.times, &like.arc, &like.weights, perimeter)
}

/// Full pipeline for one wave vector: measurement difference, control,
/// and both forms of the functional.
pub fn sample_at(s: &Scenario, g: &GridSpec, eta: [f64; 2], params: &ControlParams) -> Result<SpectralSample> {
    let probe = PlaneWaveProbe::new(eta, &s.domain)?;
    let measured = run_perturbed(s, g, &probe, &ForwardOptions::default())?.trace;
    let reference = match params.reference {
        ReferenceMode::Simulated => run_reference(s, g, &probe)?,
        ReferenceMode::Analytic => run_background(s, g, &probe)?,
    };
    let mut dm = trace_difference(&measured, &reference)?;
    if params.noise.is_active() {
        let stream = eta[0].to_bits() ^ eta[1].to_bits().rotate_left(32);
        dm = add_noise_stream(&dm, &params.noise, stream);
    }
    let beta = cutoff_beta(&s.domain, &s.inclusions, params.margin)?;
    let cp = ControlProblem::new(s.domain.clone(), probe, beta);
    let cgrid = params.grid.unwrap_or(*g);
    let ctrl = synthesize_control(&cp, &cgrid, params.tol, params.max_iters)?;
    if !ctrl.converged {
        log::warn!(
            "control for eta = {eta:?} stopped at ratio {:.2e} after {} iterations",
            ctrl.ratio,
            ctrl.iterations
        );
    }
    let omega = probe.omega();
    let perimeter = s.domain.rect.perimeter();
    // Both forms are evaluated on the control's time grid and then carried
    // to the measurement sampling.
    let r = resample_like(&weight_source(&ctrl.g, omega), &dm, perimeter);
    let value = -pair(&dm, &r);
    let w = solve_theta(&ctrl.g, omega);
    let mut diff = w.theta.clone();
    for (d, b) in diff.values.iter_mut().zip(&w.theta_dd.values) {
        *d -= b;
    }
    let theta_value = pair(&dm, &resample_like(&diff, &dm, perimeter));
    Ok(SpectralSample {
        eta,
        value,
        theta_value,
        status: SampleStatus::Ok,
        provenance: Some(SampleProvenance {
            control_iterations: ctrl.iterations,
            control_ratio: ctrl.ratio,
            control_converged: ctrl.converged,
            forward_steps: dm.n_times() - 1,
            reference: params.reference,
        }),
    })
}

/// Samples the functional over the lattice in lattice order; the work is
/// spread over the current rayon pool.
pub fn sample_spectrum(
    s: &Scenario,
    g: &GridSpec,
    grid: &SpectralGrid,
    params: &ControlParams,
) -> Result<Vec<SpectralSample>> {
    validate_scenario(s).into_result()?;
    grid.validate()?;
    params.noise.validate()?;
    g.check_cfl(s)?;
    let origin = grid.origin();
    let computed: Vec<usize> = (0..grid.len())
        .filter(|&i| i != origin && !(params.use_symmetry && i > origin))
        .collect();
    let results: Vec<(usize, SpectralSample)> = computed
        .par_iter()
        .map(|&i| {
            let eta = grid.eta(i);
            let sample = sample_at(s, g, eta, params).unwrap_or_else(|e| {
                log::error!("sample at eta = {eta:?} failed: {e}");
                SpectralSample {
                    eta,
                    value: C64::default(),
                    theta_value: C64::default(),
                    status: SampleStatus::Failed(e.to_string()),
                    provenance: None,
                }
            });
            (i, sample)
        })
        .collect();
    let mut out: Vec<Option<SpectralSample>> = vec![None; grid.len()];
    for (i, sample) in results {
        out[i] = Some(sample);
    }
    out[origin] = Some(SpectralSample {
        eta: [0.0, 0.0],
        value: C64::default(),
        theta_value: C64::default(),
        status: SampleStatus::Origin,
        provenance: None,
    });
    if params.use_symmetry {
        for i in origin + 1..grid.len() {
            let src = out[grid.mirror(i)].clone().expect("mirror computed");
            out[i] = Some(SpectralSample {
                eta: grid.eta(i),
                value: src.value.conj(),
                theta_value: src.theta_value.conj(),
                status: match src.status {
                    SampleStatus::Ok => SampleStatus::Mirrored,
                    other => other,
                },
                provenance: src.provenance,
            });
        }
    }
    Ok(out.into_iter().map(|s| s.expect("every lattice point filled")).collect())
}

/// Image on an `n x n` pixel grid in the rescaled variable, centered on the
/// domain center, with the natural spacing of the lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialImage {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major, `values[iy * nx + ix]`.
    pub values: Vec<C64>,
    pub pixel: f64,
    pub domain: Rect,
}

impl SpatialImage {
    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn ny(&self) -> usize {
        self.ys.len()
    }

    pub fn at(&self, ix: usize, iy: usize) -> C64 {
        self.values[iy * self.nx() + ix]
    }

    pub fn inside(&self, ix: usize, iy: usize) -> bool {
        let (x, y) = (self.xs[ix], self.ys[iy]);
        let r = &self.domain;
        x >= r.x0 && x <= r.x1 && y >= r.y0 && y <= r.y1
    }

    pub fn total_mass(&self) -> C64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn check_lattice(samples: &[SpectralSample], grid: &SpectralGrid) -> Result<()> {
    grid.validate()?;
    if samples.len() != grid.len() {
        return Err(Error::IncompleteLattice(format!(
            "{} samples for a lattice of {}",
            samples.len(),
            grid.len()
        )));
    }
    let tol = 1e-9 * grid.eta_max;
    for (i, s) in samples.iter().enumerate() {
        let e = grid.eta(i);
        if (s.eta[0] - e[0]).abs() > tol || (s.eta[1] - e[1]).abs() > tol {
            return Err(Error::IncompleteLattice(format!(
                "sample {i} is at {:?}, expected {e:?}",
                s.eta
            )));
        }
        if let SampleStatus::Failed(why) = &s.status {
            return Err(Error::IncompleteLattice(format!("sample at {:?} failed: {why}", s.eta)));
        }
    }
    Ok(())
}

/// `I(x) = n^{-2} sum_eta aleph(eta) e^{-2i eta.x}`; a term `e^{2i eta.z}`
/// peaks at `x = z`.
pub fn invert_spectrum(samples: &[SpectralSample], grid: &SpectralGrid, domain: &Rect) -> Result<SpatialImage> {
    check_lattice(samples, grid)?;
    let n = grid.n;
    let pixel = grid.pixel_spacing();
    let [cx, cy] = domain.center();
    let axis = |c: f64| -> Vec<f64> { (0..n).map(|i| c + grid.offset(i) as f64 * pixel).collect() };
    let (xs, ys) = (axis(cx), axis(cy));
    if n as f64 * pixel < domain.width().max(domain.height()) {
        log::warn!(
            "image period {:.3} is smaller than the domain; peaks may alias",
            n as f64 * pixel
        );
    }
    let etas = grid.points();
    let scale = 1.0 / (n * n) as f64;
    let values = (0..n * n)
        .into_par_iter()
        .map(|p| {
            let (x, y) = (xs[p % n], ys[p / n]);
            samples
                .iter()
                .zip(&etas)
                .map(|(s, e)| s.value * C64::from_polar(1.0, -2.0 * (e[0] * x + e[1] * y)))
                .sum::<C64>()
                * scale
        })
        .collect();
    Ok(SpatialImage {
        xs,
        ys,
        values,
        pixel,
        domain: *domain,
    })
}

/// Forward transform `aleph(eta) = sum_x I(x) e^{2i eta.x}`, inverse of
/// [`invert_spectrum`].
pub fn image_to_spectrum(img: &SpatialImage, grid: &SpectralGrid) -> Vec<C64> {
    let n = img.nx();
    grid.points()
        .iter()
        .map(|e| {
            (0..img.values.len())
                .map(|p| {
                    let (x, y) = (img.xs[p % n], img.ys[p / n]);
                    img.values[p] * C64::from_polar(1.0, 2.0 * (e[0] * x + e[1] * y))
                })
                .sum()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center: [f64; 2],
    pub magnitude: f64,
}

/// Vertex offset of the parabola through three equally spaced samples, in
/// units of the spacing, clamped to half a pixel.
fn parabola_offset(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if den >= 0.0 {
        0.0
    } else {
        (0.5 * (l - r) / den).clamp(-0.5, 0.5)
    }
}

/// Local maxima of `|I|` inside the domain above `rel_threshold` times the
/// largest in-domain magnitude, refined to sub-pixel accuracy and thinned so
/// that no two are closer than `min_separation` (strongest first).
pub fn detect_peaks(img: &SpatialImage, rel_threshold: f64, min_separation: f64) -> Vec<Peak> {
    let (nx, ny) = (img.nx(), img.ny());
    let mag = |ix: usize, iy: usize| img.at(ix, iy).norm();
    let mut top = 0.0f64;
    for iy in 0..ny {
        for ix in 0..nx {
            if img.inside(ix, iy) {
                top = top.max(mag(ix, iy));
            }
        }
    }
    if top == 0.0 {
        return Vec::new();
    }
    let mut cands = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            if !img.inside(ix, iy) {
                continue;
            }
            let m = mag(ix, iy);
            if m < rel_threshold * top || m == 0.0 {
                continue;
            }
            let mut is_max = true;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                    if (dx, dy) == (0, 0) || jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                        continue;
                    }
                    if mag(jx as usize, jy as usize) > m {
                        is_max = false;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let ox = if ix > 0 && ix + 1 < nx {
                parabola_offset(mag(ix - 1, iy), m, mag(ix + 1, iy))
            } else {
                0.0
            };
            let oy = if iy > 0 && iy + 1 < ny {
                parabola_offset(mag(ix, iy - 1), m, mag(ix, iy + 1))
            } else {
                0.0
            };
            cands.push(Peak {
                center: [img.xs[ix] + ox * img.pixel, img.ys[iy] + oy * img.pixel],
                magnitude: m,
            });
        }
    }
    cands.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude));
    let mut kept: Vec<Peak> = Vec::new();
    for c in cands {
        let far = kept.iter().all(|k| {
            let d = [c.center[0] - k.center[0], c.center[1] - k.center[1]];
            d[0].hypot(d[1]) >= min_separation
        });
        if far {
            kept.push(c);
        }
    }
    kept
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub centers: Vec<[f64; 2]>,
    /// Symmetric `(mu0 - mu_j) M_j` per center.
    pub tensors: Vec<[[f64; 2]; 2]>,
    /// Sign of the trace of each tensor, i.e. of `mu0 - mu_j`.
    pub contrast_signs: Vec<f64>,
    /// Least-squares residual relative to the data norm.
    pub residual: f64,
    pub samples_used: usize,
    pub condition: f64,
    pub alpha: f64,
    pub mu0: f64,
}

/// `eta.Q eta` basis for the symmetric unknowns `(q11, q12, q22)`.
fn quadratic_basis(e: [f64; 2]) -> [f64; 3] {
    [e[0] * e[0], 2.0 * e[0] * e[1], e[1] * e[1]]
}

/// Model spectrum `sign alpha^2 sum_j e^{2i eta.z_j} eta.Q_j eta` on a lattice.
pub fn model_spectrum(grid: &SpectralGrid, centers: &[[f64; 2]], tensors: &[[[f64; 2]; 2]], alpha: f64) -> Vec<SpectralSample> {
    let origin = grid.origin();
    (0..grid.len())
        .map(|i| {
            let e = grid.eta(i);
            let value: C64 = centers
                .iter()
                .zip(tensors)
                .map(|(z, q)| {
                    let quad = e[0] * e[0] * q[0][0] + 2.0 * e[0] * e[1] * q[0][1] + e[1] * e[1] * q[1][1];
                    C64::from_polar(quad, 2.0 * (e[0] * z[0] + e[1] * z[1]))
                })
                .sum::<C64>()
                * (PIPELINE_SIGN * alpha * alpha);
            SpectralSample {
                eta: e,
                value,
                theta_value: value,
                status: if i == origin { SampleStatus::Origin } else { SampleStatus::Ok },
                provenance: None,
            }
        })
        .collect()
}

/// Least-squares fit of symmetric `Q_j` at fixed centers over every usable
/// sample, real and imaginary parts stacked.
pub fn estimate_tensors(samples: &[SpectralSample], centers: &[[f64; 2]], alpha: f64, mu0: f64) -> Result<ReconstructionResult> {
    if centers.is_empty() {
        return Err(Error::InvalidArgument("at least one center is needed".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let used: Vec<&SpectralSample> = samples
        .iter()
        .filter(|s| s.is_usable() && (s.eta[0] != 0.0 || s.eta[1] != 0.0))
        .collect();
    let unknowns = 3 * centers.len();
    let rows = 2 * used.len();
    let required = unknowns.div_ceil(2);
    if rows < unknowns {
        return Err(Error::RankDeficient {
            rows,
            unknowns,
            required,
        });
    }
    let scale = PIPELINE_SIGN * alpha * alpha;
    let mut a = DMatrix::<f64>::zeros(rows, unknowns);
    let mut b = DVector::<f64>::zeros(rows);
    for (r, s) in used.iter().enumerate() {
        let basis = quadratic_basis(s.eta);
        for (j, z) in centers.iter().enumerate() {
            let ph = C64::from_polar(scale, 2.0 * (s.eta[0] * z[0] + s.eta[1] * z[1]));
            for (c, v) in basis.iter().enumerate() {
                a[(2 * r, 3 * j + c)] = ph.re * v;
                a[(2 * r + 1, 3 * j + c)] = ph.im * v;
            }
        }
        b[2 * r] = s.value.re;
        b[2 * r + 1] = s.value.im;
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(Error::RankDeficient {
            rows,
            unknowns,
            required,
        });
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::IllConditioned(e.to_string()))?;
    let bn = b.norm();
    let residual = if bn == 0.0 { 0.0 } else { (&a * &x - &b).norm() / bn };
    let tensors: Vec<[[f64; 2]; 2]> = (0..centers.len())
        .map(|j| [[x[3 * j], x[3 * j + 1]], [x[3 * j + 1], x[3 * j + 2]]])
        .collect();
    let contrast_signs = tensors.iter().map(|q| (q[0][0] + q[1][1]).signum()).collect();
    Ok(ReconstructionResult {
        centers: centers.to_vec(),
        tensors,
        contrast_signs,
        residual,
        samples_used: used.len(),
        condition: smax / smin,
        alpha,
        mu0,
    })
}

/// Inversion, localization and tensor fit in one call.
pub fn reconstruct(
    samples: &[SpectralSample],
    grid: &SpectralGrid,
    domain: &Rect,
    alpha: f64,
    mu0: f64,
    rel_threshold: f64,
    min_separation: f64,
) -> Result<(SpatialImage, ReconstructionResult)> {
    let img = invert_spectrum(samples, grid, domain)?;
    let peaks = detect_peaks(&img, rel_threshold, min_separation);
    if peaks.is_empty() {
        return Err(Error::InvalidArgument("no peak above the threshold".into()));
    }
    let centers: Vec<[f64; 2]> = peaks.iter().map(|p| p.center).collect();
    let result = estimate_tensors(samples, &centers, alpha, mu0)?;
    Ok((img, result))
}
