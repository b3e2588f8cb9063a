//! Domain, medium, inclusion and probe definitions.
//!
//! Everything here is an immutable value type. A [`Scenario`] is the single
//! source of truth for an experiment; the solvers only read it.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.width() + self.height())
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    /// Distance from an interior point to the boundary (negative outside).
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.x0)
            .min(self.x1 - p[0])
            .min(p[1] - self.y0)
            .min(self.y1 - p[1])
    }

    /// Point on the boundary at counterclockwise arclength `s`, measured from
    /// the corner `(x0, y0)`, together with the outward normal.
    pub fn boundary_point(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let (w, h) = (self.width(), self.height());
        let s = s.rem_euclid(self.perimeter());
        if s < w {
            ([self.x0 + s, self.y0], [0.0, -1.0])
        } else if s < w + h {
            ([self.x1, self.y0 + (s - w)], [1.0, 0.0])
        } else if s < 2.0 * w + h {
            ([self.x1 - (s - w - h), self.y1], [0.0, 1.0])
        } else {
            ([self.x0, self.y1 - (s - 2.0 * w - h)], [-1.0, 0.0])
        }
    }
}

/// Half-open arclength interval `[start, end)` on the domain boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcInterval {
    pub start: f64,
    pub end: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub rect: Rect,
    /// Measurement/control part of the boundary. `None` is the full boundary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<ArcInterval>>,
    /// Final time.
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default = "one")]
    pub eps0: f64,
    #[serde(default = "one")]
    pub mu0: f64,
}

impl DomainSpec {
    pub fn new(rect: Rect, t_final: f64) -> Self {
        Self {
            rect,
            gamma: None,
            t_final,
            eps0: 1.0,
            mu0: 1.0,
        }
    }

    /// Background phase speed `1 / sqrt(eps0 mu0)`.
    pub fn speed(&self) -> f64 {
        1.0 / (self.eps0 * self.mu0).sqrt()
    }

    pub fn full_boundary(&self) -> bool {
        match &self.gamma {
            None => true,
            Some(arcs) => {
                let covered: f64 = arcs.iter().map(|a| a.end - a.start).sum();
                (covered - self.rect.perimeter()).abs() <= 1e-12 * self.rect.perimeter()
            }
        }
    }

    pub fn in_gamma(&self, s: f64) -> bool {
        match &self.gamma {
            None => true,
            Some(arcs) => arcs.iter().any(|a| s >= a.start && s < a.end),
        }
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let r = &self.rect;
        if !(r.width() > 0.0 && r.height() > 0.0) {
            out.push(Violation::Domain("rectangle side lengths must be positive".into()));
        }
        if !(self.t_final > 0.0) {
            out.push(Violation::Domain("final time T must be positive".into()));
        }
        if !(self.eps0 > 0.0 && self.mu0 > 0.0) {
            out.push(Violation::Domain("eps0 and mu0 must be positive".into()));
        }
        if let Some(arcs) = &self.gamma {
            let p = r.perimeter();
            let mut sorted = arcs.clone();
            sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
            for a in &sorted {
                if !(a.start >= 0.0 && a.end <= p && a.start < a.end) {
                    out.push(Violation::Domain(format!(
                        "gamma arc [{}, {}) must lie in [0, {p})",
                        a.start, a.end
                    )));
                }
            }
            for w in sorted.windows(2) {
                if w[1].start < w[0].end {
                    out.push(Violation::Domain("gamma arcs overlap".into()));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeKind {
    Disk { radius: f64 },
    Ellipse { a: f64, b: f64 },
    /// Closed curve given by the trigonometric interpolant of the vertices.
    SmoothPolygon { vertices: Vec<[f64; 2]> },
}

/// Reference shape `B` of an inclusion, in dimensionless units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionShape {
    #[serde(flatten)]
    pub kind: ShapeKind,
    #[serde(default)]
    pub orientation: f64,
}

impl InclusionShape {
    pub fn disk(radius: f64) -> Self {
        Self {
            kind: ShapeKind::Disk { radius },
            orientation: 0.0,
        }
    }

    pub fn ellipse(a: f64, b: f64) -> Self {
        Self {
            kind: ShapeKind::Ellipse { a, b },
            orientation: 0.0,
        }
    }

    pub fn smooth_polygon(vertices: Vec<[f64; 2]>) -> Self {
        Self {
            kind: ShapeKind::SmoothPolygon { vertices },
            orientation: 0.0,
        }
    }

    /// Star `r(t) = radius (1 + amp cos(lobes t))` sampled into a smooth polygon.
    pub fn star(radius: f64, amp: f64, lobes: usize) -> Self {
        let m = 8 * lobes.max(1) + 1;
        let vertices = (0..m)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / m as f64;
                let r = radius * (1.0 + amp * (lobes as f64 * t).cos());
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        Self::smooth_polygon(vertices)
    }

    pub fn rotated(&self, angle: f64) -> Self {
        Self {
            kind: self.kind.clone(),
            orientation: self.orientation + angle,
        }
    }

    pub fn scaled(&self, rho: f64) -> Self {
        let kind = match &self.kind {
            ShapeKind::Disk { radius } => ShapeKind::Disk { radius: radius * rho },
            ShapeKind::Ellipse { a, b } => ShapeKind::Ellipse {
                a: a * rho,
                b: b * rho,
            },
            ShapeKind::SmoothPolygon { vertices } => ShapeKind::SmoothPolygon {
                vertices: vertices.iter().map(|v| [v[0] * rho, v[1] * rho]).collect(),
            },
        };
        Self {
            kind,
            orientation: self.orientation,
        }
    }

    pub fn curve(&self) -> Result<Curve> {
        Curve::new(self)
    }
}

/// Smooth 2π-periodic counterclockwise parametrization of a reference shape.
#[derive(Clone, Debug)]
pub struct Curve {
    repr: CurveRepr,
    rot: [f64; 2],
}

#[derive(Clone, Debug)]
enum CurveRepr {
    Ellipse { a: f64, b: f64 },
    Fourier { coeffs: Vec<(i64, C64)> },
}

impl Curve {
    fn new(shape: &InclusionShape) -> Result<Self> {
        let repr = match &shape.kind {
            ShapeKind::Disk { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::DegenerateShape(format!("disk radius {radius}")));
                }
                CurveRepr::Ellipse {
                    a: *radius,
                    b: *radius,
                }
            }
            ShapeKind::Ellipse { a, b } => {
                if !(*a > 0.0 && *b > 0.0) {
                    return Err(Error::DegenerateShape(format!("ellipse axes {a}, {b}")));
                }
                CurveRepr::Ellipse { a: *a, b: *b }
            }
            ShapeKind::SmoothPolygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::DegenerateShape("need at least 3 vertices".into()));
                }
                let signed: f64 = (0..vertices.len())
                    .map(|j| {
                        let p = vertices[j];
                        let q = vertices[(j + 1) % vertices.len()];
                        p[0] * q[1] - q[0] * p[1]
                    })
                    .sum::<f64>()
                    * 0.5;
                let mut v: Vec<C64> = vertices.iter().map(|p| C64::new(p[0], p[1])).collect();
                if signed < 0.0 {
                    v.reverse();
                }
                CurveRepr::Fourier {
                    coeffs: trig_interpolate(&v),
                }
            }
        };
        let curve = Self {
            repr,
            rot: [shape.orientation.cos(), shape.orientation.sin()],
        };
        let area = curve.area();
        if !(area > 1e-14) {
            return Err(Error::DegenerateShape(format!("area {area}")));
        }
        if !curve.winds_around_origin() {
            return Err(Error::DegenerateShape(
                "reference shape must contain the origin".into(),
            ));
        }
        Ok(curve)
    }

    fn rotate(&self, p: C64) -> [f64; 2] {
        let [c, s] = self.rot;
        [c * p.re - s * p.im, s * p.re + c * p.im]
    }

    fn raw(&self, t: f64, order: u32) -> C64 {
        match &self.repr {
            CurveRepr::Ellipse { a, b } => {
                let (s, c) = t.sin_cos();
                match order % 4 {
                    0 => C64::new(a * c, b * s),
                    1 => C64::new(-a * s, b * c),
                    2 => C64::new(-a * c, -b * s),
                    _ => C64::new(a * s, -b * c),
                }
            }
            CurveRepr::Fourier { coeffs } => coeffs
                .iter()
                .map(|&(k, c)| c * C64::new(0.0, k as f64).powu(order) * C64::from_polar(1.0, k as f64 * t))
                .sum(),
        }
    }

    pub fn point(&self, t: f64) -> [f64; 2] {
        self.rotate(self.raw(t, 0))
    }

    pub fn tangent(&self, t: f64) -> [f64; 2] {
        self.rotate(self.raw(t, 1))
    }

    pub fn second_derivative(&self, t: f64) -> [f64; 2] {
        self.rotate(self.raw(t, 2))
    }

    pub fn area(&self) -> f64 {
        let n = 512;
        (0..n)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / n as f64;
                let p = self.raw(t, 0);
                let d = self.raw(t, 1);
                0.5 * (p.re * d.im - p.im * d.re)
            })
            .sum::<f64>()
            * 2.0
            * PI
            / n as f64
    }

    fn winds_around_origin(&self) -> bool {
        let n = 1024;
        let mut total = 0.0;
        let mut prev = self.raw(0.0, 0).arg();
        for j in 1..=n {
            let a = self.raw(2.0 * PI * j as f64 / n as f64, 0).arg();
            let mut d = a - prev;
            if d > PI {
                d -= 2.0 * PI;
            } else if d < -PI {
                d += 2.0 * PI;
            }
            total += d;
            prev = a;
        }
        (total - 2.0 * PI).abs() < 1e-6
    }

    /// Dense polygonal approximation, used for point-in-shape tests.
    pub fn polyline(&self, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|j| self.point(2.0 * PI * j as f64 / n as f64))
            .collect()
    }

    pub fn max_radius(&self) -> f64 {
        self.polyline(1024)
            .iter()
            .map(|p| p[0].hypot(p[1]))
            .fold(0.0, f64::max)
    }

    pub fn min_radius(&self) -> f64 {
        self.polyline(1024)
            .iter()
            .map(|p| p[0].hypot(p[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Trigonometric interpolant through equally spaced complex samples.
fn trig_interpolate(v: &[C64]) -> Vec<(i64, C64)> {
    let m = v.len();
    let half = (m / 2) as i64;
    let mut out = Vec::with_capacity(m + 1);
    for k in -half..=half {
        let mut c = C64::new(0.0, 0.0);
        for (j, &vj) in v.iter().enumerate() {
            c += vj * C64::from_polar(1.0, -2.0 * PI * (k * j as i64) as f64 / m as f64);
        }
        c /= m as f64;
        if m.is_multiple_of(2) && k.abs() == half {
            // Nyquist term is split evenly between +half and -half.
            c *= 0.5;
        }
        out.push((k, c));
    }
    out
}

pub fn point_in_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1])
            && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0]
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionSpec {
    pub center: [f64; 2],
    /// Scale factor; shared across inclusions in a scenario.
    pub alpha: f64,
    pub shape: InclusionShape,
    pub mu: f64,
}

/// Point-membership test for a scaled, translated inclusion.
#[derive(Clone, Debug)]
pub struct InclusionRegion {
    center: [f64; 2],
    alpha: f64,
    kind: RegionKind,
    /// Bounding radius of `alpha * B`.
    pub reach: f64,
}

#[derive(Clone, Debug)]
enum RegionKind {
    Ellipse { a: f64, b: f64, rot: [f64; 2] },
    Polygon(Vec<[f64; 2]>),
}

impl InclusionRegion {
    pub fn new(inc: &InclusionSpec) -> Result<Self> {
        let curve = inc.shape.curve()?;
        let kind = match &inc.shape.kind {
            ShapeKind::Disk { radius } => RegionKind::Ellipse {
                a: *radius,
                b: *radius,
                rot: [1.0, 0.0],
            },
            ShapeKind::Ellipse { a, b } => RegionKind::Ellipse {
                a: *a,
                b: *b,
                rot: [inc.shape.orientation.cos(), inc.shape.orientation.sin()],
            },
            ShapeKind::SmoothPolygon { .. } => RegionKind::Polygon(curve.polyline(2048)),
        };
        Ok(Self {
            center: inc.center,
            alpha: inc.alpha,
            kind,
            reach: inc.alpha * curve.max_radius(),
        })
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let y = [
            (p[0] - self.center[0]) / self.alpha,
            (p[1] - self.center[1]) / self.alpha,
        ];
        match &self.kind {
            RegionKind::Ellipse { a, b, rot } => {
                let u = rot[0] * y[0] + rot[1] * y[1];
                let v = -rot[1] * y[0] + rot[0] * y[1];
                (u / a).powi(2) + (v / b).powi(2) < 1.0
            }
            RegionKind::Polygon(poly) => point_in_polygon(poly, y),
        }
    }
}

fn default_c0() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub domain: DomainSpec,
    #[serde(default)]
    pub inclusions: Vec<InclusionSpec>,
    #[serde(default = "default_c0")]
    pub c0: f64,
}

impl Scenario {
    pub fn background(&self) -> Scenario {
        Scenario {
            domain: self.domain.clone(),
            inclusions: Vec::new(),
            c0: self.c0,
        }
    }

    pub fn mu_min(&self) -> f64 {
        self.inclusions
            .iter()
            .map(|i| i.mu)
            .fold(self.domain.mu0, f64::min)
    }

    pub fn with_alpha(&self, alpha: f64) -> Scenario {
        let mut s = self.clone();
        for inc in &mut s.inclusions {
            inc.alpha = alpha;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Domain(String),
    Parameter { inclusion: usize, what: String },
    Separation { j: usize, l: usize, distance: f64 },
    BoundaryDistance { j: usize, distance: f64 },
    Overlap { j: usize, l: usize },
    Outside { j: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Domain(m) => write!(f, "domain: {m}"),
            Violation::Parameter { inclusion, what } => write!(f, "inclusion {inclusion}: {what}"),
            Violation::Separation { j, l, distance } => {
                write!(f, "separation: |z_{j} - z_{l}| = {distance} < c0")
            }
            Violation::BoundaryDistance { j, distance } => {
                write!(f, "boundary: dist(z_{j}, boundary) = {distance} < c0")
            }
            Violation::Overlap { j, l } => write!(f, "overlap: inclusions {j} and {l} intersect"),
            Violation::Outside { j } => write!(f, "outside: inclusion {j} leaves the domain"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msg: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidScenario(msg.join("; ")))
        }
    }
}

/// Checks every standing assumption on a scenario. Indices in the report are 1-based.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut violations = s.domain.violations();
    if !(s.c0 > 0.0) {
        violations.push(Violation::Domain("c0 must be positive".into()));
    }
    let mut reach = Vec::with_capacity(s.inclusions.len());
    for (j, inc) in s.inclusions.iter().enumerate() {
        let idx = j + 1;
        if !(inc.mu > 0.0) {
            violations.push(Violation::Parameter {
                inclusion: idx,
                what: format!("mu = {} must be positive", inc.mu),
            });
        }
        if !(inc.alpha > 0.0) {
            violations.push(Violation::Parameter {
                inclusion: idx,
                what: format!("alpha = {} must be positive", inc.alpha),
            });
        }
        let r = match inc.shape.curve() {
            Ok(c) => inc.alpha.max(0.0) * c.max_radius(),
            Err(e) => {
                violations.push(Violation::Parameter {
                    inclusion: idx,
                    what: e.to_string(),
                });
                0.0
            }
        };
        reach.push(r);
        let d = s.domain.rect.boundary_distance(inc.center);
        if d < s.c0 {
            violations.push(Violation::BoundaryDistance { j: idx, distance: d });
        }
        if d <= r {
            violations.push(Violation::Outside { j: idx });
        }
    }
    if let Some(a0) = s.inclusions.first().map(|i| i.alpha) {
        if s.inclusions.iter().any(|i| i.alpha != a0) {
            violations.push(Violation::Domain("alpha must be shared by all inclusions".into()));
        }
    }
    for j in 0..s.inclusions.len() {
        for l in j + 1..s.inclusions.len() {
            let (a, b) = (s.inclusions[j].center, s.inclusions[l].center);
            let dist = (a[0] - b[0]).hypot(a[1] - b[1]);
            if dist < s.c0 {
                violations.push(Violation::Separation {
                    j: j + 1,
                    l: l + 1,
                    distance: dist,
                });
            }
            if dist <= reach[j] + reach[l] {
                violations.push(Violation::Overlap { j: j + 1, l: l + 1 });
            }
        }
    }
    ValidationReport { violations }
}

/// Time-harmonic plane-wave probe `E = eta_perp exp(i(eta.x - c|eta|t))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneWaveProbe {
    pub eta: [f64; 2],
    #[serde(default = "one")]
    pub speed: f64,
}

impl PlaneWaveProbe {
    pub fn new(eta: [f64; 2], domain: &DomainSpec) -> Result<Self> {
        if !(eta[0].is_finite() && eta[1].is_finite()) || eta[0] == 0.0 && eta[1] == 0.0 {
            return Err(Error::InvalidArgument("probe wave vector must be nonzero".into()));
        }
        Ok(Self {
            eta,
            speed: domain.speed(),
        })
    }

    pub fn abs_eta(&self) -> f64 {
        self.eta[0].hypot(self.eta[1])
    }

    pub fn omega(&self) -> f64 {
        self.speed * self.abs_eta()
    }

    /// +1 when `eta` lies in the canonical half plane, -1 otherwise. The
    /// orthogonal unit vector is the counterclockwise rotation of the
    /// canonical representative, so `eta_perp(-eta) == eta_perp(eta)`.
    pub fn orientation(&self) -> f64 {
        let [a, b] = self.eta;
        if b > 0.0 || (b == 0.0 && a > 0.0) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn eta_perp(&self) -> [f64; 2] {
        let k = self.abs_eta();
        let s = self.orientation();
        [-s * self.eta[1] / k, s * self.eta[0] / k]
    }

    pub fn phase(&self, x: [f64; 2], t: f64) -> C64 {
        C64::from_polar(
            1.0,
            self.eta[0] * x[0] + self.eta[1] * x[1] - self.omega() * t,
        )
    }

    pub fn field(&self, x: [f64; 2], t: f64) -> [C64; 2] {
        let e = self.phase(x, t);
        let p = self.eta_perp();
        [e * p[0], e * p[1]]
    }

    pub fn time_derivative(&self, x: [f64; 2], t: f64) -> [C64; 2] {
        let f = self.field(x, t);
        let w = C64::new(0.0, -self.omega());
        [w * f[0], w * f[1]]
    }

    /// Scalar curl `d1 E2 - d2 E1 = i (eta x eta_perp) e^{...}`.
    pub fn curl(&self, x: [f64; 2], t: f64) -> C64 {
        let p = self.eta_perp();
        let cross = self.eta[0] * p[1] - self.eta[1] * p[0];
        C64::new(0.0, cross) * self.phase(x, t)
    }

    /// Stream function `Psi` with `(d2 Psi, -d1 Psi) = E`.
    pub fn stream(&self, x: [f64; 2], t: f64) -> C64 {
        C64::new(0.0, self.orientation() / self.abs_eta()) * self.phase(x, t)
    }

    /// Tangential component `E . tau` of the field, `tau` the counterclockwise
    /// tangent belonging to the outward normal `n`.
    pub fn tangential(&self, x: [f64; 2], t: f64, n: [f64; 2]) -> C64 {
        let e = self.field(x, t);
        e[0] * (-n[1]) + e[1] * n[0]
    }
}

/// Exact background plane wave and its scalar curl.
pub fn probe_field(p: &PlaneWaveProbe, x: [f64; 2], t: f64) -> ([C64; 2], C64) {
    (p.field(x, t), p.curl(x, t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub h: f64,
    pub dt: f64,
}

impl GridSpec {
    pub fn cfl_limit(&self, eps0: f64, mu_min: f64) -> f64 {
        self.h * (eps0 * mu_min).sqrt() / 2f64.sqrt()
    }

    /// Grid with `dt = courant * cfl_limit`.
    pub fn with_courant(h: f64, courant: f64, eps0: f64, mu_min: f64) -> Self {
        let dt = courant * h * (eps0 * mu_min).sqrt() / 2f64.sqrt();
        Self { h, dt }
    }

    pub fn check_cfl(&self, scenario: &Scenario) -> Result<()> {
        let limit = self.cfl_limit(scenario.domain.eps0, scenario.mu_min());
        if self.dt > limit * (1.0 + 1e-12) || !(self.dt > 0.0) {
            return Err(Error::Cfl {
                dt: self.dt,
                limit,
            });
        }
        Ok(())
    }

    /// Number of time steps covering `[0, T]`; the effective step is `T / n`.
    pub fn steps(&self, t_final: f64) -> usize {
        ((t_final / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn cells(&self, rect: &Rect) -> Result<(usize, usize)> {
        let count = |len: f64| -> Result<usize> {
            let n = (len / self.h).round();
            if n < 2.0 || ((n * self.h) - len).abs() > 1e-9 * len.max(1.0) {
                return Err(Error::InvalidGrid(format!(
                    "side length {len} is not an integer multiple of h = {}",
                    self.h
                )));
            }
            Ok(n as usize)
        };
        if !(self.h > 0.0) {
            return Err(Error::InvalidGrid("h must be positive".into()));
        }
        Ok((count(rect.width())?, count(rect.height())?))
    }
}

/// Per-cell inverse permeability sampled at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct MediumMap {
    pub nx: usize,
    pub ny: usize,
    pub inv_mu: Vec<f64>,
    /// Inclusion index (0-based) covering more than half of the cell, or -1.
    pub membership: Vec<i32>,
}

impl MediumMap {
    pub fn uniform(nx: usize, ny: usize, mu0: f64) -> Self {
        Self {
            nx,
            ny,
            inv_mu: vec![1.0 / mu0; nx * ny],
            membership: vec![-1; nx * ny],
        }
    }

    pub fn inv_mu_at(&self, i: usize, j: usize) -> f64 {
        self.inv_mu[j * self.nx + i]
    }
}

/// Area-weighted average of inverse permeabilities over a mixed cell.
pub fn mixed_inverse_permeability(mu0: f64, parts: &[(f64, f64)]) -> f64 {
    let covered: f64 = parts.iter().map(|(f, _)| f).sum();
    (1.0 - covered).max(0.0) / mu0 + parts.iter().map(|(f, mu)| f / mu).sum::<f64>()
}

const SUBSAMPLES: usize = 16;

pub fn build_medium(s: &Scenario, g: &GridSpec) -> Result<MediumMap> {
    validate_scenario(s).into_result()?;
    let rect = &s.domain.rect;
    let (nx, ny) = g.cells(rect)?;
    let mut medium = MediumMap::uniform(nx, ny, s.domain.mu0);
    for (idx, inc) in s.inclusions.iter().enumerate() {
        let curve = inc.shape.curve()?;
        let required = 0.5 * inc.alpha * curve.min_radius();
        if g.h > required * (1.0 + 1e-9) {
            return Err(Error::GridTooCoarse { h: g.h, required });
        }
        let region = InclusionRegion::new(inc)?;
        let r = region.reach;
        let lo_i = (((inc.center[0] - r - rect.x0) / g.h).floor().max(0.0)) as usize;
        let hi_i = ((((inc.center[0] + r - rect.x0) / g.h).ceil()) as usize).min(nx);
        let lo_j = (((inc.center[1] - r - rect.y0) / g.h).floor().max(0.0)) as usize;
        let hi_j = ((((inc.center[1] + r - rect.y0) / g.h).ceil()) as usize).min(ny);
        for j in lo_j..hi_j {
            for i in lo_i..hi_i {
                let mut hits = 0usize;
                for sj in 0..SUBSAMPLES {
                    for si in 0..SUBSAMPLES {
                        let p = [
                            rect.x0 + (i as f64 + (si as f64 + 0.5) / SUBSAMPLES as f64) * g.h,
                            rect.y0 + (j as f64 + (sj as f64 + 0.5) / SUBSAMPLES as f64) * g.h,
                        ];
                        if region.contains(p) {
                            hits += 1;
                        }
                    }
                }
                if hits == 0 {
                    continue;
                }
                let frac = hits as f64 / (SUBSAMPLES * SUBSAMPLES) as f64;
                let k = j * nx + i;
                // Inclusions are disjoint, so the background share is what is left.
                let current_bg = medium.inv_mu[k] - 1.0 / s.domain.mu0;
                medium.inv_mu[k] = mixed_inverse_permeability(s.domain.mu0, &[(frac, inc.mu)])
                    + current_bg;
                if frac > 0.5 {
                    medium.membership[k] = idx as i32;
                }
            }
        }
    }
    Ok(medium)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_domain() -> DomainSpec {
        DomainSpec::new(
            Rect {
                x0: -1.0,
                y0: -1.0,
                x1: 1.0,
                y1: 1.0,
            },
            1.0,
        )
    }

    fn disk_at(center: [f64; 2], alpha: f64, mu: f64) -> InclusionSpec {
        InclusionSpec {
            center,
            alpha,
            shape: InclusionShape::disk(1.0),
            mu,
        }
    }

    #[test]
    fn single_centered_inclusion_is_valid() {
        let s = Scenario {
            domain: unit_domain(),
            inclusions: vec![disk_at([0.0, 0.0], 0.05, 2.0)],
            c0: 0.5,
        };
        assert!(validate_scenario(&s).is_ok());
    }

    #[test]
    fn close_pair_violates_separation() {
        let c0 = 0.4;
        let s = Scenario {
            domain: unit_domain(),
            inclusions: vec![disk_at([-0.1, 0.0], 0.01, 2.0), disk_at([0.1, 0.0], 0.01, 2.0)],
            c0,
        };
        let r = validate_scenario(&s);
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Separation { j: 1, l: 2, .. })));
    }

    #[test]
    fn inclusion_near_boundary_is_reported() {
        let c0 = 0.4;
        let s = Scenario {
            domain: unit_domain(),
            inclusions: vec![disk_at([1.0 - c0 / 2.0, 0.0], 0.01, 2.0)],
            c0,
        };
        let r = validate_scenario(&s);
        assert_eq!(
            r.violations,
            vec![Violation::BoundaryDistance {
                j: 1,
                distance: 1.0 - (1.0 - c0 / 2.0)
            }]
        );
    }

    #[test]
    fn uniform_medium_without_inclusions() {
        let s = Scenario {
            domain: unit_domain(),
            inclusions: vec![],
            c0: 0.1,
        };
        let m = build_medium(&s, &GridSpec { h: 0.1, dt: 0.05 }).unwrap();
        assert_eq!(m.nx, 20);
        assert!(m.inv_mu.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn interior_cell_takes_inclusion_value() {
        let s = Scenario {
            domain: unit_domain(),
            inclusions: vec![disk_at([0.05, 0.05], 0.2, 2.0)],
            c0: 0.1,
        };
        let m = build_medium(&s, &GridSpec { h: 0.1, dt: 0.05 }).unwrap();
        // cell [0, 0.1]^2 has its center at the inclusion center
        assert_eq!(m.inv_mu_at(10, 10), 0.5);
        assert_eq!(m.membership[10 * 20 + 10], 0);
    }

    #[test]
    fn half_covered_cell_averages_inverses() {
        assert_eq!(mixed_inverse_permeability(1.0, &[(0.5, 2.0)]), 0.75);
        // A large disk whose edge passes through a cell center splits it nearly in half.
        let s = Scenario {
            domain: unit_domain(),
            inclusions: vec![disk_at([-0.45, 0.05], 0.5, 2.0)],
            c0: 0.1,
        };
        let m = build_medium(&s, &GridSpec { h: 0.1, dt: 0.05 }).unwrap();
        let v = m.inv_mu_at(10, 10);
        assert!((v - 0.75).abs() < 0.02, "{v}");
    }

    #[test]
    fn coarse_grid_is_refused() {
        let s = Scenario {
            domain: unit_domain(),
            inclusions: vec![disk_at([0.0, 0.0], 0.05, 2.0)],
            c0: 0.1,
        };
        match build_medium(&s, &GridSpec { h: 0.1, dt: 0.05 }) {
            Err(Error::GridTooCoarse { required, .. }) => assert!((required - 0.025).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn medium_is_deterministic() {
        let s = Scenario {
            domain: unit_domain(),
            inclusions: vec![InclusionSpec {
                center: [0.1, -0.2],
                alpha: 0.1,
                shape: InclusionShape::star(1.0, 0.2, 5).rotated(0.3),
                mu: 3.0,
            }],
            c0: 0.1,
        };
        let g = GridSpec { h: 0.02, dt: 0.01 };
        let a = build_medium(&s, &g).unwrap();
        let b = build_medium(&s, &g).unwrap();
        assert!(a.inv_mu.iter().zip(&b.inv_mu).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn probe_basics() {
        let d = unit_domain();
        let p = PlaneWaveProbe::new([3.0, 0.0], &d).unwrap();
        let (e, c) = probe_field(&p, [0.0, 0.0], 0.0);
        assert_eq!(e[0], C64::new(0.0, 0.0));
        assert_eq!(e[1], C64::new(1.0, 0.0));
        assert!((c - C64::new(0.0, 3.0)).norm() < 1e-15);
        let q = PlaneWaveProbe::new([-3.0, 0.0], &d).unwrap();
        assert_eq!(q.eta_perp(), p.eta_perp());
    }

    #[test]
    fn smooth_polygon_interpolates_vertices() {
        let shape = InclusionShape::star(1.0, 0.25, 5);
        let c = shape.curve().unwrap();
        if let ShapeKind::SmoothPolygon { vertices } = &shape.kind {
            let m = vertices.len();
            for (j, v) in vertices.iter().enumerate() {
                let p = c.point(2.0 * PI * j as f64 / m as f64);
                assert!((p[0] - v[0]).abs() < 1e-12 && (p[1] - v[1]).abs() < 1e-12);
            }
        }
        // area of r = 1 + a cos 5t is pi (1 + a^2 / 2)
        assert!((c.area() - PI * (1.0 + 0.25f64.powi(2) / 2.0)).abs() < 1e-10);
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let s = Scenario {
            domain: unit_domain(),
            inclusions: vec![disk_at([0.1, 0.2], 0.05, 2.0)],
            c0: 0.3,
        };
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
        assert!(serde_json::from_str::<Scenario>(r#"{"domain":{"rect":{"x0":0,"y0":0,"x1":1,"y1":1},"T":1},"bogus":1}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn validation_is_monotone_in_c0(x in -0.8f64..0.8, y in -0.8f64..0.8, x2 in -0.8f64..0.8, c0 in 0.01f64..0.5, shrink in 0.05f64..1.0) {
                let s = Scenario {
                    domain: unit_domain(),
                    inclusions: vec![disk_at([x, y], 0.005, 2.0), disk_at([x2, -y], 0.005, 2.0)],
                    c0,
                };
                if validate_scenario(&s).is_ok() {
                    let smaller = Scenario { c0: c0 * shrink, ..s };
                    prop_assert!(validate_scenario(&smaller).is_ok());
                }
            }

            #[test]
            fn probe_has_unit_modulus(kx in -10.0f64..10.0, ky in 0.1f64..10.0, x in -1.0f64..1.0, y in -1.0f64..1.0, t in 0.0f64..5.0) {
                let p = PlaneWaveProbe::new([kx, ky], &unit_domain()).unwrap();
                let e = p.field([x, y], t);
                prop_assert!(((e[0].norm_sqr() + e[1].norm_sqr()).sqrt() - 1.0).abs() < 1e-12);
                let q = p.eta_perp();
                prop_assert!((q[0] * kx + q[1] * ky).abs() < 1e-12);
            }
        }
    }
}
