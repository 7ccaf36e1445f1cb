//! Hamiltonian specifications, Gibbs measures, quadrature-backed moment
//! tables and structural checks.
//!
//! A specification holds a separable potential energy `phi(x) = sum phi_axis(x_i)`
//! on a torus or truncated line, and a kinetic energy `psi(v)` that is either
//! separable, radial, or (for verification purposes) a coupled quadratic form.
//! Additive constants are adjusted so that both Gibbs densities integrate to
//! one on the declared domains.

use crate::quad::{integrate, integrate_2d, QuadResult};
use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("gibbs weight not integrable: {0}")]
    NonIntegrable(String),
    #[error("divergent moment: {0}")]
    DivergentMoment(String),
    #[error("matrix M degenerate, smallest eigenvalue {0:.3e}")]
    Degenerate(f64),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("tabulated data: {0}")]
    BadTable(String),
}

/// Where a stored constant came from; recorded in certificates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Declared,
    Empirical,
    Eigensolve,
    ClosedForm,
    Quadrature,
    Simulation,
    Formula,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Provenance::Declared => "declared",
            Provenance::Empirical => "empirical",
            Provenance::Eigensolve => "eigensolve",
            Provenance::ClosedForm => "closed-form",
            Provenance::Quadrature => "quadrature",
            Provenance::Simulation => "simulation",
            Provenance::Formula => "formula",
        };
        f.write_str(s)
    }
}

/// Uniformly spaced two-column table; evaluated by cubic Hermite interpolation
/// with finite-difference slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1d {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl Table1d {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(a), Some(b)) = (it.next(), it.next()) else {
                return Err(ModelError::BadTable(format!(
                    "line {}: expected two columns",
                    lineno + 1
                )));
            };
            let x: f64 = a
                .parse()
                .map_err(|_| ModelError::BadTable(format!("line {}: bad abscissa", lineno + 1)))?;
            let v: f64 = b
                .parse()
                .map_err(|_| ModelError::BadTable(format!("line {}: bad value", lineno + 1)))?;
            xs.push(x);
            vs.push(v);
        }
        if xs.len() < 4 {
            return Err(ModelError::BadTable("need at least 4 rows".into()));
        }
        let dx = xs[1] - xs[0];
        if dx <= 0.0 {
            return Err(ModelError::BadTable("abscissae must increase".into()));
        }
        for w in xs.windows(2) {
            if ((w[1] - w[0]) - dx).abs() > 1e-9 * dx.abs() {
                return Err(ModelError::BadTable("spacing must be uniform".into()));
            }
        }
        Ok(Self {
            x0: xs[0],
            dx,
            values: vs,
        })
    }

    fn slope(&self, i: usize) -> f64 {
        let n = self.values.len();
        let v = &self.values;
        if i == 0 {
            (v[1] - v[0]) / self.dx
        } else if i == n - 1 {
            (v[n - 1] - v[n - 2]) / self.dx
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * self.dx)
        }
    }

    fn clamp_index(&self, x: f64) -> (usize, f64) {
        let n = self.values.len();
        let t = (x - self.x0) / self.dx;
        let i = (t.floor() as isize).clamp(0, n as isize - 2) as usize;
        (i, t - i as f64)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (i, s) = self.clamp_index(x);
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slope(i) * self.dx, self.slope(i + 1) * self.dx);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * m1
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let (i, s) = self.clamp_index(x);
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slope(i) * self.dx, self.slope(i + 1) * self.dx);
        let s2 = s * s;
        ((6.0 * s2 - 6.0 * s) * p0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * p1
            + (3.0 * s2 - 2.0 * s) * m1)
            / self.dx
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        let h = self.dx;
        (self.deriv(x + 0.5 * h) - self.deriv(x - 0.5 * h)) / h
    }
}

/// One-dimensional energy profile, used both for potential axes and for
/// separable kinetic factors.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile1d {
    /// q(v) = v^2 / 2
    Gaussian,
    /// q(v) = (1 + v^2)^{alpha/2}, alpha in (0,1)
    SubExp { alpha: f64 },
    /// q(v) = (beta/2) log(1 + v^2)
    HeavyTail { beta: f64 },
    /// phi(x) = a cos(2 pi x / L); the torus period L lives in the domain
    Cosine { amplitude: f64, period: f64 },
    /// phi(x) = a (x^2 - w^2)^2
    DoubleWell { barrier: f64, half_width: f64 },
    /// phi(x) = 0 (uniform measure; meaningful on a torus)
    Zero,
    Tabulated(Table1d),
}

impl Profile1d {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            Profile1d::Gaussian => 0.5 * v * v,
            Profile1d::SubExp { alpha } => (1.0 + v * v).powf(alpha / 2.0),
            Profile1d::HeavyTail { beta } => 0.5 * beta * (1.0 + v * v).ln(),
            Profile1d::Cosine { amplitude, period } => {
                amplitude * (2.0 * std::f64::consts::PI * v / period).cos()
            }
            Profile1d::DoubleWell {
                barrier,
                half_width,
            } => {
                let u = v * v - half_width * half_width;
                barrier * u * u
            }
            Profile1d::Zero => 0.0,
            Profile1d::Tabulated(t) => t.eval(v),
        }
    }

    pub fn d1(&self, v: f64) -> f64 {
        match self {
            Profile1d::Gaussian => v,
            Profile1d::SubExp { alpha } => alpha * v * (1.0 + v * v).powf(alpha / 2.0 - 1.0),
            Profile1d::HeavyTail { beta } => beta * v / (1.0 + v * v),
            Profile1d::Cosine { amplitude, period } => {
                let k = 2.0 * std::f64::consts::PI / period;
                -amplitude * k * (k * v).sin()
            }
            Profile1d::DoubleWell {
                barrier,
                half_width,
            } => 4.0 * barrier * v * (v * v - half_width * half_width),
            Profile1d::Zero => 0.0,
            Profile1d::Tabulated(t) => t.deriv(v),
        }
    }

    pub fn d2(&self, v: f64) -> f64 {
        match self {
            Profile1d::Gaussian => 1.0,
            Profile1d::SubExp { alpha } => {
                let u = 1.0 + v * v;
                alpha * u.powf(alpha / 2.0 - 2.0) * (1.0 + (alpha - 1.0) * v * v)
            }
            Profile1d::HeavyTail { beta } => {
                let u = 1.0 + v * v;
                beta * (1.0 - v * v) / (u * u)
            }
            Profile1d::Cosine { amplitude, period } => {
                let k = 2.0 * std::f64::consts::PI / period;
                -amplitude * k * k * (k * v).cos()
            }
            Profile1d::DoubleWell {
                barrier,
                half_width,
            } => 4.0 * barrier * (3.0 * v * v - half_width * half_width),
            Profile1d::Zero => 0.0,
            Profile1d::Tabulated(t) => t.deriv2(v),
        }
    }

    pub fn d3(&self, v: f64) -> f64 {
        match self {
            Profile1d::Gaussian | Profile1d::Zero => 0.0,
            Profile1d::SubExp { alpha } => {
                let u = 1.0 + v * v;
                alpha * (alpha - 2.0) * v * u.powf(alpha / 2.0 - 3.0) * (3.0 + (alpha - 1.0) * v * v)
            }
            Profile1d::HeavyTail { beta } => {
                let u = 1.0 + v * v;
                beta * (2.0 * v * v * v - 6.0 * v) / (u * u * u)
            }
            Profile1d::Cosine { amplitude, period } => {
                let k = 2.0 * std::f64::consts::PI / period;
                amplitude * k * k * k * (k * v).sin()
            }
            Profile1d::DoubleWell { barrier, .. } => 24.0 * barrier * v,
            Profile1d::Tabulated(t) => {
                let h = t.dx;
                (t.deriv2(v + 0.5 * h) - t.deriv2(v - 0.5 * h)) / h
            }
        }
    }
}

/// Spatial domain of one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XDomain {
    Torus { period: f64 },
    Line { radius: f64 },
}

impl XDomain {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            XDomain::Torus { period } => (0.0, period),
            XDomain::Line { radius } => (-radius, radius),
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, XDomain::Torus { .. })
    }
}

/// Radial kinetic families of the sub-linear growth classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialKind {
    SubExp { alpha: f64 },
    HeavyTail { beta: f64 },
}

impl RadialKind {
    pub fn profile(&self) -> Profile1d {
        match *self {
            RadialKind::SubExp { alpha } => Profile1d::SubExp { alpha },
            RadialKind::HeavyTail { beta } => Profile1d::HeavyTail { beta },
        }
    }
}

/// Kinetic energy structure.
#[derive(Debug, Clone, PartialEq)]
pub enum Kinetic {
    /// psi(v) = sum_i q(v_i)
    Separable(Profile1d),
    /// psi(v) = w(|v|) with w the radial profile
    Radial(RadialKind),
    /// d = 2 verification family: psi = (v1^2 + v2^2)/2 + eps v1 v2
    Coupled { eps: f64 },
}

/// Regularity constants that may be declared by the user instead of fitted.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DeclaredConstants {
    pub c_phi: Option<f64>,
    pub c_phi_prime: Option<f64>,
    pub c_phi_second: Option<f64>,
    pub c_psi: Option<f64>,
}

/// Full Hamiltonian specification with domain truncation and quadrature
/// tolerances. Build with [`HamiltonianSpec::new`], then call
/// [`normalize_gibbs`] before using densities.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    pub dim: usize,
    pub x_domain: XDomain,
    pub phi_axis: Profile1d,
    pub kinetic: Kinetic,
    pub r_v: f64,
    pub quad_tol: f64,
    pub tail_tol: f64,
    pub declared: DeclaredConstants,
    /// Additive normalization constant per potential axis.
    pub phi_shift_axis: f64,
    /// Total additive normalization constant of psi.
    pub psi_shift: f64,
    /// Per-axis normalization constant of a separable psi, stored directly so
    /// axis quantities do not depend on the dimension through rounding.
    pub psi_shift_axis: f64,
    pub normalized: bool,
}

pub const DEFAULT_QUAD_TOL: f64 = 1e-8;
pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

impl HamiltonianSpec {
    pub fn new(
        dim: usize,
        x_domain: XDomain,
        phi_axis: Profile1d,
        kinetic: Kinetic,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidSpec("dimension must be positive".into()));
        }
        match &kinetic {
            Kinetic::Radial(RadialKind::SubExp { alpha }) => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(ModelError::InvalidSpec(format!(
                        "subexp exponent alpha = {alpha} must lie in (0,1)"
                    )));
                }
                if dim > 3 {
                    return Err(ModelError::InvalidSpec(
                        "radial kinetic families support d <= 3; use a tensorised profile".into(),
                    ));
                }
            }
            Kinetic::Radial(RadialKind::HeavyTail { beta }) => {
                if *beta <= dim as f64 {
                    return Err(ModelError::NonIntegrable(format!(
                        "heavytail beta = {beta} <= d = {dim}: exp(-psi) is not integrable"
                    )));
                }
                if dim > 3 {
                    return Err(ModelError::InvalidSpec(
                        "radial kinetic families support d <= 3; use a tensorised profile".into(),
                    ));
                }
            }
            Kinetic::Separable(Profile1d::SubExp { alpha }) => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(ModelError::InvalidSpec(format!(
                        "subexp exponent alpha = {alpha} must lie in (0,1)"
                    )));
                }
            }
            Kinetic::Separable(Profile1d::HeavyTail { beta }) => {
                if *beta <= 1.0 {
                    return Err(ModelError::NonIntegrable(format!(
                        "heavytail axis profile beta = {beta} <= 1: exp(-q) is not integrable"
                    )));
                }
            }
            Kinetic::Coupled { eps } => {
                if dim != 2 {
                    return Err(ModelError::InvalidSpec(
                        "coupled quadratic kinetic energy is defined for d = 2".into(),
                    ));
                }
                if eps.abs() >= 1.0 {
                    return Err(ModelError::InvalidSpec(
                        "coupled quadratic form must stay positive definite (|eps| < 1)".into(),
                    ));
                }
            }
            _ => {}
        }
        let mut spec = Self {
            dim,
            x_domain,
            phi_axis,
            kinetic,
            r_v: 0.0,
            quad_tol: DEFAULT_QUAD_TOL,
            tail_tol: DEFAULT_TAIL_TOL,
            declared: DeclaredConstants::default(),
            phi_shift_axis: 0.0,
            psi_shift: 0.0,
            psi_shift_axis: 0.0,
            normalized: false,
        };
        spec.r_v = spec.auto_r_v()?;
        if let XDomain::Line { radius } = spec.x_domain {
            if radius <= 0.0 {
                spec.x_domain = XDomain::Line {
                    radius: auto_radius_profile(&spec.phi_axis, spec.tail_tol)?,
                };
            }
        }
        Ok(spec)
    }

    /// Gaussian position and momentum marginals on a line; the workhorse
    /// configuration for exponential-decay checks.
    pub fn quadratic_gaussian(dim: usize) -> Self {
        Self::new(
            dim,
            XDomain::Line { radius: 0.0 },
            Profile1d::Gaussian,
            Kinetic::Separable(Profile1d::Gaussian),
        )
        .expect("quadratic spec is valid")
    }

    /// Cosine potential on the unit torus with Gaussian momenta.
    pub fn cosine_torus_gaussian(dim: usize, amplitude: f64) -> Self {
        Self::new(
            dim,
            XDomain::Torus { period: 1.0 },
            Profile1d::Cosine {
                amplitude,
                period: 1.0,
            },
            Kinetic::Separable(Profile1d::Gaussian),
        )
        .expect("cosine spec is valid")
    }

    /// Truncation radius for the momentum domain, chosen so the Gibbs tail
    /// mass is below `tail_tol`.
    fn auto_r_v(&self) -> Result<f64, ModelError> {
        match &self.kinetic {
            Kinetic::Separable(q) => auto_radius_profile(q, self.tail_tol),
            Kinetic::Radial(kind) => {
                auto_radius_radial(&kind.profile(), self.dim, self.tail_tol)
            }
            Kinetic::Coupled { .. } => Ok(10.0),
        }
    }

    /// True when psi factorises over coordinates (always true in d = 1 for the
    /// radial families, whose profiles coincide with their axis profiles).
    pub fn separable_kinetic(&self) -> bool {
        match &self.kinetic {
            Kinetic::Separable(_) => true,
            Kinetic::Radial(_) => self.dim == 1,
            Kinetic::Coupled { .. } => false,
        }
    }

    /// Axis profile of a separable kinetic energy.
    pub fn q_profile(&self) -> Option<Profile1d> {
        match &self.kinetic {
            Kinetic::Separable(q) => Some(q.clone()),
            Kinetic::Radial(kind) if self.dim == 1 => Some(kind.profile()),
            _ => None,
        }
    }

    pub fn psi(&self, v: &[f64]) -> f64 {
        match &self.kinetic {
            Kinetic::Separable(q) => v.iter().map(|&vi| q.eval(vi)).sum(),
            Kinetic::Radial(kind) => {
                let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                kind.profile().eval(r)
            }
            Kinetic::Coupled { eps } => 0.5 * (v[0] * v[0] + v[1] * v[1]) + eps * v[0] * v[1],
        }
    }

    pub fn grad_psi(&self, v: &[f64]) -> Vec<f64> {
        match &self.kinetic {
            Kinetic::Separable(q) => v.iter().map(|&vi| q.d1(vi)).collect(),
            Kinetic::Radial(kind) => {
                let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r < 1e-14 {
                    return vec![0.0; v.len()];
                }
                let w1 = kind.profile().d1(r);
                v.iter().map(|&vi| w1 * vi / r).collect()
            }
            Kinetic::Coupled { eps } => vec![v[0] + eps * v[1], v[1] + eps * v[0]],
        }
    }

    /// Hessian of psi at a point (dense, d x d).
    pub fn hess_psi(&self, v: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        match &self.kinetic {
            Kinetic::Separable(q) => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    d,
                    v.iter().map(|&vi| q.d2(vi)),
                ))
            }
            Kinetic::Radial(kind) => {
                let p = kind.profile();
                let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r < 1e-10 {
                    return DMatrix::identity(d, d) * p.d2(0.0);
                }
                let w1 = p.d1(r);
                let w2 = p.d2(r);
                let mut h = DMatrix::zeros(d, d);
                for i in 0..d {
                    for j in 0..d {
                        let rad = (w2 - w1 / r) * v[i] * v[j] / (r * r);
                        h[(i, j)] = rad + if i == j { w1 / r } else { 0.0 };
                    }
                }
                h
            }
            Kinetic::Coupled { eps } => {
                DMatrix::from_row_slice(2, 2, &[1.0, *eps, *eps, 1.0])
            }
        }
    }

    /// Normalized Gibbs density of the momentum marginal.
    pub fn gamma_density(&self, v: &[f64]) -> f64 {
        (-(self.psi(v) + self.psi_shift)).exp()
    }

    /// Normalized one-axis momentum density (separable kinetic only).
    pub fn gamma_axis_density(&self, v: f64) -> f64 {
        let q = self.q_profile().expect("separable kinetic");
        (-(q.eval(v) + self.psi_shift_axis)).exp()
    }

    /// Normalized one-axis position density.
    pub fn mu_axis_density(&self, x: f64) -> f64 {
        (-(self.phi_axis.eval(x) + self.phi_shift_axis)).exp()
    }

    pub fn x_axis_bounds(&self) -> (f64, f64) {
        self.x_domain.bounds()
    }
}

/// Truncation radius for a 1-D Gibbs profile: doubling search with a
/// geometric tail bound.
fn auto_radius_profile(q: &Profile1d, tail_tol: f64) -> Result<f64, ModelError> {
    auto_radius_radial(q, 1, tail_tol)
}

/// Truncation radius for exp(-w(r)) r^{d-1} in d dimensions.
fn auto_radius_radial(w: &Profile1d, dim: usize, tail_tol: f64) -> Result<f64, ModelError> {
    let jac = |r: f64| r.powi(dim as i32 - 1);
    let dens = |r: f64| (-w.eval(r)).exp() * jac(r);
    let core = integrate(dens, 0.0, 4.0, 1e-10).value.max(1e-300);
    let mut r = 4.0;
    for _ in 0..44 {
        let band = integrate(dens, r, 2.0 * r, 1e-12).value;
        let next = integrate(dens, 2.0 * r, 4.0 * r, 1e-12).value;
        let ratio = if band > 0.0 { next / band } else { 0.0 };
        if ratio < 0.95 {
            let tail_bound = band / (1.0 - ratio.max(0.0)).max(0.05);
            if tail_bound < tail_tol * core {
                return Ok(2.0 * r);
            }
        }
        r *= 2.0;
    }
    // Dyadic bands never shrank below tolerance: the Gibbs weight does not
    // decay under domain growth.
    Err(ModelError::NonIntegrable(format!(
        "tail mass does not decay under domain growth (family {w:?})"
    )))
}

const SPHERE_AREA: [f64; 4] = [
    0.0,
    2.0,
    2.0 * std::f64::consts::PI,
    4.0 * std::f64::consts::PI,
];

fn radial_integral(
    w: &Profile1d,
    dim: usize,
    r_max: f64,
    f: impl Fn(f64) -> f64,
    tol: f64,
) -> QuadResult {
    let area = SPHERE_AREA[dim];
    let r = integrate(
        |r| f(r) * (-w.eval(r)).exp() * r.powi(dim as i32 - 1),
        0.0,
        r_max,
        tol,
    );
    QuadResult::new(area * r.value, area * r.error)
}

/// Adjusts the additive constants of phi and psi so both Gibbs densities
/// integrate to one on the declared truncated domains.
pub fn normalize_gibbs(spec: &HamiltonianSpec) -> Result<HamiltonianSpec, ModelError> {
    let mut out = spec.clone();
    let (a, b) = spec.x_axis_bounds();
    let zx = integrate(|x| (-spec.phi_axis.eval(x)).exp(), a, b, spec.quad_tol);
    if !zx.value.is_finite() || zx.value <= 0.0 {
        return Err(ModelError::NonIntegrable(
            "potential axis weight has no finite mass".into(),
        ));
    }
    out.phi_shift_axis = zx.value.ln();

    match &spec.kinetic {
        Kinetic::Separable(q) => {
            let z1 = integrate(|v| (-q.eval(v)).exp(), -spec.r_v, spec.r_v, spec.quad_tol);
            if !z1.value.is_finite() || z1.value <= 0.0 {
                return Err(ModelError::NonIntegrable(
                    "kinetic axis weight has no finite mass".into(),
                ));
            }
            out.psi_shift_axis = z1.value.ln();
            out.psi_shift = (spec.dim as f64) * out.psi_shift_axis;
        }
        Kinetic::Radial(kind) => {
            let z = radial_integral(&kind.profile(), spec.dim, spec.r_v, |_| 1.0, spec.quad_tol);
            if !z.value.is_finite() || z.value <= 0.0 {
                return Err(ModelError::NonIntegrable(
                    "kinetic weight has no finite mass".into(),
                ));
            }
            out.psi_shift = z.value.ln();
            out.psi_shift_axis = out.psi_shift / spec.dim as f64;
        }
        Kinetic::Coupled { eps } => {
            let e = *eps;
            let z = integrate_2d(
                |v1, v2| (-(0.5 * (v1 * v1 + v2 * v2) + e * v1 * v2)).exp(),
                (-spec.r_v, spec.r_v),
                (-spec.r_v, spec.r_v),
                spec.quad_tol,
            );
            out.psi_shift = z.value.ln();
            out.psi_shift_axis = out.psi_shift / 2.0;
        }
    }
    out.normalized = true;
    Ok(out)
}

/// Named scalar moments of gamma and mu with quadrature error estimates.
#[derive(Debug, Clone)]
pub struct MomentTable {
    /// int |grad psi|^2 dgamma
    pub grad_psi_sq: QuadResult,
    /// int |grad psi|^4 dgamma
    pub grad_psi_fourth: QuadResult,
    /// int |hess psi|_F^2 dgamma
    pub hess_psi_frob_sq: QuadResult,
    /// Tail integrals int_{|v|>R} |grad psi|^{-2} dgamma at three radii.
    pub tail_decay: Vec<(f64, f64)>,
    /// ‖grad phi‖^2 in L^2(mu), full dimension.
    pub grad_phi_sq_mu: QuadResult,
    /// Separable-kinetic axis moments.
    pub q_moments: Option<QMoments>,
}

/// Axis moments of a separable kinetic factor q.
#[derive(Debug, Clone)]
pub struct QMoments {
    /// ‖q'‖^2
    pub qp_sq: QuadResult,
    /// ‖q''‖^2
    pub qpp_sq: QuadResult,
    /// ‖Q‖^2 with Q = (q')^2 - q''
    pub q_cap_sq: QuadResult,
    /// int q'''' exp(-q) (computed as int q''' q' exp(-q) after one
    /// integration by parts, so only three derivatives are needed)
    pub q4_int: QuadResult,
    /// int Q q'' exp(-q)
    pub q_cap_qpp_int: QuadResult,
}

impl QMoments {
    /// ‖q'‖_{H^1} = sqrt(‖q'‖^2 + ‖q''‖^2)
    pub fn qp_h1(&self) -> f64 {
        (self.qp_sq.value + self.qpp_sq.value).sqrt()
    }
}

/// Computes every moment needed by the certificate machinery.
///
/// Raises `DivergentMoment` exactly when the heavy-tail exponent fails the
/// integrability threshold beta > d + 4 required of |grad psi|^{-2}.
pub fn moments(spec: &HamiltonianSpec) -> Result<MomentTable, ModelError> {
    assert!(spec.normalized, "normalize_gibbs must run first");
    let d = spec.dim;
    let heavy_beta = match &spec.kinetic {
        Kinetic::Radial(RadialKind::HeavyTail { beta }) => Some(*beta),
        Kinetic::Separable(Profile1d::HeavyTail { beta }) => Some(*beta),
        _ => None,
    };
    if let Some(beta) = heavy_beta {
        if beta <= (d + 4) as f64 {
            return Err(ModelError::DivergentMoment(format!(
                "int |grad psi|^-2 dgamma: heavytail beta = {beta} <= d + 4 = {}",
                d + 4
            )));
        }
    }

    let tol = spec.quad_tol;
    let norm = (-spec.psi_shift).exp();

    // |grad psi| as a function of radius (radial and d=1 separable cases) or
    // via full tensor quadrature otherwise.
    let (grad_sq, grad_4, hess_sq, tails) = match &spec.kinetic {
        Kinetic::Radial(kind) => {
            let w = kind.profile();
            let g2 = |r: f64| w.d1(r).powi(2);
            let hess = |r: f64| {
                if r < 1e-12 {
                    (d as f64) * w.d2(0.0).powi(2)
                } else {
                    w.d2(r).powi(2) + (d as f64 - 1.0) * (w.d1(r) / r).powi(2)
                }
            };
            let gs = scale(radial_integral(&w, d, spec.r_v, g2, tol), norm);
            let g4 = scale(radial_integral(&w, d, spec.r_v, |r| g2(r).powi(2), tol), norm);
            let hs = scale(radial_integral(&w, d, spec.r_v, hess, tol), norm);
            let mut tails_v = Vec::new();
            for frac in [0.25, 0.5, 0.75] {
                let r0 = frac * spec.r_v;
                let t = integrate(
                    |r| (-w.eval(r)).exp() * r.powi(d as i32 - 1) / g2(r).max(1e-300),
                    r0,
                    spec.r_v,
                    tol,
                );
                tails_v.push((r0, SPHERE_AREA[d] * norm * t.value));
            }
            (gs, g4, hs, tails_v)
        }
        Kinetic::Separable(q) => {
            let axis_norm = (-spec.psi_shift_axis).exp();
            let m = |f: &dyn Fn(f64) -> f64| {
                let r = integrate(
                    |v| f(v) * (-q.eval(v)).exp(),
                    -spec.r_v,
                    spec.r_v,
                    tol,
                );
                QuadResult::new(axis_norm * r.value, axis_norm * r.error)
            };
            let m2 = m(&|v| q.d1(v).powi(2));
            let m4 = m(&|v| q.d1(v).powi(4));
            let mh = m(&|v| q.d2(v).powi(2));
            // |grad psi|^2 = sum q'(v_i)^2: expectations over the product measure.
            let gs = QuadResult::new(d as f64 * m2.value, d as f64 * m2.error);
            // E (sum a_i)^2 = d E a^2 + d(d-1) (E a)^2 with a_i = q'(v_i)^2.
            let g4 = QuadResult::new(
                d as f64 * m4.value + (d * (d - 1)) as f64 * m2.value * m2.value,
                d as f64 * m4.error + 2.0 * (d * (d - 1)) as f64 * m2.value.max(1.0) * m2.error,
            );
            let hs = QuadResult::new(d as f64 * mh.value, d as f64 * mh.error);
            // Tail of |grad psi|^{-2}: in d = 1 this is exactly the axis
            // integral; in higher dimension we report the axis surrogate
            // (the condition tensorises coordinate-wise).
            let mut tails_v = Vec::new();
            for frac in [0.25, 0.5, 0.75] {
                let r0 = frac * spec.r_v;
                let tail_half = |lo: f64, hi: f64| {
                    integrate(
                        |v| (-q.eval(v)).exp() / q.d1(v).powi(2).max(1e-300),
                        lo,
                        hi,
                        tol,
                    )
                    .value
                };
                let t = tail_half(r0, spec.r_v) + tail_half(-spec.r_v, -r0);
                tails_v.push((r0, axis_norm * t));
            }
            (gs, g4, hs, tails_v)
        }
        Kinetic::Coupled { .. } => {
            let r = spec.r_v;
            let dens = |v1: f64, v2: f64| spec.gamma_density(&[v1, v2]);
            let gp = |v1: f64, v2: f64| {
                let g = spec.grad_psi(&[v1, v2]);
                g[0] * g[0] + g[1] * g[1]
            };
            let gs = integrate_2d(|a, b| gp(a, b) * dens(a, b), (-r, r), (-r, r), tol);
            let g4 = integrate_2d(
                |a, b| gp(a, b).powi(2) * dens(a, b),
                (-r, r),
                (-r, r),
                tol,
            );
            let hs = integrate_2d(
                |a, b| {
                    let h = spec.hess_psi(&[a, b]);
                    h.iter().map(|x| x * x).sum::<f64>() * dens(a, b)
                },
                (-r, r),
                (-r, r),
                tol,
            );
            let mut tails_v = Vec::new();
            for frac in [0.25, 0.5, 0.75] {
                let r0 = frac * r;
                let t = integrate_2d(
                    |a, b| {
                        if a * a + b * b > r0 * r0 {
                            dens(a, b) / gp(a, b).max(1e-300)
                        } else {
                            0.0
                        }
                    },
                    (-r, r),
                    (-r, r),
                    tol,
                );
                tails_v.push((r0, t.value));
            }
            (gs, g4, hs, tails_v)
        }
    };

    for w in tails.windows(2) {
        if w[1].1 > w[0].1 * (1.0 + 1e-9) + 1e-12 {
            return Err(ModelError::DivergentMoment(
                "tail of |grad psi|^-2 is not decreasing over the reported radii".into(),
            ));
        }
    }

    // ‖grad phi‖^2_{L^2(mu)} = d * axis mean of phi_axis'^2.
    let (a, b) = spec.x_axis_bounds();
    let axis_phi_norm = (-spec.phi_shift_axis).exp();
    let gphi_axis = integrate(
        |x| spec.phi_axis.d1(x).powi(2) * (-spec.phi_axis.eval(x)).exp(),
        a,
        b,
        tol,
    );
    let grad_phi_sq_mu = QuadResult::new(
        d as f64 * axis_phi_norm * gphi_axis.value,
        d as f64 * axis_phi_norm * gphi_axis.error,
    );

    let q_moments = spec.q_profile().map(|q| {
        let axis_norm = (-spec.psi_shift_axis).exp();
        let m = |f: &dyn Fn(f64) -> f64| {
            let r = integrate(|v| f(v) * (-q.eval(v)).exp(), -spec.r_v, spec.r_v, tol);
            QuadResult::new(axis_norm * r.value, axis_norm * r.error)
        };
        let qp_sq = m(&|v| q.d1(v).powi(2));
        let qpp_sq = m(&|v| q.d2(v).powi(2));
        let q_cap = |v: f64| q.d1(v).powi(2) - q.d2(v);
        let q_cap_sq = m(&|v| q_cap(v).powi(2));
        let q4_int = m(&|v| q.d3(v) * q.d1(v));
        let q_cap_qpp_int = m(&|v| q_cap(v) * q.d2(v));
        QMoments {
            qp_sq,
            qpp_sq,
            q_cap_sq,
            q4_int,
            q_cap_qpp_int,
        }
    });

    Ok(MomentTable {
        grad_psi_sq: grad_sq,
        grad_psi_fourth: grad_4,
        hess_psi_frob_sq: hess_sq,
        tail_decay: tails,
        grad_phi_sq_mu,
        q_moments,
    })
}

fn scale(r: QuadResult, s: f64) -> QuadResult {
    QuadResult::new(s * r.value, s * r.error)
}

/// The symmetric positive matrix int grad psi (x) grad psi dgamma together
/// with its inverse-scaled companion M.
#[derive(Debug, Clone)]
pub struct MatrixM {
    pub m_script: DMatrix<f64>,
    /// Spectral radius of the script matrix.
    pub rho_script: f64,
    /// M = ‖grad psi‖^2_{L^2(gamma)} * (script M)^{-1}
    pub m: DMatrix<f64>,
    pub rho_m: f64,
}

/// Assembles the velocity covariance-of-gradient matrix. Uses the closed
/// tensorisation shortcut for separable and radial kinetic energies and
/// 2-D quadrature otherwise.
pub fn matrix_m(spec: &HamiltonianSpec, table: &MomentTable) -> Result<MatrixM, ModelError> {
    let d = spec.dim;
    let m_script = match &spec.kinetic {
        Kinetic::Separable(_) => {
            let q = table.q_moments.as_ref().expect("separable moments");
            DMatrix::identity(d, d) * q.qp_sq.value
        }
        Kinetic::Radial(_) => DMatrix::identity(d, d) * (table.grad_psi_sq.value / d as f64),
        Kinetic::Coupled { .. } => {
            let r = spec.r_v;
            let tol = spec.quad_tol;
            let mut m = DMatrix::zeros(2, 2);
            for i in 0..2 {
                for j in i..2 {
                    let val = integrate_2d(
                        |a, b| {
                            let g = spec.grad_psi(&[a, b]);
                            g[i] * g[j] * spec.gamma_density(&[a, b])
                        },
                        (-r, r),
                        (-r, r),
                        tol,
                    )
                    .value;
                    m[(i, j)] = val;
                    m[(j, i)] = val;
                }
            }
            m
        }
    };

    let eig = SymmetricEigen::new(m_script.clone());
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min_ev <= 1e-10 {
        return Err(ModelError::Degenerate(min_ev));
    }
    let inv = m_script
        .clone()
        .try_inverse()
        .ok_or(ModelError::Degenerate(min_ev))?;
    let m = inv * table.grad_psi_sq.value;
    let eig_m = SymmetricEigen::new(m.clone());
    let rho_m = eig_m.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(MatrixM {
        m_script,
        rho_script: max_ev,
        m,
        rho_m,
    })
}

/// Result of the Hessian-rank sufficient condition for hypoellipticity.
#[derive(Debug, Clone)]
pub struct HessianRankReport {
    pub min_singular_value: f64,
    pub failures: Vec<Vec<f64>>,
    pub pass: bool,
    pub tolerance: f64,
}

/// Evaluates the smallest singular value of the Hessian of psi over the given
/// sample points. Report-only: a failure means the condition is unverified.
pub fn hessian_rank_check(
    spec: &HamiltonianSpec,
    sample_points: &[Vec<f64>],
    tolerance: f64,
) -> HessianRankReport {
    let mut min_sv = f64::INFINITY;
    let mut failures = Vec::new();
    for p in sample_points {
        let h = spec.hess_psi(p);
        let svd = h.svd(false, false);
        let sv = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if sv <= tolerance {
            failures.push(p.clone());
        }
        min_sv = min_sv.min(sv);
    }
    HessianRankReport {
        min_singular_value: min_sv,
        pass: failures.is_empty(),
        failures,
        tolerance,
    }
}

/// Default sample cloud for the Hessian check: an axis grid plus diagonal rays.
pub fn default_hessian_samples(spec: &HamiltonianSpec, per_axis: usize) -> Vec<Vec<f64>> {
    let d = spec.dim;
    let mut pts = Vec::new();
    let r = spec.r_v.min(20.0);
    for k in 0..per_axis {
        let t = -r + 2.0 * r * (k as f64 + 0.5) / per_axis as f64;
        for axis in 0..d {
            let mut p = vec![0.0; d];
            p[axis] = t;
            pts.push(p);
        }
        pts.push(vec![t / (d as f64).sqrt(); d]);
    }
    pts
}

/// Empirically fitted regularity constants of the potential, obtained by
/// maximising the defining ratios on an axis grid. The separable structure
/// makes both constants dimension-independent.
#[derive(Debug, Clone, Copy)]
pub struct FittedPhiConstants {
    pub c_phi_prime: f64,
    pub c_phi_second: f64,
    pub provenance: Provenance,
}

pub fn fit_phi_constants(spec: &HamiltonianSpec, n_grid: usize) -> FittedPhiConstants {
    let (a, b) = spec.x_axis_bounds();
    let mut c1: f64 = 0.0;
    let mut c2: f64 = 0.0;
    for k in 0..n_grid {
        let x = a + (b - a) * (k as f64 + 0.5) / n_grid as f64;
        let d1 = spec.phi_axis.d1(x);
        let d2 = spec.phi_axis.d2(x);
        c1 = c1.max(d2.abs() / (1.0 + d1 * d1).sqrt());
        c2 = c2.max(d2 / (1.0 + d1 * d1));
    }
    FittedPhiConstants {
        c_phi_prime: c1,
        c_phi_second: c2.max(0.0),
        provenance: Provenance::Empirical,
    }
}

/// Residuals of the Gibbs normalization, for audits.
pub fn normalization_residuals(spec: &HamiltonianSpec) -> (f64, f64) {
    let (a, b) = spec.x_axis_bounds();
    let zx = integrate(|x| spec.mu_axis_density(x), a, b, spec.quad_tol).value;
    let zv = match &spec.kinetic {
        Kinetic::Separable(_) => {
            integrate(|v| spec.gamma_axis_density(v), -spec.r_v, spec.r_v, spec.quad_tol)
                .value
                .powi(spec.dim as i32)
        }
        Kinetic::Radial(kind) => {
            let shift = spec.psi_shift;
            radial_integral(
                &kind.profile(),
                spec.dim,
                spec.r_v,
                |_| (-shift).exp(),
                spec.quad_tol,
            )
            .value
        }
        Kinetic::Coupled { .. } => {
            let r = spec.r_v;
            integrate_2d(
                |a, b| spec.gamma_density(&[a, b]),
                (-r, r),
                (-r, r),
                spec.quad_tol,
            )
            .value
        }
    };
    ((zx.powi(spec.dim as i32) - 1.0).abs(), (zv - 1.0).abs())
}
