//! Model abstraction: unit-cube points, prior transforms, log-likelihoods,
//! and the compiled-in catalog of benchmark problems.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::math::logaddexp;

pub type TransformFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
pub type LogLikeFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Names accepted by [`catalog`].
pub const CATALOG_NAMES: [&str; 5] = ["gauss2d", "gauss10d", "funnel2d", "bimodal2d", "sphere-shell"];

/// Inverse-CDF transforms for a single coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    LogUniform { lo: f64, hi: f64 },
}

// keeps normal quantiles finite at the cube faces
const QUANTILE_CLAMP: f64 = 1e-16;

impl Prior {
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => lo + u * (hi - lo),
            Prior::Normal { mean, sd } => mean + sd * std_normal_quantile(u),
            Prior::LogUniform { lo, hi } => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
        }
    }
}

pub(crate) fn std_normal_quantile(u: f64) -> f64 {
    let u = u.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP);
    Normal::standard().inverse_cdf(u)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2))
}

fn log_normal_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

/// Analytic description of the sphere-shell likelihood, used by the
/// exact-geometry reference sampler and by shrinkage calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellGeometry {
    pub center: f64,
    pub radius: f64,
    pub width: f64,
}

impl ShellGeometry {
    pub const DEFAULT: ShellGeometry = ShellGeometry { center: 0.5, radius: 0.2, width: 0.01 };

    pub fn loglike(&self, v: &[f64]) -> f64 {
        let r = v.iter().map(|x| (x - self.center).powi(2)).sum::<f64>().sqrt();
        let z = (r - self.radius) / self.width;
        -0.5 * z * z
    }

    /// Radial bounds `(inner, outer)` of the region `logl > threshold`.
    pub fn radial_bounds(&self, threshold: f64) -> (f64, f64) {
        let half = if threshold >= 0.0 { 0.0 } else { self.width * (-2.0 * threshold).sqrt() };
        ((self.radius - half).max(0.0), self.radius + half)
    }

    /// Volume of `{u in [0,1]^2 : logl(u) > threshold}`, or `None` when the
    /// annulus is clipped by the cube faces.
    pub fn constrained_volume(&self, threshold: f64) -> Option<f64> {
        let (inner, outer) = self.radial_bounds(threshold);
        if outer > self.center.min(1.0 - self.center) {
            return None;
        }
        Some(PI * (outer * outer - inner * inner))
    }

    fn log_evidence(&self) -> f64 {
        // integral over the plane of exp(-(r - r0)^2 / 2w^2); the cube clips only ~e^-450
        let (r0, w) = (self.radius, self.width);
        let radial = w * w * (-(r0 * r0) / (2.0 * w * w)).exp() + r0 * w * (2.0 * PI).sqrt() * std_normal_cdf(r0 / w);
        (2.0 * PI * radial).ln()
    }
}

/// A model under analysis: dimension, prior transform and log-likelihood.
///
/// Problems are immutable and cheap to clone; both functions must be pure so
/// they can be evaluated from several workers at once.
#[derive(Clone)]
pub struct Problem {
    name: String,
    dim: usize,
    transform: Arc<TransformFn>,
    loglike: Arc<LogLikeFn>,
    ref_logz: Option<f64>,
    shell: Option<ShellGeometry>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("ref_logz", &self.ref_logz)
            .finish()
    }
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        transform: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        loglike: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Usage("problem dimension must be at least 1".into()));
        }
        Ok(Problem {
            name: name.into(),
            dim,
            transform: Arc::new(transform),
            loglike: Arc::new(loglike),
            ref_logz: None,
            shell: None,
        })
    }

    /// Problem whose prior factorizes into one [`Prior`] per coordinate.
    pub fn separable(
        name: impl Into<String>,
        priors: Vec<Prior>,
        loglike: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let dim = priors.len();
        Problem::new(name, dim, move |u: &[f64]| u.iter().zip(&priors).map(|(&x, p)| p.quantile(x)).collect(), loglike)
    }

    /// Constant likelihood `exp(log_c)` on the unit cube; the evidence is exactly `exp(log_c)`.
    pub fn flat(dim: usize, log_c: f64) -> Result<Self> {
        Ok(Problem::new("flat", dim, |u: &[f64]| u.to_vec(), move |_: &[f64]| log_c)?.with_ref_logz(log_c))
    }

    pub fn with_ref_logz(mut self, logz: f64) -> Self {
        self.ref_logz = Some(logz);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ref_logz(&self) -> Option<f64> {
        self.ref_logz
    }

    pub fn shell_geometry(&self) -> Option<ShellGeometry> {
        self.shell
    }

    /// Validating prior transform from u-space to v-space.
    pub fn prior_transform(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim {
            return Err(Error::Usage(format!(
                "point has dimension {} but problem '{}' has dimension {}",
                u.len(),
                self.name,
                self.dim
            )));
        }
        if let Some(bad) = u.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Usage(format!("unit coordinate {bad} outside [0, 1]")));
        }
        Ok((self.transform)(u))
    }

    /// Transform without validation, for points already known to be in the cube.
    pub fn transform(&self, u: &[f64]) -> Vec<f64> {
        (self.transform)(u)
    }

    /// Log-likelihood at a v-space point. NaN is reported as an error;
    /// `-inf` marks an excluded point.
    pub fn loglike(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim {
            return Err(Error::Usage(format!(
                "parameter vector has dimension {} but problem '{}' has dimension {}",
                v.len(),
                self.name,
                self.dim
            )));
        }
        let logl = (self.loglike)(v);
        if logl.is_nan() {
            return Err(Error::InvalidLikelihood(v.to_vec()));
        }
        Ok(logl)
    }

    /// Transform and evaluate a unit-cube point.
    pub fn evaluate(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        let v = self.transform(u);
        let logl = self.loglike(&v)?;
        Ok((v, logl))
    }
}

fn gauss(name: &str, dim: usize) -> Problem {
    let norm = -0.5 * dim as f64 * (2.0 * PI).ln();
    let logz = dim as f64 * (erf(5.0 / SQRT_2) / 10.0).ln();
    Problem::separable(name, vec![Prior::Uniform { lo: -5.0, hi: 5.0 }; dim], move |v: &[f64]| {
        norm - 0.5 * v.iter().map(|x| x * x).sum::<f64>()
    })
    .expect("positive dimension")
    .with_ref_logz(logz)
}

const BIMODAL_SIGMA: f64 = 0.1;
const BIMODAL_OFFSET: f64 = 2.0;

fn bimodal() -> Problem {
    let s = BIMODAL_SIGMA;
    let loglike = move |v: &[f64]| {
        let mode = |mx: f64| log_normal_density(v[0], mx, s) + log_normal_density(v[1], 0.0, s) + 0.5f64.ln();
        logaddexp(mode(BIMODAL_OFFSET), mode(-BIMODAL_OFFSET))
    };
    let in_box = |m: f64| std_normal_cdf((5.0 - m) / s) - std_normal_cdf((-5.0 - m) / s);
    let mass = 0.5 * in_box(BIMODAL_OFFSET) * in_box(0.0) + 0.5 * in_box(-BIMODAL_OFFSET) * in_box(0.0);
    Problem::separable("bimodal2d", vec![Prior::Uniform { lo: -5.0, hi: 5.0 }; 2], loglike)
        .expect("positive dimension")
        .with_ref_logz((mass / 100.0).ln())
}

const FUNNEL_LIKE_SD: f64 = 0.1;

/// Funnel prior `v1 ~ U(-3, 3)`, `v2 | v1 ~ N(0, e^{v1})` with a likelihood
/// that only constrains `v2`. The constrained region is a strip in v-space
/// but a funnel in u-space: the allowed `u2` interval narrows like `e^{-v1}`
/// along `u1`, at every threshold.
fn funnel() -> Problem {
    let sd = FUNNEL_LIKE_SD;
    let transform = |u: &[f64]| {
        let v1 = -3.0 + 6.0 * u[0];
        vec![v1, v1.exp() * std_normal_quantile(u[1])]
    };
    let loglike = move |v: &[f64]| log_normal_density(v[1], 0.0, sd);
    // Z = (1/6) * int_{-3}^{3} N(0; 0, sqrt(sd^2 + e^{2 v1})) dv1
    let integrand = |v1: f64| log_normal_density(0.0, 0.0, (sd * sd + (2.0 * v1).exp()).sqrt()).exp() / 6.0;
    let z = simpson(integrand, -3.0, 3.0, 20_000);
    Problem::new("funnel2d", 2, transform, loglike).expect("positive dimension").with_ref_logz(z.ln())
}

fn sphere_shell() -> Problem {
    let geom = ShellGeometry::DEFAULT;
    let mut p = Problem::new("sphere-shell", 2, |u: &[f64]| u.to_vec(), move |v: &[f64]| geom.loglike(v))
        .expect("positive dimension")
        .with_ref_logz(geom.log_evidence());
    p.shell = Some(geom);
    p
}

/// Composite Simpson rule on `panels` (rounded up to even) subintervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// Look up a built-in benchmark problem by name.
pub fn catalog(name: &str) -> Result<Problem> {
    match name {
        "gauss2d" => Ok(gauss("gauss2d", 2)),
        "gauss10d" => Ok(gauss("gauss10d", 10)),
        "funnel2d" => Ok(funnel()),
        "bimodal2d" => Ok(bimodal()),
        "sphere-shell" => Ok(sphere_shell()),
        other => {
            Err(Error::Usage(format!("unknown problem '{other}'; available problems: {}", CATALOG_NAMES.join(", "))))
        }
    }
}
