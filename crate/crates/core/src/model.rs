//! Process models and exit domains for 1-D small-noise diffusions.
//!
//! A model is the pair (b, sigma) of an SDE
//!
//! ```text
//! dX = b(X) ds + sqrt(eps) * sigma(X) dB,    X(0) = x0,
//! ```
//!
//! where x0 is a stable rest point: b(x0) = 0 and c = -b'(x0) > 0. The
//! linearization constants c and sigma_bar = sigma(x0) drive the LQR piece of
//! the subsolution family. The quasipotential with respect to x0,
//!
//! ```text
//! S(x0, x) = integral from x0 to x of -2 b(z) / sigma^2(z) dz,
//! ```
//!
//! measures the large-deviations cost of moving from x0 to x and sets the
//! exit level L of a domain: L = max(S(x0, A1), S(x0, A2)) / 2 for a
//! two-sided interval (A1, A2), and L = S(x0, A2) / 2 for the one-sided
//! domain (-inf, A2].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, DEFAULT_ABS_TOL, DEFAULT_MAX_DEPTH};

/// A thread-safe real function of position.
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Number of grid points per side used to check the drift sign conditions of
/// an exit domain.
const DRIFT_SIGN_GRID: usize = 128;

/// A 1-D diffusion model with a stable rest point.
///
/// Immutable after construction and safe to share across threads.
#[derive(Clone)]
pub struct ProcessModel {
    name: String,
    drift: RealFn,
    diffusion: RealFn,
    drift_deriv: Option<RealFn>,
    diffusion_deriv: Option<RealFn>,
    /// Analytic quasipotential S(x0, .), when the model supplies one.
    action: Option<RealFn>,
    rest_point: f64,
    lin_drift: f64,
    lin_diff: f64,
}

impl fmt::Debug for ProcessModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProcessModel")
            .field("name", &self.name)
            .field("rest_point", &self.rest_point)
            .field("lin_drift", &self.lin_drift)
            .field("lin_diff", &self.lin_diff)
            .finish()
    }
}

/// Builder for [`ProcessModel`]; validation happens in [`ModelBuilder::build`].
pub struct ModelBuilder {
    name: String,
    drift: RealFn,
    diffusion: RealFn,
    drift_deriv: Option<RealFn>,
    diffusion_deriv: Option<RealFn>,
    action: Option<RealFn>,
    rest_point: f64,
}

impl ModelBuilder {
    pub fn drift_deriv(mut self, d: RealFn) -> Self {
        self.drift_deriv = Some(d);
        self
    }

    pub fn diffusion_deriv(mut self, d: RealFn) -> Self {
        self.diffusion_deriv = Some(d);
        self
    }

    /// Supply an analytic quasipotential S(x0, .).
    pub fn action(mut self, s: RealFn) -> Self {
        self.action = Some(s);
        self
    }

    pub fn build(self) -> Result<ProcessModel> {
        let x0 = self.rest_point;
        let b0 = (self.drift)(x0);
        let h = 1e-6 * x0.abs().max(1.0);
        let c = match &self.drift_deriv {
            Some(db) => -db(x0),
            None => -((self.drift)(x0 + h) - (self.drift)(x0 - h)) / (2.0 * h),
        };
        let sigma_bar = (self.diffusion)(x0);
        let drift_scale = c.abs() * (1.0 + x0.abs());
        if b0.abs() > 1e-12 * drift_scale.max(1.0) {
            return Err(Error::DriftNotZeroAtRestPoint { x0, b: b0 });
        }
        if c <= 0.0 {
            return Err(Error::NonStableRestPoint { c });
        }
        if sigma_bar <= 0.0 {
            return Err(Error::DegenerateDiffusion {
                x: x0,
                sigma: sigma_bar,
            });
        }
        Ok(ProcessModel {
            name: self.name,
            drift: self.drift,
            diffusion: self.diffusion,
            drift_deriv: self.drift_deriv,
            diffusion_deriv: self.diffusion_deriv,
            action: self.action,
            rest_point: x0,
            lin_drift: c,
            lin_diff: sigma_bar,
        })
    }
}

impl ProcessModel {
    pub fn builder(
        name: impl Into<String>,
        drift: RealFn,
        diffusion: RealFn,
        rest_point: f64,
    ) -> ModelBuilder {
        ModelBuilder {
            name: name.into(),
            drift,
            diffusion,
            drift_deriv: None,
            diffusion_deriv: None,
            action: None,
            rest_point,
        }
    }

    /// Ornstein-Uhlenbeck model b(x) = -c x, sigma(x) = sigma_bar, rest point 0.
    pub fn linear(c: f64, sigma_bar: f64) -> Result<Self> {
        let s2 = sigma_bar * sigma_bar;
        Self::builder(
            "linear",
            Arc::new(move |x| -c * x),
            Arc::new(move |_| sigma_bar),
            0.0,
        )
        .drift_deriv(Arc::new(move |_| -c))
        .diffusion_deriv(Arc::new(|_| 0.0))
        .action(Arc::new(move |x| c * x * x / s2))
        .build()
    }

    /// Double-well gradient model b = -V' with V(x) = (x^2 - 1)^2 / 2,
    /// sigma = 1, rest point -1. Linearization: c = 4, sigma_bar = 1.
    pub fn double_well() -> Result<Self> {
        let v = |x: f64| 0.5 * (x * x - 1.0) * (x * x - 1.0);
        Self::builder(
            "double-well",
            Arc::new(|x| -2.0 * x * (x * x - 1.0)),
            Arc::new(|_| 1.0),
            -1.0,
        )
        .drift_deriv(Arc::new(|x| -(6.0 * x * x - 2.0)))
        .diffusion_deriv(Arc::new(|_| 0.0))
        // Gradient model with unit diffusion: S(x0, x) = 2 (V(x) - V(x0)).
        .action(Arc::new(move |x| 2.0 * (v(x) - v(-1.0))))
        .build()
    }

    /// Model with polynomial drift and diffusion given by coefficient lists
    /// in increasing degree order.
    pub fn polynomial(
        name: impl Into<String>,
        drift_coeffs: &[f64],
        diffusion_coeffs: &[f64],
        rest_point: f64,
    ) -> Result<Self> {
        let b = drift_coeffs.to_vec();
        let s = diffusion_coeffs.to_vec();
        let db = poly_deriv(&b);
        let ds = poly_deriv(&s);
        Self::builder(
            name,
            Arc::new(move |x| poly_eval(&b, x)),
            Arc::new(move |x| poly_eval(&s, x)),
            rest_point,
        )
        .drift_deriv(Arc::new(move |x| poly_eval(&db, x)))
        .diffusion_deriv(Arc::new(move |x| poly_eval(&ds, x)))
        .build()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rest_point(&self) -> f64 {
        self.rest_point
    }

    /// c = -b'(x0).
    pub fn lin_drift(&self) -> f64 {
        self.lin_drift
    }

    /// sigma_bar = sigma(x0).
    pub fn lin_diff(&self) -> f64 {
        self.lin_diff
    }

    /// The linearization constants (c, sigma_bar) at the rest point.
    pub fn linearize(&self) -> (f64, f64) {
        (self.lin_drift, self.lin_diff)
    }

    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    pub fn drift_deriv(&self, x: f64) -> f64 {
        match &self.drift_deriv {
            Some(d) => d(x),
            None => {
                let h = 1e-6 * x.abs().max(1.0);
                ((self.drift)(x + h) - (self.drift)(x - h)) / (2.0 * h)
            }
        }
    }

    pub fn sigma_deriv(&self, x: f64) -> f64 {
        match &self.diffusion_deriv {
            Some(d) => d(x),
            None => {
                let h = 1e-6 * x.abs().max(1.0);
                ((self.diffusion)(x + h) - (self.diffusion)(x - h)) / (2.0 * h)
            }
        }
    }

    /// Integrand of the quasipotential: S'(x) = -2 b(x) / sigma^2(x).
    pub fn action_deriv(&self, x: f64) -> f64 {
        let s = self.sigma(x);
        -2.0 * self.drift(x) / (s * s)
    }

    pub fn has_analytic_action(&self) -> bool {
        self.action.is_some()
    }

    /// The quasipotential S(x0, x), using the analytic antiderivative when
    /// the model supplies one and adaptive Simpson quadrature otherwise.
    pub fn quasipotential(&self, x: f64) -> Result<f64> {
        match &self.action {
            Some(s) => Ok(s(x)),
            None => adaptive_simpson(
                |z| self.action_deriv(z),
                self.rest_point,
                x,
                DEFAULT_ABS_TOL,
                DEFAULT_MAX_DEPTH,
            ),
        }
    }

    /// A fast evaluator for S(x0, .) usable in simulation inner loops:
    /// the analytic antiderivative when available, otherwise a cubic Hermite
    /// table over `[lo, hi]` built from cumulative quadrature.
    pub fn action_fn(&self, lo: f64, hi: f64) -> Result<RealFn> {
        if let Some(s) = &self.action {
            return Ok(Arc::clone(s));
        }
        let table = ActionTable::build(self, lo, hi, 1024)?;
        Ok(Arc::new(move |x| table.eval(x)))
    }
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn poly_deriv(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Cubic Hermite interpolation table for the quasipotential of a model
/// without an analytic antiderivative. Node values come from cumulative
/// adaptive quadrature; node derivatives are exact (-2b/sigma^2), so the
/// interpolant is fourth-order accurate in the node spacing.
struct ActionTable {
    lo: f64,
    dx: f64,
    vals: Vec<f64>,
    ders: Vec<f64>,
}

impl ActionTable {
    fn build(model: &ProcessModel, lo: f64, hi: f64, n: usize) -> Result<Self> {
        assert!(hi > lo && n >= 2);
        let dx = (hi - lo) / n as f64;
        let xs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * dx).collect();
        let mut vals = vec![0.0; n + 1];
        for i in 1..=n {
            let piece = adaptive_simpson(
                |z| model.action_deriv(z),
                xs[i - 1],
                xs[i],
                1e-13,
                DEFAULT_MAX_DEPTH,
            )?;
            vals[i] = vals[i - 1] + piece;
        }
        // Anchor so that the table vanishes at the rest point.
        let offset = adaptive_simpson(
            |z| model.action_deriv(z),
            lo,
            model.rest_point(),
            1e-12,
            DEFAULT_MAX_DEPTH,
        )?;
        for v in &mut vals {
            *v -= offset;
        }
        let ders = xs.iter().map(|&x| model.action_deriv(x)).collect();
        Ok(ActionTable {
            lo,
            dx,
            vals,
            ders,
        })
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.vals.len() - 1;
        let s = (x - self.lo) / self.dx;
        let i = (s.floor() as isize).clamp(0, n as isize - 1) as usize;
        let u = s - i as f64;
        let (v0, v1) = (self.vals[i], self.vals[i + 1]);
        let (d0, d1) = (self.ders[i] * self.dx, self.ders[i + 1] * self.dx);
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * v0
            + (u3 - 2.0 * u2 + u) * d0
            + (-2.0 * u3 + 3.0 * u2) * v1
            + (u3 - u2) * d1
    }
}

/// Kind of exit domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    /// Open interval (A1, A2) containing the rest point.
    TwoSided,
    /// Half line (-inf, A2]; trajectories are never absorbed on the left.
    OneSided,
}

/// An exit domain with its exit level L.
///
/// Immutable after construction and safe to share across threads.
#[derive(Clone, Debug)]
pub struct ExitDomain {
    kind: DomainKind,
    /// Left endpoint; `f64::NEG_INFINITY` sentinel for one-sided domains.
    a1: f64,
    a2: f64,
    level: f64,
}

impl ExitDomain {
    pub fn two_sided(model: &ProcessModel, a1: f64, a2: f64) -> Result<Self> {
        let x0 = model.rest_point();
        if !(a1 < x0 && x0 < a2) {
            return Err(Error::InvalidDomain(format!(
                "need A1 < x0 < A2, got A1 = {a1}, x0 = {x0}, A2 = {a2}"
            )));
        }
        check_drift_signs(model, a1, a2)?;
        let level = exit_level(model, DomainKind::TwoSided, a1, a2)?;
        Ok(ExitDomain {
            kind: DomainKind::TwoSided,
            a1,
            a2,
            level,
        })
    }

    pub fn one_sided(model: &ProcessModel, a2: f64) -> Result<Self> {
        let x0 = model.rest_point();
        if x0 >= a2 {
            return Err(Error::InvalidDomain(format!(
                "need x0 < A2, got x0 = {x0}, A2 = {a2}"
            )));
        }
        check_drift_signs(model, f64::NEG_INFINITY, a2)?;
        let level = exit_level(model, DomainKind::OneSided, f64::NEG_INFINITY, a2)?;
        Ok(ExitDomain {
            kind: DomainKind::OneSided,
            a1: f64::NEG_INFINITY,
            a2,
            level,
        })
    }

    /// Two-sided domain whose endpoints are the exact quasipotential level
    /// set {x : S(x0, x) = 2 * level}, located by bisection on each side.
    pub fn from_level(model: &ProcessModel, level: f64) -> Result<Self> {
        if level <= 0.0 {
            return Err(Error::InvalidDomain(format!(
                "exit level must be positive, got {level}"
            )));
        }
        let a2 = solve_level(model, level, 1.0)?;
        let a1 = solve_level(model, level, -1.0)?;
        Self::two_sided(model, a1, a2)
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    /// The exit level L.
    pub fn level(&self) -> f64 {
        self.level
    }

    /// True if `x` lies strictly inside the domain.
    pub fn contains(&self, x: f64) -> bool {
        match self.kind {
            DomainKind::TwoSided => self.a1 < x && x < self.a2,
            DomainKind::OneSided => x < self.a2,
        }
    }
}

/// L = max(S(x0, A1), S(x0, A2)) / 2 for two-sided domains and
/// S(x0, A2) / 2 for one-sided domains.
pub fn exit_level(model: &ProcessModel, kind: DomainKind, a1: f64, a2: f64) -> Result<f64> {
    let s2 = model.quasipotential(a2)?;
    match kind {
        DomainKind::TwoSided => {
            let s1 = model.quasipotential(a1)?;
            Ok(0.5 * s1.max(s2))
        }
        DomainKind::OneSided => Ok(0.5 * s2),
    }
}

/// Check b < 0 on (x0, A2] and b > 0 on [A1, x0) on a grid. For one-sided
/// domains (A1 = -inf) the left check covers [x0 - (A2 - x0), x0).
fn check_drift_signs(model: &ProcessModel, a1: f64, a2: f64) -> Result<()> {
    let x0 = model.rest_point();
    let left = if a1.is_finite() { a1 } else { x0 - (a2 - x0) };
    for i in 1..=DRIFT_SIGN_GRID {
        let frac = i as f64 / DRIFT_SIGN_GRID as f64;
        let xr = x0 + frac * (a2 - x0);
        if model.drift(xr) >= 0.0 {
            return Err(Error::InvalidDomain(format!(
                "drift must be negative on (x0, A2]: b({xr}) = {}",
                model.drift(xr)
            )));
        }
        let xl = x0 + frac * (left - x0);
        if model.drift(xl) <= 0.0 {
            return Err(Error::InvalidDomain(format!(
                "drift must be positive on [A1, x0): b({xl}) = {}",
                model.drift(xl)
            )));
        }
    }
    Ok(())
}

/// Solve S(x0, x) = 2 * level on the side of x0 given by `direction` (+1 or
/// -1) by bracket expansion and bisection.
fn solve_level(model: &ProcessModel, level: f64, direction: f64) -> Result<f64> {
    let x0 = model.rest_point();
    let target = 2.0 * level;
    let mut step = 0.1_f64;
    let mut hi = x0;
    let mut outside = None;
    for _ in 0..200 {
        let cand = x0 + direction * step;
        // Stop expanding once the drift sign condition breaks: the
        // level set must lie in the basin of attraction of x0.
        if direction * model.drift(cand) > 0.0 {
            outside = Some(cand);
            break;
        }
        if model.quasipotential(cand)? >= target {
            hi = cand;
            break;
        }
        step *= 1.5;
    }
    if hi == x0 {
        // The expansion left the basin before reaching the level. The
        // quasipotential is monotone up to the basin edge, so bisect for
        // the edge and check whether the level is attained just inside it.
        let Some(out) = outside else {
            return Err(Error::InvalidDomain(format!(
                "level {level} not reached inside the basin of attraction"
            )));
        };
        let mut inside = x0;
        let mut beyond = out;
        for _ in 0..200 {
            let mid = 0.5 * (inside + beyond);
            if direction * model.drift(mid) > 0.0 {
                beyond = mid;
            } else {
                inside = mid;
            }
            if (beyond - inside).abs() <= 1e-12 * (1.0 + beyond.abs()) {
                break;
            }
        }
        if model.quasipotential(inside)? < target {
            return Err(Error::InvalidDomain(format!(
                "level {level} not reached inside the basin of attraction"
            )));
        }
        hi = inside;
    }
    let mut lo = x0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if model.quasipotential(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= 1e-14 * (1.0 + hi.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
