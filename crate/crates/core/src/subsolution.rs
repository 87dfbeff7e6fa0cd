//! Subsolution families and the importance-sampling control.
//!
//! The exit probability of interest decays like exp(-2L/eps), so direct
//! Monte Carlo needs exponentially many samples. Importance sampling tilts
//! the dynamics with a feedback control u(t, x); the change of measure is
//! asymptotically efficient when u is derived from a subsolution Ubar of the
//! Hamilton-Jacobi-Bellman equation associated with the exit problem,
//!
//! ```text
//! u(t, x) = -sigma(x) D Ubar(t, x).
//! ```
//!
//! This module builds the subsolution family:
//!
//! * F1(x) = 2L - (c/sigma_bar^2)(x - x0)^2, the quadratic (LQR)
//!   approximation of the quasipotential subsolution, and its exact
//!   counterpart F1_bar(x) = 2L - S(x0, x).
//! * F2+/-^M(t, x) = a_M(t)((x - x0) -+ xhat e^{-c(t-T)})^2 + F1(x0 +- xhat),
//!   finite-horizon LQR value functions steering mass toward the boundary
//!   through the nominal points x0 +- xhat, with
//!   a_M(t) = c e^{2c(t-T)} / (K - sigma_bar^2 e^{2c(t-T)}), K = 2c/M +
//!   sigma_bar^2, and terminal curvature a_M(T) = M/2.
//! * U0, the explicit solution of the eps = 0 HJB equation for the linear
//!   model, pieced together from F1 and the M = infinity LQR quadratic.
//!
//! The pieces are blended by exponential mollification (a soft minimum)
//!
//! ```text
//! U_delta = -delta log sum_i exp(-U_i / delta),
//! ```
//!
//! which preserves the subsolution property up to a delta log n shift and
//! smooths the gradient kinks that would otherwise break the change of
//! measure analysis. For times within the handoff window t > T - t*, with
//! t* = -(2/c) log(2c/(M sigma_bar^2)), the scheme reverts to the
//! quasipotential piece alone, which keeps the combined function a
//! subsolution across the switch.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{DomainKind, ExitDomain, ProcessModel, RealFn};

/// Which subsolution drives the control.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    /// No tilt: plain Monte Carlo.
    None,
    /// Quasipotential subsolution F1_bar for all times.
    QuasipotentialOnly,
    /// Mollification of the piecewise eps = 0 HJB solutions U+0 and U-0
    /// (linear model only; one-sided domains use U+0 alone).
    EpsZeroHjb,
    /// Mollification of {F1, F2+^M, F2-^M} with the t* handoff.
    MollifiedLinear,
    /// Same with the exact quasipotential piece F1_bar in place of F1.
    MollifiedNonlinear,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::None => "none",
            SchemeKind::QuasipotentialOnly => "quasipotential",
            SchemeKind::EpsZeroHjb => "eps-zero-hjb",
            SchemeKind::MollifiedLinear => "mollified-linear",
            SchemeKind::MollifiedNonlinear => "mollified-nonlinear",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SchemeKind::None),
            "quasipotential" => Ok(SchemeKind::QuasipotentialOnly),
            "eps-zero-hjb" => Ok(SchemeKind::EpsZeroHjb),
            "mollified-linear" => Ok(SchemeKind::MollifiedLinear),
            "mollified-nonlinear" => Ok(SchemeKind::MollifiedNonlinear),
            other => Err(Error::Config(format!(
                "unknown scheme kind {other:?}; expected one of none, \
                 quasipotential, eps-zero-hjb, mollified-linear, \
                 mollified-nonlinear"
            ))),
        }
    }
}

/// How the terminal curvature M is chosen.
#[derive(Clone, Copy, Debug)]
pub enum MRule {
    Fixed(f64),
    /// M = 2 c xhat^2 / (sigma_bar^2 eps^{2 kappa}), kappa in [0, 1/2).
    Scaled { kappa: f64 },
}

/// All scheme knobs, with the derived quantities t*, z, H frozen at
/// construction.
#[derive(Clone, Copy, Debug)]
pub struct SchemeParams {
    /// Noise strength eps.
    pub eps: f64,
    /// Horizon T.
    pub horizon: f64,
    /// Nominal point offset xhat from the rest point.
    pub xhat: f64,
    /// Terminal-cost curvature M.
    pub m: f64,
    /// Scaling exponent of the M rule (0 when M is fixed).
    pub kappa: f64,
    /// Mollification parameter delta (default 2 eps).
    pub delta: f64,
    /// Handoff duration t* = -(2/c) log(2c/(M sigma_bar^2)).
    pub t_star: f64,
    /// Inner-region half-width z = xhat (c/(M sigma_bar^2))^{1/2} / 2.
    pub z: f64,
    /// Outer-region boundary H = 10 z.
    pub h: f64,
}

impl SchemeParams {
    pub fn new(
        c: f64,
        sigma_bar: f64,
        eps: f64,
        horizon: f64,
        xhat: f64,
        m_rule: MRule,
        delta: Option<f64>,
    ) -> Result<Self> {
        if !(eps > 0.0 && horizon > 0.0 && xhat > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need eps, T, xhat > 0; got eps = {eps}, T = {horizon}, xhat = {xhat}"
            )));
        }
        let (m, kappa) = match m_rule {
            MRule::Fixed(m) => {
                if !(m > 0.0) {
                    return Err(Error::InvalidParams(format!("need M > 0, got {m}")));
                }
                (m, 0.0)
            }
            MRule::Scaled { kappa } => {
                if !(0.0..0.5).contains(&kappa) {
                    return Err(Error::InvalidParams(format!(
                        "need kappa in [0, 1/2), got {kappa}"
                    )));
                }
                let m = 2.0 * c * xhat * xhat / (sigma_bar * sigma_bar * eps.powf(2.0 * kappa));
                (m, kappa)
            }
        };
        let delta = delta.unwrap_or(2.0 * eps);
        if delta < eps {
            return Err(Error::InvalidParams(format!(
                "need delta >= eps, got delta = {delta}, eps = {eps}"
            )));
        }
        let t_star = tstar(c, sigma_bar, m)?;
        let z = xhat * (c / (m * sigma_bar * sigma_bar)).sqrt() / 2.0;
        Ok(SchemeParams {
            eps,
            horizon,
            xhat,
            m,
            kappa,
            delta,
            t_star,
            z,
            h: 10.0 * z,
        })
    }
}

/// The LQR time coefficient a_M(t) = c e^{2c(t-T)} / (K - sigma_bar^2
/// e^{2c(t-T)}), K = 2c/M + sigma_bar^2. Strictly positive and increasing
/// for t <= T, with a_M(T) = M/2.
pub fn a_m(t: f64, c: f64, sigma_bar: f64, m: f64, horizon: f64) -> f64 {
    let w = (c * (t - horizon)).exp();
    let k = 2.0 * c / m + sigma_bar * sigma_bar;
    c * w * w / (k - sigma_bar * sigma_bar * w * w)
}

/// The handoff duration t* = -(2/c) log(2c/(M sigma_bar^2)).
pub fn tstar(c: f64, sigma_bar: f64, m: f64) -> Result<f64> {
    let msig2 = m * sigma_bar * sigma_bar;
    if msig2 <= 2.0 * c {
        return Err(Error::InvalidM {
            msig2,
            two_c: 2.0 * c,
        });
    }
    Ok(-(2.0 / c) * (2.0 * c / msig2).ln())
}

/// Pointwise evaluation of one subsolution piece with the derivatives the
/// verifier needs.
#[derive(Clone, Copy, Debug, Default)]
pub struct PieceEval {
    pub value: f64,
    /// Spatial derivative.
    pub dx: f64,
    /// Time derivative.
    pub dt: f64,
    /// Second spatial derivative.
    pub dxx: f64,
}

/// Maximum number of pieces blended at one point.
pub const MAX_PIECES: usize = 3;

/// Evaluation of the mollified subsolution together with the weights rho_i
/// of the pieces (in the same order as [`SubsolutionSet::pieces`]).
#[derive(Clone, Copy, Debug)]
pub struct MollifyEval {
    pub value: f64,
    pub dx: f64,
    pub dt: f64,
    pub dxx: f64,
    weights: [f64; MAX_PIECES],
    n: usize,
}

impl MollifyEval {
    pub fn weights(&self) -> &[f64] {
        &self.weights[..self.n]
    }
}

/// Soft minimum of value/gradient pairs: U_delta = -delta log sum
/// exp(-U_i/delta), computed by shifted log-sum-exp so any value spread is
/// safe. Returns (value, gradient, weights).
pub fn mollify(pieces: &[(f64, f64)], delta: f64) -> (f64, f64, Vec<f64>) {
    assert!(delta > 0.0 && !pieces.is_empty());
    let vmin = pieces.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let mut zsum = 0.0;
    let mut weights: Vec<f64> = pieces
        .iter()
        .map(|p| {
            let e = (-(p.0 - vmin) / delta).exp();
            zsum += e;
            e
        })
        .collect();
    let mut grad = 0.0;
    for (w, p) in weights.iter_mut().zip(pieces) {
        *w /= zsum;
        grad += *w * p.1;
    }
    (vmin - delta * zsum.ln(), grad, weights)
}

/// Soft minimum of full piece evaluations, with first and second
/// derivatives of the blend:
///
/// ```text
/// D U_delta   = sum rho_i D U_i
/// dt U_delta  = sum rho_i dt U_i
/// D^2 U_delta = sum rho_i D^2 U_i
///               - (1/delta) [sum rho_i (D U_i)^2 - (D U_delta)^2]
/// ```
pub fn mollify_full(pieces: &[PieceEval], delta: f64) -> MollifyEval {
    assert!(delta > 0.0 && !pieces.is_empty() && pieces.len() <= MAX_PIECES);
    let n = pieces.len();
    let vmin = pieces.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
    let mut w = [0.0; MAX_PIECES];
    let mut zsum = 0.0;
    for (i, p) in pieces.iter().enumerate() {
        w[i] = (-(p.value - vmin) / delta).exp();
        zsum += w[i];
    }
    let mut dx = 0.0;
    let mut dt = 0.0;
    let mut dxx_pieces = 0.0;
    let mut dx2 = 0.0;
    for (i, p) in pieces.iter().enumerate() {
        w[i] /= zsum;
        dx += w[i] * p.dx;
        dt += w[i] * p.dt;
        dxx_pieces += w[i] * p.dxx;
        dx2 += w[i] * p.dx * p.dx;
    }
    MollifyEval {
        value: vmin - delta * zsum.ln(),
        dx,
        dt,
        dxx: dxx_pieces - (dx2 - dx * dx) / delta,
        weights: w,
        n,
    }
}

/// The subsolution family for one scheme: pieces, mollification, handoff,
/// and the control. Immutable after construction; evaluation is pure, so a
/// set can be shared freely across worker threads.
#[derive(Clone)]
pub struct SubsolutionSet {
    kind: SchemeKind,
    model: ProcessModel,
    domain: ExitDomain,
    params: SchemeParams,
    c: f64,
    sigma_bar: f64,
    /// Fast quasipotential evaluator, present for kinds that use F1_bar.
    action: Option<RealFn>,
}

impl fmt::Debug for SubsolutionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubsolutionSet")
            .field("kind", &self.kind)
            .field("model", &self.model)
            .field("domain", &self.domain)
            .field("params", &self.params)
            .finish()
    }
}

impl SubsolutionSet {
    pub fn new(
        kind: SchemeKind,
        model: ProcessModel,
        domain: ExitDomain,
        params: SchemeParams,
    ) -> Result<Self> {
        let (c, sigma_bar) = model.linearize();
        let needs_action = matches!(
            kind,
            SchemeKind::QuasipotentialOnly | SchemeKind::MollifiedNonlinear
        );
        let action = if needs_action {
            let a2 = domain.a2();
            let x0 = model.rest_point();
            let lo = if domain.a1().is_finite() {
                domain.a1()
            } else {
                x0 - 3.0 * (a2 - x0)
            };
            let pad = 0.1 * (a2 - lo);
            Some(model.action_fn(lo - pad, a2 + pad)?)
        } else {
            None
        };
        let set = SubsolutionSet {
            kind,
            model,
            domain,
            params,
            c,
            sigma_bar,
            action,
        };
        set.check_handoff_dominance()?;
        Ok(set)
    }

    /// The performance analysis assumes M >= 4 c / sigma_bar^2 for the
    /// linear scheme and M >= 5 c / sigma_bar^2 for the nonlinear one.
    /// Smaller M still yields a valid (unbiased) sampler, and published
    /// reference configurations run below the floor, so construction does
    /// not enforce it; the verify layer reports it as a hypothesis.
    pub fn m_floor(&self) -> Option<f64> {
        let ratio = match self.kind {
            SchemeKind::MollifiedLinear => 4.0,
            SchemeKind::MollifiedNonlinear => 5.0,
            _ => return None,
        };
        Some(ratio * self.c / (self.sigma_bar * self.sigma_bar))
    }

    /// True when M meets the analysis floor (vacuously for kinds without
    /// one).
    pub fn m_floor_satisfied(&self) -> bool {
        self.m_floor()
            .is_none_or(|floor| self.params.m >= floor * (1.0 - 1e-12))
    }

    /// Verify U_delta(T - t*, x) <= F1(x) on a grid, so the quasipotential
    /// piece dominates at the switch and the subsolution property survives
    /// the handoff.
    fn check_handoff_dominance(&self) -> Result<()> {
        if !matches!(
            self.kind,
            SchemeKind::MollifiedLinear | SchemeKind::MollifiedNonlinear
        ) {
            return Ok(());
        }
        let p = &self.params;
        if p.horizon <= p.t_star {
            return Ok(());
        }
        let t = p.horizon - p.t_star;
        let x0 = self.model.rest_point();
        let a2 = self.domain.a2();
        let lo = if self.domain.a1().is_finite() {
            self.domain.a1()
        } else {
            x0 - (a2 - x0)
        };
        for i in 0..=256 {
            let x = lo + (a2 - lo) * i as f64 / 256.0;
            let quasi = self.quasi_piece(x).value;
            let blended = self.eval(t, x).value;
            if blended > quasi + 1e-9 {
                return Err(Error::HypothesisViolation(format!(
                    "handoff dominance fails at x = {x}: U_delta = {blended} > F1 = {quasi}"
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn model(&self) -> &ProcessModel {
        &self.model
    }

    pub fn domain(&self) -> &ExitDomain {
        &self.domain
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    /// The quadratic quasipotential approximation F1(x) = 2L -
    /// (c/sigma_bar^2)(x - x0)^2.
    pub fn f1(&self, x: f64) -> PieceEval {
        let y = x - self.model.rest_point();
        let q = self.c / (self.sigma_bar * self.sigma_bar);
        PieceEval {
            value: 2.0 * self.domain.level() - q * y * y,
            dx: -2.0 * q * y,
            dt: 0.0,
            dxx: -2.0 * q,
        }
    }

    /// The exact quasipotential piece F1_bar(x) = 2L - S(x0, x), with
    /// closed-form derivatives D F1_bar = 2 b / sigma^2 and D^2 F1_bar =
    /// 2 D(b / sigma^2).
    pub fn f1_bar(&self, x: f64) -> PieceEval {
        let action = self
            .action
            .as_ref()
            .expect("f1_bar requires a quasipotential evaluator");
        let s = self.model.sigma(x);
        let b = self.model.drift(x);
        let s2 = s * s;
        let dbs2 = (self.model.drift_deriv(x) * s2
            - 2.0 * b * s * self.model.sigma_deriv(x))
            / (s2 * s2);
        PieceEval {
            value: 2.0 * self.domain.level() - action(x),
            dx: 2.0 * b / s2,
            dt: 0.0,
            dxx: 2.0 * dbs2,
        }
    }

    /// The quasipotential piece of this scheme's kind: F1_bar for the
    /// nonlinear and quasipotential kinds, F1 otherwise.
    pub fn quasi_piece(&self, x: f64) -> PieceEval {
        match self.kind {
            SchemeKind::QuasipotentialOnly | SchemeKind::MollifiedNonlinear => self.f1_bar(x),
            _ => self.f1(x),
        }
    }

    /// The LQR piece through the nominal point on `side` (+1 or -1):
    /// F2+/-^M(t, x) = a_M(t)((x - x0) - (+/- xhat) e^{-c(t-T)})^2 +
    /// F1(x0 +/- xhat).
    pub fn f2m(&self, t: f64, x: f64, side: f64) -> PieceEval {
        let p = &self.params;
        let k = 2.0 * self.c / p.m + self.sigma_bar * self.sigma_bar;
        let q = self.c / (self.sigma_bar * self.sigma_bar);
        let offset = 2.0 * self.domain.level() - q * p.xhat * p.xhat;
        self.lqr_piece(t, x, k, side * p.xhat, offset)
    }

    /// Shared quadratic LQR evaluation: a(t)(y - yhat/w)^2 + offset with
    /// a(t) = c w^2 / (K - sigma_bar^2 w^2), w = e^{c(t-T)}. The time
    /// derivative uses the Riccati identity a' = 2 c a + 2 sigma_bar^2 a^2
    /// and (yhat/w)' = -c yhat/w.
    fn lqr_piece(&self, t: f64, x: f64, k: f64, yhat: f64, offset: f64) -> PieceEval {
        let c = self.c;
        let sb2 = self.sigma_bar * self.sigma_bar;
        let w = (c * (t - self.params.horizon)).exp();
        let a = c * w * w / (k - sb2 * w * w);
        let target = yhat / w;
        let d = (x - self.model.rest_point()) - target;
        let adot = 2.0 * c * a + 2.0 * sb2 * a * a;
        PieceEval {
            value: a * d * d + offset,
            dx: 2.0 * a * d,
            dt: adot * d * d + 2.0 * a * c * target * d,
            dxx: 2.0 * a,
        }
    }

    /// The eps = 0 HJB solution half U+0 (side = +1) or U-0 (side = -1) of
    /// the linear model: the quadratic F1 beyond the moving threshold
    /// A e^{c(t-T)}, the M = infinity LQR quadratic inside it.
    pub fn u0_piecewise(&self, t: f64, x: f64, side: f64) -> PieceEval {
        let x0 = self.model.rest_point();
        let amp = if side > 0.0 {
            self.domain.a2() - x0
        } else {
            x0 - self.domain.a1()
        };
        let q = self.c / (self.sigma_bar * self.sigma_bar);
        let y = x - x0;
        let w = (self.c * (t - self.params.horizon)).exp();
        if side * y >= amp * w {
            PieceEval {
                value: q * (amp * amp - y * y),
                dx: -2.0 * q * y,
                dt: 0.0,
                dxx: -2.0 * q,
            }
        } else {
            // M = infinity: K = sigma_bar^2, and the constant term
            // F1(x0 + side * amp) vanishes for this piece's own amplitude.
            self.lqr_piece(t, x, self.sigma_bar * self.sigma_bar, side * amp, 0.0)
        }
    }

    /// Offsets from x0 of the two solutions of F2+^M(t, x) = F1(x),
    /// as (r_minus, r_plus); F2+^M < F1 strictly between them.
    pub fn crossing_roots(&self, t: f64) -> Result<(f64, f64)> {
        let p = &self.params;
        let c = self.c;
        let sb2 = self.sigma_bar * self.sigma_bar;
        let k = 2.0 * c / p.m + sb2;
        let w = (c * (t - p.horizon)).exp();
        let disc = 2.0 * c * k / (p.m * sb2 * sb2) - (2.0 * c / (p.m * sb2)) * w * w;
        if disc < 0.0 {
            return Err(Error::ComplexRoots { t, disc });
        }
        let base = sb2 * p.xhat / k;
        let s = disc.sqrt();
        Ok((base * (w - s), base * (w + s)))
    }

    /// The active pieces at (t, x), in the fixed order (quasipotential
    /// piece; F2+; F2-). Writes into `out` and returns the count.
    pub fn pieces_into(&self, t: f64, x: f64, out: &mut [PieceEval; MAX_PIECES]) -> usize {
        let p = &self.params;
        match self.kind {
            SchemeKind::None => 0,
            SchemeKind::QuasipotentialOnly => {
                out[0] = self.f1_bar(x);
                1
            }
            SchemeKind::EpsZeroHjb => {
                out[0] = self.u0_piecewise(t, x, 1.0);
                if self.domain.kind() == DomainKind::TwoSided {
                    out[1] = self.u0_piecewise(t, x, -1.0);
                    2
                } else {
                    1
                }
            }
            SchemeKind::MollifiedLinear | SchemeKind::MollifiedNonlinear => {
                if p.horizon <= p.t_star || t > p.horizon - p.t_star {
                    out[0] = self.quasi_piece(x);
                    1
                } else {
                    out[0] = self.quasi_piece(x);
                    out[1] = self.f2m(t, x, 1.0);
                    if self.domain.kind() == DomainKind::TwoSided {
                        out[2] = self.f2m(t, x, -1.0);
                        3
                    } else {
                        2
                    }
                }
            }
        }
    }

    /// The active pieces at (t, x) as a slice-friendly pair.
    pub fn pieces(&self, t: f64, x: f64) -> ([PieceEval; MAX_PIECES], usize) {
        let mut out = [PieceEval::default(); MAX_PIECES];
        let n = self.pieces_into(t, x, &mut out);
        (out, n)
    }

    /// The combined subsolution Ubar_delta and all its derivatives plus the
    /// mollification weights. Kind `None` yields the zero function.
    pub fn eval(&self, t: f64, x: f64) -> MollifyEval {
        let mut buf = [PieceEval::default(); MAX_PIECES];
        let n = self.pieces_into(t, x, &mut buf);
        if n == 0 {
            return MollifyEval {
                value: 0.0,
                dx: 0.0,
                dt: 0.0,
                dxx: 0.0,
                weights: [0.0; MAX_PIECES],
                n: 0,
            };
        }
        if n == 1 {
            let p = buf[0];
            let mut weights = [0.0; MAX_PIECES];
            weights[0] = 1.0;
            return MollifyEval {
                value: p.value,
                dx: p.dx,
                dt: p.dt,
                dxx: p.dxx,
                weights,
                n: 1,
            };
        }
        mollify_full(&buf[..n], self.params.delta)
    }

    /// Value and spatial gradient of the combined subsolution.
    pub fn value_grad(&self, t: f64, x: f64) -> (f64, f64) {
        let e = self.eval(t, x);
        (e.value, e.dx)
    }

    /// The importance-sampling control u(t, x) = -sigma(x) D Ubar_delta.
    #[inline]
    pub fn control(&self, t: f64, x: f64) -> f64 {
        if self.kind == SchemeKind::None {
            return 0.0;
        }
        let (_, dx) = self.value_grad(t, x);
        -self.model.sigma(x) * dx
    }
}
