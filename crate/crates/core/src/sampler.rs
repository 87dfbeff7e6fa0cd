//! Controlled trajectory simulation and likelihood-ratio estimation.
//!
//! Under the importance-sampling measure the dynamics are tilted by the
//! control u(t, x) = -sigma(x) D Ubar(t, x):
//!
//! ```text
//! dX = (b(X) + sigma(X) u(t, X)) ds + sqrt(eps) sigma(X) dBbar,
//! ```
//!
//! and Girsanov's theorem gives the density of the original measure with
//! respect to the tilted one along the path,
//!
//! ```text
//! dP/dPbar = exp{ -(1/(2 eps)) int u^2 ds - (1/sqrt(eps)) int u dBbar }.
//! ```
//!
//! Each trajectory therefore contributes Gamma = 1{exit by T} exp(log_lr)
//! to the estimate of the exit probability and Gamma^2 to its second
//! moment; the per-sample relative error sqrt(m2 - theta^2)/theta measures
//! the efficiency of the scheme. The likelihood ratio is accumulated in
//! log space because exp(log_lr) spans hundreds of orders of magnitude
//! across the (eps, T) grid.
//!
//! Discretization is fixed-step Euler-Maruyama with the control frozen at
//! the left endpoint of each step and exit detected at grid points only.
//! Trajectories alive at T contribute zero to both moments.
//!
//! Reproducibility: every trajectory draws from a counter-based stream
//! keyed by (seed, cell, trajectory), trajectories are processed in chunks
//! of fixed size, and chunk partial sums are combined sequentially in chunk
//! order. Estimates are therefore bit-identical for any worker count.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::DomainKind;
use crate::rng::CounterRng;
use crate::subsolution::{MRule, SchemeKind, SchemeParams, SubsolutionSet};
use crate::model::{ExitDomain, ProcessModel};

/// Trajectories per aggregation chunk. Partial sums are folded in chunk
/// order, so this constant (not the worker count) fixes the floating-point
/// association of the final sums.
const CHUNK: u64 = 4096;

/// Which boundary a trajectory crossed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitSide {
    Left,
    Right,
}

/// Simulation knobs for one estimate.
#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    /// Noise strength eps.
    pub eps: f64,
    /// Horizon T.
    pub horizon: f64,
    /// Euler-Maruyama step size.
    pub dt: f64,
    /// Sample count.
    pub n: u64,
    /// Master seed.
    pub seed: u64,
    /// Cell index mixed into the RNG key (0 for standalone estimates).
    pub cell: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(Error::Config(format!(
                "need 0 < dt <= T, got dt = {}, T = {}",
                self.dt, self.horizon
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("need at least one sample".into()));
        }
        Ok(())
    }
}

/// Result of a single controlled trajectory.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryOutcome {
    pub exited: bool,
    pub exit_time: Option<f64>,
    pub exit_side: Option<ExitSide>,
    /// log dP/dPbar along the path (0 under the plain scheme).
    pub log_lr: f64,
}

/// Monte Carlo estimate of the exit probability with its second moment.
#[derive(Clone, Copy, Debug)]
pub struct EstimatorReport {
    pub n: u64,
    /// Number of trajectories that exited.
    pub hits: u64,
    /// theta_hat = (1/N) sum 1{exit} exp(log_lr).
    pub estimate: f64,
    /// (1/N) sum 1{exit} exp(2 log_lr).
    pub second_moment: f64,
    /// sqrt(second_moment - estimate^2) / estimate; NaN when nothing exited.
    pub rel_error_per_sample: f64,
    /// rel_error_per_sample * estimate / sqrt(n); NaN when nothing exited.
    pub std_error: f64,
}

impl EstimatorReport {
    /// True when no trajectory exited, so the estimate 0 carries no
    /// variance information.
    pub fn zero_hits(&self) -> bool {
        self.hits == 0
    }
}

/// Simulate one controlled trajectory from the rest point.
pub fn simulate_trajectory(
    set: &SubsolutionSet,
    config: &SimConfig,
    rng: &mut CounterRng,
) -> Result<TrajectoryOutcome> {
    simulate_trajectory_from(set, config, set.model().rest_point(), rng)
}

/// Simulate one controlled trajectory from an arbitrary start point.
pub fn simulate_trajectory_from(
    set: &SubsolutionSet,
    config: &SimConfig,
    start: f64,
    rng: &mut CounterRng,
) -> Result<TrajectoryOutcome> {
    let model = set.model();
    let domain = set.domain();
    let eps = config.eps;
    let sqrt_eps = eps.sqrt();
    let mut x = start;
    let mut log_lr = 0.0;
    let mut t = 0.0;
    let mut step = 0usize;
    while t < config.horizon {
        let h = config.dt.min(config.horizon - t);
        let u = set.control(t, x);
        let xi = rng.next_normal();
        let db = h.sqrt() * xi;
        let sigma = model.sigma(x);
        x += (model.drift(x) + sigma * u) * h + sigma * sqrt_eps * db;
        log_lr += -(0.5 / eps) * u * u * h - (u / sqrt_eps) * db;
        t += h;
        step += 1;
        if !x.is_finite() || !log_lr.is_finite() {
            return Err(Error::NonFiniteState { step, x });
        }
        if !domain.contains(x) {
            let side = if domain.kind() == DomainKind::TwoSided && x <= domain.a1() {
                ExitSide::Left
            } else {
                ExitSide::Right
            };
            return Ok(TrajectoryOutcome {
                exited: true,
                exit_time: Some(t),
                exit_side: Some(side),
                log_lr,
            });
        }
    }
    Ok(TrajectoryOutcome {
        exited: false,
        exit_time: None,
        exit_side: None,
        log_lr,
    })
}

#[derive(Clone, Copy, Default)]
struct Partial {
    sum: f64,
    sum2: f64,
    hits: u64,
}

/// Estimate the exit probability by importance sampling.
///
/// Deterministic for fixed (seed, cell, n) regardless of how many rayon
/// workers execute the chunks.
pub fn estimate(set: &SubsolutionSet, config: &SimConfig) -> Result<EstimatorReport> {
    config.validate()?;
    let n = config.n;
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<Result<Partial>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = ((chunk + 1) * CHUNK).min(n);
            let mut p = Partial::default();
            for traj in lo..hi {
                let mut rng = CounterRng::for_trajectory(config.seed, config.cell, traj);
                let out = simulate_trajectory(set, config, &mut rng)?;
                if out.exited {
                    let gamma = out.log_lr.exp();
                    p.sum += gamma;
                    p.sum2 += gamma * gamma;
                    p.hits += 1;
                }
            }
            Ok(p)
        })
        .collect();
    let mut total = Partial::default();
    for p in partials {
        let p = p?;
        total.sum += p.sum;
        total.sum2 += p.sum2;
        total.hits += p.hits;
    }
    let nf = n as f64;
    let estimate = total.sum / nf;
    let second_moment = total.sum2 / nf;
    let (rel, se) = if total.hits == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let var = (second_moment - estimate * estimate).max(0.0);
        let rel = var.sqrt() / estimate;
        (rel, var.sqrt() / nf.sqrt())
    };
    Ok(EstimatorReport {
        n,
        hits: total.hits,
        estimate,
        second_moment,
        rel_error_per_sample: rel,
        std_error: se,
    })
}

/// One cell of an experiment grid.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub eps: f64,
    pub horizon: f64,
    pub cell: u64,
    pub report: Result<EstimatorReport>,
    pub wall_time_s: f64,
}

/// Layout and sampling parameters of an (eps, T) experiment grid.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub eps: Vec<f64>,
    pub horizons: Vec<f64>,
    pub n: u64,
    pub dt: f64,
    pub seed: u64,
}

/// Rule fixing the LQR target offset xhat, either as a constant or scaled
/// with the noise as eps^lambda. When both xhat and M scale with eps
/// (lambda and kappa rules), the handoff geometry requires lambda < kappa
/// for small eps; [`SchemeSpec::validate`] enforces this.
#[derive(Clone, Copy, Debug)]
pub enum XhatRule {
    Fixed(f64),
    Scaled { lambda: f64 },
}

impl XhatRule {
    pub fn resolve(&self, eps: f64) -> f64 {
        match *self {
            XhatRule::Fixed(x) => x,
            XhatRule::Scaled { lambda } => eps.powf(lambda),
        }
    }
}

/// Scheme construction knobs shared by all cells of a grid; eps and T vary
/// per cell, so each cell rebuilds its own `SubsolutionSet`.
#[derive(Clone, Copy, Debug)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub m_rule: MRule,
    pub xhat: XhatRule,
    /// Mollification parameter; `None` selects the default 2 eps.
    pub delta: Option<f64>,
}

impl SchemeSpec {
    pub fn validate(&self) -> Result<()> {
        if let (XhatRule::Scaled { lambda }, MRule::Scaled { kappa }) = (self.xhat, self.m_rule) {
            if !(lambda < kappa) {
                return Err(Error::Config(format!(
                    "when both xhat and M scale with eps, need lambda < kappa; \
                     got lambda = {lambda}, kappa = {kappa}"
                )));
            }
        }
        Ok(())
    }

    pub fn build(
        &self,
        model: &ProcessModel,
        domain: &ExitDomain,
        eps: f64,
        horizon: f64,
    ) -> Result<SubsolutionSet> {
        self.validate()?;
        let (c, sigma_bar) = model.linearize();
        let xhat = self.xhat.resolve(eps);
        let params = SchemeParams::new(c, sigma_bar, eps, horizon, xhat, self.m_rule, self.delta)?;
        SubsolutionSet::new(self.kind, model.clone(), domain.clone(), params)
    }
}

/// Run a full (eps, T) grid. Cells are numbered row-major over
/// (eps index, T index); a cell that fails to build or simulate records
/// its error without aborting the rest of the grid.
pub fn experiment_grid(
    model: &ProcessModel,
    domain: &ExitDomain,
    scheme: &SchemeSpec,
    grid: &GridSpec,
) -> Vec<CellResult> {
    let mut out = Vec::with_capacity(grid.eps.len() * grid.horizons.len());
    for (i, &eps) in grid.eps.iter().enumerate() {
        for (j, &horizon) in grid.horizons.iter().enumerate() {
            let cell = (i * grid.horizons.len() + j) as u64;
            let start = Instant::now();
            let report = scheme.build(model, domain, eps, horizon).and_then(|set| {
                let config = SimConfig {
                    eps,
                    horizon,
                    dt: grid.dt,
                    n: grid.n,
                    seed: grid.seed,
                    cell,
                };
                estimate(&set, &config)
            });
            out.push(CellResult {
                eps,
                horizon,
                cell,
                report,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExitDomain, ProcessModel};

    fn linear_setup(kind: SchemeKind, eps: f64, horizon: f64) -> (SubsolutionSet, SimConfig) {
        let model = ProcessModel::linear(1.0, 1.0).unwrap();
        let domain = ExitDomain::two_sided(&model, -1.0, 1.0).unwrap();
        let params =
            SchemeParams::new(1.0, 1.0, eps, horizon, 1.0, MRule::Fixed(4.0), None).unwrap();
        let set = SubsolutionSet::new(kind, model, domain, params).unwrap();
        let config = SimConfig {
            eps,
            horizon,
            dt: 1e-3,
            n: 1000,
            seed: 42,
            cell: 0,
        };
        (set, config)
    }

    #[test]
    fn plain_scheme_has_zero_log_lr() {
        let (set, config) = linear_setup(SchemeKind::None, 0.2, 2.0);
        for traj in 0..50 {
            let mut rng = CounterRng::for_trajectory(config.seed, 0, traj);
            let out = simulate_trajectory(&set, &config, &mut rng).unwrap();
            assert_eq!(out.log_lr, 0.0);
            if out.exited {
                assert!(out.exit_time.unwrap() <= config.horizon + 1e-12);
                assert!(out.exit_side.is_some());
            }
        }
    }

    #[test]
    fn small_eps_plain_monte_carlo_never_exits() {
        let (set, mut config) = linear_setup(SchemeKind::None, 0.02, 2.0);
        config.n = 2000;
        let report = estimate(&set, &config).unwrap();
        assert!(report.zero_hits());
        assert_eq!(report.estimate, 0.0);
        assert!(report.rel_error_per_sample.is_nan());
    }

    #[test]
    fn quasipotential_control_destabilizes_the_origin() {
        // With u = 2x the tilted mean drift is +x, so almost every
        // trajectory reaches the boundary well before T.
        let (set, mut config) = linear_setup(SchemeKind::QuasipotentialOnly, 0.1, 5.0);
        config.n = 500;
        let report = estimate(&set, &config).unwrap();
        assert!(
            report.hits as f64 > 0.9 * config.n as f64,
            "hits = {} of {}",
            report.hits,
            config.n
        );
        // The estimate itself stays near the true small probability even
        // though nearly all tilted trajectories exit.
        assert!(report.estimate < 0.05);
    }

    #[test]
    fn jensen_inequality_between_moments() {
        for kind in [
            SchemeKind::None,
            SchemeKind::QuasipotentialOnly,
            SchemeKind::MollifiedLinear,
        ] {
            let (set, mut config) = linear_setup(kind, 0.2, 2.5);
            config.n = 4000;
            let r = estimate(&set, &config).unwrap();
            assert!(r.second_moment >= r.estimate * r.estimate - 1e-18);
        }
    }

    #[test]
    fn reports_are_bit_identical_across_worker_counts() {
        let mut reports = Vec::new();
        for workers in [1usize, 2, 8] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .unwrap();
            let (set, mut config) = linear_setup(SchemeKind::MollifiedLinear, 0.13, 2.5);
            config.n = 20_000;
            let r = pool.install(|| estimate(&set, &config)).unwrap();
            reports.push(r);
        }
        for r in &reports[1..] {
            assert_eq!(r.estimate.to_bits(), reports[0].estimate.to_bits());
            assert_eq!(r.second_moment.to_bits(), reports[0].second_moment.to_bits());
            assert_eq!(r.hits, reports[0].hits);
        }
    }

    #[test]
    fn unbiasedness_plain_versus_mollified() {
        let (plain, mut cfg_plain) = linear_setup(SchemeKind::None, 0.2, 1.5);
        cfg_plain.n = 30_000;
        let rp = estimate(&plain, &cfg_plain).unwrap();
        let (moll, mut cfg_moll) = linear_setup(SchemeKind::MollifiedLinear, 0.2, 1.5);
        cfg_moll.n = 30_000;
        cfg_moll.seed = 43;
        let rm = estimate(&moll, &cfg_moll).unwrap();
        let se = (rp.std_error.powi(2) + rm.std_error.powi(2)).sqrt();
        assert!(
            (rp.estimate - rm.estimate).abs() <= 3.0 * se,
            "plain {} vs mollified {} (3 se = {})",
            rp.estimate,
            rm.estimate,
            3.0 * se
        );
    }

    #[test]
    fn estimate_monotone_in_horizon() {
        let (s1, mut c1) = linear_setup(SchemeKind::MollifiedLinear, 0.2, 1.5);
        c1.n = 20_000;
        let r1 = estimate(&s1, &c1).unwrap();
        let (s2, mut c2) = linear_setup(SchemeKind::MollifiedLinear, 0.2, 4.0);
        c2.n = 20_000;
        c2.seed = 99;
        let r2 = estimate(&s2, &c2).unwrap();
        let se = (r1.std_error.powi(2) + r2.std_error.powi(2)).sqrt();
        assert!(r1.estimate <= r2.estimate + 3.0 * se);
    }

    #[test]
    fn grid_reduces_to_estimate_for_single_cell() {
        let model = ProcessModel::linear(1.0, 1.0).unwrap();
        let domain = ExitDomain::two_sided(&model, -1.0, 1.0).unwrap();
        let scheme = SchemeSpec {
            kind: SchemeKind::MollifiedLinear,
            m_rule: MRule::Fixed(4.0),
            xhat: XhatRule::Fixed(1.0),
            delta: None,
        };
        let grid = GridSpec {
            eps: vec![0.2],
            horizons: vec![2.0],
            n: 5000,
            dt: 1e-3,
            seed: 7,
        };
        let cells = experiment_grid(&model, &domain, &scheme, &grid);
        assert_eq!(cells.len(), 1);
        let cell_report = cells[0].report.as_ref().unwrap();
        let set = scheme.build(&model, &domain, 0.2, 2.0).unwrap();
        let config = SimConfig {
            eps: 0.2,
            horizon: 2.0,
            dt: 1e-3,
            n: 5000,
            seed: 7,
            cell: 0,
        };
        let direct = estimate(&set, &config).unwrap();
        assert_eq!(cell_report.estimate.to_bits(), direct.estimate.to_bits());
    }

    #[test]
    fn grid_captures_cell_errors_without_aborting() {
        let model = ProcessModel::linear(1.0, 1.0).unwrap();
        let domain = ExitDomain::two_sided(&model, -1.0, 1.0).unwrap();
        let scheme = SchemeSpec {
            kind: SchemeKind::MollifiedLinear,
            m_rule: MRule::Scaled { kappa: 0.4 },
            xhat: XhatRule::Fixed(1.0),
            delta: Some(0.1),
        };
        // delta = 0.1 < eps for the first cell (invalid), fine for the
        // second.
        let grid = GridSpec {
            eps: vec![0.2, 0.05],
            horizons: vec![1.5],
            n: 500,
            dt: 1e-3,
            seed: 7,
        };
        let cells = experiment_grid(&model, &domain, &scheme, &grid);
        assert_eq!(cells.len(), 2);
        assert!(cells[0].report.is_err());
        assert!(cells[1].report.is_ok());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (set, mut config) = linear_setup(SchemeKind::None, 0.2, 2.0);
        config.dt = 0.0;
        assert!(estimate(&set, &config).is_err());
        config.dt = 1e-3;
        config.n = 0;
        assert!(estimate(&set, &config).is_err());
    }
}
