//! Time integration.
//!
//! [`integrate_window`] is an adaptive Dormand–Prince 5(4) integrator for an
//! ordinary system whose delayed inputs are frozen (they only read committed
//! history). The two drivers cut the horizon into windows no longer than the
//! shortest delay so that every window is such an ordinary system.

use thiserror::Error;

use crate::history::{Segment, StateVector, Trajectory, TrajectoryError};
use crate::kernels::{LookupError, Quadrature};
use crate::model::{
    g_of_t, h_of_t, rhs_continuous, rhs_discrete, ContactRate, LagScheme, ModelError,
    ScenarioConfig,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("step size {h:e} below minimum at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("exceeded {max_steps} steps in window ending at {t1} (stopped at t = {t})")]
    MaxSteps { t: f64, t1: f64, max_steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid step control: {0}")]
    Control(String),
    #[error(transparent)]
    Lookup(#[from] LookupError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Config(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Fixed first step; `None` picks one from the local Lipschitz estimate.
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub h_max: f64,
    /// Per window.
    pub max_steps: usize,
}

impl StepControl {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            h_init: None,
            h_min: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Control(m.to_string()));
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("rtol and atol must be positive");
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_max) {
            return bad("need 0 < h_min <= h_max");
        }
        if let Some(h) = self.h_init {
            if !(h >= self.h_min && h <= self.h_max) {
                return bad("need h_min <= h_init <= h_max");
            }
        }
        Ok(())
    }
}

/// An accepted integrator point with its derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedStep {
    pub t: f64,
    pub y: StateVector,
    pub dy: StateVector,
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Quartic term of the Dormand–Prince continuous extension. That extension is
// the cubic Hermite interpolant plus θ²(1−θ)²·h·Σ Dᵢkᵢ, so a sixteenth of
// the sum estimates the Hermite error at the step midpoint.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// PI controller constants (Hairer, Nørsett & Wanner).
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn combo(y: &StateVector, h: f64, terms: &[(f64, &StateVector)]) -> StateVector {
    let mut out = *y;
    for k in 0..6 {
        let mut acc = 0.0;
        for (a, v) in terms {
            acc += a * v.0[k];
        }
        out.0[k] += h * acc;
    }
    out
}

fn error_norm(err: &StateVector, y0: &StateVector, y1: &StateVector, rtol: f64, atol: f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..6 {
        let sk = atol + rtol * y0.0[k].abs().max(y1.0[k].abs());
        let r = err.0[k] / sk;
        sum += r * r;
    }
    (sum / 6.0).sqrt()
}

fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    y0: &StateVector,
    f0: &StateVector,
    span: f64,
    ctl: &StepControl,
) -> Result<f64, SolverError>
where
    F: FnMut(f64, &StateVector) -> Result<StateVector, LookupError>,
{
    let scale = |v: &StateVector| {
        let mut s = 0.0;
        for k in 0..6 {
            let sk = ctl.atol + ctl.rtol * y0.0[k].abs();
            s += (v.0[k] / sk).powi(2);
        }
        (s / 6.0).sqrt()
    };
    let d0 = scale(y0);
    let d1 = scale(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span).min(ctl.h_max);
    let y1 = y0.axpy(h0, f0);
    let f1 = rhs(t0 + h0, &y1)?;
    let diff = f1.map2(f0, |a, b| a - b);
    let d2 = scale(&diff) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(ctl.h_max).max(ctl.h_min))
}

/// Integrates `y' = rhs(t, y)` from `t0` to exactly `t1`.
///
/// Returns the starting point followed by every accepted step, each with
/// its derivative, ready for Hermite dense output. A step is accepted only
/// when both the embedded error estimate and the Hermite midpoint defect are
/// within tolerance.
pub fn integrate_window<F>(
    mut rhs: F,
    y0: StateVector,
    t0: f64,
    t1: f64,
    ctl: &StepControl,
) -> Result<Vec<AcceptedStep>, SolverError>
where
    F: FnMut(f64, &StateVector) -> Result<StateVector, LookupError>,
{
    ctl.validate()?;
    let f0 = rhs(t0, &y0)?;
    let mut out = vec![AcceptedStep {
        t: t0,
        y: y0,
        dy: f0,
    }];
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(out);
    }

    let mut h = match ctl.h_init {
        Some(h) => h,
        None => initial_step(&mut rhs, t0, &y0, &f0, span, ctl)?,
    };
    let (mut t, mut y, mut k1) = (t0, y0, f0);
    let mut fac_old = 1e-4_f64;
    let mut last_rejected = false;
    let mut steps = 0usize;

    loop {
        if steps >= ctl.max_steps {
            return Err(SolverError::MaxSteps {
                t,
                t1,
                max_steps: ctl.max_steps,
            });
        }
        steps += 1;

        let mut last = false;
        if t + 1.01 * h >= t1 {
            h = t1 - t;
            last = true;
        }
        if h < ctl.h_min && !last {
            return Err(SolverError::StepUnderflow { t, h });
        }

        let k2 = rhs(t + C2 * h, &combo(&y, h, &[(A21, &k1)]))?;
        let k3 = rhs(t + C3 * h, &combo(&y, h, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = rhs(
            t + C4 * h,
            &combo(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        )?;
        let k5 = rhs(
            t + C5 * h,
            &combo(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        )?;
        let t_new = if last { t1 } else { t + h };
        let k6 = rhs(
            t_new,
            &combo(
                &y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        )?;
        let y_new = combo(
            &y,
            h,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let k7 = rhs(t_new, &y_new)?;
        let mut err = StateVector::ZERO;
        for k in 0..6 {
            err.0[k] = h
                * (E1 * k1.0[k]
                    + E3 * k3.0[k]
                    + E4 * k4.0[k]
                    + E5 * k5.0[k]
                    + E6 * k6.0[k]
                    + E7 * k7.0[k]);
        }
        let mut defect = StateVector::ZERO;
        for k in 0..6 {
            defect.0[k] = h / 16.0
                * (D1 * k1.0[k]
                    + D3 * k3.0[k]
                    + D4 * k4.0[k]
                    + D5 * k5.0[k]
                    + D6 * k6.0[k]
                    + D7 * k7.0[k]);
        }
        // the stored interpolant must be as accurate as the step itself
        let en = error_norm(&err, &y, &y_new, ctl.rtol, ctl.atol)
            .max(error_norm(&defect, &y, &y_new, ctl.rtol, ctl.atol));
        if !en.is_finite() || !y_new.is_finite() {
            if h <= ctl.h_min {
                return Err(SolverError::NonFinite { t });
            }
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }

        let fac11 = en.powf(EXPO1);
        if en <= 1.0 {
            let mut fac = fac11 / fac_old.powf(BETA);
            fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = (h / fac).min(ctl.h_max);
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = en.max(1e-4);
            last_rejected = false;
            t = t_new;
            y = y_new;
            k1 = k7;
            out.push(AcceptedStep { t, y, dy: k7 });
            if last {
                return Ok(out);
            }
            h = h_new;
        } else {
            if h <= ctl.h_min {
                return Err(SolverError::StepUnderflow { t, h });
            }
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            h = h.max(ctl.h_min);
            last_rejected = true;
        }
    }
}

fn append_steps(traj: &mut Trajectory, steps: &[AcceptedStep]) -> Result<(), TrajectoryError> {
    for w in steps.windows(2) {
        traj.append_segment(Segment {
            t0: w[0].t,
            t1: w[1].t,
            y0: w[0].y,
            y1: w[1].y,
            dy0: w[0].dy,
            dy1: w[1].dy,
        })?;
    }
    Ok(())
}

// Trajectory pieces are cubic, so with constant β the delayed integrands are
// polynomials of degree <= 7 per panel and one Gauss rule per panel is exact.
fn solver_quadrature(beta: &ContactRate) -> Quadrature {
    match beta {
        ContactRate::Constant(_) => Quadrature::PANEL_EXACT,
        _ => Quadrature::default(),
    }
}

fn control_for(cfg: &ScenarioConfig, window: f64) -> StepControl {
    StepControl {
        h_max: window,
        ..StepControl::new(cfg.rtol, cfg.atol)
    }
}

fn window_edges(horizon: f64, window: f64) -> Vec<f64> {
    let n = (horizon / window - 1e-12).ceil().max(0.0) as usize;
    let mut edges: Vec<f64> = (0..=n).map(|i| (i as f64 * window).min(horizon)).collect();
    edges.dedup();
    edges
}

/// Continuous (distributed-delay) model by the method of steps.
///
/// On each window `[k, k + w]` the functionals g and h only read the
/// trajectory up to `k`, because `w` never exceeds the kernel support lower
/// bounds; the window is then an ordinary system.
pub fn solve_method_of_steps(cfg: &ScenarioConfig) -> Result<Trajectory, SolverError> {
    cfg.validate()?;
    let y0 = cfg.initial_state()?;
    let mut traj = Trajectory::new(y0);
    let ctl = control_for(cfg, cfg.window);
    let quad = solver_quadrature(&cfg.params.beta);
    let params = &cfg.params;

    for w in window_edges(cfg.horizon, cfg.window).windows(2) {
        let (k0, k1) = (w[0], w[1]);
        let start = traj.state(k0)?;
        let steps = {
            let committed = &traj;
            integrate_window(
                |t, y| {
                    let g = g_of_t(committed, &cfg.phi, t, quad)?;
                    let h = h_of_t(committed, &params.beta, &cfg.psi, t, quad)?;
                    Ok(rhs_continuous(t, y, g, h, params))
                },
                start,
                k0,
                k1,
                &ctl,
            )?
        };
        append_steps(&mut traj, &steps)?;
        traj.mark_window_boundary(k1);
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteOptions {
    /// Generations of lag images of the t = 0 derivative jump that are
    /// forced to be step endpoints. A jump in the k-th derivative after
    /// k − 1 generations; beyond the integrator order the jumps no longer
    /// matter to the error estimate.
    pub breakpoint_depth: usize,
}

impl Default for DiscreteOptions {
    fn default() -> Self {
        Self {
            breakpoint_depth: 4,
        }
    }
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

/// Images of t = 0 under sums of up to `depth` lags, inside `(0, horizon)`.
pub fn propagate_breakpoints(lags: &[f64], depth: usize, horizon: f64) -> Vec<f64> {
    let mut lags = lags.to_vec();
    lags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lags.dedup_by(|a, b| same_time(*a, *b));

    let mut all: Vec<f64> = Vec::new();
    let mut frontier = vec![0.0];
    for _ in 0..depth {
        let mut next: Vec<f64> = frontier
            .iter()
            .flat_map(|&b| lags.iter().map(move |&l| b + l))
            .filter(|&t| t < horizon)
            .collect();
        if next.is_empty() {
            break;
        }
        next.sort_by(|a, b| a.partial_cmp(b).unwrap());
        next.dedup_by(|a, b| same_time(*a, *b));
        all.extend_from_slice(&next);
        frontier = next;
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup_by(|a, b| same_time(*a, *b));
    all
}

/// Discrete-lag model with the same windowing, plus forced step endpoints
/// at propagated breakpoints.
pub fn solve_discrete(
    cfg: &ScenarioConfig,
    tau: &LagScheme,
    rho: &LagScheme,
    opts: DiscreteOptions,
) -> Result<Trajectory, SolverError> {
    cfg.validate()?;
    let y0 = cfg.initial_state()?;
    let mut traj = Trajectory::new(y0);
    let window = cfg.window.min(tau.min_lag()).min(rho.min_lag());
    let ctl = control_for(cfg, window);
    let params = &cfg.params;

    let mut lags: Vec<f64> = tau.lags().to_vec();
    lags.extend_from_slice(rho.lags());
    let breaks = propagate_breakpoints(&lags, opts.breakpoint_depth, cfg.horizon);
    let windows = window_edges(cfg.horizon, window);

    let mut i_rho = vec![0.0; rho.len()];
    let mut force_tau = vec![0.0; tau.len()];

    for w in windows.windows(2) {
        let (k0, k1) = (w[0], w[1]);
        let mut cuts = vec![k0];
        cuts.extend(breaks.iter().copied().filter(|&b| b > k0 && b < k1));
        cuts.push(k1);
        cuts.dedup_by(|a, b| same_time(*a, *b));
        if let Some(l) = cuts.last_mut() {
            *l = k1;
        }

        for c in cuts.windows(2) {
            let (a, b) = (c[0], c[1]);
            let start = traj.state(a)?;
            let steps = {
                let committed = &traj;
                integrate_window(
                    |t, y| {
                        for (slot, lag) in i_rho.iter_mut().zip(rho.lags()) {
                            *slot = committed.eval(t - lag, crate::history::Compartment::I)?;
                        }
                        for (slot, lag) in force_tau.iter_mut().zip(tau.lags()) {
                            let s = t - lag;
                            let past = committed.state(s)?;
                            *slot = params.beta.at(s) * past.i() * past.s();
                        }
                        Ok(rhs_discrete(t, y, &i_rho, &force_tau, tau, rho, params))
                    },
                    start,
                    a,
                    b,
                    &ctl,
                )?
            };
            append_steps(&mut traj, &steps)?;
        }
        traj.mark_window_boundary(k1);
    }
    Ok(traj)
}
