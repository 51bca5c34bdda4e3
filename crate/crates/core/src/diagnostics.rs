//! Structural checks on computed trajectories: non-negativity,
//! conservation with non-increasing living population, derivative jumps at
//! window boundaries, and trajectory-to-trajectory distances.

use std::fmt::Write as _;

use thiserror::Error;

use crate::history::{Compartment, Sample, Trajectory};
use crate::kernels::LookupError;

/// Allowed relative drift of S+E+I+R^T+R^P+D from its initial value.
pub const DRIFT_TOL: f64 = 1e-6;
/// Increase of the living population (relative to N0) counted as a
/// monotonicity violation.
pub const MONOTONE_TOL: f64 = 1e-9;
/// Lower bound for compartments, relative to N0.
pub const NEGATIVITY_TOL: f64 = 1e-9;
/// Default sampling grid spacing (days).
pub const GRID_SPACING: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Lookup(#[from] LookupError),
    #[error("sample grids differ at row {row}: t = {a} vs {b}")]
    GridMismatch { row: usize, a: f64, b: f64 },
    #[error("sample sets have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonNegativity {
    pub minima: [f64; 6],
    pub argmin: [f64; 6],
    pub tol: f64,
    pub pass: bool,
}

/// Samples every compartment on `grid`, refines each minimum by a golden
/// section search between the neighbouring grid points, and passes iff all
/// minima are `>= -tol_neg`.
pub fn check_nonnegativity(
    traj: &Trajectory,
    grid: &[f64],
    tol_neg: f64,
) -> Result<NonNegativity, LookupError> {
    let samples = traj.sample(grid)?;
    let mut minima = [f64::INFINITY; 6];
    let mut argmin = [0.0; 6];
    let mut idx = [0usize; 6];
    for (j, s) in samples.iter().enumerate() {
        for k in 0..6 {
            if s.y.0[k] < minima[k] {
                minima[k] = s.y.0[k];
                argmin[k] = s.t;
                idx[k] = j;
            }
        }
    }
    if grid.len() > 1 {
        for c in Compartment::ALL {
            let k = c.index();
            let lo = grid[idx[k].saturating_sub(1)];
            let hi = grid[(idx[k] + 1).min(grid.len() - 1)];
            let (t, v) = golden_min(|t| traj.eval(t, c), lo, hi)?;
            if v < minima[k] {
                minima[k] = v;
                argmin[k] = t;
            }
        }
    }
    let pass = minima.iter().all(|&m| m >= -tol_neg);
    Ok(NonNegativity {
        minima,
        argmin,
        tol: tol_neg,
        pass,
    })
}

fn golden_min(
    f: impl Fn(f64) -> Result<f64, LookupError>,
    mut a: f64,
    mut b: f64,
) -> Result<(f64, f64), LookupError> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..60 {
        if b - a <= 1e-10 * b.abs().max(1.0) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conservation {
    pub initial_total: f64,
    /// max |Σ compartments − N0| / N0 over the grid.
    pub drift: f64,
    /// Grid intervals where the living population grew by more than
    /// `MONOTONE_TOL · N0`.
    pub monotonicity_violations: usize,
    pub max_living_increase: f64,
    pub pass: bool,
}

pub fn check_conservation(traj: &Trajectory, grid: &[f64]) -> Result<Conservation, LookupError> {
    let n0 = traj.initial_total();
    let samples = traj.sample(grid)?;
    let scale = n0.abs().max(f64::MIN_POSITIVE);
    let drift = samples
        .iter()
        .map(|s| (s.y.total() - n0).abs() / scale)
        .fold(0.0, f64::max);
    let mut violations = 0;
    let mut max_inc = f64::NEG_INFINITY;
    for w in samples.windows(2) {
        let inc = w[1].y.living() - w[0].y.living();
        max_inc = max_inc.max(inc);
        if inc > MONOTONE_TOL * scale {
            violations += 1;
        }
    }
    Ok(Conservation {
        initial_total: n0,
        drift,
        monotonicity_violations: violations,
        max_living_increase: if max_inc.is_finite() { max_inc } else { 0.0 },
        pass: drift <= DRIFT_TOL && violations == 0,
    })
}

/// One-sided slopes at `t` from the right and from the left, each from a
/// quadratic through three points strictly on that side (spacing
/// `2 h_fd / 3`, outermost point at `t ± 2 h_fd`). Returns right − left.
pub fn derivative_jump(
    traj: &Trajectory,
    c: Compartment,
    t: f64,
    h_fd: f64,
) -> Result<f64, LookupError> {
    let (r, l) = one_sided_slopes(traj, c, t, h_fd)?;
    Ok(r - l)
}

/// `(right, left)` one-sided slope estimates used by [`derivative_jump`].
pub fn one_sided_slopes(
    traj: &Trajectory,
    c: Compartment,
    t: f64,
    h_fd: f64,
) -> Result<(f64, f64), LookupError> {
    let s = 2.0 * h_fd / 3.0;
    let f = |x: f64| traj.eval(x, c);
    let right = (-5.0 * f(t + s)? + 8.0 * f(t + 2.0 * s)? - 3.0 * f(t + 3.0 * s)?) / (2.0 * s);
    let left = (5.0 * f(t - s)? - 8.0 * f(t - 2.0 * s)? + 3.0 * f(t - 3.0 * s)?) / (2.0 * s);
    Ok((right, left))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jump {
    pub t: f64,
    pub compartment: Compartment,
    pub value: f64,
    /// Right-hand slope, for scaling.
    pub right_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub sup: [f64; 6],
    /// `sup / max(1, N0)`
    pub rel: [f64; 6],
}

/// Sup-norm distances between two sampled trajectories on a common grid.
pub fn compare_samples(
    a: &[Sample],
    b: &[Sample],
    n0: f64,
) -> Result<Comparison, DiagnosticsError> {
    if a.len() != b.len() {
        return Err(DiagnosticsError::LengthMismatch(a.len(), b.len()));
    }
    let mut sup = [0.0_f64; 6];
    for (row, (x, y)) in a.iter().zip(b).enumerate() {
        if (x.t - y.t).abs() > 1e-9 * x.t.abs().max(1.0) {
            return Err(DiagnosticsError::GridMismatch {
                row,
                a: x.t,
                b: y.t,
            });
        }
        for k in 0..6 {
            sup[k] = sup[k].max((x.y.0[k] - y.y.0[k]).abs());
        }
    }
    let denom = n0.max(1.0);
    Ok(Comparison {
        sup,
        rel: sup.map(|s| s / denom),
    })
}

pub fn compare_trajectories(
    a: &Trajectory,
    b: &Trajectory,
    grid: &[f64],
) -> Result<Comparison, DiagnosticsError> {
    compare_samples(&a.sample(grid)?, &b.sample(grid)?, a.initial_total())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub nonnegativity: NonNegativity,
    pub conservation: Conservation,
    pub jumps: Vec<Jump>,
    /// Smoothing signature (large I' jump at 0, none at the first window
    /// boundary); `None` when not applicable to the model.
    pub smoothing: Option<bool>,
    pub supnorm_vs_reference: Option<Comparison>,
}

impl DiagnosticsReport {
    pub fn pass(&self) -> bool {
        self.nonnegativity.pass && self.conservation.pass && self.smoothing.unwrap_or(true)
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let nn = &self.nonnegativity;
        for c in Compartment::ALL {
            let _ = writeln!(out, "min_{}={:e}", c.name(), nn.minima[c.index()]);
        }
        let _ = writeln!(out, "nonnegativity_pass={}", nn.pass);
        let cons = &self.conservation;
        let _ = writeln!(out, "conservation_drift={:e}", cons.drift);
        let _ = writeln!(
            out,
            "monotonicity_violations={}",
            cons.monotonicity_violations
        );
        let _ = writeln!(out, "max_living_increase={:e}", cons.max_living_increase);
        let _ = writeln!(out, "conservation_pass={}", cons.pass);
        for j in &self.jumps {
            let _ = writeln!(out, "jump_{}_t{}={:e}", j.compartment.name(), j.t, j.value);
        }
        if let Some(s) = self.smoothing {
            let _ = writeln!(out, "smoothing_pass={s}");
        }
        if let Some(cmp) = &self.supnorm_vs_reference {
            for c in Compartment::ALL {
                let _ = writeln!(out, "supnorm_{}={:e}", c.name(), cmp.sup[c.index()]);
            }
            for c in Compartment::ALL {
                let _ = writeln!(out, "supnorm_rel_{}={:e}", c.name(), cmp.rel[c.index()]);
            }
        }
        let _ = writeln!(out, "pass={}", self.pass());
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let nn = &self.nonnegativity;
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "Non-negativity (tolerance {:.1e}): {}",
            nn.tol,
            verdict(nn.pass)
        );
        for c in Compartment::ALL {
            let k = c.index();
            let _ = writeln!(
                out,
                "  {:<3} min {:>16.6e} at t = {:.4}",
                c.name(),
                nn.minima[k],
                nn.argmin[k]
            );
        }
        let cons = &self.conservation;
        let _ = writeln!(out, "Conservation: {}", verdict(cons.pass));
        let _ = writeln!(out, "  initial total         {:.6e}", cons.initial_total);
        let _ = writeln!(
            out,
            "  relative drift        {:.3e} (limit {:.0e})",
            cons.drift, DRIFT_TOL
        );
        let _ = writeln!(
            out,
            "  living N increases    {} (largest {:.3e})",
            cons.monotonicity_violations, cons.max_living_increase
        );
        if !self.jumps.is_empty() {
            let _ = writeln!(out, "Derivative jumps:");
            for j in &self.jumps {
                let _ = writeln!(
                    out,
                    "  {}' at t = {:<8} jump {:>13.6e}  (right slope {:.6e})",
                    j.compartment, j.t, j.value, j.right_slope
                );
            }
        }
        if let Some(s) = self.smoothing {
            let _ = writeln!(out, "Smoothing signature: {}", verdict(s));
        }
        if let Some(cmp) = &self.supnorm_vs_reference {
            let _ = writeln!(out, "Sup-norm distance to reference:");
            for c in Compartment::ALL {
                let k = c.index();
                let _ = writeln!(
                    out,
                    "  {:<3} {:>14.6e}  (relative {:.3e})",
                    c.name(),
                    cmp.sup[k],
                    cmp.rel[k]
                );
            }
        }
        let _ = writeln!(out, "Overall: {}", verdict(self.pass()));
        out
    }
}

/// Relative bound on the I' jump at the first window boundary.
pub const SMOOTH_JUMP_RTOL: f64 = 1e-6;
/// Minimum I' jump at t = 0 relative to I'(0+).
pub const ROUGH_JUMP_FRACTION: f64 = 0.1;
/// Finite-difference half-width for the jump at t = 0.
pub const JUMP_H_AT_ZERO: f64 = 1e-3;
/// Finite-difference half-width for the jump at the window boundary.
pub const JUMP_H_AT_WINDOW: f64 = 1e-2;

/// I' jumps at t = 0 and t = `window`, plus the smoothing verdict when
/// `check_smoothing` is set (the distributed-delay model only).
pub fn smoothing_signature(
    traj: &Trajectory,
    window: f64,
    check_smoothing: bool,
) -> Result<(Vec<Jump>, Option<bool>), LookupError> {
    let mut jumps = Vec::new();
    let mut ok = true;
    if traj.t_end() >= 2.0 * JUMP_H_AT_ZERO {
        let (r, l) = one_sided_slopes(traj, Compartment::I, 0.0, JUMP_H_AT_ZERO)?;
        ok &= (r - l).abs() > ROUGH_JUMP_FRACTION * r.abs();
        jumps.push(Jump {
            t: 0.0,
            compartment: Compartment::I,
            value: r - l,
            right_slope: r,
        });
    }
    if traj.t_end() >= window + 2.0 * JUMP_H_AT_WINDOW {
        let (r, l) = one_sided_slopes(traj, Compartment::I, window, JUMP_H_AT_WINDOW)?;
        ok &= (r - l).abs() <= SMOOTH_JUMP_RTOL * r.abs();
        jumps.push(Jump {
            t: window,
            compartment: Compartment::I,
            value: r - l,
            right_slope: r,
        });
    }
    let verdict = (check_smoothing && jumps.len() == 2).then_some(ok);
    Ok((jumps, verdict))
}

/// Full report on a 0.1-day grid (or `spacing`).
pub fn run_diagnostics(
    traj: &Trajectory,
    spacing: f64,
    window: f64,
    check_smoothing: bool,
) -> Result<DiagnosticsReport, LookupError> {
    let grid = crate::history::uniform_grid(traj.t_end(), spacing);
    let n0 = traj.initial_total();
    let nonnegativity = check_nonnegativity(traj, &grid, NEGATIVITY_TOL * n0)?;
    let conservation = check_conservation(traj, &grid)?;
    let (jumps, smoothing) = smoothing_signature(traj, window, check_smoothing)?;
    Ok(DiagnosticsReport {
        nonnegativity,
        conservation,
        jumps,
        smoothing,
        supnorm_vs_reference: None,
    })
}
