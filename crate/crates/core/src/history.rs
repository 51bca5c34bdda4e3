//! Dense solution storage: constant pre-zero history followed by cubic
//! Hermite segments, one per accepted integrator step.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{Index, IndexMut};

use thiserror::Error;

use crate::kernels::{History, LookupError};

/// Relative tolerance for value continuity when appending a segment.
pub const CONTINUITY_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Compartment {
    S,
    E,
    I,
    RT,
    RP,
    D,
}

impl Compartment {
    pub const ALL: [Compartment; 6] = [
        Compartment::S,
        Compartment::E,
        Compartment::I,
        Compartment::RT,
        Compartment::RP,
        Compartment::D,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Compartment::S => "S",
            Compartment::E => "E",
            Compartment::I => "I",
            Compartment::RT => "RT",
            Compartment::RP => "RP",
            Compartment::D => "D",
        }
    }
}

impl fmt::Display for Compartment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Compartment sizes (individuals) at one instant, in the order
/// S, E, I, R^T, R^P, D.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector(pub [f64; 6]);

impl StateVector {
    pub const ZERO: StateVector = StateVector([0.0; 6]);

    pub fn new(s: f64, e: f64, i: f64, rt: f64, rp: f64, d: f64) -> Self {
        Self([s, e, i, rt, rp, d])
    }

    pub fn s(&self) -> f64 {
        self.0[0]
    }
    pub fn e(&self) -> f64 {
        self.0[1]
    }
    pub fn i(&self) -> f64 {
        self.0[2]
    }
    pub fn rt(&self) -> f64 {
        self.0[3]
    }
    pub fn rp(&self) -> f64 {
        self.0[4]
    }
    pub fn d(&self) -> f64 {
        self.0[5]
    }

    /// Sum of all six compartments, deaths included.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Living population N = S + E + I + R^T + R^P.
    pub fn living(&self) -> f64 {
        self.0[..5].iter().sum()
    }

    /// `self + a * x`
    pub fn axpy(&self, a: f64, x: &StateVector) -> StateVector {
        let mut out = *self;
        for (o, xi) in out.0.iter_mut().zip(x.0) {
            *o += a * xi;
        }
        out
    }

    pub fn map2(&self, other: &StateVector, f: impl Fn(f64, f64) -> f64) -> StateVector {
        let mut out = [0.0; 6];
        for k in 0..6 {
            out[k] = f(self.0[k], other.0[k]);
        }
        StateVector(out)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<Compartment> for StateVector {
    type Output = f64;
    fn index(&self, c: Compartment) -> &f64 {
        &self.0[c.index()]
    }
}

impl IndexMut<Compartment> for StateVector {
    fn index_mut(&mut self, c: Compartment) -> &mut f64 {
        &mut self.0[c.index()]
    }
}

/// Cubic Hermite interpolant over one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub y0: StateVector,
    pub y1: StateVector,
    pub dy0: StateVector,
    pub dy1: StateVector,
}

impl Segment {
    #[inline]
    fn basis(&self, t: f64) -> (f64, f64, f64, f64, f64) {
        let h = self.t1 - self.t0;
        let u = (t - self.t0) / h;
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        (h, h00, h10, h01, h11)
    }

    #[inline]
    pub fn value(&self, t: f64, k: usize) -> f64 {
        let (h, h00, h10, h01, h11) = self.basis(t);
        h00 * self.y0.0[k] + h * h10 * self.dy0.0[k] + h01 * self.y1.0[k] + h * h11 * self.dy1.0[k]
    }

    pub fn state(&self, t: f64) -> StateVector {
        let (h, h00, h10, h01, h11) = self.basis(t);
        let mut out = [0.0; 6];
        for (k, o) in out.iter_mut().enumerate() {
            *o = h00 * self.y0.0[k]
                + h * h10 * self.dy0.0[k]
                + h01 * self.y1.0[k]
                + h * h11 * self.dy1.0[k];
        }
        StateVector(out)
    }

    /// Derivative of the interpolant.
    pub fn slope(&self, t: f64) -> StateVector {
        let h = self.t1 - self.t0;
        let u = (t - self.t0) / h;
        let u2 = u * u;
        let d00 = (6.0 * u2 - 6.0 * u) / h;
        let d10 = 3.0 * u2 - 4.0 * u + 1.0;
        let d01 = (-6.0 * u2 + 6.0 * u) / h;
        let d11 = 3.0 * u2 - 2.0 * u;
        let mut out = [0.0; 6];
        for (k, o) in out.iter_mut().enumerate() {
            *o =
                d00 * self.y0.0[k] + d10 * self.dy0.0[k] + d01 * self.y1.0[k] + d11 * self.dy1.0[k];
        }
        StateVector(out)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("segment starts at {start} but trajectory ends at {t_end} (gap)")]
    Gap { start: f64, t_end: f64 },
    #[error("segment starts at {start} but trajectory ends at {t_end} (overlap)")]
    Overlap { start: f64, t_end: f64 },
    #[error("segment [{t0}, {t1}] is empty or reversed")]
    EmptySegment { t0: f64, t1: f64 },
    #[error("segment start value for {compartment} is {got}, trajectory has {expected}")]
    Discontinuity {
        compartment: Compartment,
        expected: f64,
        got: f64,
    },
    #[error(transparent)]
    Lookup(#[from] LookupError),
}

/// Solution history on `(-inf, t_end]`.
///
/// For `t <= 0` every compartment equals its history constant; on
/// `(0, t_end]` values come from the Hermite segments, which tile
/// `[0, t_end]` without gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    history: StateVector,
    segments: Vec<Segment>,
    windows: Vec<f64>,
}

impl Trajectory {
    pub fn new(history: StateVector) -> Self {
        Self {
            history,
            segments: Vec::new(),
            windows: vec![0.0],
        }
    }

    pub fn history_constants(&self) -> &StateVector {
        &self.history
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn t_end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t1)
    }

    pub fn initial_total(&self) -> f64 {
        self.history.total()
    }

    /// Step endpoints (including 0), ascending.
    pub fn breakpoints(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.segments.iter().map(|s| s.t1))
            .collect()
    }

    /// Window boundaries recorded by the driver, ascending, starting at 0.
    pub fn window_boundaries(&self) -> &[f64] {
        &self.windows
    }

    pub fn mark_window_boundary(&mut self, t: f64) {
        if self.windows.last().is_none_or(|&w| t > w) {
            self.windows.push(t);
        }
    }

    pub fn append_segment(&mut self, seg: Segment) -> Result<(), TrajectoryError> {
        if !(seg.t1 > seg.t0) {
            return Err(TrajectoryError::EmptySegment {
                t0: seg.t0,
                t1: seg.t1,
            });
        }
        let t_end = self.t_end();
        let slack = 1e-12 * t_end.abs().max(1.0);
        if seg.t0 > t_end + slack {
            return Err(TrajectoryError::Gap {
                start: seg.t0,
                t_end,
            });
        }
        if seg.t0 < t_end - slack {
            return Err(TrajectoryError::Overlap {
                start: seg.t0,
                t_end,
            });
        }
        let current = self.state(t_end)?;
        for c in Compartment::ALL {
            let (expected, got) = (current[c], seg.y0[c]);
            if (expected - got).abs() > CONTINUITY_RTOL * expected.abs().max(got.abs()).max(1.0) {
                return Err(TrajectoryError::Discontinuity {
                    compartment: c,
                    expected,
                    got,
                });
            }
        }
        let mut seg = seg;
        seg.t0 = t_end;
        self.segments.push(seg);
        Ok(())
    }

    fn locate(&self, t: f64) -> Result<Option<&Segment>, LookupError> {
        if t <= 0.0 {
            return Ok(None);
        }
        let t_end = self.t_end();
        // rounding slack for lookups computed as `t - lag`
        if t > t_end + 1e-12 * t_end.max(1.0) {
            return Err(LookupError { t, t_end });
        }
        if self.segments.is_empty() {
            return Ok(None);
        }
        let j = self.segments.partition_point(|s| s.t1 < t);
        Ok(Some(&self.segments[j.min(self.segments.len() - 1)]))
    }

    pub fn eval(&self, t: f64, c: Compartment) -> Result<f64, LookupError> {
        Ok(match self.locate(t)? {
            None => self.history[c],
            Some(seg) => seg.value(t, c.index()),
        })
    }

    pub fn state(&self, t: f64) -> Result<StateVector, LookupError> {
        Ok(match self.locate(t)? {
            None => self.history,
            Some(seg) => seg.state(t),
        })
    }

    /// Derivative of the dense output; zero on the constant history.
    /// At a step endpoint the left segment is used.
    pub fn slope(&self, t: f64) -> Result<StateVector, LookupError> {
        Ok(match self.locate(t)? {
            None => StateVector::ZERO,
            Some(seg) => seg.slope(t),
        })
    }

    pub fn compartment(&self, c: Compartment) -> CompartmentView<'_> {
        CompartmentView { traj: self, c }
    }

    pub fn sample(&self, grid: &[f64]) -> Result<Vec<Sample>, LookupError> {
        grid.iter()
            .map(|&t| {
                Ok(Sample {
                    t,
                    y: self.state(t)?,
                })
            })
            .collect()
    }

    fn push_breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        if lo < 0.0 && hi > 0.0 {
            out.push(0.0);
        }
        let start = self.segments.partition_point(|s| s.t1 <= lo);
        for s in &self.segments[start..] {
            if s.t1 >= hi {
                break;
            }
            out.push(s.t1);
        }
    }
}

/// One compartment of a trajectory viewed as a scalar history function.
#[derive(Clone, Copy)]
pub struct CompartmentView<'a> {
    traj: &'a Trajectory,
    c: Compartment,
}

impl History for CompartmentView<'_> {
    fn value(&self, s: f64) -> Result<f64, LookupError> {
        self.traj.eval(s, self.c)
    }

    fn breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        self.traj.push_breakpoints(lo, hi, out)
    }
}

/// `f(t, S(t), I(t))` evaluated along a trajectory, e.g. the force of
/// infection `β(t) I(t) S(t)`.
pub struct SiProduct<'a, F> {
    pub traj: &'a Trajectory,
    pub f: F,
}

impl<F: Fn(f64, f64, f64) -> f64> History for SiProduct<'_, F> {
    fn value(&self, s: f64) -> Result<f64, LookupError> {
        Ok(match self.traj.locate(s)? {
            None => (self.f)(s, self.traj.history.s(), self.traj.history.i()),
            Some(seg) => (self.f)(s, seg.value(s, 0), seg.value(s, 2)),
        })
    }

    fn breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        self.traj.push_breakpoints(lo, hi, out)
    }
}

/// Uniform sampling grid `0, dt, 2dt, ...` up to `horizon`; the horizon is
/// appended when it is not a grid multiple.
pub fn uniform_grid(horizon: f64, dt: f64) -> Vec<f64> {
    assert!(dt > 0.0, "grid spacing must be positive");
    let n = (horizon / dt + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    let last = grid[n];
    if horizon - last > 1e-9 * dt {
        grid.push(horizon);
    } else {
        grid[n] = horizon;
    }
    grid
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub y: StateVector,
}

pub const CSV_HEADER: [&str; 7] = ["t", "S", "E", "I", "RT", "RP", "D"];

/// Formats `v` with 12 significant digits, trailing zeros trimmed, using
/// plain decimal notation for moderate magnitudes and exponent notation
/// otherwise.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.11e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, v);
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unexpected header {0:?}")]
    Header(Vec<String>),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
}

pub fn write_csv<W: Write>(out: W, samples: &[Sample]) -> Result<(), CsvError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in samples {
        let mut rec = Vec::with_capacity(7);
        rec.push(format_sig12(s.t));
        rec.extend(s.y.0.iter().map(|&v| format_sig12(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<Sample>, CsvError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(CsvError::Header(header));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CsvError::Row {
                row: row + 1,
                msg: e.to_string(),
            })?;
        if vals.len() != 7 {
            return Err(CsvError::Row {
                row: row + 1,
                msg: format!("expected 7 fields, got {}", vals.len()),
            });
        }
        out.push(Sample {
            t: vals[0],
            y: StateVector([vals[1], vals[2], vals[3], vals[4], vals[5], vals[6]]),
        });
    }
    Ok(out)
}
