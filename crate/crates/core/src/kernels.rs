//! Compact-support delay densities and kernel-weighted convolution of
//! history functions.
//!
//! A [`CompactKernel`] is a piecewise-linear probability density on a
//! bounded interval `[a, b]` with `a > 0`. The positive lower bound is what
//! makes the method of steps work: every delayed lookup made at time `t`
//! lands at or before `t - a`.

use thiserror::Error;

/// Tolerance on `∫ kernel = 1`. Kernels are built from rational knots, so
/// anything looser means the knot list is wrong.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel needs at least two knots, got {0}")]
    TooFewKnots(usize),
    #[error("knot abscissae must be strictly ascending (knot {index} at {x})")]
    NotAscending { index: usize, x: f64 },
    #[error("negative or non-finite density {density} at x = {x}")]
    BadDensity { x: f64, density: f64 },
    #[error("density must vanish at the support ends (got {first} and {last})")]
    NonZeroEnds { first: f64, last: f64 },
    #[error("support lower bound must be positive, got {0}")]
    NonPositiveSupport(f64),
    #[error("kernel is not normalized: mass = {0}")]
    NotNormalized(f64),
    #[error("unknown kernel preset '{0}'")]
    UnknownPreset(String),
}

/// A lookup outside the domain of a history function.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("history lookup at t = {t} beyond the last committed time {t_end}")]
pub struct LookupError {
    pub t: f64,
    pub t_end: f64,
}

/// Non-negative piecewise-linear density, zero outside its knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactKernel {
    knots: Vec<(f64, f64)>,
}

impl CompactKernel {
    /// Builds a kernel from `(abscissa, density)` knots.
    ///
    /// Shape is validated here (ordering, sign, vanishing ends, positive
    /// support). Normalization is not: a scaled kernel is a legal value, it
    /// is just rejected by [`CompactKernel::mean`] and by scenario
    /// validation.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, KernelError> {
        if knots.len() < 2 {
            return Err(KernelError::TooFewKnots(knots.len()));
        }
        for (i, &(x, d)) in knots.iter().enumerate() {
            if !x.is_finite() || (i > 0 && x <= knots[i - 1].0) {
                return Err(KernelError::NotAscending { index: i, x });
            }
            if !d.is_finite() || d < 0.0 {
                return Err(KernelError::BadDensity { x, density: d });
            }
        }
        let first = knots[0].1;
        let last = knots[knots.len() - 1].1;
        if first != 0.0 || last != 0.0 {
            return Err(KernelError::NonZeroEnds { first, last });
        }
        if knots[0].0 <= 0.0 {
            return Err(KernelError::NonPositiveSupport(knots[0].0));
        }
        Ok(Self { knots })
    }

    /// Immunity-duration density: triangle on [200, 250] days peaked at 225.
    pub fn ebola_phi() -> Self {
        Self::new(vec![(200.0, 0.0), (225.0, 1.0 / 25.0), (250.0, 0.0)]).expect("valid preset")
    }

    /// Latency density: triangle on [5, 15] days peaked at 10.
    pub fn ebola_psi() -> Self {
        Self::new(vec![(5.0, 0.0), (10.0, 1.0 / 5.0), (15.0, 0.0)]).expect("valid preset")
    }

    pub fn preset(name: &str) -> Result<Self, KernelError> {
        match name {
            "ebola_phi" => Ok(Self::ebola_phi()),
            "ebola_psi" => Ok(Self::ebola_psi()),
            other => Err(KernelError::UnknownPreset(other.to_string())),
        }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// `(lower, upper)` bounds of the support.
    pub fn support(&self) -> (f64, f64) {
        (self.knots[0].0, self.knots[self.knots.len() - 1].0)
    }

    /// Density at `x`; zero outside the support.
    pub fn eval(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x > lo && x < hi) {
            return 0.0;
        }
        let j = self.knots.partition_point(|&(kx, _)| kx <= x);
        let (x0, d0) = self.knots[j - 1];
        let (x1, d1) = self.knots[j];
        d0 + (d1 - d0) * (x - x0) / (x1 - x0)
    }

    /// Exact integral of the density (trapezoid per segment).
    pub fn mass(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.mass() - 1.0).abs() <= MASS_TOL
    }

    /// Mean delay `∫ x k(x) dx`, computed per linear segment in closed form.
    pub fn mean(&self) -> Result<f64, KernelError> {
        if !self.is_normalized() {
            return Err(KernelError::NotNormalized(self.mass()));
        }
        Ok(first_moment(&self.knots))
    }

    /// Returns a copy with every density multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, KernelError> {
        Self::new(self.knots.iter().map(|&(x, d)| (x, d * factor)).collect())
    }
}

/// `∫ x·k(x) dx` for a piecewise-linear `k` given by knots.
pub(crate) fn first_moment(knots: &[(f64, f64)]) -> f64 {
    knots
        .windows(2)
        .map(|w| {
            let (a, d0) = w[0];
            let (b, d1) = w[1];
            let width = b - a;
            width * (a * 0.5 * (d0 + d1) + width * (d0 + 2.0 * d1) / 6.0)
        })
        .sum()
}

/// A scalar function of time that may only be evaluated up to some point
/// and may have derivative discontinuities at known times.
pub trait History {
    fn value(&self, s: f64) -> Result<f64, LookupError>;

    /// Appends to `out` every breakpoint lying strictly inside `(lo, hi)`.
    fn breakpoints(&self, _lo: f64, _hi: f64, _out: &mut Vec<f64>) {}
}

/// Adapts a smooth closure (no breakpoints, defined everywhere).
pub struct Smooth<F>(pub F);

impl<F: Fn(f64) -> f64> History for Smooth<F> {
    fn value(&self, s: f64) -> Result<f64, LookupError> {
        Ok((self.0)(s))
    }
}

/// Adapts a closure with an explicit breakpoint list.
pub struct Piecewise<F> {
    pub f: F,
    pub breaks: Vec<f64>,
}

impl<F: Fn(f64) -> f64> History for Piecewise<F> {
    fn value(&self, s: f64) -> Result<f64, LookupError> {
        Ok((self.f)(s))
    }

    fn breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        out.extend(self.breaks.iter().copied().filter(|&b| b > lo && b < hi));
    }
}

// 4-point Gauss-Legendre on [-1, 1]: exact for polynomials of degree <= 7.
const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Composite quadrature settings for [`convolve`].
///
/// Panels are always split at kernel knots and at history breakpoints. Each
/// panel is integrated with 4-point Gauss-Legendre; when `rel_tol > 0` the
/// panel is refined by uniform bisection until two successive levels agree
/// to `rel_tol · sup|H|` (distributed over the support width). With
/// `rel_tol == 0` a single rule per panel is used, which is exact whenever
/// the history is a polynomial of degree <= 6 between breakpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub rel_tol: f64,
    pub max_level: u32,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_level: 12,
        }
    }
}

impl Quadrature {
    /// One Gauss-Legendre rule per panel, no refinement.
    pub const PANEL_EXACT: Quadrature = Quadrature {
        rel_tol: 0.0,
        max_level: 0,
    };
}

/// `∫ H(t - ρ) k(ρ) dρ` over the kernel support.
pub fn convolve<H: History + ?Sized>(
    history: &H,
    kernel: &CompactKernel,
    t: f64,
    quad: Quadrature,
) -> Result<f64, LookupError> {
    let (lo, hi) = kernel.support();
    let mut cuts: Vec<f64> = kernel.knots.iter().map(|&(x, _)| x).collect();
    let mut hist_breaks = Vec::new();
    history.breakpoints(t - hi, t - lo, &mut hist_breaks);
    cuts.extend(hist_breaks.into_iter().map(|b| t - b));
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite cut"));
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * b.abs().max(1.0));

    let width = hi - lo;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        total += panel(history, kernel, t, a, b, width, quad)?;
    }
    Ok(total)
}

fn panel<H: History + ?Sized>(
    history: &H,
    kernel: &CompactKernel,
    t: f64,
    a: f64,
    b: f64,
    support_width: f64,
    quad: Quadrature,
) -> Result<f64, LookupError> {
    let mut scale = 0.0_f64;
    let mut coarse = composite_gl4(history, kernel, t, a, b, 1, &mut scale)?;
    if quad.rel_tol <= 0.0 {
        return Ok(coarse);
    }
    let mut n = 1usize;
    for _ in 0..quad.max_level {
        n *= 2;
        let fine = composite_gl4(history, kernel, t, a, b, n, &mut scale)?;
        let tol = quad.rel_tol * scale.max(f64::MIN_POSITIVE) * (b - a) / support_width;
        if (fine - coarse).abs() <= tol {
            return Ok(fine);
        }
        coarse = fine;
    }
    Ok(coarse)
}

fn composite_gl4<H: History + ?Sized>(
    history: &H,
    kernel: &CompactKernel,
    t: f64,
    a: f64,
    b: f64,
    n: usize,
    scale: &mut f64,
) -> Result<f64, LookupError> {
    let h = (b - a) / n as f64;
    let half = 0.5 * h;
    let mut sum = 0.0;
    for i in 0..n {
        let mid = a + (i as f64 + 0.5) * h;
        for (x, w) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
            let rho = mid + half * x;
            let v = history.value(t - rho)?;
            *scale = scale.max(v.abs());
            sum += w * v * kernel.eval(rho);
        }
    }
    Ok(sum * half)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_matches_triangle_formulas() {
        let phi = CompactKernel::ebola_phi();
        let psi = CompactKernel::ebola_psi();
        assert!((phi.eval(225.0) - 0.04).abs() < 1e-15);
        assert_eq!(phi.eval(199.0), 0.0);
        assert!((psi.eval(7.5) - 0.1).abs() < 1e-15);
        // descending branch: (250 - 240) / 625
        assert!((phi.eval(240.0) - 10.0 / 625.0).abs() < 1e-15);
        assert_eq!(psi.eval(15.0), 0.0);
        assert_eq!(psi.eval(100.0), 0.0);
    }

    #[test]
    fn mass_and_mean() {
        let phi = CompactKernel::ebola_phi();
        let psi = CompactKernel::ebola_psi();
        assert!((phi.mass() - 1.0).abs() <= MASS_TOL);
        assert!((psi.mass() - 1.0).abs() <= MASS_TOL);
        assert!((phi.mean().unwrap() - 225.0).abs() < 1e-12);
        assert!((psi.mean().unwrap() - 10.0).abs() < 1e-13);

        let half = psi.scaled(0.5).unwrap();
        assert!((half.mass() - 0.5).abs() < 1e-15);
        assert!(matches!(half.mean(), Err(KernelError::NotNormalized(_))));
    }

    #[test]
    fn asymmetric_triangle_moment() {
        // triangle on [0, 3] with peak at 1, height 2/3
        let knots = [(0.0, 0.0), (1.0, 2.0 / 3.0), (3.0, 0.0)];
        assert!((first_moment(&knots) - 4.0 / 3.0).abs() < 1e-15);
        // same shape shifted right by one day is a valid delay kernel
        let k = CompactKernel::new(vec![(1.0, 0.0), (2.0, 2.0 / 3.0), (4.0, 0.0)]).unwrap();
        assert!((k.mean().unwrap() - 7.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            CompactKernel::new(vec![(1.0, 0.0)]),
            Err(KernelError::TooFewKnots(1))
        );
        assert!(matches!(
            CompactKernel::new(vec![(1.0, 0.0), (1.0, 1.0), (2.0, 0.0)]),
            Err(KernelError::NotAscending { .. })
        ));
        assert!(matches!(
            CompactKernel::new(vec![(1.0, 0.0), (2.0, -1.0), (3.0, 0.0)]),
            Err(KernelError::BadDensity { .. })
        ));
        assert!(matches!(
            CompactKernel::new(vec![(1.0, 0.5), (3.0, 0.5)]),
            Err(KernelError::NonZeroEnds { .. })
        ));
        assert!(matches!(
            CompactKernel::new(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 0.0)]),
            Err(KernelError::NonPositiveSupport(_))
        ));
        assert!(matches!(
            CompactKernel::preset("nope"),
            Err(KernelError::UnknownPreset(_))
        ));
    }

    #[test]
    fn convolve_constant_and_affine() {
        let psi = CompactKernel::ebola_psi();
        let phi = CompactKernel::ebola_phi();
        let c = convolve(&Smooth(|_| 3.25), &phi, 17.0, Quadrature::default()).unwrap();
        assert!((c - 3.25).abs() < 1e-14);
        for t in [0.0, 4.0, 37.5, 1000.0] {
            let v = convolve(&Smooth(|s| s), &psi, t, Quadrature::default()).unwrap();
            assert!((v - (t - 10.0)).abs() < 1e-11 * t.abs().max(1.0));
        }
    }

    #[test]
    fn constant_history_before_zero() {
        // I history is c_I = 10 for s <= 0; at t = 50 all lookups are before 0
        let hist = Piecewise {
            f: |s: f64| if s <= 0.0 { 10.0 } else { 10.0 + s },
            breaks: vec![0.0],
        };
        let v = convolve(
            &hist,
            &CompactKernel::ebola_phi(),
            50.0,
            Quadrature::default(),
        )
        .unwrap();
        assert!((v - 10.0).abs() < 1e-13);
    }

    #[test]
    fn breakpoint_splitting_makes_kink_exact() {
        // |s| has a kink at 0; with the kink as a breakpoint a single rule per
        // panel integrates it exactly against the linear kernel pieces.
        let psi = CompactKernel::ebola_psi();
        let hist = Piecewise {
            f: |s: f64| s.abs(),
            breaks: vec![0.0],
        };
        let t = 8.0;
        let got = convolve(&hist, &psi, t, Quadrature::PANEL_EXACT).unwrap();
        // oracle: fine midpoint sum
        let n = 200_000;
        let (lo, hi) = psi.support();
        let dx = (hi - lo) / n as f64;
        let oracle: f64 = (0..n)
            .map(|i| {
                let r = lo + (i as f64 + 0.5) * dx;
                (t - r).abs() * psi.eval(r) * dx
            })
            .sum();
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
    }

    #[test]
    fn lookup_errors_propagate() {
        struct Bounded;
        impl History for Bounded {
            fn value(&self, s: f64) -> Result<f64, LookupError> {
                if s > 1.0 {
                    Err(LookupError { t: s, t_end: 1.0 })
                } else {
                    Ok(1.0)
                }
            }
        }
        let psi = CompactKernel::ebola_psi();
        assert!(convolve(&Bounded, &psi, 5.0, Quadrature::default()).is_ok());
        assert!(convolve(&Bounded, &psi, 10.0, Quadrature::default()).is_err());
    }
}
