//! Parameters, right-hand sides and initial data for the endemic model with
//! distributed latency (Ψ) and temporary-immunity (Φ) delays, and for its
//! discrete-lag approximation.

use thiserror::Error;

use crate::history::{SiProduct, StateVector, Trajectory};
use crate::kernels::{convolve, CompactKernel, KernelError, LookupError, Quadrature};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("infection fatality risk must lie in [0, 1), got {0}")]
    FatalityRisk(f64),
    #[error("invalid parameter {name} = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("initial population {n0} is too small for the history data (c_S = {c_s})")]
    InconsistentPopulation { n0: f64, c_s: f64 },
    #[error("lag scheme: {0}")]
    Scheme(String),
    #[error("unknown lag scheme preset '{0}'")]
    UnknownScheme(String),
    #[error("unknown scenario preset '{0}'")]
    UnknownScenario(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), ModelError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Parameter {
            name,
            value,
            reason,
        })
    }
}

/// Disease death rate from recovery rate and infection fatality risk:
/// `μ = γ·I_FR / (1 − I_FR)`.
pub fn mortality_rate(gamma: f64, i_fr: f64) -> Result<f64, ModelError> {
    if !(0.0..1.0).contains(&i_fr) {
        return Err(ModelError::FatalityRisk(i_fr));
    }
    Ok(gamma * i_fr / (1.0 - i_fr))
}

/// Contact rate β(t), per day per individual.
#[derive(Debug, Clone, PartialEq)]
pub enum ContactRate {
    Constant(f64),
    /// `base · (1 + amplitude · cos(2π (t − phase) / period))`
    Seasonal {
        base: f64,
        amplitude: f64,
        period: f64,
        phase: f64,
    },
}

impl ContactRate {
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            ContactRate::Constant(b) => b,
            ContactRate::Seasonal {
                base,
                amplitude,
                period,
                phase,
            } => base * (1.0 + amplitude * (std::f64::consts::TAU * (t - phase) / period).cos()),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        match *self {
            ContactRate::Constant(b) => check("beta", b, b >= 0.0, "must be non-negative"),
            ContactRate::Seasonal {
                base,
                amplitude,
                period,
                phase,
            } => {
                check("beta.base", base, base >= 0.0, "must be non-negative")?;
                check(
                    "beta.amplitude",
                    amplitude,
                    amplitude.abs() <= 1.0,
                    "|amplitude| > 1 makes beta negative",
                )?;
                check("beta.period", period, period > 0.0, "must be positive")?;
                check("beta.phase", phase, true, "must be finite")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub beta: ContactRate,
    /// Recovery rate (1/day).
    pub gamma: f64,
    /// Fraction of recoveries that gain only temporary immunity.
    pub p: f64,
    pub i_fr: f64,
    /// Disease death rate (1/day), derived from `gamma` and `i_fr`.
    pub mu: f64,
}

impl Params {
    pub fn new(beta: ContactRate, gamma: f64, p: f64, i_fr: f64) -> Result<Self, ModelError> {
        beta.validate()?;
        check("gamma", gamma, gamma >= 0.0, "must be non-negative")?;
        check("p", p, (0.0..=1.0).contains(&p), "must lie in [0, 1]")?;
        let mu = mortality_rate(gamma, i_fr)?;
        Ok(Self {
            beta,
            gamma,
            p,
            i_fr,
            mu,
        })
    }
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: Params,
    /// Temporary-immunity duration density.
    pub phi: CompactKernel,
    /// Latency density.
    pub psi: CompactKernel,
    /// Constant infectious history for t <= 0.
    pub c_i: f64,
    /// Initial total population; the susceptible history c_S is derived.
    pub population: f64,
    /// Start R^P at zero instead of using the kernel-mean formula.
    pub rp_zero: bool,
    pub horizon: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Method-of-steps window length (days).
    pub window: f64,
    pub sample_spacing: f64,
}

impl ScenarioConfig {
    /// Ebola-like scenario: γ = 0.1, β = 0.5/N0, I_FR = 0.475, p = 0.9,
    /// N0 = 10⁷, 10 initial infectious, 10 years.
    pub fn ebola() -> Self {
        let population = 1e7;
        let params = Params::new(ContactRate::Constant(0.5 / population), 0.1, 0.9, 0.475)
            .expect("valid preset");
        Self {
            params,
            phi: CompactKernel::ebola_phi(),
            psi: CompactKernel::ebola_psi(),
            c_i: 10.0,
            population,
            rp_zero: true,
            horizon: 3650.0,
            rtol: 1e-9,
            atol: 1e-9,
            window: 5.0,
            sample_spacing: 1.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self, ModelError> {
        match name {
            "ebola" => Ok(Self::ebola()),
            other => Err(ModelError::UnknownScenario(other.to_string())),
        }
    }

    /// Largest window for which every delayed lookup lands in committed
    /// history: the smaller of the two kernel support lower bounds.
    pub fn max_window(&self) -> f64 {
        self.phi.support().0.min(self.psi.support().0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.params.beta.validate()?;
        Params::new(
            self.params.beta.clone(),
            self.params.gamma,
            self.params.p,
            self.params.i_fr,
        )?;
        for k in [&self.phi, &self.psi] {
            if !k.is_normalized() {
                return Err(KernelError::NotNormalized(k.mass()).into());
            }
        }
        check("c_i", self.c_i, self.c_i >= 0.0, "must be non-negative")?;
        check(
            "population",
            self.population,
            self.population > 0.0,
            "must be positive",
        )?;
        check(
            "horizon",
            self.horizon,
            self.horizon >= 0.0,
            "must be non-negative",
        )?;
        check("rtol", self.rtol, self.rtol > 0.0, "must be positive")?;
        check("atol", self.atol, self.atol > 0.0, "must be positive")?;
        check(
            "sample_spacing",
            self.sample_spacing,
            self.sample_spacing > 0.0,
            "must be positive",
        )?;
        check(
            "window",
            self.window,
            self.window > 0.0 && self.window <= self.max_window(),
            "must be positive and no longer than the shortest kernel delay",
        )?;
        Ok(())
    }

    pub fn initial_state(&self) -> Result<StateVector, ModelError> {
        initial_conditions(self, self.population, self.rp_zero)
    }
}

/// State at t = 0 consistent with constant history (c_S, c_I).
///
/// R^T(0) = c_I·p·γ·mean(Φ), R^P(0) = (1−p)·γ·c_I·mean(Ψ) or 0,
/// E(0) = β(0)·c_I·c_S·mean(Ψ), and c_S solves the linear closure
/// `c_S (1 + β(0) c_I mean(Ψ)) = N0 − c_I − R^T(0) − R^P(0)` so the
/// compartments sum to `n0`.
pub fn initial_conditions(
    cfg: &ScenarioConfig,
    n0: f64,
    rp_zero: bool,
) -> Result<StateVector, ModelError> {
    check("population", n0, n0 > 0.0, "must be positive")?;
    let p = &cfg.params;
    let mean_phi = cfg.phi.mean()?;
    let mean_psi = cfg.psi.mean()?;
    let beta0 = p.beta.at(0.0);
    let c_i = cfg.c_i;

    let rt0 = c_i * p.p * p.gamma * mean_phi;
    let rp0 = if rp_zero {
        0.0
    } else {
        (1.0 - p.p) * p.gamma * c_i * mean_psi
    };
    let c_s = (n0 - c_i - rt0 - rp0) / (1.0 + beta0 * c_i * mean_psi);
    if !(c_s > 0.0) {
        return Err(ModelError::InconsistentPopulation { n0, c_s });
    }
    let e0 = beta0 * c_i * c_s * mean_psi;
    Ok(StateVector::new(c_s, e0, c_i, rt0, rp0, 0.0))
}

/// Recovery return flow `g(t) = ∫ I(t−ρ) Φ(ρ) dρ` (the pγ factor is applied
/// in the right-hand side).
pub fn g_of_t(
    traj: &Trajectory,
    phi: &CompactKernel,
    t: f64,
    quad: Quadrature,
) -> Result<f64, LookupError> {
    convolve(
        &traj.compartment(crate::history::Compartment::I),
        phi,
        t,
        quad,
    )
}

/// Delayed onset of infectiousness `h(t) = ∫ β(t−τ) I(t−τ) S(t−τ) Ψ(τ) dτ`.
pub fn h_of_t(
    traj: &Trajectory,
    beta: &ContactRate,
    psi: &CompactKernel,
    t: f64,
    quad: Quadrature,
) -> Result<f64, LookupError> {
    let force = SiProduct {
        traj,
        f: |s: f64, sus: f64, inf: f64| beta.at(s) * inf * sus,
    };
    convolve(&force, psi, t, quad)
}

/// Right-hand side of the distributed-delay system given the two delayed
/// functionals at time `t`.
#[inline]
pub fn rhs_continuous(t: f64, y: &StateVector, g: f64, h: f64, params: &Params) -> StateVector {
    let force = params.beta.at(t) * y.i() * y.s();
    let pg = params.p * params.gamma;
    StateVector([
        -force + pg * g,
        force - h,
        h - (params.gamma + params.mu) * y.i(),
        pg * y.i() - pg * g,
        (1.0 - params.p) * params.gamma * y.i(),
        params.mu * y.i(),
    ])
}

/// Finite set of delays with non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct LagScheme {
    lags: Vec<f64>,
    weights: Vec<f64>,
}

/// Weight-sum tolerance for [`LagScheme`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

impl LagScheme {
    pub fn new(lags: Vec<f64>, weights: Vec<f64>) -> Result<Self, ModelError> {
        if lags.is_empty() || lags.len() != weights.len() {
            return Err(ModelError::Scheme(format!(
                "need equally many lags and weights (got {} and {})",
                lags.len(),
                weights.len()
            )));
        }
        for (i, &l) in lags.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(ModelError::Scheme(format!("lag {l} is not positive")));
            }
            if i > 0 && l < lags[i - 1] {
                return Err(ModelError::Scheme("lags must be ascending".into()));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ModelError::Scheme("weights must be non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(ModelError::Scheme(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { lags, weights })
    }

    /// Single delay with weight one.
    pub fn single(lag: f64) -> Result<Self, ModelError> {
        Self::new(vec![lag], vec![1.0])
    }

    /// Dirac discretization of a kernel: `n` equal cells over the support,
    /// lag at each cell midpoint carrying the exact kernel mass of the cell.
    pub fn from_kernel(kernel: &CompactKernel, n: usize) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::Scheme("need at least one cell".into()));
        }
        let (lo, hi) = kernel.support();
        let dx = (hi - lo) / n as f64;
        let mut lags = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let a = lo + i as f64 * dx;
            let b = a + dx;
            lags.push(0.5 * (a + b));
            weights.push(cell_mass(kernel, a, b));
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(lags, weights)
    }

    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    pub fn min_lag(&self) -> f64 {
        self.lags[0]
    }

    pub fn max_lag(&self) -> f64 {
        self.lags[self.lags.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.lags
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| l * w)
            .sum()
    }

    /// `Σ w_j f(lag_j)`
    pub fn weighted_sum(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.weights.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

// Exact kernel mass on [a, b] for a piecewise-linear density.
fn cell_mass(kernel: &CompactKernel, a: f64, b: f64) -> f64 {
    let mut xs = vec![a, b];
    xs.extend(
        kernel
            .knots()
            .iter()
            .map(|&(x, _)| x)
            .filter(|&x| x > a && x < b),
    );
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    xs.windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (kernel.eval(w[0]) + kernel.eval(w[1])))
        .sum()
}

/// Named discrete-lag presets: `(tau_scheme, rho_scheme)`.
///
/// * `d1`: τ = 10, ρ = 225, weight 1.
/// * `d3`: τ_j = 5j, ρ_j = 190 + 10j (j = 1..3), weights (1, 2, 1)/4.
/// * `d60`: τ_j = 5 + 10j/59, ρ_j = 200 + 50j/59 (j = 0..59),
///   weights (1, 2, …, 30, 30, …, 2, 1)/930.
pub fn lag_scheme_preset(name: &str) -> Result<(LagScheme, LagScheme), ModelError> {
    match name {
        "d1" => Ok((LagScheme::single(10.0)?, LagScheme::single(225.0)?)),
        "d3" => {
            let w = vec![0.25, 0.5, 0.25];
            let tau = (1..=3).map(|j| 5.0 * j as f64).collect();
            let rho = (1..=3).map(|j| 190.0 + 10.0 * j as f64).collect();
            Ok((LagScheme::new(tau, w.clone())?, LagScheme::new(rho, w)?))
        }
        "d60" => {
            let w: Vec<f64> = (0..60)
                .map(|j| if j < 30 { (j + 1) as f64 } else { (60 - j) as f64 } / 930.0)
                .collect();
            let tau = (0..60).map(|j| 5.0 + j as f64 * 10.0 / 59.0).collect();
            let rho = (0..60).map(|j| 200.0 + j as f64 * 50.0 / 59.0).collect();
            Ok((LagScheme::new(tau, w.clone())?, LagScheme::new(rho, w)?))
        }
        other => Err(ModelError::UnknownScheme(other.to_string())),
    }
}

/// Right-hand side of the discrete-lag system.
///
/// `i_at_rho[i]` is `I(t − ρ_i)`; `force_at_tau[j]` is
/// `β(t−τ_j) I(t−τ_j) S(t−τ_j)`.
pub fn rhs_discrete(
    t: f64,
    y: &StateVector,
    i_at_rho: &[f64],
    force_at_tau: &[f64],
    tau: &LagScheme,
    rho: &LagScheme,
    params: &Params,
) -> StateVector {
    let g = rho.weighted_sum(i_at_rho);
    let h = tau.weighted_sum(force_at_tau);
    rhs_continuous(t, y, g, h, params)
}
