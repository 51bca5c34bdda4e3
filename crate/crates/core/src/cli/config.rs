//! Scenario configuration file (TOML).
//!
//! Every field is optional and overrides the base preset (`preset = "ebola"`
//! unless stated otherwise):
//!
//! ```toml
//! preset = "ebola"
//!
//! [params]
//! gamma = 0.1
//! p = 0.9
//! i_fr = 0.475
//! beta = 5e-8   # or { profile = "seasonal", base = 5e-8, amplitude = 0.2, period = 365.0 }
//!
//! [history]
//! c_i = 10.0
//! population = 1e7
//! rp_zero = true
//!
//! [kernels]
//! phi = "ebola_phi"
//! psi = [[5.0, 0.0], [10.0, 0.2], [15.0, 0.0]]
//!
//! [solver]
//! horizon = 3650.0
//! rtol = 1e-9
//! atol = 1e-9
//! window = 5.0
//! sample_spacing = 1.0
//! breakpoint_depth = 4
//!
//! [schemes.coarse]
//! tau = { lags = [8.0, 12.0], weights = [0.5, 0.5] }
//! rho = { lags = [225.0], weights = [1.0] }
//! ```

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::kernels::CompactKernel;
use crate::model::{ContactRate, LagScheme, ModelError, Params, ScenarioConfig};
use crate::solver::DiscreteOptions;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub preset: Option<String>,
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub history: HistorySection,
    #[serde(default)]
    pub kernels: KernelsSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub schemes: BTreeMap<String, SchemePair>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub gamma: Option<f64>,
    pub p: Option<f64>,
    pub i_fr: Option<f64>,
    pub beta: Option<BetaSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Constant(f64),
    Profile(BetaProfile),
}

#[derive(Debug, Deserialize)]
#[serde(tag = "profile", rename_all = "lowercase", deny_unknown_fields)]
pub enum BetaProfile {
    Constant {
        value: f64,
    },
    Seasonal {
        base: f64,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistorySection {
    pub c_i: Option<f64>,
    pub population: Option<f64>,
    pub rp_zero: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsSection {
    pub phi: Option<KernelSpec>,
    pub psi: Option<KernelSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Preset(String),
    Knots(Vec<[f64; 2]>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub horizon: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub window: Option<f64>,
    pub sample_spacing: Option<f64>,
    pub breakpoint_depth: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub lags: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemePair {
    pub tau: SchemeSpec,
    pub rho: SchemeSpec,
}

/// A resolved configuration: the scenario plus any named lag schemes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub scenario: ScenarioConfig,
    pub schemes: BTreeMap<String, (LagScheme, LagScheme)>,
    pub discrete: DiscreteOptions,
}

impl KernelSpec {
    fn build(&self) -> Result<CompactKernel, ModelError> {
        Ok(match self {
            KernelSpec::Preset(name) => CompactKernel::preset(name)?,
            KernelSpec::Knots(k) => CompactKernel::new(k.iter().map(|p| (p[0], p[1])).collect())?,
        })
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Applies the file on top of its base preset (or `fallback_preset`).
    pub fn resolve(&self, fallback_preset: &str) -> Result<LoadedConfig, ModelError> {
        let base = self.preset.as_deref().unwrap_or(fallback_preset);
        let mut cfg = ScenarioConfig::preset(base)?;

        let p = &self.params;
        let beta = match &p.beta {
            None => cfg.params.beta.clone(),
            Some(BetaSpec::Constant(v))
            | Some(BetaSpec::Profile(BetaProfile::Constant { value: v })) => {
                ContactRate::Constant(*v)
            }
            Some(BetaSpec::Profile(BetaProfile::Seasonal {
                base,
                amplitude,
                period,
                phase,
            })) => ContactRate::Seasonal {
                base: *base,
                amplitude: *amplitude,
                period: *period,
                phase: *phase,
            },
        };
        cfg.params = Params::new(
            beta,
            p.gamma.unwrap_or(cfg.params.gamma),
            p.p.unwrap_or(cfg.params.p),
            p.i_fr.unwrap_or(cfg.params.i_fr),
        )?;

        let h = &self.history;
        cfg.c_i = h.c_i.unwrap_or(cfg.c_i);
        cfg.population = h.population.unwrap_or(cfg.population);
        cfg.rp_zero = h.rp_zero.unwrap_or(cfg.rp_zero);

        if let Some(k) = &self.kernels.phi {
            cfg.phi = k.build()?;
        }
        if let Some(k) = &self.kernels.psi {
            cfg.psi = k.build()?;
        }
        let mut discrete = DiscreteOptions::default();
        let s = &self.solver;
        cfg.horizon = s.horizon.unwrap_or(cfg.horizon);
        cfg.rtol = s.rtol.unwrap_or(cfg.rtol);
        cfg.atol = s.atol.unwrap_or(cfg.atol);
        cfg.sample_spacing = s.sample_spacing.unwrap_or(cfg.sample_spacing);
        // a kernel override may shrink the admissible window
        cfg.window = s.window.unwrap_or_else(|| cfg.window.min(cfg.max_window()));
        if let Some(d) = s.breakpoint_depth {
            discrete.breakpoint_depth = d;
        }
        cfg.validate()?;

        let mut schemes = BTreeMap::new();
        for (name, pair) in &self.schemes {
            let tau = LagScheme::new(pair.tau.lags.clone(), pair.tau.weights.clone())?;
            let rho = LagScheme::new(pair.rho.lags.clone(), pair.rho.weights.clone())?;
            schemes.insert(name.clone(), (tau, rho));
        }
        Ok(LoadedConfig {
            scenario: cfg,
            schemes,
            discrete,
        })
    }
}
