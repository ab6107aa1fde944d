//! TOML experiment configuration.
//!
//! ```toml
//! seed = 7
//! output = "out/bilinear.csv"
//!
//! [problem]
//! name = "bilinear_saddle"
//! d = 2
//! scale = 1.0
//!
//! [method]
//! mode = "hpe_exact"
//! sigma = 0.0
//! theta = 0.1
//! p = 1
//! max_iters = 5000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::FeedbackParams;
use crate::flow::MAX_STEP;
use crate::hpe::{HpeConfig, DEFAULT_STOP_RES};
use crate::problems::{
    make_affine_box, make_bilinear_saddle, make_convex_gradient, make_cubic_1d, make_strongly_monotone_affine,
    ProblemInstance,
};
use crate::tensor::{TensorConfig, MAX_HIGH_ORDER_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum ProblemSpec {
    #[serde(rename = "bilinear_saddle")]
    BilinearSaddle {
        d: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    #[serde(rename = "strongly_monotone_affine")]
    StronglyMonotoneAffine { d: usize, mu: f64 },
    #[serde(rename = "cubic_1d")]
    Cubic1d,
    #[serde(rename = "convex_gradient")]
    ConvexGradient { d: usize },
    #[serde(rename = "affine_box")]
    AffineBox { d: usize },
}

fn one() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn build(&self) -> Result<ProblemInstance> {
        match *self {
            ProblemSpec::BilinearSaddle { d, scale } => make_bilinear_saddle(d, scale),
            ProblemSpec::StronglyMonotoneAffine { d, mu } => make_strongly_monotone_affine(d, mu),
            ProblemSpec::Cubic1d => make_cubic_1d(),
            ProblemSpec::ConvexGradient { d } => make_convex_gradient(d),
            ProblemSpec::AffineBox { d } => make_affine_box(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", deny_unknown_fields)]
pub enum MethodSpec {
    #[serde(rename = "flow", alias = "FLOW")]
    Flow {
        theta: f64,
        p: usize,
        /// Horizon `T`.
        horizon: f64,
        /// RK4 step `h`.
        step: f64,
        #[serde(default = "one_usize")]
        sample_stride: usize,
    },
    #[serde(rename = "hpe_exact", alias = "HPE_EXACT")]
    HpeExact {
        #[serde(default)]
        sigma: f64,
        theta: f64,
        p: usize,
        max_iters: usize,
        #[serde(default = "default_stop_res")]
        stop_res: f64,
    },
    #[serde(rename = "tensor", alias = "TENSOR")]
    Tensor {
        sigma_hat: f64,
        sigma_l: f64,
        sigma_u: f64,
        lipschitz: f64,
        p: usize,
        max_iters: usize,
        #[serde(default = "default_stop_res")]
        stop_res: f64,
    },
}

fn one_usize() -> usize {
    1
}

fn default_stop_res() -> f64 {
    DEFAULT_STOP_RES
}

impl MethodSpec {
    pub fn order(&self) -> usize {
        match *self {
            MethodSpec::Flow { p, .. } | MethodSpec::HpeExact { p, .. } | MethodSpec::Tensor { p, .. } => p,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            MethodSpec::Flow { .. } => "flow",
            MethodSpec::HpeExact { .. } => "hpe_exact",
            MethodSpec::Tensor { .. } => "tensor",
        }
    }

    pub fn feedback_params(&self) -> Option<FeedbackParams> {
        match *self {
            MethodSpec::Flow { theta, p, .. } => Some(FeedbackParams { theta, p }),
            _ => None,
        }
    }

    pub fn hpe_config(&self) -> Option<HpeConfig> {
        match *self {
            MethodSpec::HpeExact { sigma, theta, p, max_iters, stop_res } => {
                Some(HpeConfig { sigma, theta, p, max_iters, stop_res })
            }
            MethodSpec::Tensor { max_iters, stop_res, .. } => {
                let t = self.tensor_config()?;
                Some(HpeConfig { sigma: t.sigma(), theta: t.theta(), p: t.p, max_iters, stop_res })
            }
            MethodSpec::Flow { .. } => None,
        }
    }

    pub fn tensor_config(&self) -> Option<TensorConfig> {
        match *self {
            MethodSpec::Tensor { sigma_hat, sigma_l, sigma_u, lipschitz, p, .. } => {
                Some(TensorConfig { sigma_hat, sigma_l, sigma_u, lipschitz, p })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSettings {
    /// Fraction of the series, from the end, used by the slope fits.
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
}

fn default_tail() -> f64 {
    0.5
}

impl Default for RateSettings {
    fn default() -> Self {
        RateSettings { tail_fraction: default_tail() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// CSV trace path; the JSON summary goes next to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Starting point; drawn from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub problem: ProblemSpec,
    pub method: MethodSpec,
    #[serde(default)]
    pub rates: RateSettings,
}

fn invalid(field: &str, e: Error) -> Error {
    let msg = match e {
        Error::InvalidParameter(m) | Error::InvalidOperator(m) | Error::NonMonotone(m) => m,
        other => other.to_string(),
    };
    Error::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    /// Parses without validating.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every parameter invariant of the target module; errors are
    /// `Error::Config` naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let problem = self.problem.build().map_err(|e| invalid("problem", e))?;
        let d = problem.dim();
        if let Some(x0) = &self.x0 {
            if x0.len() != d {
                return Err(Error::Config(format!("x0: expected {d} coordinates, got {}", x0.len())));
            }
            if x0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("x0: coordinates must be finite".into()));
            }
        }
        if !(self.rates.tail_fraction > 0.0 && self.rates.tail_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "rates.tail_fraction must lie in (0, 1], got {}",
                self.rates.tail_fraction
            )));
        }
        match self.method {
            MethodSpec::Flow { theta, p, horizon, step, sample_stride } => {
                FeedbackParams::new(theta, p).map_err(|e| invalid("method", e))?;
                if !(horizon >= 0.0 && horizon.is_finite()) {
                    return Err(Error::Config(format!("method.horizon must be nonnegative, got {horizon}")));
                }
                if !(step > 0.0 && step <= MAX_STEP) {
                    return Err(Error::Config(format!("method.step must lie in (0, {MAX_STEP}], got {step}")));
                }
                if sample_stride == 0 {
                    return Err(Error::Config("method.sample_stride must be positive".into()));
                }
            }
            MethodSpec::HpeExact { .. } => {
                self.method.hpe_config().expect("hpe method").validate().map_err(|e| invalid("method", e))?;
            }
            MethodSpec::Tensor { p, .. } => {
                self.method.tensor_config().expect("tensor method").validate().map_err(|e| invalid("method", e))?;
                self.method.hpe_config().expect("tensor method").validate().map_err(|e| invalid("method", e))?;
                if p >= 3 && d > MAX_HIGH_ORDER_DIM {
                    return Err(Error::Config(format!(
                        "method.p = {p} needs dimension at most {MAX_HIGH_ORDER_DIM}, problem has {d}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HPE: &str = r#"
seed = 3
[problem]
name = "bilinear_saddle"
d = 4
[method]
mode = "hpe_exact"
theta = 0.1
p = 1
max_iters = 100
"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_toml_str(HPE).unwrap();
        assert_eq!(c.problem, ProblemSpec::BilinearSaddle { d: 4, scale: 1.0 });
        assert_eq!(c.method.hpe_config().unwrap().stop_res, DEFAULT_STOP_RES);
        assert_eq!(c.rates.tail_fraction, 0.5);
        assert_eq!(c.output, None);
    }

    #[test]
    fn round_trip_is_identity() {
        let c = ExperimentConfig::from_toml_str(HPE).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn upper_case_mode_accepted() {
        let text = HPE.replace("\"hpe_exact\"", "\"HPE_EXACT\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_ok());
    }

    #[test]
    fn sigma_at_one_rejected_with_name() {
        let text = HPE.replace("theta = 0.1", "theta = 0.1\nsigma = 1.0");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config(m)) => assert!(m.contains("sigma"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn odd_bilinear_dimension_rejected() {
        let text = HPE.replace("d = 4", "d = 3");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn empty_tensor_window_rejected() {
        let text = r#"
[problem]
name = "cubic_1d"
[method]
mode = "tensor"
sigma_hat = 0.4
sigma_l = 0.3
sigma_u = 0.5
lipschitz = 6.0
p = 3
max_iters = 10
"#;
        match ExperimentConfig::from_toml_str(text) {
            Err(Error::Config(m)) => assert!(m.contains("window"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let text = HPE.replace("seed = 3", "seed = 3\ncolour = \"red\"");
        assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn x0_dimension_checked() {
        let text = HPE.replace("seed = 3", "seed = 3\nx0 = [0.1, 0.2]");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
    }
}
