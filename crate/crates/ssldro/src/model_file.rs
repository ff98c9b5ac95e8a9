//! Versioned plain-text model files.
//!
//! One `key value` pair per line; arrays are space-separated. Every real is
//! written with 17 significant digits, which round-trips an `f64` exactly.
//!
//! ```text
//! ssldro-model 1
//! loss logistic
//! method exact
//! delta_star 1.0000000000000000e-1
//! ...
//! beta 1.2500000000000000e0 -3.0000000000000000e-1
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ssldro_core::data::{with_intercept, Standardizer};
use ssldro_core::loss::Loss;
use ssldro_core::solver::{TrainMethod, TrainedModel};

use crate::error::{CliError, CliResult};

pub const MAGIC: &str = "ssldro-model";
pub const VERSION: u32 = 1;

/// Feature transform applied before the linear model: standardization
/// (optional) followed by an intercept column (optional).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessing {
    pub standardizer: Option<Standardizer>,
    pub intercept: bool,
}

impl Preprocessing {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let z = match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        };
        if self.intercept {
            with_intercept(&z)
        } else {
            z
        }
    }

    /// Width of a raw input row, when known.
    pub fn input_dim(&self) -> Option<usize> {
        self.standardizer.as_ref().map(|s| s.mean.len())
    }
}

/// A trained model as persisted on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub loss: Loss,
    pub method: String,
    pub delta_star: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fingerprint: u64,
    pub cost_q: f64,
    pub cost_rho: f64,
    pub preprocessing: Preprocessing,
    pub beta: Vec<f64>,
}

pub fn method_name(m: &TrainMethod) -> &'static str {
    match m {
        TrainMethod::Sgd(_) => "sgd",
        TrainMethod::Exact(_) => "exact",
        TrainMethod::Baseline { .. } => "baseline",
    }
}

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_array(v: &[f64]) -> String {
    v.iter().map(|x| fmt_real(*x)).collect::<Vec<_>>().join(" ")
}

impl ModelFile {
    pub fn from_model(
        m: &TrainedModel,
        cost_q: f64,
        cost_rho: f64,
        preprocessing: Preprocessing,
    ) -> Self {
        ModelFile {
            loss: m.loss,
            method: method_name(&m.method).to_string(),
            delta_star: m.delta_star,
            epsilon: m.epsilon,
            lambda: m.lambda,
            iterations: m.iterations,
            converged: m.converged,
            fingerprint: m.fingerprint,
            cost_q,
            cost_rho,
            preprocessing,
            beta: m.beta.clone(),
        }
    }

    /// Model input after preprocessing.
    pub fn features(&self, x: &[f64]) -> CliResult<Vec<f64>> {
        if let Some(d) = self.preprocessing.input_dim() {
            if d != x.len() {
                return Err(CliError::data(format!(
                    "model expects {d} features, data has {}",
                    x.len()
                )));
            }
        }
        let z = self.preprocessing.apply(x);
        if z.len() != self.beta.len() {
            return Err(CliError::data(format!(
                "model has {} coefficients, transformed data has {} features",
                self.beta.len(),
                z.len()
            )));
        }
        Ok(z)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} {v}");
        };
        kv(MAGIC, VERSION.to_string());
        kv("loss", self.loss.to_string());
        kv("method", self.method.clone());
        kv("delta_star", fmt_real(self.delta_star));
        kv("epsilon", fmt_real(self.epsilon));
        kv("lambda", fmt_real(self.lambda));
        kv("iterations", self.iterations.to_string());
        kv("converged", self.converged.to_string());
        kv("fingerprint", format!("{:016x}", self.fingerprint));
        kv("cost_q", fmt_real(self.cost_q));
        kv("cost_rho", fmt_real(self.cost_rho));
        kv("intercept", self.preprocessing.intercept.to_string());
        match &self.preprocessing.standardizer {
            Some(st) => {
                kv("standardize", "true".into());
                kv("standardize_mean", fmt_array(&st.mean));
                kv("standardize_scale", fmt_array(&st.scale));
            }
            None => kv("standardize", "false".into()),
        }
        kv("beta", fmt_array(&self.beta));
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let bad = |m: String| CliError::data(format!("model file: {m}"));
        let mut lines = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let head = lines.next().ok_or_else(|| bad("empty".into()))?;
        match head.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
            _ => return Err(bad(format!("unsupported header {head:?}"))),
        }
        let mut map = std::collections::BTreeMap::new();
        for l in lines {
            let (k, v) = l.split_once(' ').unwrap_or((l, ""));
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(bad(format!("duplicate key {k}")));
            }
        }
        let get = |k: &str| {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| bad(format!("missing key {k}")))
        };
        let real = |k: &str| -> CliResult<f64> {
            let v = get(k)?;
            v.parse()
                .map_err(|_| bad(format!("{k}: {v:?} is not a number")))
        };
        let flag = |k: &str| -> CliResult<bool> {
            let v = get(k)?;
            v.parse()
                .map_err(|_| bad(format!("{k}: {v:?} is not true/false")))
        };
        let array = |k: &str| -> CliResult<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| bad(format!("{k}: {t:?} is not a number")))
                })
                .collect()
        };
        let standardizer = if flag("standardize")? {
            let mean = array("standardize_mean")?;
            let scale = array("standardize_scale")?;
            if mean.len() != scale.len() {
                return Err(bad("standardization arrays differ in length".into()));
            }
            Some(Standardizer { mean, scale })
        } else {
            None
        };
        let fp = get("fingerprint")?;
        Ok(ModelFile {
            loss: get("loss")?
                .parse()
                .map_err(|_| bad("unknown loss".into()))?,
            method: get("method")?.to_string(),
            delta_star: real("delta_star")?,
            epsilon: real("epsilon")?,
            lambda: real("lambda")?,
            iterations: get("iterations")?
                .parse()
                .map_err(|_| bad("iterations is not an integer".into()))?,
            converged: flag("converged")?,
            fingerprint: u64::from_str_radix(fp, 16)
                .map_err(|_| bad(format!("fingerprint {fp:?}")))?,
            cost_q: real("cost_q")?,
            cost_rho: real("cost_rho")?,
            preprocessing: Preprocessing {
                standardizer,
                intercept: flag("intercept")?,
            },
            beta: array("beta")?,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_text()).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(beta: Vec<f64>, standardize: bool) -> ModelFile {
        let d = beta.len();
        ModelFile {
            loss: Loss::Logistic,
            method: "exact".into(),
            delta_star: 0.1,
            epsilon: 1.0 / 3.0,
            lambda: 2.5e-7,
            iterations: 42,
            converged: true,
            fingerprint: 0xdead_beef_0123_4567,
            cost_q: 2.0,
            cost_rho: 2.0,
            preprocessing: Preprocessing {
                standardizer: standardize.then(|| Standardizer {
                    mean: vec![0.1; d - 1],
                    scale: vec![3.0; d - 1],
                }),
                intercept: true,
            },
            beta,
        }
    }

    #[test]
    fn header_and_layout() {
        let t = sample(vec![1.25, -0.3], true).to_text();
        assert!(t.starts_with("ssldro-model 1\n"));
        assert!(t.contains("beta 1.2500000000000000e0 -2.9999999999999999e-1\n"));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ModelFile::parse("").is_err());
        assert!(ModelFile::parse("ssldro-model 2\n").is_err());
        let t = sample(vec![1.0], false)
            .to_text()
            .replace("loss logistic\n", "");
        assert!(ModelFile::parse(&t).is_err());
    }

    #[test]
    fn dimension_checks() {
        let m = sample(vec![1.0, 2.0, 3.0], true);
        assert_eq!(m.features(&[0.1, 0.1]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(m.features(&[0.1]).is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(beta in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 2..8),
                                    standardize in any::<bool>()) {
            let m = sample(beta, standardize);
            let back = ModelFile::parse(&m.to_text()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
