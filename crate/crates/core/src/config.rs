//! Instance configuration files: a versioned TOML schema with fail-fast
//! rejection of unknown keys, plus a deterministic hash of the resolved
//! instance for run records.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pmf::Pmf;
use crate::pricing::{
    build_arrival_table, named_service_pmf, named_shape, normalize_shape, PenaltySpec,
    PricingModel, PricingSpec,
};

pub const CONFIG_VERSION: u32 = 1;

/// Either a named distribution/shape or an explicit vector.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum NamedOrVector {
    Named(String),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    #[serde(rename = "C")]
    pub c: f64,
    pub k: f64,
    pub alpha: f64,
    pub zhat: usize,
}

/// The on-disk instance schema. Field names are part of the file format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub version: u32,
    pub n: usize,
    pub b: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub prices: Vec<f64>,
    pub service_pmf: NamedOrVector,
    pub shape: NamedOrVector,
    pub u_avg_max: f64,
    #[serde(rename = "c_W")]
    pub c_w: f64,
    #[serde(rename = "c_T")]
    pub c_t: f64,
    pub penalty: PenaltyConfig,
}

impl InstanceConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: InstanceConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        if config.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn service_pmf(&self) -> Result<Pmf> {
        match &self.service_pmf {
            NamedOrVector::Named(name) => named_service_pmf(name),
            NamedOrVector::Vector(weights) => Pmf::normalized(weights.clone()),
        }
    }

    pub fn shape(&self) -> Result<Vec<f64>> {
        match &self.shape {
            NamedOrVector::Named(name) => named_shape(name, self.horizon),
            NamedOrVector::Vector(values) => {
                if values.len() != self.horizon {
                    return Err(Error::Config(format!(
                        "shape vector length {} does not match the horizon {}",
                        values.len(),
                        self.horizon
                    )));
                }
                normalize_shape(values.clone())
            }
        }
    }

    /// Resolves the config into a pricing spec: names expanded, shapes
    /// normalized, rate table built.
    pub fn to_spec(&self) -> Result<PricingSpec> {
        let service = self.service_pmf()?;
        let shape = self.shape()?;
        let mean = service
            .iter()
            .enumerate()
            .map(|(i, &g)| (i + 1) as f64 * g)
            .sum::<f64>();
        let lambda = build_arrival_table(&shape, self.u_avg_max, self.n, mean, &self.prices)?;
        let spec = PricingSpec {
            n: self.n,
            b: self.b,
            horizon: self.horizon,
            prices: self.prices.clone(),
            service,
            lambda,
            c_w: self.c_w,
            c_t: self.c_t,
            penalty: PenaltySpec {
                c: self.penalty.c,
                k: self.penalty.k,
                alpha: self.penalty.alpha,
                zhat: self.penalty.zhat,
            },
            size_table: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_model(&self) -> Result<PricingModel> {
        PricingModel::new(self.to_spec()?)
    }

    /// Deterministic hash of the resolved instance: every quantity that
    /// affects results enters the digest, so any key change alters the hash.
    pub fn resolved_hash(&self) -> Result<String> {
        let spec = self.to_spec()?;
        let mut hasher = Sha256::new();
        let mut push = |bytes: &[u8]| hasher.update(bytes);
        push(b"qdp-config-v1");
        push(&(spec.n as u64).to_le_bytes());
        push(&(spec.b as u64).to_le_bytes());
        push(&(spec.horizon as u64).to_le_bytes());
        for &p in &spec.prices {
            push(&p.to_le_bytes());
        }
        for &g in spec.service.iter() {
            push(&g.to_le_bytes());
        }
        for row in &spec.lambda {
            for &l in row {
                push(&l.to_le_bytes());
            }
        }
        push(&spec.c_w.to_le_bytes());
        push(&spec.c_t.to_le_bytes());
        push(&spec.penalty.c.to_le_bytes());
        push(&spec.penalty.k.to_le_bytes());
        push(&spec.penalty.alpha.to_le_bytes());
        push(&(spec.penalty.zhat as u64).to_le_bytes());
        Ok(hex::encode(&hasher.finalize()[..16]))
    }
}

/// A ready-to-use default config body (the canonical price grid and an
/// inactive penalty), parameterized by the headline knobs.
pub fn example_config(n: usize, b: usize, horizon: usize, service: &str, shape: &str) -> String {
    format!(
        r#"version = 1
n = {n}
b = {b}
T = {horizon}
prices = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1]
service_pmf = "{service}"
shape = "{shape}"
u_avg_max = 5.0
c_W = 0.1
c_T = 1.5

[penalty]
C = 0.0
k = 1.0
alpha = 0.05
zhat = {n}
"#
    )
}
