//! Builds the federated system named by a config.

use anyhow::{bail, Result};
use fedlsa::engine::{FiniteModel, UniformNoiseModel};
use fedlsa::environments::{garnet_federation, synthetic_system, GarnetSpec, SyntheticSpec};
use fedlsa::linalg::Vector;
use fedlsa::model::FederatedSystem;

use crate::config::SystemConfig;

pub enum Built {
    Garnet {
        system: FederatedSystem,
        model: FiniteModel,
        garnet_seed: u64,
        feature_seed: u64,
    },
    Synthetic {
        system: FederatedSystem,
        model: UniformNoiseModel,
    },
}

impl Built {
    pub fn system(&self) -> &FederatedSystem {
        match self {
            Built::Garnet { system, .. } | Built::Synthetic { system, .. } => system,
        }
    }

    /// Seeds actually used after any regeneration, for the metadata file.
    pub fn provenance(&self) -> serde_json::Value {
        match self {
            Built::Garnet {
                garnet_seed,
                feature_seed,
                ..
            } => serde_json::json!({"garnet_seed": garnet_seed, "feature_seed": feature_seed}),
            Built::Synthetic { .. } => serde_json::json!({}),
        }
    }
}

/// Calls `$body` with `$sys: &FederatedSystem` and `$model: &impl ObservationModel`.
#[macro_export]
macro_rules! with_model {
    ($built:expr, |$sys:ident, $model:ident| $body:expr) => {
        match $built {
            $crate::system::Built::Garnet { system: $sys, model: $model, .. } => $body,
            $crate::system::Built::Synthetic { system: $sys, model: $model } => $body,
        }
    };
}

pub fn build(cfg: &SystemConfig) -> Result<Built> {
    match cfg {
        SystemConfig::Garnet(spec) => build_garnet(spec),
        SystemConfig::Synthetic(spec) => build_synthetic(spec),
        SystemConfig::Toy { .. } => bail!("the toy process is not a federated system"),
    }
}

fn build_garnet(spec: &GarnetSpec) -> Result<Built> {
    let fed = garnet_federation(spec)?;
    Ok(Built::Garnet {
        system: fed.system,
        model: fed.model,
        garnet_seed: fed.garnet_seed,
        feature_seed: fed.feature_seed,
    })
}

fn build_synthetic(spec: &SyntheticSpec) -> Result<Built> {
    let (system, model) = synthetic_system(spec)?;
    Ok(Built::Synthetic { system, model })
}

/// The same system without heterogeneity: zero perturbation for Garnet,
/// zero spread for synthetic systems.
pub fn homogeneous_variant(cfg: &SystemConfig) -> Option<SystemConfig> {
    match cfg {
        SystemConfig::Garnet(spec) => Some(SystemConfig::Garnet(GarnetSpec {
            perturb_magnitude: 0.0,
            ..*spec
        })),
        SystemConfig::Synthetic(spec) => Some(SystemConfig::Synthetic(SyntheticSpec {
            het_a: 0.0,
            het_b: 0.0,
            ..*spec
        })),
        SystemConfig::Toy { .. } => None,
    }
}

pub fn theta0(cfg: Option<&Vec<f64>>, dim: usize) -> Result<Vector> {
    match cfg {
        None => Ok(Vector::zeros(dim)),
        Some(v) if v.len() == dim => Ok(Vector::from_column_slice(v)),
        Some(v) => bail!("theta0 has {} entries, system dimension is {dim}", v.len()),
    }
}
