//! Experimental systems: Garnet MDPs mapped to TD(0), synthetic linear
//! systems and the scalar limiting-variance process.

pub mod garnet;
pub mod synthetic;
pub mod td;
pub mod toy;

pub use garnet::{generate_garnet, perturb_mdp, stationary_distribution, GarnetSpec, Mdp};
pub use synthetic::{synthetic_system, SyntheticSpec};
pub use td::{garnet_federation, random_features, td_lsa_model, GarnetFederation, TdLsaModel};
pub use toy::{toy_variance, ToyProcess1d};
