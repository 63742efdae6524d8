//! Simulation of federated linear stochastic approximation.

pub mod observation;
pub mod run;
pub mod stream;
pub mod weights;

pub use observation::{
    self_check, FiniteModel, FiniteOutcome, ModelKind, ObservationModel, SelfCheck, SupportBounds,
    UniformNoiseModel,
};
pub use run::{
    run_bootstrap_ensemble, run_fedlsa, BootstrapEnsemble, BootstrapSpec, Checkpoint, Consumer,
    DrawLog, DrawObserver, DrawRecord, FedLsa, NoObserver, PluginAccumulator, RunOptions, RunOutput,
    Trajectory, DIVERGENCE_THRESHOLD,
};
pub use stream::{derive_seed, Channel, CounterStream, NoiseStreamKey, WeightKeyPrefix};
pub use weights::{sample_weight, WeightDistribution};
