//! Feedforward networks, their training, and logistic regression.

pub mod adam;
pub mod checkpoint;
pub mod logreg;
pub mod network;
pub mod spec;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_model, read_history, save_model, write_history, MODL_MAGIC, MODL_VERSION};
pub use logreg::{fit_logreg, logreg_objective, LogRegConfig, LogisticModel};
pub use network::{sigmoid, softmax_row, ForwardPass, Mode, Network};
pub use spec::{
    build_named_architecture, build_paper_architecture, Activation, Architecture, Head, LayerSpec, Loss, NetworkSpec,
};
pub use train::{train, EpochRecord, Preset, TrainConfig, TrainedModel};
