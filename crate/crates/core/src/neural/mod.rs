//! Inference compilation: reverse-mode autodiff, the proposal network and its training.

pub mod autodiff;
mod io;
mod network;
mod train;

pub use autodiff::{AutodiffError, Gradients, Graph, Tensor, Var};
pub use io::{
    decode_network, encode_network, load_network, save_network, NetworkIoError, NETWORK_FILE_VERSION,
    NETWORK_MAGIC,
};
pub use network::{
    controlled_entries, trace_observation, HeadKind, NetworkConfig, ProposalNetwork, SiteEntry,
};
pub use train::{mean_loss, trace_loss, train_proposal, train_with_progress, Adam, TrainConfig, TrainError, TrainReport};
