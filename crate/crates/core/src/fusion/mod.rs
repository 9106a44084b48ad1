//! Uncertainty-aware fusion of the per-modality streams.
//!
//! Each stream's probability map yields a per-voxel uncertainty
//! `U = C^C * Π_i p_i`, which is 1 for a uniform class distribution and 0
//! when any class is ruled out. Stream features are scaled by `1 - U`,
//! passed through per-stream adaptation layers, concatenated and classified
//! by a fresh pointwise head.

mod network;
mod uncertainty;

pub use network::{fuse_and_predict, gate_features, gate_with, network_forward, FusionNet, NetworkOutput, PatchPrediction};
pub(crate) use uncertainty::uncertainty_map;
pub use uncertainty::{compute_uncertainty, uncertainty_value, StreamId, UncertaintyField, PROB_EPS, SUM_TOLERANCE};
