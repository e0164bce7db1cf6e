//! Small differentiable-function substrate for the score networks.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use layers::{Backbone, BackboneSpec, ClueEncoder, Dense, ResBlock, TimeEmbedding};
pub use params::{Init, Mat, Param, ParamId, ParamStore};
