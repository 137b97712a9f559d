//! Meta-path graph attention encoder.

pub mod han;
pub mod metapath;

pub use han::{AttentionActivation, Han, HanOutput};
pub use metapath::{default_metapaths, metapath_neighbors, MetaPath, NeighborIndex};
