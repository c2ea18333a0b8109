//! Home-work mobility networks, movement communities and workplace
//! segregation.
//!
//! The crate turns raw tower pings into per-user home and work anchors,
//! builds the weighted tower graph of home-work trajectories, partitions it
//! by Louvain modularity maximization, and measures how isolated each
//! community is at its workplaces against a randomized-relocation null model.

pub mod error;
pub mod geometry;
pub mod graph;
pub mod ingest;
pub mod io;
pub mod nullmodel;
pub mod pipeline;
pub mod segregation;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use geometry::{Point, Polygon, SelLabel, SelProfile, TowerCell, TowerId};
pub use graph::{HWNetwork, Partition};
pub use ingest::{PingRecord, RejectionLog, UserAnchor};
pub use segregation::{CountsMatrix, IsolationReport};

/// Derives an independent stage seed from the top-level seed.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
