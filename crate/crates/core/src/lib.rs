//! Two-level, multi-chain integrity anchoring for IoT forensic event data.
//!
//! Significant events are filtered at the edge, their digests are committed to
//! two inexpensive first-level chains, and once per day the confirmed
//! transactions of each first-level chain are folded into a Merkle tree whose
//! root is anchored on a high-security second-level chain. Investigators can
//! later check any stored event against both levels.
//!
//! Chains are simulated (see [`chainsim`]); everything runs on an explicit
//! logical clock so whole runs are reproducible from a seed.

pub mod attacks;
pub mod chainsim;
pub mod costmodel;
pub mod datacenter;
pub mod edge;
pub mod merkle;
pub mod num;
pub mod sim;
pub mod time;
pub mod verifier;

pub use merkle::{Digest, MerkleProof, MerkleTree};
pub use num::{Coord, Money};

/// Exact currency arithmetic. Used wherever totals must reproduce to the cent.
pub type ExactUsd = num_rational::Ratio<i128>;

/// Unit costs with exact currency values.
pub type UnitCosts = costmodel::UnitCostTable<ExactUsd>;
/// Unit costs in binary floating point, for quick estimates.
pub type UnitCostsF64 = costmodel::UnitCostTable<f64>;
/// An itemized cost breakdown with exact currency values.
pub type CostBreakdown = costmodel::CostBreakdown<ExactUsd>;
/// A three-way approach comparison with exact currency values.
pub type CostReport = costmodel::CostReport<ExactUsd>;

/// A geographic point in degrees.
pub type GeoPoint = edge::geo::Point<f64>;
/// A geofence polygon in degrees.
pub type Geofence = edge::geo::Polygon<f64>;
