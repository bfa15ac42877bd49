//! Separate source and channel coding: an occupancy octree for geometry,
//! a regular LDPC code for protection, sent over the same digital link as
//! the learned system. Used to reproduce the cliff effect.

pub mod ldpc;
pub mod octree;
mod transmit;

pub use ldpc::{CodeRate, LdpcCode, LdpcDecodeOutput};
pub use octree::{octree_decode, octree_decode_prefix, octree_encode, Bbox, OctreeCode};
pub use transmit::{baseline_sweep, baseline_transmit, depth_for_bpp, llrs, BaselineConfig, BaselineFrame};
