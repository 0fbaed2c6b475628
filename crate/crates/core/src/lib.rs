//! Floorplan localization from ray scans, plus the geometric tooling used to
//! mine multi-view training correspondences from RGB-D sequences.

pub mod contrastive;
pub mod eval;
pub mod filter;
pub mod floorplan;
pub mod geom;
pub mod io;
pub mod mining;
pub mod obsmodel;
pub mod sim;
