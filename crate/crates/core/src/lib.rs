//! Central configurations of the n-body problem via the Albouy-Chenciner
//! equations: polynomial systems, mixed volumes, homotopy continuation,
//! interval certification, classification and embedding.

pub mod acsys;
pub mod census;
pub mod certify;
pub mod classify;
pub mod embed;
pub mod linalg;
pub mod lp;
pub mod mixedcells;
pub mod poly;
pub mod orchestrate;
pub mod polyhedral;
pub mod tracker;
