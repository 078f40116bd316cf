//! Command line and HTTP surface over the crowdlabel engine. Task state
//! lives in a data directory with one snapshot directory per task.

pub mod server;
pub mod view;
pub mod workspace;
