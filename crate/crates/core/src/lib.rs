//! Strategy summaries of deep Q-network agents combined with layer-wise
//! relevance saliency maps.
//!
//! Pipeline: load a [`net::NetworkSpec`] and a recorded [`streams::Stream`],
//! pick important trajectories with [`highlights`], explain the selected
//! states with [`lrp`], check the explanations with [`sanity`], and render
//! the result with [`compositor`]. [`toyenv`] provides a solved gridworld
//! with exact ground truth for all of it.

pub mod cli;
pub mod compositor;
pub mod error;
pub mod highlights;
pub mod lrp;
pub mod metrics;
pub mod net;
pub mod sanity;
pub mod streams;
pub mod tensor;
pub mod toyenv;

pub use error::{Error, Result};
