//! Drug-disease graph pipeline for adverse drug reaction (ADR) signal detection.
//!
//! Patient claims are turned into per-patient drug and disease code sequences
//! ([`claims`]), embedded with skip-gram ([`skipgram`]), combined with
//! ATC/ICD-10 category encodings ([`hierarchy`]) into a heterogeneous
//! drug-disease graph ([`graph`]), and scored pairwise with GCN, GAT or
//! per-edge-type GCN encoders and a bilinear decoder ([`gnn`]). Labels,
//! negative sampling and class-disjoint splits live in [`labels`]; training,
//! baselines, metrics and candidate mining in [`train`], [`baselines`] and
//! [`metrics`]. [`synth`] generates planted-signal corpora and [`pipeline`]
//! wires the stages together on disk.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod baselines;
pub mod claims;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod hierarchy;
pub mod io_util;
pub mod labels;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod skipgram;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{Error, Result};

/// The two node types of the drug-disease graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Drug,
    Disease,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Drug => "drug",
            NodeKind::Disease => "disease",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            NodeKind::Drug => 0,
            NodeKind::Disease => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(NodeKind::Drug),
            1 => Some(NodeKind::Disease),
            _ => None,
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
