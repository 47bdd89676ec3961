//! Quantification of splicing variants from paired-end RNA-seq fragments.
//!
//! Fragments are reduced to exon paths within gene islands, path
//! probabilities are computed per variant from a fragment length PMF and a
//! relative start CDF, and variant proportions are estimated by EM with
//! asymptotic or Metropolis-Hastings uncertainty.

pub mod distributions;
pub mod error;
pub mod genome;
pub mod inference;
pub mod pathing;
pub mod pathprob;
pub mod quantify;
pub mod seeds;
pub mod simulate;

pub use distributions::{FragmentDistributions, LengthPmf, StartCdf};
pub use error::{Error, Result};
pub use genome::{Exon, GeneIsland, SplicedLayout, Strand, Variant};
pub use inference::{PosteriorSummary, PriorSpec};
pub use pathing::{ExonPath, FragmentAlignment, PathCountTable, PathCounts, PathOutcome, UnmappedReason};
pub use pathprob::{PathProbMatrix, PathProbCache};
pub use quantify::{IslandResult, QuantifyOptions};
pub use simulate::{SimConfig, SimReport};
