//! Few-shot priming of language models for task-oriented dialogue.
//!
//! The crate covers the whole evaluation loop: domain types ([`model`]),
//! prompt construction under a token budget ([`prefix`]), completion
//! backends ([`backend`]), per-task prediction ([`runner`]), scoring
//! ([`metrics`]), corpus loading and shot sampling ([`data`]) and
//! end-to-end experiments with result tables ([`experiment`]), plus
//! converters from upstream corpus layouts ([`convert`]).

pub mod backend;
pub mod model;
pub mod prefix;
pub mod runner;
pub mod metrics;
pub mod data;
pub mod experiment;
pub mod convert;
