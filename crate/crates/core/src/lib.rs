//! Online purification of noisy-labeled continual-learning streams.
//!
//! The crate is `no_std` (with `alloc`) and holds every numeric piece of the
//! pipeline:
//!
//! - [`stream_gen`]: synthetic Gaussian-cluster datasets, label-noise
//!   injection and task-ordered episodes.
//! - [`buffers`]: the delayed staging buffer, the class-balanced purified
//!   buffer and a reservoir-sampling baseline buffer.
//! - [`encoder`]: a small MLP encoder trained with the NT-Xent contrastive
//!   loss, plus supervised finetuning of a softmax classifier.
//! - [`centrality`]: per-class cosine similarity graphs, Bernoulli graph
//!   sampling and eigenvector centrality by power iteration.
//! - [`bmm`]: a two-component Beta mixture fitted by EM with moment-matching
//!   M-steps, and the clean-sample posteriors built on it.
//! - [`pipeline`]: the online driver tying the above together, the reservoir
//!   baseline and evaluation metrics.
//!
//! File formats, configuration files and the command-line front end live in
//! the companion `spr` crate.

#![no_std]
#![warn(missing_debug_implementations)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod bmm;
pub mod buffers;
pub mod centrality;
pub mod encoder;
mod error;
pub mod pipeline;
pub mod rng;
pub mod stream_gen;

pub use error::{Error, Result};

#[doc(inline)]
pub use self::{
    bmm::{BetaMixture, EmConfig},
    buffers::{DelayedBuffer, PurifiedBuffer, PurifiedEntry, ReservoirBuffer},
    centrality::{AdjacencyMatrix, CentralityConfig, CentralityResult, ClassFeatureSet},
    encoder::{Classifier, EncoderDims, EncoderParams, FinetuneConfig, TrainConfig},
    pipeline::{FilterVariant, RunMetrics, SprConfig},
    stream_gen::{Dataset, Episode, EpisodeSpec, NoiseKind, Sample},
};
