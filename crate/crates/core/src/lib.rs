//! Spike sorting by joint discriminative subspace learning and clustering.
//!
//! The pipeline is: detect and align spikes ([`spike_io`]), learn a
//! low-dimensional discriminative projection while clustering
//! ([`clustering::lda_km`]), choose the number of units ([`sorters`]), and
//! score against ground truth ([`eval`]). [`synth`] builds test recordings.

// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod density;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod sorters;
pub mod spike_io;
pub mod subspace;
pub mod synth;

pub use clustering::{KMeansResult, LabelAssignment, LdaKmConfig, LdaKmResult, OUTLIER};
pub use density::{Histogram, HistogramConfig, PeakConfig};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use sorters::{Algo1Config, Algo2Config, Diagnostics, SortResult};
pub use spike_io::{DetectionConfig, Polarity, RawSignal, SpikeMatrix};
pub use subspace::{Projection, ScatterPair};
pub use synth::{NoiseModel, SynthConfig, SynthDataset, TemplateMode};
