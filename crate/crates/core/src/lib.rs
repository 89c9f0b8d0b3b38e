//! Text de-biasing toolkit: detect biased text, locate the biased words,
//! mask them and propose less biased rewrites that are re-checked by the
//! detector.
//!
//! ```no_run
//! use debias_core::{BackendRegistry, ModelStore, Pipeline, PipelineConfig};
//!
//! let registry = BackendRegistry::with_defaults();
//! let store = ModelStore::from_env();
//! let pipeline = Pipeline::load(PipelineConfig::default(), &store, &registry)?;
//! let result = pipeline.run("Don't buy the pseudo-scientific hype about tornadoes and climate change")?;
//! println!("{:?}: {}", result.status, result.text);
//! # Ok::<(), debias_core::Error>(())
//! ```

pub mod backends;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod debias;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod masking;
pub mod model;
pub mod pipeline;
pub mod recognition;
pub mod text;

pub use backends::BackendRegistry;
pub use dataset::{AnnotatedExample, DatasetRecord, Label, Span, Tag, TokenTagSequence};
pub use debias::{DebiasResult, DebiasStatus};
pub use detection::{DetectionResult, Detector, TrainingConfig};
pub use error::{Error, Result};
pub use evaluation::{ConfusionCounts, MetricsReport};
pub use masking::{FillCandidate, Granularity, InfillerBackend, MaskedText};
pub use model::{Manifest, ModelStore};
pub use pipeline::{Pipeline, PipelineConfig};
pub use recognition::{BiasSpan, Lexicon, Recognizer};
