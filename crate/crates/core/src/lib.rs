//! Trajectory analytics for scripted behavioral tests.
//!
//! The crate turns per-frame dog/person detection logs into fixed-rate
//! trajectory tensors, learns a convolutional autoencoder embedding of each
//! trial, clusters the embeddings, relates clusters to expert scores and
//! questionnaire factors, and searches for predictive pipelines with a
//! budgeted genetic algorithm. A seeded generator provides labeled corpora
//! with known ground truth.
//!
//! Stages, in pipeline order:
//!
//! * [`trajectory_io`]: tracker documents, label files, coverage gate
//! * [`preprocess`]: resampling, gap filling, smoothing, length standardization
//! * [`autoencoder`]: 1-D conv autoencoder with hand-written backprop and Adam
//! * [`clustering`]: k-means++ / Lloyd, elbow selection, outliers
//! * [`stats`]: scale collapse, rater agreement, Mann-Whitney U, cross-tabs
//! * [`model_search`]: metrics, cross-validation, genetic pipeline search
//! * [`synthetic`]: labeled trial generator
//! * [`cli`]: command-line orchestration

pub mod autoencoder;
pub mod cli;
pub mod clustering;
pub mod model_search;
pub mod preprocess;
pub mod seeds;
pub mod stats;
pub mod synthetic;
pub mod trajectory_io;

pub use autoencoder::{AEHyper, AEParams, MovementVector};
pub use clustering::ClusterModel;
pub use preprocess::{Dataset, SampleTensor, TrialSeries};
pub use stats::{SignClass, UTestResult};
pub use trajectory_io::{FrameDetection, Point2D, RawTrial, ScoreRecord};
