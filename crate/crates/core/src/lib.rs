//! Inference-side pipeline for unsupervised video instance segmentation.
//!
//! Class-agnostic detections come in with an appearance embedding each. The
//! pipeline labels them against a text-embedding table, filters noisy labels
//! with per-class prototype banks, links the survivors into tracklets with
//! slot-based Hungarian matching over a running-mean memory, and scores the
//! result with video AP/AR and per-frame F1.
//!
//! Stages exchange data through the JSON / JSON Lines formats in [`model`],
//! so every stage can also be driven from files.

pub mod assignment;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod labeling;
pub mod maskops;
pub mod model;
pub mod pipeline;
pub mod pmf;
pub mod synth;
pub mod tracking;
pub mod validate;

pub use error::{Error, Result};
pub use model::{
    BBox, ClassEmbeddingTable, DetectionRecord, Embedding, GroundTruthRecord, Manifest, RleMask,
    Tracklet, TrackletEntry, VideoInfo,
};
