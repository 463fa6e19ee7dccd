//! Object-centric video tokenization.
//!
//! Videos are turned into two kinds of decoder inputs: a fixed grid of
//! context tokens and one token per tracked object. Objects are found by a
//! tag-driven key-frame split followed by a detect/segment/track pipeline,
//! their masks pool patch features, and a small projector fuses the pooled
//! vectors over time. A tiny causal decoder consumes both token kinds.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the CLI
//! live in the companion `objtok` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod numcore;
pub mod rng;
pub mod scenesynth;
pub mod video;
pub mod keyframe;
pub mod maskpipe;
pub mod featurize;
pub mod objproj;
pub mod vidproj;
pub mod decoder;
pub mod harness;
