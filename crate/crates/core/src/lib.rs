pub mod av;
pub mod geometry;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod reasoning;
pub mod recovery;
pub mod service;
pub mod trace;
pub mod world;
