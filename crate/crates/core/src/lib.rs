pub mod baseline;
pub mod bundle;
pub mod calibration;
pub mod dataset;
pub mod flags;
pub mod grammar;
pub mod inference;
pub mod metrics;
pub mod prompt;
pub mod render;
pub mod report;
pub mod seeding;
pub mod synth;
