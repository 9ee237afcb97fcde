pub mod config;
pub mod ingest;
pub mod light;
pub mod pipeline;
pub mod plate;
pub mod report;
pub mod synth;
pub mod tracker;
pub mod violations;

mod font;
