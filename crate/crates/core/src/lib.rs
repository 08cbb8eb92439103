pub mod crypto;
pub mod dataio;
pub mod fedproto;
pub mod lrbc;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod sampling;
pub mod synth;
pub mod woe;
