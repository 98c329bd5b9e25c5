pub mod checkpoint;
pub mod colorspace;
pub mod dataio;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod pipeline;
pub mod scenegen;
pub mod solarpos;
pub mod tensor;
pub mod verify;
