pub mod autograd;
pub mod cli;
pub mod encoder3d;
pub mod evalsuite;
pub mod moit;
pub mod molrepr;
pub mod nn;
pub mod objectives;
pub mod params;
pub mod pipeline;
pub mod projector;
pub mod tensor;
pub mod textlm;
