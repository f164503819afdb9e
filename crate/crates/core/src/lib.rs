pub mod analysis;
pub mod cli;
pub mod engine;
pub mod messages;
pub mod overlay;
pub mod rng;
pub mod sigs;
pub mod sim;
