pub mod cli;
pub mod config;
pub mod dataio;
pub mod layout;
pub mod norms;
pub mod objective;
pub mod optimizer;
pub mod skeleton;
pub mod trainer;
