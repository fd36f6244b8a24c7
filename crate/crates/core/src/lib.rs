pub mod cbf;
pub mod cli;
pub mod config;
pub mod error;
pub mod platoon;
pub mod safety;
pub mod sim;
pub mod stability;
pub mod validate;
