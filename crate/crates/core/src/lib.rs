pub mod app;
pub mod config;
pub mod dialogue;
pub mod distill;
pub mod error;
pub mod gateway;
pub mod images;
pub mod service;
pub mod sim;
pub mod store;
pub mod update;

pub use error::{Error, Result};
