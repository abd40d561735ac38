//! Multi-task neural codec language model over a synthetic speech world.

pub mod cli;
pub mod codec;
pub mod evalkit;
pub mod generate;
pub mod nclm;
pub mod prompting;
pub mod synthworld;
pub mod trainer;
pub mod util;
