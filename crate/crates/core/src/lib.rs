pub mod branching;
pub mod enumerate;
pub mod cli;
pub mod kernels;
pub mod manifest;
pub mod numeric;
pub mod profiles;
pub mod replica;
pub mod solver;
pub mod stats;
pub mod walk;
