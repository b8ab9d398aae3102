pub mod artifacts;
pub mod check;
pub mod training;
