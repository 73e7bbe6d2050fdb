pub mod benchmarks;
pub mod bounds1d;
pub mod expr;
pub mod mip;
pub mod nn;
pub mod overapprox;
pub mod reach;
