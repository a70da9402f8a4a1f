pub mod autodiff;
pub mod data;
pub mod eval;
pub mod meta;
pub mod models;
pub mod nn;
pub mod optim;
pub mod writer_codes;
