#![allow(dead_code)]

pub mod edit;
pub mod gradcheck;
