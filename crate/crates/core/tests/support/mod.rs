#![allow(dead_code)]

pub mod alg1;
pub mod instances;
pub mod markov;
pub mod oracles;
pub mod scenarios;
