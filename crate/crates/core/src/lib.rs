pub mod circuit;
pub mod contraction;
pub mod tensor;
pub mod kernel;
pub mod nn;
pub mod data;
pub mod fewshot;
pub mod lowdim;
pub mod diagnostics;
