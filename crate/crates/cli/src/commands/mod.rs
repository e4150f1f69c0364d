pub mod dataset;
pub mod decode;
pub mod encode;
pub mod eval;
pub mod lm;
