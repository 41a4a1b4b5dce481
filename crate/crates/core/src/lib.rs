pub mod data;
pub mod experiment;
pub mod quant;
pub mod snn;
pub mod tensor;
pub mod training;
