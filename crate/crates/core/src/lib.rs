pub mod experiment;
pub mod graphgen;
pub mod linlab;
pub mod model;
pub mod probes;
pub mod rng;
pub mod tensor;
pub mod trajgen;
