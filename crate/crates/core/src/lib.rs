pub mod analysis;
pub mod dataset;
pub mod featurepack;
pub mod harness;
pub mod par;
pub mod tensor;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
