pub mod audit;
pub mod dataio;
pub mod demo;
pub mod density;
pub mod domain;
pub mod linalg;
pub mod mi;
pub mod posthoc;
pub mod relatedness;
pub mod rng;
pub mod uncertainty;
