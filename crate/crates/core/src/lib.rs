pub mod artifact;
pub mod codeast;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod features;
pub mod metrics;
pub mod mlpcls;
pub mod perturb;
pub mod protocol;
pub mod pipeline;
pub mod seed;
pub mod stage;
pub mod synth;
pub mod victim;
