pub mod dgnn;
pub mod finetune;
pub mod graph;
pub mod pretrain;
pub mod sampler;
pub mod tensor;
