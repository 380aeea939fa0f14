pub mod assess;
pub mod gen_data;
pub mod sample;
pub mod toy_mixture;
pub mod train_gan;
pub mod train_inference;
