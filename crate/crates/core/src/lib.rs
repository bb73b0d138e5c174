//! Desk-scale toolkit for multilingual masked-LM distillation: train
//! monolingual teachers, distill them into one student on balanced data,
//! and evaluate balanced multilingual performance and zero-shot transfer.

pub mod corpus;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod probing;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use corpus::{CorpusSet, TaggedCorpus};
pub use model::{MaskedLmModel, ModelConfig};
pub use tensor::{Tape, Tensor};
pub use tokenizer::Vocab;
