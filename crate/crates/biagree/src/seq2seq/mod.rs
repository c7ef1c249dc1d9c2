//! Vocabulary, token sequences and the directional encoder-decoder model.

mod model;
mod vocab;

pub use model::{
    output_index, output_token, parameter_shapes, DecoderState, Direction, DirectionalModel, EncoderStates,
    ModelConfig, StepOutput,
};
pub use vocab::{reverse_target, TokenId, TokenSequence, Vocab, BOS, EOS, FIRST_CONTENT, PAD, RESERVED};
