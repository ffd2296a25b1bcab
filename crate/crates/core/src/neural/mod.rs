//! Dense numeric core: tensors, the mean-pooling encoder, losses, Adam and
//! finite-difference gradient checks. Gradients are derived by hand.

pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod tensor;
pub mod train;

pub use encoder::{
    ClassifierHead, ClassifierWeights, EncodeCache, EncoderParams, EncoderWeights, TextClassifier, Vocab, BOS, EOS,
    PAD, SEP, UNK,
};
pub use gradcheck::{grad_check, relative_error};
pub use loss::{
    binary_cross_entropy, binary_focal, binary_focal_from_logit, cosine_with_grad, focal_loss, focal_loss_one_hot,
    focal_softmax_grad, select_semi_hard, semi_hard_mine, triplet_cosine_loss, triplet_cosine_loss_with_grad,
    FocalConfig, TripletConfig, TripletGrads,
};
pub use optim::{adam_step, AdamState, TrainConfig};
pub use tensor::{Tensor, Trainable};
pub use train::{data_rng, fit, init_rng, train_binary, BinaryExample, EpochRecord, TrainReport};
