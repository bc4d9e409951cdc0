//! Desk-scale neural machine translation workbench.
//!
//! Implements an attentional encoder-decoder trained with SGD or Adam under a
//! halve-and-restart annealing controller, joint byte pair encoding, ensemble
//! beam search with unk replacement, and the evaluation tooling (BLEU,
//! class-wise unigram F1, vocabulary coverage) needed to compare a vanilla
//! baseline against a strengthened one at small scale.

pub mod autodiff;
pub mod bpe;
pub mod cli;
pub mod corpus;
pub mod decode;
pub mod eval;
pub mod lexicon;
pub mod model;
pub mod train;
pub(crate) mod util;
