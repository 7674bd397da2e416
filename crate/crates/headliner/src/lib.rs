//! Headline generation for noisy (speech-recognized) input text.
//!
//! The crate covers the full pipeline:
//!
//! * [`vocab`] — character/pronunciation-unit tokenization and token↔id dictionaries
//! * [`align`] — minimum-edit-distance alignment of reference/hypothesis transcripts
//! * [`confusion`] — a context-independent substitution channel estimated from
//!   aligned transcript pairs, used to corrupt clean corpora
//! * [`numerics`] — dense tensors, reverse-mode differentiation, LSTM cells,
//!   SGD with gradient clipping, and finite-difference gradient checking
//! * [`model`] — three encoder–decoder architectures: plain, attentive, and
//!   attentive with a jointly trained per-token correctness estimator that
//!   reweights attention
//! * [`training`] — the training recipe: scheduled sampling, validation-driven
//!   learning-rate decay, and the clean/naive/proposed data regimes
//! * [`decode`] — greedy and beam search
//! * [`eval`] — ROUGE-1/2/L scoring
//! * [`corpus`], [`synth`], [`pipeline`] — JSONL corpus ingestion, a synthetic
//!   salient-subsequence task generator, and the command-level drivers behind
//!   the `headliner` CLI.
//!
//! The `book/` directory in the repository holds a narrative guide; its code
//! blocks compile and run as doc-tests of this crate.

pub mod align;
pub mod confusion;
pub mod corpus;
pub mod decode;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod training;
pub mod vocab;

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub mod $name {}
        };
    }

    //     chapter!(introduction, "../../../book/src/introduction.md");
    //     chapter!(tokens, "../../../book/src/tokens-and-vocabularies.md");
    //     chapter!(alignment, "../../../book/src/alignment.md");
    //     chapter!(confusion_channels, "../../../book/src/confusion-channels.md");
    //     chapter!(primitives, "../../../book/src/differentiable-primitives.md");
    //     chapter!(architectures, "../../../book/src/architectures.md");
    //     chapter!(training_recipe, "../../../book/src/training.md");
    //     chapter!(decoding_eval, "../../../book/src/decoding-and-evaluation.md");
    //     chapter!(pipeline_guide, "../../../book/src/pipeline.md");
}
