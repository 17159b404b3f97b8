//! Shallow discourse parsing pipeline: explicit connective detection and
//! sense labeling with decision trees, CRF argument segmentation with
//! constituent candidates, argument trimming, and convolutional detection
//! and sense labeling of non-explicit relations between adjacent sentences,
//! plus a CoNLL-style exact/partial scorer.

pub mod corpus;
pub mod crf;
pub mod dtree;
pub mod explicit;
pub mod neural;
pub mod nonexplicit;
pub mod pipeline;
pub mod scorer;
pub mod syntax;
