//! Tools for testing whether sequence learners trained on child-directed
//! speech generalize English yes/no question formation hierarchically or
//! linearly.

pub mod cli;
pub mod corpus;
pub mod datasets;
pub mod grammar;
pub mod lm;
pub mod neural;
pub mod ngram;
pub mod qfeval;
pub mod report;
pub mod scoring;
pub mod transform;
