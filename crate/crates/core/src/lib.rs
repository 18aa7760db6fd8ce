//! Corpus forge and evaluation toolkit for remote-sensing vision-language
//! instruction tuning.

pub mod domain;
pub mod geotext;
pub mod ingest;
pub mod jsonl;
pub mod templating;
pub mod corpus;
pub mod review;
pub mod metrics;
pub mod judge;
pub mod service;
pub mod config;
pub mod cli;
