//! Toy detector, synthetic two-modality data, weight files, reports and
//! the end-to-end transfer experiment.

pub mod detector;
pub mod data;
pub mod weights;
pub mod config;
pub mod report;
pub mod experiment;
