pub mod behavioral;
pub mod cli;
pub mod datamodel;
pub mod error;
pub mod external;
pub mod folds;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod report;
pub mod scoring;
mod seeding;
pub mod slices;
