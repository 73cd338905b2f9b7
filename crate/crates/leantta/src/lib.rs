pub mod cli;
pub mod error;
pub mod format;
pub mod parallel;
pub mod report;
