pub mod experiments;
pub mod report;
pub mod stats;
pub mod taylor;
