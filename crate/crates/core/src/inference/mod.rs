//! HAC covariance, break tests, critical values and break-date confidence intervals.

pub mod argmax;
pub mod confidence;
pub mod critical;
pub mod hac;
pub mod supq;
pub mod testing;
