//! Center-of-inertia pilot-bus detection and regional inertia estimation
//! from disturbance synchrophasor measurements.
//!
//! The numerical modules ([`signal`], [`tda`], [`sysid`], [`metrics`]) are
//! generic over [`Scalar`] (`f32` or `f64`); the aliases below fix the
//! precision for everyday use. The simulator in [`gridsim`] works in `f64`.

pub mod error;
pub mod gridsim;
pub mod metrics;
pub mod pipeline;
pub mod region;
pub mod scalar;
pub mod signal;
pub mod sysid;
pub mod tda;

pub use error::{Error, GridError, MetricsError, Result, SignalError, SysidError, TdaError};
pub use metrics::ValidationReport;
pub use region::RegionSpec;
pub use scalar::Scalar;
pub use tda::MetricForm;

pub type MeasurementSet = signal::MeasurementSet<f64>;
pub type BusChannel = signal::BusChannel<f64>;
pub type InertialWindow = signal::InertialWindow<f64>;
pub type TypicalityResult = tda::TypicalityResult<f64>;
pub type ArmaxModel = sysid::ArmaxModel<f64>;
pub type FirstOrderTF = sysid::FirstOrderTF<f64>;
pub type InertiaEstimate = sysid::InertiaEstimate<f64>;

/// Single-precision variants.
pub mod f32 {
    pub type MeasurementSet = crate::signal::MeasurementSet<f32>;
    pub type BusChannel = crate::signal::BusChannel<f32>;
    pub type InertialWindow = crate::signal::InertialWindow<f32>;
    pub type TypicalityResult = crate::tda::TypicalityResult<f32>;
    pub type ArmaxModel = crate::sysid::ArmaxModel<f32>;
    pub type FirstOrderTF = crate::sysid::FirstOrderTF<f32>;
    pub type InertiaEstimate = crate::sysid::InertiaEstimate<f32>;
}
