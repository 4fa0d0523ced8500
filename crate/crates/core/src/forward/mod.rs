//! Measurement physics for the two inverse problems and the PSNR metric.

mod mask;
mod models;

pub use mask::{acceleration_to_rate, KSpaceMask, SamplingPattern};
pub use models::{
    cdp_adjoint, cdp_apply, cdp_forward, csmri_adjoint, csmri_forward, initial_estimate,
    observed_noise, psnr, psnr_values, synthesize_measurement, CdpModel, CsmriModel,
    MeasurementModel, Observation, Physics, DEFAULT_CDP_PATTERNS, PIXEL_SCALE, PSNR_MSE_FLOOR,
};
pub(crate) use models::per_image;
