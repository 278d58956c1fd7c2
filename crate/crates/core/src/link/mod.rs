//! Simulated quantum network link: heralding clock and the acceptance-window
//! model.

pub mod calibrate;
pub mod emission;
pub mod sim;
pub mod window;

pub use calibrate::{calibrate, CalibrationTargets};
pub use emission::{
    emission_density, ContaminantShape, EmissionKind, EmissionProfile, EmissionTimeModel,
};
pub use sim::{expected_event_rate, herald_probability, run_link, HeraldEvent, LinkParams};
pub use window::{
    chsh_and_qber, effective_visibility, optimize_window, two_photon_acceptance, window_acceptance,
    window_scan, WindowAcceptance, WindowConfig, WindowCurvePoint,
};
