//! Verification metrics: deterministic (RMSE, ABS BIAS, MS-SSIM),
//! physics-based (power spectra, SDIV, SRES), and probabilistic
//! (CRPS, SSR) scores over ensemble forecasts.

pub mod pointwise;
pub mod prob;
pub mod report;
pub mod spectrum;
pub mod ssim;

pub use pointwise::{abs_bias, rmse, GridWeights, WeightingMode};
pub use prob::{crps_field, crps_point, ensemble_spread, ssr};
pub use report::{evaluate_ensemble, format_value, MetricRow, MetricsReport};
pub use spectrum::{power_spectrum, sdiv, sres};
pub use ssim::ms_ssim;
