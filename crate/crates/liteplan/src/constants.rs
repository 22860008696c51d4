//! Shared numeric constants and tolerances. Defined once so tests and
//! library code agree on every threshold.

/// Condition slot value standing in for "no condition". Normalized
/// property labels live in [-1, 1], so this is far outside the data range.
pub const NULL_CONDITION: f32 = -10.0;

/// Relative tolerance for analytic-vs-finite-difference gradient checks.
pub const GRAD_REL_TOL: f32 = 1e-4;

/// Central-difference step used by the gradient oracle.
pub const FD_STEP: f32 = 1e-3;

/// Schedule endpoint tolerance: alpha_0 ~ 1, sigma_0 ~ 0.
pub const SCHEDULE_ENDPOINT_TOL: f32 = 1e-6;

/// Variance-preserving slack: alpha^2 + sigma^2 <= 1 + this.
pub const VP_SLACK: f32 = 1e-6;

/// Guard below which dividing by alpha_s is refused in the DDIM step.
pub const ALPHA_GUARD: f32 = 1e-8;

/// LayerNorm variance floor.
pub const LAYERNORM_EPS: f32 = 1e-5;

/// Observation-normalization round-trip tolerance.
pub const NORM_ROUNDTRIP_TOL: f32 = 1e-5;

/// Per-dimension standard deviation below which normalization is refused.
pub const STD_FLOOR: f32 = 1e-6;

/// Sampling-time bound on the x0 reconstruction, in normalized data
/// units (observations are whitened, so their magnitude is a few
/// standard deviations at most).
pub const X0_CLIP: f32 = 4.0;
