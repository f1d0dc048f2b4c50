//! Coefficient fields, parabolicity checks, oscillation and continuity
//! moduli, Dini integrals, and freezing at a spatial anchor.

mod config;
mod field;
mod freeze;
mod modulus;
mod probe;

pub use config::FieldConfig;
pub use field::{CoefficientField, CustomEval, Family, FieldKind, FieldSource, SampledGrid};
pub use freeze::{ball_average_curve, curve_distance, freeze, CurveDerivation, FreezeResult, FreezeSpec, TimeCurve};
pub use modulus::{
    dini_integral, dyadic_radii, mean_oscillation, mean_oscillation_profile, modulus_continuity, DiniIntegral,
    ModulusKind, ModulusProfile,
};
pub use probe::{check_ellipticity, BallQuadSpec, EllipticityReport, ProbeSpec};
