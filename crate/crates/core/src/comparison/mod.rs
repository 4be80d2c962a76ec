//! Ambient scalar fields, certification of the comparison condition over
//! sampled regions, and the touching test for viscosity solutions.

mod certify;
mod families;
mod fields;
mod touching;

pub use certify::{
    bisect_threshold, certify_region, is_comparison_at, sample_region, ComparisonCertificate, Region, SampleRecord,
    SamplingRecord, SamplingSpec, ThresholdProbe, ThresholdSearch, Verdict, DEFAULT_QUASI_RANDOM, WORST_KEPT,
};
pub use families::{
    check_admissible, default_c0, family_l1, family_l35, family_quadratic, fourth_difference_bound, Admissibility,
    HarmonicTerm, L35Field, Paraboloid, TestFunction, TubeField, RHO_MIN,
};
pub use fields::{FieldDescriptor, FieldTag, FiniteDifferenceField, QuadraticField, RawCallback, RigidMotion, ScalarField, Shifted};
pub use touching::{touching_check, touching_check_with, viscosity_screen, viscosity_screen_with, ScreenOptions, TouchingOptions, TouchingReport};
