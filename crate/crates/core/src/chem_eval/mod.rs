//! Chemistry of generated geometries: bonds from distances, valence and
//! connectivity checks, canonical graph keys, aggregate metrics and the
//! conditional-generation evaluation.

pub mod bonds;
pub mod canonical;
pub mod conditional;
pub mod metrics;
pub mod valence;

pub use bonds::{infer_bonds, BondEntry, BondGraph, BondLengthTable};
pub use canonical::{canonical_key, key_hex};
pub use conditional::{conditional_mae_eval, ConditionalReport, PropertyRegressor, RegressorConfig, SizeBaseline};
pub use metrics::{evaluate_sample, key_set, metrics_report, summarize, ChemContext, MetricsReport, SampleVerdict};
pub use valence::{stability, validity, ChargeRule, ValenceTable};
