//! Class-agnostic average precision, scale buckets and the per-setting
//! evaluation driver.

mod ap;
mod report;
mod setting;

pub use ap::{compute_ap, scale_bucket, ApResult, ImageEval, ScaleBucket, AP_IOU_THRESHOLDS, RECALL_POINTS};
pub use report::EvalReport;
pub use setting::{evaluate_protocol, evaluate_setting, Detector, EvalConfig, GtEcho, PromptProtocol};
