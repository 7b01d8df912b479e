//! Post-processing, metrics and scoring.

pub mod components;
pub mod metrics;
pub mod report;
pub mod score;
pub mod surface;

pub use components::{label_components, largest_component, ComponentResult, Connectivity};
pub use metrics::{assd, dice_coeff, evaluate, mssd, ravd, MetricReport};
pub use report::{read_report, write_report, Scoreboard, REPORT_HEADER};
pub use score::{
    aggregate, case_score, metric_score, metric_scores, rank, select_movpunet, select_movpunet_for,
    AggregateLevel, CaseScore, Category, MetricKind, ModalityGroup, RankedEntry, ScoreTable, Selection,
};
pub use surface::{border_mask, border_voxels, squared_distance_transform};
