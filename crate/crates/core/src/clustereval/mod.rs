//! Agglomerative clustering of track representations and the external
//! (NMI, WCP, cluster-count error) and internal (S-Dbw) evaluation metrics.

mod hac;
mod metrics;
mod report;
mod sdbw;

pub use hac::{hac, ClusterAssignment, Linkage, Merge, Stop};
pub use metrics::{c_dif, count_classes, nmi, wcp};
pub use report::{clustered_sdbw, evaluate, read_metrics_csv, write_metrics, write_metrics_csv, MetricsRow};
pub use sdbw::sdbw;

pub(crate) use report::csv_err;
