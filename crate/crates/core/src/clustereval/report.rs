use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{c_dif, count_classes, hac, nmi, sdbw, wcp, ClusterAssignment, Linkage, Stop};
use crate::error::{Error, Result};

/// One line of the metrics report. Label-dependent columns are empty for
/// unlabelled track sets; `sdbw` is empty when fewer than two clusters form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub video_id: String,
    pub method: String,
    pub k_pred: usize,
    pub k_true: Option<usize>,
    pub nmi: Option<f64>,
    pub wcp: Option<f64>,
    pub c_dif: Option<usize>,
    pub sdbw: Option<f64>,
}

/// Cluster `reps` and score the result against `truth` when given.
pub fn evaluate(
    video_id: &str,
    method: &str,
    reps: &[Vec<f64>],
    truth: Option<&[u64]>,
    linkage: Linkage,
    stop: Stop,
) -> Result<(MetricsRow, ClusterAssignment)> {
    let assignment = hac(reps, linkage, stop)?;
    let sdbw = match sdbw(reps, &assignment.labels) {
        Ok(v) => Some(v),
        Err(Error::SdbwUndefined) => None,
        Err(e) => return Err(e),
    };
    let mut row = MetricsRow {
        video_id: video_id.to_string(),
        method: method.to_string(),
        k_pred: assignment.k,
        k_true: None,
        nmi: None,
        wcp: None,
        c_dif: None,
        sdbw,
    };
    if let Some(truth) = truth {
        let k_true = count_classes(truth);
        row.k_true = Some(k_true);
        row.nmi = Some(nmi(&assignment.labels, truth)?);
        row.wcp = Some(wcp(&assignment.labels, truth)?);
        row.c_dif = Some(c_dif(assignment.k, k_true));
    }
    Ok((row, assignment))
}

/// S-Dbw of `reps` clustered with `linkage`/`stop`, or `None` when fewer
/// than two clusters form. A known `k` larger than the number of vectors is
/// clamped.
pub fn clustered_sdbw(reps: &[Vec<f64>], linkage: Linkage, stop: Stop) -> Result<Option<f64>> {
    let stop = match stop {
        Stop::KnownK(k) => Stop::KnownK(k.min(reps.len())),
        s => s,
    };
    let assignment = hac(reps, linkage, stop)?;
    match sdbw(reps, &assignment.labels) {
        Ok(v) => Ok(Some(v)),
        Err(Error::SdbwUndefined) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(rows, file).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Header plus one line per row.
pub fn write_metrics<W: std::io::Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(Path::new("<metrics>"), e))?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_err(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unlabelled_rows_leave_label_columns_empty() {
        let reps = vec![vec![0.0], vec![0.1], vec![5.0], vec![5.2]];
        let (row, _) = evaluate("v", "avg", &reps, None, Linkage::Average, Stop::Threshold(1.0)).unwrap();
        assert_eq!(row.k_pred, 2);
        assert!(row.nmi.is_none() && row.k_true.is_none());
        assert!(row.sdbw.is_some());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let reps = vec![vec![0.0], vec![0.1], vec![5.0], vec![5.2]];
        let (row, _) = evaluate("v", "vc", &reps, Some(&[1, 1, 2, 2]), Linkage::Average, Stop::KnownK(2)).unwrap();
        assert_eq!(row.nmi, Some(1.0));
        write_metrics_csv(std::slice::from_ref(&row), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("video_id,method,k_pred,k_true,nmi,wcp,c_dif,sdbw\n"));
        assert_eq!(read_metrics_csv(&path).unwrap(), vec![row]);
    }
}
