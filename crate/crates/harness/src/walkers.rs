//! CSV export of the walker simulation.

use std::io::Write;

use lap_core::walker::WalkerRow;
use serde::Serialize;

use crate::error::Result;

/// Which distrust summary fills the `mean_distrust` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Statistic {
    /// Distrust after the last step.
    #[default]
    Final,
    /// Distrust averaged over all steps of each walker.
    TimeAverage,
}

#[derive(Serialize)]
struct Row {
    leniency: f64,
    mean_shift: f64,
    mean_distrust: f64,
    mean_depression: f64,
}

/// Writes `leniency, mean_shift, mean_distrust, mean_depression` rows.
pub fn write_walker_csv<W: Write>(out: W, rows: &[WalkerRow], statistic: Statistic) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(Row {
            leniency: r.leniency,
            mean_shift: r.mean_shift,
            mean_distrust: match statistic {
                Statistic::Final => r.mean_distrust,
                Statistic::TimeAverage => r.mean_time_averaged_distrust,
            },
            mean_depression: r.mean_depression,
        })?;
    }
    w.flush()
        .map_err(|e| crate::error::HarnessError::io("<walker csv>", e))?;
    Ok(())
}
