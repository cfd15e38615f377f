//! Daily panel of forward-rate increments and signed order flows.

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;

use crate::error::ModelError;
use crate::Result;

/// Dated panel: one row per business day, one column per tenor.
///
/// `delta_f` holds daily forward-rate increments (rate units per day) and
/// `delta_q` the signed net order flow over the same day (notional units).
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    pub dates: Vec<NaiveDate>,
    pub delta_f: DMatrix<f64>,
    pub delta_q: DMatrix<f64>,
}

impl MarketPanel {
    pub fn new(dates: Vec<NaiveDate>, delta_f: DMatrix<f64>, delta_q: DMatrix<f64>) -> Result<Self> {
        if delta_f.nrows() != dates.len() {
            return Err(ModelError::Dimension {
                expected: dates.len(),
                actual: delta_f.nrows(),
                context: "rate rows vs dates".into(),
            });
        }
        if delta_f.shape() != delta_q.shape() {
            return Err(ModelError::Dimension {
                expected: delta_f.ncols(),
                actual: delta_q.ncols(),
                context: "rate and flow panels must share shape".into(),
            });
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(ModelError::Domain(format!(
                    "dates must be strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (name, m) in [("delta_f", &delta_f), ("delta_q", &delta_q)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Domain(format!("{name} contains non-finite values")));
            }
        }
        Ok(Self { dates, delta_f, delta_q })
    }

    /// Number of days.
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Number of tenors.
    pub fn n_tenors(&self) -> usize {
        self.delta_f.ncols()
    }

    /// Sub-panel over the row range `[start, end)`.
    pub fn slice_days(&self, start: usize, end: usize) -> Self {
        Self {
            dates: self.dates[start..end].to_vec(),
            delta_f: self.delta_f.rows(start, end - start).into_owned(),
            delta_q: self.delta_q.rows(start, end - start).into_owned(),
        }
    }

    /// Sub-panel keeping only the given tenor columns.
    pub fn select_tenors(&self, cols: &[usize]) -> Self {
        Self {
            dates: self.dates.clone(),
            delta_f: self.delta_f.select_columns(cols.iter()),
            delta_q: self.delta_q.select_columns(cols.iter()),
        }
    }
}

/// Synthetic contiguous business-day calendar (weekdays only).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if matches!(
            d.weekday(),
            chrono::Weekday::Sat | chrono::Weekday::Sun
        ) {
            d = d.succ_opt().expect("date overflow");
            continue;
        }
        out.push(d);
        d = d.succ_opt().expect("date overflow");
    }
    out
}
