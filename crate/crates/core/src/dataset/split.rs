use std::collections::BTreeMap;

use super::AffordanceRecord;
use crate::error::{Error, Result};

/// Leave-one-show-out split: records of `test_show` form the test set, all
/// others the training set. Input order is kept within each side.
pub fn split_by_show(records: &[AffordanceRecord], test_show: &str) -> Result<(Vec<AffordanceRecord>, Vec<AffordanceRecord>)> {
    if !records.iter().any(|r| r.show == test_show) {
        let known: Vec<_> = show_counts(records).into_keys().collect();
        return Err(Error::InvalidSplit(format!(
            "no records from show {test_show:?} (known: {})",
            known.join(", ")
        )));
    }
    Ok(records.iter().cloned().partition(|r| r.show != test_show))
}

pub fn show_counts(records: &[AffordanceRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.show.clone()).or_insert(0) += 1;
    }
    counts
}
