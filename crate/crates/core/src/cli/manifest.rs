use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reftrain::Split;

/// One row of `manifest.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub case_id: String,
    pub institution_id: String,
    pub split: Split,
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for row in csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file).deserialize() {
        let row: ManifestRow = row?;
        if !seen.insert(row.case_id.clone()) {
            return Err(Error::Config(format!(
                "{}: duplicate case id {}",
                path.display(),
                row.case_id
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}
