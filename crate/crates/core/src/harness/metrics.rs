use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, CVector};

/// Value reported when the estimate matches the truth exactly.
pub const EXACT_RECOVERY_DB: f64 = -300.0;

/// `10·log₁₀(‖ĥ − h‖²/‖h‖²)`, floored at [`EXACT_RECOVERY_DB`].
pub fn nmse_db(h_hat: &CVector, h_true: &CVector) -> Result<f64> {
    nmse_db_with_floor(h_hat, h_true, EXACT_RECOVERY_DB)
}

pub fn nmse_db_with_floor(h_hat: &CVector, h_true: &CVector, floor_db: f64) -> Result<f64> {
    if h_hat.len() != h_true.len() {
        return Err(Error::dim("estimate and truth lengths differ"));
    }
    let truth = norm2(h_true);
    if !(truth > 0.0) {
        return Err(Error::input("reference signal has zero energy"));
    }
    let err = norm2(&(h_hat - h_true));
    if err == 0.0 {
        return Ok(floor_db);
    }
    Ok((10.0 * (err / truth).log10()).max(floor_db))
}

/// One CSV row. Column order is part of the output format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scenario: String,
    pub seed: u64,
    pub iteration: usize,
    pub nmse_db: f64,
    pub free_energy: f64,
    pub support_size: usize,
    pub wall_ms: f64,
    pub algorithm: String,
    pub snr_db: String,
    pub compression_ratio: f64,
}

pub const METRIC_COLUMNS: [&str; 10] = [
    "scenario",
    "seed",
    "iteration",
    "nmse_db",
    "free_energy",
    "support_size",
    "wall_ms",
    "algorithm",
    "snr_db",
    "compression_ratio",
];

/// Label used in the `snr_db` column for noise-free cells.
pub const NOISE_FREE: &str = "inf";

pub fn write_records<W: Write>(out: W, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Writes `records` to a CSV file, creating parent directories.
pub fn write_records_to_path(path: &std::path::Path, records: &[MetricRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(std::io::BufWriter::new(file), records)
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(METRIC_COLUMNS.iter().copied()) {
        return Err(Error::input(format!("unexpected CSV header: {headers:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    #[test]
    fn nmse_examples() {
        let h = CVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-3.0, 0.5)]);
        assert_eq!(nmse_db(&h, &h).unwrap(), EXACT_RECOVERY_DB);
        assert!(nmse_db(&CVector::zeros(2), &h).unwrap().abs() < 1e-12);
        let scaled = &h * C64::new(1.1, 0.0);
        assert!((nmse_db(&scaled, &h).unwrap() + 20.0).abs() < 1e-10);
        assert!(nmse_db(&h, &CVector::zeros(2)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricRecord {
                scenario: "a,\"quoted\"".into(),
                seed: 3,
                iteration: 1,
                nmse_db: -12.5,
                free_energy: 1.0e3,
                support_size: 4,
                wall_ms: 0.25,
                algorithm: "sc_vbi".into(),
                snr_db: "10".into(),
                compression_ratio: 4.0,
            },
            MetricRecord {
                scenario: "b".into(),
                seed: 4,
                iteration: 0,
                nmse_db: EXACT_RECOVERY_DB,
                free_energy: -2.0,
                support_size: 1,
                wall_ms: 1.0,
                algorithm: "ic_vbi_oracle".into(),
                snr_db: NOISE_FREE.into(),
                compression_ratio: 2.0,
            },
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&METRIC_COLUMNS.join(",")));
        assert!(text.contains("\"a,\"\"quoted\"\"\""));
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mut again = Vec::new();
        write_records(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }
}
