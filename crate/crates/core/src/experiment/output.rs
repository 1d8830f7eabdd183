//! CSV results and the metadata sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{ResultRow, RunOutput};

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed row {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub const HEADER: [&str; 9] =
    ["experiment", "scheme", "sweep_value", "rate_bits", "crb_linear", "crb_db", "regime", "k_used", "feasible"];

/// Fixed-width scientific notation so identical runs give identical bytes.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.11e}")
    }
}

fn parse_number(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

/// Writes the rows as CSV with a header.
pub fn write_csv<W: Write>(writer: W, rows: &[ResultRow]) -> Result<(), OutputError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.scheme.clone(),
            format_number(r.sweep_value),
            format_number(r.rate_bits),
            format_number(r.crb_linear),
            format_number(r.crb_db),
            r.regime.clone(),
            r.k_used.to_string(),
            r.feasible.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<ResultRow>, OutputError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let bad = |message: &str| OutputError::Malformed { line, message: message.into() };
        if record.len() != HEADER.len() {
            return Err(bad("wrong column count"));
        }
        let num = |j: usize| parse_number(&record[j]).ok_or_else(|| bad(&format!("bad number in {}", HEADER[j])));
        rows.push(ResultRow {
            experiment: record[0].to_string(),
            scheme: record[1].to_string(),
            sweep_value: num(2)?,
            rate_bits: num(3)?,
            crb_linear: num(4)?,
            crb_db: num(5)?,
            regime: record[6].to_string(),
            k_used: record[7].parse().map_err(|_| bad("bad k_used"))?,
            feasible: record[8].parse().map_err(|_| bad("bad feasible flag"))?,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct DofEntry {
    k: usize,
    slope: f64,
}

#[derive(Serialize)]
struct Meta<'a> {
    experiments: Vec<&'static str>,
    seed: u64,
    rows: usize,
    search_mode: String,
    time_switching: &'static str,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    dof_slopes: Vec<DofEntry>,
    config: &'a super::config::RawConfig,
}

const TIME_SWITCHING_MODEL: &str = "fraction tau of the snapshots uses the sensing-oriented design and carries \
no data; Fisher information blends as (1 - tau) F_comm + tau F_sense; rate is (1 - tau) R_comm";

pub fn meta_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".meta.toml");
    PathBuf::from(name)
}

/// Metadata sidecar as TOML text.
pub fn meta_text(config: &ExperimentConfig, output: &RunOutput) -> String {
    let meta = Meta {
        experiments: config.experiments.iter().map(|e| e.name.as_str()).collect(),
        seed: config.seed,
        rows: output.rows.len(),
        search_mode: format!("{:?}", output.search_mode),
        time_switching: TIME_SWITCHING_MODEL,
        dof_slopes: output.dof_fits.iter().map(|f| DofEntry { k: f.k, slope: f.slope }).collect(),
        config: &config.raw,
    };
    toml::to_string_pretty(&meta).expect("metadata serializes")
}

/// Writes `path` and its `.meta.toml` sidecar.
pub fn write_results(path: &Path, config: &ExperimentConfig, output: &RunOutput) -> Result<(), OutputError> {
    let io = |source| OutputError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let file = std::fs::File::create(path).map_err(io)?;
    write_csv(std::io::BufWriter::new(file), &output.rows)?;
    let meta = meta_path(path);
    std::fs::write(&meta, meta_text(config, output)).map_err(|source| OutputError::Io { path: meta, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rate: f64) -> ResultRow {
        ResultRow {
            experiment: "rate_vs_k".into(),
            scheme: "proposed".into(),
            sweep_value: 4.0,
            rate_bits: rate,
            crb_linear: 1.234e-5,
            crb_db: -49.08,
            regime: "II".into(),
            k_used: 4,
            feasible: rate.is_finite(),
        }
    }

    #[test]
    fn round_trip_keeps_values() {
        let rows = vec![row(12.5), row(f64::NAN), row(1.0 / 3.0)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("experiment,scheme,"));
        assert!(!text.contains('\r'));
        let back = read_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        assert!(back[1].rate_bits.is_nan());
        assert_eq!(back[0], rows[0]);
        // 12 significant digits survive
        assert!((back[2].rate_bits - 1.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn malformed_rows_are_reported() {
        let text = "experiment,scheme,sweep_value,rate_bits,crb_linear,crb_db,regime,k_used,feasible\n\
                    a,b,1,x,1,1,II,1,true\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(OutputError::Malformed { line: 2, .. })));
    }

    #[test]
    fn sidecar_sits_next_to_the_csv() {
        assert_eq!(meta_path(Path::new("out/r.csv")), PathBuf::from("out/r.csv.meta.toml"));
    }
}
