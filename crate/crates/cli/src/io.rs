//! CSV time series and atomic file output.

use std::io::Write;
use std::path::Path;

use iterfilt_core::{ObservationSeries, TimeGrid};

use crate::error::{CliError, CliResult};

/// Write `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Column-oriented table; `None` cells are written empty.
pub struct Table {
    header: Vec<String>,
    integer: Vec<bool>,
    rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            integer: vec![false; header.len()],
            header,
            rows: Vec::new(),
        }
    }

    /// Write these columns without a fractional part.
    pub fn integer_columns(mut self, columns: &[usize]) -> Self {
        for &c in columns {
            self.integer[c] = true;
        }
        self
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_values(&mut self, row: impl IntoIterator<Item = f64>) {
        self.push(row.into_iter().map(Some).collect());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Shortest round-trip decimal for each value.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            let cells = row.iter().zip(&self.integer).map(|(c, &int)| match c {
                Some(v) if int => format!("{v:.0}"),
                Some(v) => format!("{v:?}"),
                None => String::new(),
            });
            w.write_record(cells).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.to_csv())
    }
}

/// Header `time,<prefix>1,...,<prefix>d`.
pub fn series_header(prefix: &str, dim: usize) -> Vec<String> {
    std::iter::once("time".to_owned())
        .chain((1..=dim).map(|i| format!("{prefix}{i}")))
        .collect()
}

pub fn observations_table(data: &ObservationSeries) -> Table {
    let mut t = Table::new(series_header("y", data.dim()));
    for (n, y) in data.values().iter().enumerate() {
        let mut row = vec![Some(data.grid().time(n + 1))];
        match y {
            Some(y) => row.extend(y.iter().map(|&v| Some(v))),
            None => row.extend(std::iter::repeat_n(None, data.dim())),
        }
        t.push(row);
    }
    t
}

/// Read observations written as `time,y1,...`. A row whose observation
/// fields are all empty is a missing observation.
pub fn read_observations(path: &Path, t0: f64, obs_dim: usize) -> CliResult<ObservationSeries> {
    let data_err = |message: String| CliError::Data {
        path: path.to_owned(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| data_err(e.to_string()))?.clone();
    if header.get(0).map(str::trim) != Some("time") {
        return Err(data_err("first column must be `time`".into()));
    }
    if header.len() != obs_dim + 1 {
        return Err(data_err(format!(
            "expected {obs_dim} observation columns for this model, found {}",
            header.len() - 1
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| data_err(e.to_string()))?;
        let parse = |s: &str| -> CliResult<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| data_err(format!("line {line}: `{s}` is not a finite number")))
        };
        times.push(parse(&record[0])?);
        let fields: Vec<&str> = record.iter().skip(1).map(str::trim).collect();
        if fields.iter().all(|f| f.is_empty()) {
            values.push(None);
        } else if fields.iter().any(|f| f.is_empty()) {
            return Err(data_err(format!("line {line}: partially missing observation")));
        } else {
            values.push(Some(fields.into_iter().map(parse).collect::<CliResult<Vec<f64>>>()?));
        }
    }
    let grid = TimeGrid::new(t0, times).map_err(|e| data_err(e.to_string()))?;
    ObservationSeries::new(grid, obs_dim, values).map_err(|e| data_err(e.to_string()))
}
