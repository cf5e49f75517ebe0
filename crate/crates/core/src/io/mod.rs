//! File formats: OHLC bars in, panels and tables out.

mod ohlc;

pub use ohlc::{
    align_ohlc, bars_from_fine_returns, export_ohlc_dir, load_ohlc_dir, read_ohlc_file, write_gk_dir,
    write_ohlc_file, DateRange, ExcludedTicker, OhlcFile, OhlcPanel, RowError, MAX_MISSING_FRACTION,
    MIN_OHLC_FILES,
};

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Column table with a leading `time` column, as in `time,f,x_1,...,x_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub time: Vec<f64>,
    /// Column names after `time`.
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(time: Vec<f64>, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::InvalidParameter("column names and columns differ in number".into()));
        }
        if columns.iter().any(|c| c.len() != time.len()) {
            return Err(Error::InvalidParameter("columns differ in length from the time column".into()));
        }
        Ok(Self { time, names, columns })
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|k| self.columns[k].as_slice())
    }

    /// Dot decimals and shortest round-trip formatting.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = std::io::BufWriter::new(File::create(path).map_err(Error::io(path))?);
        let mut out = || -> std::io::Result<()> {
            write!(w, "time")?;
            for n in &self.names {
                write!(w, ",{n}")?;
            }
            writeln!(w)?;
            for (t, time) in self.time.iter().enumerate() {
                write!(w, "{time}")?;
                for c in &self.columns {
                    write!(w, ",{}", c[t])?;
                }
                writeln!(w)?;
            }
            w.flush()
        };
        out().map_err(Error::io(path))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(Error::io(path))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
            .clone();
        if headers.get(0) != Some("time") {
            return Err(Error::Data(format!("{}: first column must be `time`", path.display())));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut time = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let num = |j: usize| -> Result<f64> {
                rec[j].parse::<f64>().map_err(|e| {
                    Error::Data(format!("{} line {}: column {}: {e}", path.display(), k + 2, j + 1))
                })
            };
            time.push(num(0)?);
            for (j, c) in columns.iter_mut().enumerate() {
                c.push(num(j + 1)?);
            }
        }
        Ok(Self { time, names, columns })
    }
}
