use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vol::{garman_klass, OhlcBar, VolSeries};

/// A ticker is dropped when it lacks more than this fraction of the dates seen
/// in the range.
pub const MAX_MISSING_FRACTION: f64 = 0.05;
pub const MIN_OHLC_FILES: usize = 3;
const COLUMNS: [&str; 5] = ["date", "open", "high", "low", "close"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub message: String,
}

/// Bars of one ticker after cleaning: dates strictly increasing, prices valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcFile {
    pub ticker: String,
    pub path: PathBuf,
    pub bars: Vec<OhlcBar>,
    pub errors: Vec<RowError>,
}

/// Inclusive date bounds; `None` leaves a side open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start.is_none_or(|s| d >= s) && self.end.is_none_or(|e| d <= e)
    }
}

/// Reads `date,open,high,low,close` (any column order, extra columns ignored).
/// Malformed rows and invalid bars are logged and skipped; duplicate dates keep
/// the first occurrence.
pub fn read_ohlc_file(path: impl AsRef<Path>) -> Result<OhlcFile> {
    let path = path.as_ref();
    let ticker = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Data(format!("no ticker in file name {}", path.display())))?
        .to_string();
    let file = File::open(path).map_err(Error::io(path))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Data(format!("{}: missing column `{name}`", path.display())))?;
    }
    let mut by_date: BTreeMap<NaiveDate, OhlcBar> = BTreeMap::new();
    let mut errors = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let parsed = rec.map_err(|e| e.to_string()).and_then(|r| {
            let field = |j: usize| r.get(idx[j]).ok_or_else(|| format!("missing field `{}`", COLUMNS[j]));
            let date = NaiveDate::parse_from_str(field(0)?, "%Y-%m-%d").map_err(|e| format!("bad date: {e}"))?;
            let num = |j: usize| -> std::result::Result<f64, String> {
                field(j)?.parse::<f64>().map_err(|e| format!("bad {}: {e}", COLUMNS[j]))
            };
            let bar = OhlcBar {
                date,
                open: num(1)?,
                high: num(2)?,
                low: num(3)?,
                close: num(4)?,
            };
            bar.validate().map_err(|e| e.to_string())?;
            Ok(bar)
        });
        match parsed {
            Ok(bar) => {
                if by_date.contains_key(&bar.date) {
                    errors.push(RowError {
                        line,
                        message: format!("duplicate date {}", bar.date),
                    });
                } else {
                    by_date.insert(bar.date, bar);
                }
            }
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    Ok(OhlcFile {
        ticker,
        path: path.to_path_buf(),
        bars: by_date.into_values().collect(),
        errors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedTicker {
    pub ticker: String,
    pub missing_fraction: f64,
}

/// Tickers aligned on their common dates.
///
/// `returns[i][t]` is the close-to-close log return into `dates[t]`, and `gk[i]`
/// the Garman-Klass variance of the bar on `dates[t]`; the first common date only
/// supplies the previous close.
#[derive(Debug, Clone)]
pub struct OhlcPanel {
    pub files: Vec<OhlcFile>,
    pub excluded: Vec<ExcludedTicker>,
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub returns: Vec<Vec<f64>>,
    pub gk: Vec<VolSeries>,
}

impl OhlcPanel {
    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_periods(&self) -> usize {
        self.dates.len()
    }

    /// Row-level problems of every file, as `(ticker, error)`.
    pub fn row_errors(&self) -> impl Iterator<Item = (&str, &RowError)> {
        self.files
            .iter()
            .flat_map(|f| f.errors.iter().map(move |e| (f.ticker.as_str(), e)))
    }
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every `*.csv` of `dir` (file stem = ticker) and aligns them.
pub fn load_ohlc_dir(dir: impl AsRef<Path>, range: DateRange) -> Result<OhlcPanel> {
    let files: Vec<OhlcFile> = csv_files(dir.as_ref())?
        .iter()
        .map(read_ohlc_file)
        .collect::<Result<_>>()?;
    align_ohlc(files, range)
}

/// Inner join of already parsed files, after dropping tickers that miss more
/// than [`MAX_MISSING_FRACTION`] of the dates present in `range`.
pub fn align_ohlc(files: Vec<OhlcFile>, range: DateRange) -> Result<OhlcPanel> {
    let usable = files.iter().filter(|f| !f.bars.is_empty()).count();
    if usable < MIN_OHLC_FILES {
        return Err(Error::Data(format!(
            "need at least {MIN_OHLC_FILES} parsable OHLC files, found {usable}"
        )));
    }
    let in_range = |f: &OhlcFile| -> BTreeSet<NaiveDate> {
        f.bars.iter().map(|b| b.date).filter(|d| range.contains(*d)).collect()
    };
    let calendar: BTreeSet<NaiveDate> = files.iter().flat_map(in_range).collect();
    if calendar.is_empty() {
        return Err(Error::Data("no bars inside the requested date range".into()));
    }
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (k, f) in files.iter().enumerate() {
        let missing = 1.0 - in_range(f).len() as f64 / calendar.len() as f64;
        if missing > MAX_MISSING_FRACTION {
            excluded.push(ExcludedTicker {
                ticker: f.ticker.clone(),
                missing_fraction: missing,
            });
        } else {
            kept.push(k);
        }
    }
    if kept.is_empty() {
        return Err(Error::Data("every ticker misses too many dates".into()));
    }
    let mut common = in_range(&files[kept[0]]);
    for &k in &kept[1..] {
        let other = in_range(&files[k]);
        common.retain(|d| other.contains(d));
    }
    if common.len() < 2 {
        return Err(Error::Data("the kept tickers share fewer than two dates".into()));
    }
    let dates: Vec<NaiveDate> = common.iter().copied().collect();
    let mut tickers = Vec::with_capacity(kept.len());
    let mut returns = Vec::with_capacity(kept.len());
    let mut gk = Vec::with_capacity(kept.len());
    for &k in &kept {
        let f = &files[k];
        let bars: Vec<OhlcBar> = f.bars.iter().filter(|b| common.contains(&b.date)).copied().collect();
        returns.push(bars.windows(2).map(|w| (w[1].close / w[0].close).ln()).collect());
        gk.push(garman_klass(&bars[1..]).map_err(|e| Error::Data(format!("{}: {e}", f.ticker)))?);
        tickers.push(f.ticker.clone());
    }
    Ok(OhlcPanel {
        files,
        excluded,
        dates: dates[1..].to_vec(),
        tickers,
        returns,
        gk,
    })
}

/// Daily bars from a fine-grid return path: each bar opens at the previous close
/// (`price0` for the first), closes at the last fine price of the period, and
/// its high and low span the open and every fine price in the period.
pub fn bars_from_fine_returns(
    returns: &[f64],
    subdivisions: usize,
    price0: f64,
    start: NaiveDate,
) -> Result<Vec<OhlcBar>> {
    if subdivisions == 0 || returns.len() % subdivisions != 0 {
        return Err(Error::InvalidParameter(
            "fine length is not a multiple of the subdivisions".into(),
        ));
    }
    if !(price0 > 0.0 && price0.is_finite()) {
        return Err(Error::InvalidParameter("initial price must be positive".into()));
    }
    let mut log_p = price0.ln();
    let mut close = price0;
    let mut bars = Vec::with_capacity(returns.len() / subdivisions);
    for (t, chunk) in returns.chunks_exact(subdivisions).enumerate() {
        let open = close;
        let (mut hi, mut lo) = (open, open);
        for r in chunk {
            log_p += r;
            close = log_p.exp();
            hi = hi.max(close);
            lo = lo.min(close);
        }
        let date = start
            .checked_add_days(chrono::Days::new(t as u64))
            .ok_or_else(|| Error::InvalidParameter("date overflow".into()))?;
        bars.push(OhlcBar {
            date,
            open,
            high: hi,
            low: lo,
            close,
        });
    }
    Ok(bars)
}

/// Writes `date,open,high,low,close` with shortest round-trip float formatting.
pub fn write_ohlc_file(path: impl AsRef<Path>, bars: &[OhlcBar]) -> Result<()> {
    let path = path.as_ref();
    let mut w = std::io::BufWriter::new(File::create(path).map_err(Error::io(path))?);
    let mut out = || -> std::io::Result<()> {
        writeln!(w, "date,open,high,low,close")?;
        for b in bars {
            writeln!(w, "{},{},{},{},{}", b.date.format("%Y-%m-%d"), b.open, b.high, b.low, b.close)?;
        }
        w.flush()
    };
    out().map_err(Error::io(path))
}

/// One `<ticker>.csv` per stock in `dir`, built with [`bars_from_fine_returns`].
pub fn export_ohlc_dir(
    dir: impl AsRef<Path>,
    tickers: &[String],
    fine_returns: &[Vec<f64>],
    subdivisions: usize,
    start: NaiveDate,
) -> Result<()> {
    let dir = dir.as_ref();
    if tickers.len() != fine_returns.len() {
        return Err(Error::InvalidParameter("ticker count differs from stock count".into()));
    }
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (t, r) in tickers.iter().zip(fine_returns) {
        let bars = bars_from_fine_returns(r, subdivisions, 100.0, start)?;
        write_ohlc_file(dir.join(format!("{t}.csv")), &bars)?;
    }
    Ok(())
}

/// `date,gk` per aligned date, one file per ticker.
pub fn write_gk_dir(dir: impl AsRef<Path>, panel: &OhlcPanel) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (t, v) in panel.tickers.iter().zip(&panel.gk) {
        let path = dir.join(format!("{t}.csv"));
        let mut w = std::io::BufWriter::new(File::create(&path).map_err(Error::io(&path))?);
        let mut out = || -> std::io::Result<()> {
            writeln!(w, "date,gk")?;
            for (d, g) in panel.dates.iter().zip(v.values()) {
                writeln!(w, "{},{g}", d.format("%Y-%m-%d"))?;
            }
            w.flush()
        };
        out().map_err(Error::io(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    fn rows(n: usize, skip: &[usize]) -> String {
        let mut s = String::from("date,open,high,low,close,volume\n");
        for t in 0..n {
            if skip.contains(&t) {
                continue;
            }
            let day = d("2020-01-01") + chrono::Days::new(t as u64);
            let c = 100.0 + t as f64;
            s.push_str(&format!("{day},{},{},{},{c},1000\n", c - 0.5, c + 1.0, c - 1.0));
        }
        s
    }

    #[test]
    fn identical_dates_align_fully() {
        let dir = tempfile::tempdir().unwrap();
        for t in ["A", "B", "C"] {
            write(dir.path(), &format!("{t}.csv"), &rows(40, &[]));
        }
        let p = load_ohlc_dir(dir.path(), DateRange::default()).unwrap();
        assert_eq!(p.tickers, ["A", "B", "C"]);
        assert!(p.excluded.is_empty());
        assert_eq!(p.n_periods(), 39);
        assert!((p.returns[0][0] - (101.0f64 / 100.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn ticker_missing_ten_percent_is_excluded() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "A.csv", &rows(100, &[]));
        write(dir.path(), "B.csv", &rows(100, &[3]));
        write(dir.path(), "C.csv", &rows(100, &[]));
        write(dir.path(), "D.csv", &rows(100, &(10..20).collect::<Vec<_>>()));
        let p = load_ohlc_dir(dir.path(), DateRange::default()).unwrap();
        assert_eq!(p.tickers, ["A", "B", "C"]);
        assert_eq!(p.excluded.len(), 1);
        assert_eq!(p.excluded[0].ticker, "D");
        assert!((p.excluded[0].missing_fraction - 0.1).abs() < 1e-12);
        // B's gap is dropped from the join
        assert_eq!(p.n_periods(), 98);
    }

    #[test]
    fn malformed_rows_are_logged_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = rows(10, &[]);
        body.push_str("2020-02-01,1,2,x,1\n2020-02-02,10,9,8,9.5\nnot-a-date,1,1,1,1\n");
        write(dir.path(), "A.csv", &body);
        let f = read_ohlc_file(dir.path().join("A.csv")).unwrap();
        assert_eq!(f.bars.len(), 10);
        assert_eq!(f.errors.len(), 3);
        assert_eq!(f.errors[0].line, 12);
        assert!(f.errors[1].message.contains("2020-02-02"));
    }

    #[test]
    fn unsorted_and_duplicate_dates_are_cleaned() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "A.csv",
            "Date,Open,High,Low,Close\n2020-01-03,1,2,0.5,1.5\n2020-01-02,1,2,0.5,1.5\n2020-01-03,1,3,0.5,1.5\n",
        );
        let f = read_ohlc_file(dir.path().join("A.csv")).unwrap();
        assert_eq!(f.bars.iter().map(|b| b.date).collect::<Vec<_>>(), [d("2020-01-02"), d("2020-01-03")]);
        assert_eq!(f.bars[1].high, 2.0);
        assert_eq!(f.errors.len(), 1);
    }

    #[test]
    fn contract_errors() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "A.csv", &rows(10, &[]));
        write(dir.path(), "B.csv", &rows(10, &[]));
        assert!(matches!(load_ohlc_dir(dir.path(), DateRange::default()), Err(Error::Data(_))));
        write(dir.path(), "C.csv", "date,open,high,low\n");
        assert!(load_ohlc_dir(dir.path(), DateRange::default()).unwrap_err().to_string().contains("close"));
        assert!(matches!(load_ohlc_dir(dir.path().join("nope"), DateRange::default()), Err(Error::Io { .. })));
        write(dir.path(), "C.csv", &rows(10, &[]));
        let late = DateRange {
            start: Some(d("2030-01-01")),
            end: None,
        };
        assert!(load_ohlc_dir(dir.path(), late).is_err());
    }

    #[test]
    fn date_range_restricts_the_join() {
        let dir = tempfile::tempdir().unwrap();
        for t in ["A", "B", "C"] {
            write(dir.path(), &format!("{t}.csv"), &rows(30, &[]));
        }
        let r = DateRange {
            start: Some(d("2020-01-05")),
            end: Some(d("2020-01-14")),
        };
        let p = load_ohlc_dir(dir.path(), r).unwrap();
        assert_eq!(p.dates.first(), Some(&d("2020-01-06")));
        assert_eq!(p.dates.last(), Some(&d("2020-01-14")));
    }

    #[test]
    fn exported_bars_span_the_fine_path() {
        let r = [0.01, -0.03, 0.02, 0.005];
        let bars = bars_from_fine_returns(&r, 2, 100.0, d("2021-03-01")).unwrap();
        assert_eq!(bars[0].open, 100.0);
        assert_eq!(bars[1].open, bars[0].close);
        assert!((bars[0].high - 100.0 * 0.01f64.exp()).abs() < 1e-12);
        assert!((bars[0].low - 100.0 * (-0.02f64).exp()).abs() < 1e-12);
        assert_eq!(bars[1].date, d("2021-03-02"));
        assert!(bars.iter().all(|b| b.validate().is_ok()));
    }
}
