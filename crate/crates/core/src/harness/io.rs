//! CSV readers and writers for ledgers, correlation tables, window scans,
//! worst-case bounds and finite-size block lengths.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::link::WindowCurvePoint;
use crate::protocol::{CorrelationTable, EventLedger, EventRecord};
use crate::stats::WorstCaseBounds;

pub const LEDGER_HEADER: [&str; 6] = ["round_id", "herald_time_ns", "x", "y", "a", "b"];
pub const TABLE_HEADER: [&str; 4] = ["x", "y", "n", "n_same"];
pub const SCAN_HEADER: [&str; 5] = ["t_s_ns", "S", "Q", "relative_rate", "key_per_time"];
pub const BOUNDS_HEADER: [&str; 4] = ["s_min", "q0_max", "q1_max", "tail"];
pub const FINITE_KEY_HEADER: [&str; 2] = ["eps", "n_min"];

/// Environment variable pointing at an alternative data directory.
pub const DATA_DIR_ENV: &str = "DIQKD_DATA_DIR";
pub const TABLE_FILE_NAME: &str = "paper_table1.csv";
const BUNDLED_TABLE: &str = include_str!("../../../../data/paper_table1.csv");

/// Raw bytes of the correlation table shipped with the crate, or of its
/// replacement in `$DIQKD_DATA_DIR` when that is set.
pub fn bundled_table_source() -> Result<Vec<u8>> {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => Ok(fs::read(Path::new(&dir).join(TABLE_FILE_NAME))?),
        None => Ok(BUNDLED_TABLE.as_bytes().to_vec()),
    }
}

pub fn reference_table() -> Result<CorrelationTable> {
    parse_correlation_table(bundled_table_source()?.as_slice())
}

/// `path` if it exists, otherwise its file name inside `$DIQKD_DATA_DIR`.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    match (std::env::var_os(DATA_DIR_ENV), path.file_name()) {
        (Some(dir), Some(name)) => Path::new(&dir).join(name),
        _ => path.to_path_buf(),
    }
}

fn reader<R: Read>(src: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(src)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

/// Data rows of a headed CSV, each paired with its 1-based line number.
fn read_rows<R: Read>(src: R, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut records = reader(src).into_records();
    let first = records
        .next()
        .ok_or(Error::Parse {
            line: 1,
            msg: format!("empty input, expected header `{}`", header.join(",")),
        })?
        .map_err(csv_error)?;
    if first.iter().ne(header.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "header `{}` does not match `{}`",
                first.iter().collect::<Vec<_>>().join(","),
                header.join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

fn field<T: FromStr>(line: usize, name: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| Error::Parse {
        line,
        msg: format!("field `{name}` = `{raw}`: {e}"),
    })
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(Error::from)
}

pub fn parse_correlation_table<R: Read>(src: R) -> Result<CorrelationTable> {
    let rows = read_rows(src, &TABLE_HEADER)?;
    let mut t = CorrelationTable::default();
    let mut seen = [[false; 2]; 4];
    for (line, r) in rows {
        let x: usize = field(line, "x", &r[0])?;
        let y: usize = field(line, "y", &r[1])?;
        if x > 3 || y > 1 {
            return Err(Error::Parse {
                line,
                msg: format!("setting pair ({x}, {y}) out of range"),
            });
        }
        if seen[x][y] {
            return Err(Error::Schema(format!(
                "cell (x={x}, y={y}) listed twice (line {line})"
            )));
        }
        seen[x][y] = true;
        t.n[x][y] = field(line, "n", &r[2])?;
        t.n_same[x][y] = field(line, "n_same", &r[3])?;
    }
    for (x, row) in seen.iter().enumerate() {
        for (y, &present) in row.iter().enumerate() {
            if !present {
                return Err(Error::Schema(format!("cell (x={x}, y={y}) missing")));
            }
        }
    }
    t.validate()?;
    Ok(t)
}

pub fn load_correlation_table(path: &Path) -> Result<CorrelationTable> {
    parse_correlation_table(open(path)?)
}

pub fn write_correlation_table<W: Write>(t: &CorrelationTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER).map_err(csv_error)?;
    for y in 0..2 {
        for x in 0..4 {
            w.write_record([
                x.to_string(),
                y.to_string(),
                t.n[x][y].to_string(),
                t.n_same[x][y].to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn parse_ledger<R: Read>(src: R) -> Result<EventLedger> {
    let mut ledger = EventLedger::new();
    for (line, r) in read_rows(src, &LEDGER_HEADER)? {
        let rec = EventRecord {
            round_id: field(line, "round_id", &r[0])?,
            herald_time_ns: field(line, "herald_time_ns", &r[1])?,
            x: field(line, "x", &r[2])?,
            y: field(line, "y", &r[3])?,
            a: field(line, "a", &r[4])?,
            b: field(line, "b", &r[5])?,
        };
        ledger.append(rec).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
    }
    Ok(ledger)
}

pub fn load_ledger(path: &Path) -> Result<EventLedger> {
    parse_ledger(open(path)?)
}

pub fn write_ledger<W: Write>(ledger: &EventLedger, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LEDGER_HEADER).map_err(csv_error)?;
    for r in ledger.iter() {
        w.write_record([
            r.round_id.to_string(),
            r.herald_time_ns.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.a.to_string(),
            r.b.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Floats are written in shortest round-trip form so parsing restores them
/// exactly.
pub fn write_scan<W: Write>(points: &[WindowCurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCAN_HEADER).map_err(csv_error)?;
    for p in points {
        w.write_record(
            [p.t_s_ns, p.s_value, p.qber, p.relative_rate, p.key_per_time].map(|v| v.to_string()),
        )
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_scan<R: Read>(src: R) -> Result<Vec<WindowCurvePoint>> {
    read_rows(src, &SCAN_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(WindowCurvePoint {
                t_s_ns: field(line, "t_s_ns", &r[0])?,
                s_value: field(line, "S", &r[1])?,
                qber: field(line, "Q", &r[2])?,
                relative_rate: field(line, "relative_rate", &r[3])?,
                key_per_time: field(line, "key_per_time", &r[4])?,
            })
        })
        .collect()
}

/// Critical values only; posteriors are not part of the CSV form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsRow {
    pub s_min: f64,
    pub q0_max: f64,
    pub q1_max: f64,
    pub tail: f64,
}

impl From<&WorstCaseBounds> for BoundsRow {
    fn from(b: &WorstCaseBounds) -> Self {
        Self {
            s_min: b.s_min,
            q0_max: b.q0_max,
            q1_max: b.q1_max,
            tail: b.tail,
        }
    }
}

pub fn write_bounds<W: Write>(rows: &[BoundsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BOUNDS_HEADER).map_err(csv_error)?;
    for b in rows {
        w.write_record([b.s_min, b.q0_max, b.q1_max, b.tail].map(|v| v.to_string()))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_bounds<R: Read>(src: R) -> Result<Vec<BoundsRow>> {
    read_rows(src, &BOUNDS_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(BoundsRow {
                s_min: field(line, "s_min", &r[0])?,
                q0_max: field(line, "q0_max", &r[1])?,
                q1_max: field(line, "q1_max", &r[2])?,
                tail: field(line, "tail", &r[3])?,
            })
        })
        .collect()
}

pub fn write_finite_key<W: Write>(rows: &[(f64, u64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FINITE_KEY_HEADER).map_err(csv_error)?;
    for (eps, n) in rows {
        w.write_record([eps.to_string(), n.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_finite_key<R: Read>(src: R) -> Result<Vec<(f64, u64)>> {
    read_rows(src, &FINITE_KEY_HEADER)?
        .into_iter()
        .map(|(line, r)| Ok((field(line, "eps", &r[0])?, field(line, "n_min", &r[1])?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table() {
        let t = parse_correlation_table(BUNDLED_TABLE.as_bytes()).unwrap();
        assert_eq!(t.n[0][0], 448);
        assert_eq!(t.n_same[0][0], 35);
        assert_eq!(t.total(), 3342);
    }

    #[test]
    fn table_errors() {
        assert!(matches!(
            parse_correlation_table(&b""[..]),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad_header = "x,y,n\n0,0,1\n";
        assert!(matches!(
            parse_correlation_table(bad_header.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let over = BUNDLED_TABLE.replace("0,0,448,35", "0,0,448,449");
        assert!(matches!(
            parse_correlation_table(over.as_bytes()),
            Err(Error::Schema(_))
        ));
        let missing: String = BUNDLED_TABLE
            .lines()
            .take(8)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            parse_correlation_table(missing.as_bytes()),
            Err(Error::Schema(_))
        ));
        let garbled = BUNDLED_TABLE.replace("1,1,412,32", "1,1,four,32");
        match parse_correlation_table(garbled.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 7);
                assert!(msg.contains("four"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ledger_errors_carry_line_numbers() {
        let src = "round_id,herald_time_ns,x,y,a,b\n0,0,1,1,0,1\n1,5,4,0,0,0\n";
        assert!(matches!(
            parse_ledger(src.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        let src = "round_id,herald_time_ns,x,y,a,b\n3,0,1,1,0,1\n2,5,0,0,0,0\n";
        assert!(matches!(
            parse_ledger(src.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        let src = "round_id,herald_time_ns,x,y,a,b\n3,0,1,1,0\n";
        assert!(matches!(
            parse_ledger(src.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
