//! Comma-separated tables with a header row. Fields never contain commas or quotes.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Row = HashMap<String, String>;

pub fn write<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<Row>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Report(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Report(format!("{} is empty", path.display())))?.split(',').collect();
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != header.len() {
                return Err(Error::Report(format!("{} line {}: expected {} fields, found {}", path.display(), i + 2, header.len(), fields.len())));
            }
            Ok(header.iter().zip(fields).map(|(h, f)| (h.to_string(), f.to_string())).collect())
        })
        .collect()
}

pub fn field<'a>(row: &'a Row, name: &str) -> Result<&'a str> {
    row.get(name).map(String::as_str).ok_or_else(|| Error::Report(format!("missing column '{name}'")))
}

pub fn number(row: &Row, name: &str) -> Result<f64> {
    let v = field(row, name)?;
    v.parse().map_err(|_| Error::Report(format!("column '{name}' holds '{v}', not a number")))
}
