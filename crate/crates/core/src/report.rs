//! CSV and JSON emission. CSV: comma separated, header row, UTF-8, '.'
//! decimals (Rust's shortest round-trip float formatting). JSON: pretty,
//! struct field order, so identical runs serialize to identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v}")
}

pub fn fmt_complex(z: num_complex::Complex64) -> String {
    format!("{}{}{}i", fmt_f64(z.re), if z.im >= 0.0 { "+" } else { "-" }, fmt_f64(z.im.abs()))
}

pub fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<P: AsRef<Path>, T: serde::Serialize>(path: P, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| crate::error::Error::Other(format!("json write failed: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_uses_dot_and_round_trips() {
        assert_eq!(fmt_f64(0.5), "0.5");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        let v = 1.0 / 3.0;
        let s = fmt_f64(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
    }
}
