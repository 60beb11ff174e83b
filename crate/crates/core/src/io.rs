//! Small shared helpers for the CSV and JSON artifacts.

use std::io::Write;

pub type CsvError = csv::Error;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a header plus numeric rows.
pub fn write_numeric_csv<W: Write>(
    out: W,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

/// `x1..xn` followed by `extra`.
pub fn coord_header(n: usize, extra: &[&str]) -> Vec<String> {
    (1..=n)
        .map(|i| format!("x{i}"))
        .chain(extra.iter().map(|s| s.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap();
            let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
            assert_eq!(digits, 17);
        }
    }
}
