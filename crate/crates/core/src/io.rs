//! Point lists as CSV with an `x,y` header, written at full double precision.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Formats a float so that parsing it back yields the same bits (17 significant digits).
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_points<W: Write>(mut w: W, points: &[Point2]) -> Result<()> {
    writeln!(w, "x,y")?;
    for p in points {
        writeln!(w, "{},{}", format_f64(p.x), format_f64(p.y))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points<R: Read>(r: R) -> Result<Vec<Point2>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r);
    let headers = reader.headers().map_err(|e| csv_error(&e, 1))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["x", "y"] {
        return Err(Error::Parse { line: 1, message: format!("expected header `x,y`, found `{}`", names.join(",")) });
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("{name} value `{raw}` is not a number") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("{name} value `{raw}` is not finite") });
            }
            Ok(v)
        };
        points.push(Point2::new(field(0, "x")?, field(1, "y")?));
    }
    Ok(points)
}

fn csv_error(e: &csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { len, expected_len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    Error::Parse { line, message }
}

pub fn read_points_file(path: impl AsRef<Path>) -> Result<Vec<Point2>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_points(std::io::BufReader::new(file))
}

pub fn write_points_file(path: impl AsRef<Path>, points: &[Point2]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_points(std::io::BufWriter::new(file), points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let pts = vec![
            Point2::new(0.1, -1.0 / 3.0),
            Point2::new(1e-300, 6.02214076e23),
            Point2::new(-0.0, std::f64::consts::PI),
        ];
        let mut buf = Vec::new();
        write_points(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y\n"));
        let back = read_points(&buf[..]).unwrap();
        assert_eq!(back.len(), pts.len());
        for (a, b) in pts.iter().zip(&back) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = read_points("x,y\n1,2\n3,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = read_points("x,y\n1,2\n3,4\n5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
        let err = read_points("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
        let err = read_points("x,y\n1,inf\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn whitespace_is_tolerated() {
        let pts = read_points("x, y\n 1.5 , 2\n".as_bytes()).unwrap();
        assert_eq!(pts, vec![Point2::new(1.5, 2.0)]);
    }
}
