//! Field and sinogram files: 16-bit binary graymaps and lossless CSV.
//!
//! The graymap carries `# dispflow min=.. max=.. dx1=.. dx2=..` so samples can
//! be mapped back to floats; quantization costs at most `range / 65535`. CSV
//! files hold one line of `x1` samples per `x2` index, written in shortest
//! round-trip exponent form, so reading them back is bit exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::tomo::Sinogram;

const PGM_MAX: f64 = 65535.0;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes a `P5` graymap with maxval 65535.
pub fn write_pgm(path: &Path, f: &ScalarField) -> Result<()> {
    let (lo, hi) = (f.min(), f.max());
    let span = hi - lo;
    let mut out = format!(
        "P5\n# dispflow min={lo:e} max={hi:e} dx1={:e} dx2={:e}\n{} {}\n65535\n",
        f.dx1(),
        f.dx2(),
        f.n1(),
        f.n2()
    )
    .into_bytes();
    out.reserve(2 * f.values().len());
    for &v in f.values() {
        let q = if span > 0.0 {
            ((v - lo) / span * PGM_MAX).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, out).map_err(Error::file(path))?;
    Ok(())
}

/// Reads a binary graymap. Without the `dispflow` comment samples map to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<ScalarField> {
    let bytes = fs::read(path).map_err(Error::file(path))?;
    let magic: String = bytes.iter().take(2).map(|&b| b as char).collect();
    if magic != "P5" {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            magic,
        });
    }
    let mut pos = 2;
    let mut tokens = Vec::new();
    let mut comments = Vec::new();
    while tokens.len() < 3 {
        match bytes.get(pos) {
            None => return Err(format_err(path, "truncated header")),
            Some(b'#') => {
                let end = bytes[pos..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map_or(bytes.len(), |e| pos + e);
                comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).into_owned());
                pos = end;
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let end = bytes[pos..]
                    .iter()
                    .position(|b| b.is_ascii_whitespace())
                    .map_or(bytes.len(), |e| pos + e);
                let tok = std::str::from_utf8(&bytes[pos..end])
                    .map_err(|_| format_err(path, "non-ASCII header"))?;
                tokens.push(
                    tok.parse::<usize>()
                        .map_err(|_| format_err(path, format!("bad header value `{tok}`")))?,
                );
                pos = end;
            }
        }
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let (n1, n2, maxval) = (tokens[0], tokens[1], tokens[2]);
    if n1 == 0 || n2 == 0 || maxval == 0 || maxval > 65535 {
        return Err(format_err(
            path,
            format!("bad dimensions or maxval {n1}x{n2}/{maxval}"),
        ));
    }
    let width = if maxval < 256 { 1 } else { 2 };
    let need = n1 * n2 * width;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != need {
        return Err(format_err(
            path,
            format!("expected {need} raster bytes, found {}", data.len()),
        ));
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut spacing = (1.0 / n1 as f64, 1.0 / n2 as f64);
    for c in comments
        .iter()
        .filter(|c| c.trim_start().starts_with("dispflow"))
    {
        for kv in c.split_whitespace().skip(1) {
            let Some((k, v)) = kv.split_once('=') else {
                continue;
            };
            let v: f64 = v
                .parse()
                .map_err(|_| format_err(path, format!("bad comment value `{kv}`")))?;
            match k {
                "min" => lo = v,
                "max" => hi = v,
                "dx1" => spacing.0 = v,
                "dx2" => spacing.1 = v,
                _ => {}
            }
        }
    }
    let values = data
        .chunks_exact(width)
        .map(|c| {
            let q = if width == 1 {
                c[0] as f64
            } else {
                u16::from_be_bytes([c[0], c[1]]) as f64
            };
            lo + q / maxval as f64 * (hi - lo)
        })
        .collect();
    Ok(ScalarField::from_values(n1, n2, values)?.with_spacing(spacing.0, spacing.1))
}

fn field_csv(f: &ScalarField, header: &str) -> String {
    let mut out = String::with_capacity(f.values().len() * 24);
    out.push_str(header);
    for j2 in 0..f.n2() {
        let line: Vec<String> = f.row(j2).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Header comments as `key=value` pairs, plus the data lines.
fn split_csv(text: &str) -> (Vec<(String, String)>, Vec<(usize, &str)>) {
    let mut meta = Vec::new();
    let mut rows = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(c) = line.strip_prefix('#') {
            for kv in c.split(',') {
                if let Some((k, v)) = kv.split_once('=') {
                    meta.push((k.trim().to_string(), v.trim().to_string()));
                }
            }
        } else if !line.is_empty() {
            rows.push((no + 1, line));
        }
    }
    (meta, rows)
}

fn parse_rows(path: &Path, rows: &[(usize, &str)]) -> Result<ScalarField> {
    let mut values = Vec::new();
    let mut n1 = None;
    for &(no, line) in rows {
        let parsed: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(path, format!("line {no}: {e}")))?;
        match n1 {
            None => n1 = Some(parsed.len()),
            Some(n) if n != parsed.len() => {
                return Err(format_err(
                    path,
                    format!("line {no}: {} values, expected {n}", parsed.len()),
                ))
            }
            _ => {}
        }
        values.extend(parsed);
    }
    let n1 = n1.ok_or_else(|| format_err(path, "no data rows"))?;
    ScalarField::from_values(n1, rows.len(), values).map_err(|e| format_err(path, e.to_string()))
}

fn meta_f64(path: &Path, meta: &[(String, String)], key: &str) -> Result<Option<f64>> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| {
            v.parse::<f64>()
                .map_err(|_| format_err(path, format!("bad `{key}` value `{v}`")))
        })
        .transpose()
}

pub fn write_csv(path: &Path, f: &ScalarField) -> Result<()> {
    fs::write(
        path,
        field_csv(f, &format!("# dx1={:e},dx2={:e}\n", f.dx1(), f.dx2())),
    )
    .map_err(Error::file(path))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<ScalarField> {
    let text = fs::read_to_string(path).map_err(Error::file(path))?;
    let (meta, rows) = split_csv(&text);
    let f = parse_rows(path, &rows)?;
    let dx1 = meta_f64(path, &meta, "dx1")?.unwrap_or(f.dx1());
    let dx2 = meta_f64(path, &meta, "dx2")?.unwrap_or(f.dx2());
    Ok(f.with_spacing(dx1, dx2))
}

/// Picks the format from the extension: `.pgm` or `.csv`.
pub fn write_image(path: &Path, f: &ScalarField) -> Result<()> {
    match extension(path).as_str() {
        "pgm" => write_pgm(path, f),
        "csv" => write_csv(path, f),
        other => Err(format_err(
            path,
            format!("unknown image extension `{other}` (use .pgm or .csv)"),
        )),
    }
}

pub fn read_image(path: &Path) -> Result<ScalarField> {
    match extension(path).as_str() {
        "pgm" => read_pgm(path),
        "csv" => read_csv(path),
        other => Err(format_err(
            path,
            format!("unknown image extension `{other}` (use .pgm or .csv)"),
        )),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Sinogram CSV: the field plus `offset_spacing` and the angle list in the header.
pub fn write_sinogram(path: &Path, s: &Sinogram) -> Result<()> {
    let angles: Vec<String> = s.angles().iter().map(|a| format!("{a:e}")).collect();
    let header = format!(
        "# sinogram offset_spacing={:e}\n# angles={}\n",
        s.offset_spacing(),
        angles.join(" ")
    );
    fs::write(path, field_csv(s.field(), &header)).map_err(Error::file(path))?;
    Ok(())
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    let text = fs::read_to_string(path).map_err(Error::file(path))?;
    let (meta, rows) = split_csv(&text);
    let field = parse_rows(path, &rows)?;
    let spacing = meta
        .iter()
        .find(|(k, _)| k.ends_with("offset_spacing"))
        .ok_or_else(|| format_err(path, "missing offset_spacing"))?
        .1
        .parse::<f64>()
        .map_err(|_| format_err(path, "bad offset_spacing"))?;
    let angles = meta
        .iter()
        .find(|(k, _)| k == "angles")
        .ok_or_else(|| format_err(path, "missing angle list"))?
        .1
        .split_whitespace()
        .map(|a| {
            a.parse::<f64>()
                .map_err(|_| format_err(path, format!("bad angle `{a}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Sinogram::new(field, angles, spacing)
}

/// Single-column CSV of angles in radians.
pub fn write_angles(path: &Path, angles: &[f64]) -> Result<()> {
    let mut out = String::from("angle\n");
    for a in angles {
        out.push_str(&format!("{a:e}\n"));
    }
    fs::write(path, out).map_err(Error::file(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ScalarField {
        ScalarField::from_fn(7, 5, |x, y| (9.0 * x).sin() * 1e3 + y / 3.0 - 17.25)
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let f = sample().with_spacing(0.1, 0.25);
        write_image(&p, &f).unwrap();
        let g = read_image(&p).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.pgm");
        let f = sample();
        write_image(&p, &f).unwrap();
        let g = read_image(&p).unwrap();
        assert_eq!(g.dims(), f.dims());
        let bound = f.range() / 65535.0;
        for (a, b) in f.values().iter().zip(g.values()) {
            assert!((a - b).abs() <= bound * (1.0 + 1e-9), "{a} vs {b}");
        }
        assert_eq!((g.dx1(), g.dx2()), (f.dx1(), f.dx2()));
    }

    #[test]
    fn constant_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        write_pgm(&p, &ScalarField::constant(4, 3, 2.5)).unwrap();
        assert!(read_pgm(&p).unwrap().values().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn ascii_graymap_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, "P2\n2 2\n255\n0 1 2 3\n").unwrap();
        assert!(
            matches!(read_pgm(&p), Err(Error::UnsupportedFormat { magic, .. }) if magic == "P2")
        );
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.pgm");
        fs::write(&p, b"P5\n4 4\n65535\n\x00\x01").unwrap();
        assert!(matches!(read_pgm(&p), Err(Error::Format { .. })));
        fs::write(&p, b"P5\n4 x\n65535\n").unwrap();
        assert!(matches!(read_pgm(&p), Err(Error::Format { .. })));
        let c = dir.path().join("ragged.csv");
        fs::write(&c, "1,2,3\n4,5\n").unwrap();
        assert!(matches!(read_csv(&c), Err(Error::Format { .. })));
        assert!(read_image(&dir.path().join("x.png")).is_err());
    }

    #[test]
    fn eight_bit_graymaps_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        fs::write(&p, b"P5\n# made elsewhere\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(read_pgm(&p).unwrap().values(), &[0.0, 1.0]);
    }

    #[test]
    fn sinogram_round_trip() {
        use crate::tomo::{radon, uniform_angles};
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let f = crate::tomo::shepp_logan(16, Default::default()).unwrap();
        let s = radon(&f, &uniform_angles(8), 25).unwrap();
        write_sinogram(&p, &s).unwrap();
        assert_eq!(read_sinogram(&p).unwrap(), s);
    }
}
