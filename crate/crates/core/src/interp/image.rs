use std::path::Path;

use crate::error::{Error, Result};

/// Gray level for `v` under symmetric scaling by `max`: 0 → 128, +max → 255, −max → 0.
fn gray(v: f64, max: f64) -> u8 {
    if max == 0.0 {
        return 128;
    }
    let t = (v / max).clamp(-1.0, 1.0);
    if t >= 0.0 {
        (128.0 + (127.0 * t).round()) as u8
    } else {
        (128.0 + (128.0 * t).round()) as u8
    }
}

/// Plain (P2) PGM bytes for a `rows×cols` vector, at most 70 characters per line.
pub fn eigenvector_pgm(v: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != v.len() || v.is_empty() {
        return Err(Error::dims("export_eigenvector_image", &[rows, cols], &[v.len()]));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite eigenvector entry at {i}")));
    }
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut out = format!("P2\n{cols} {rows}\n255\n");
    for r in 0..rows {
        let mut line = String::new();
        for c in 0..cols {
            let tok = gray(v[r * cols + c], max).to_string();
            if !line.is_empty() && line.len() + 1 + tok.len() > 70 {
                out.push_str(&line);
                out.push('\n');
                line.clear();
            }
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(&tok);
        }
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out.into_bytes())
}

pub fn export_eigenvector_image(v: &[f64], rows: usize, cols: usize, path: impl AsRef<Path>) -> Result<()> {
    let bytes = eigenvector_pgm(v, rows, cols)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(bytes: &[u8]) -> Vec<u8> {
        let s = std::str::from_utf8(bytes).unwrap();
        s.split_whitespace().skip(4).map(|t| t.parse().unwrap()).collect()
    }

    #[test]
    fn zero_vector_is_mid_gray() {
        let b = eigenvector_pgm(&[0.0; 6], 2, 3).unwrap();
        assert!(b.starts_with(b"P2\n3 2\n255\n"));
        assert_eq!(pixels(&b), vec![128; 6]);
    }

    #[test]
    fn endpoints() {
        let b = eigenvector_pgm(&[0.5, -0.5, 0.0, 0.25], 2, 2).unwrap();
        assert_eq!(pixels(&b), vec![255, 0, 128, 192]);
        let single = eigenvector_pgm(&[0.0, 0.0, 0.3, 0.0], 2, 2).unwrap();
        assert_eq!(pixels(&single)[2], 255);
    }

    #[test]
    fn lines_are_short_and_output_deterministic() {
        let v: Vec<f64> = (0..784).map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0).collect();
        let a = eigenvector_pgm(&v, 28, 28).unwrap();
        let b = eigenvector_pgm(&v, 28, 28).unwrap();
        assert_eq!(a, b);
        assert!(std::str::from_utf8(&a).unwrap().lines().all(|l| l.len() <= 70));
        assert_eq!(pixels(&a).len(), 784);
    }

    #[test]
    fn errors() {
        assert!(eigenvector_pgm(&[1.0; 5], 2, 3).is_err());
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("no/such/dir/x.pgm");
        assert!(matches!(export_eigenvector_image(&[1.0], 1, 1, missing), Err(Error::Io(_))));
        let ok = dir.path().join("v.pgm");
        export_eigenvector_image(&[1.0, -1.0], 1, 2, &ok).unwrap();
        assert_eq!(std::fs::read_to_string(ok).unwrap(), "P2\n2 1\n255\n255 0\n");
    }
}
