//! Binary PPM (P6, maxval 255) reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::RawFrame;
use crate::error::{Error, Result};

/// Read one P6 frame. Header whitespace and `#` comments are handled; only
/// maxval 255 is accepted.
pub fn read_ppm(path: &Path) -> Result<RawFrame> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;

    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and comment lines.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::ppm(path, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes)?;
    if magic != "P6" {
        return Err(Error::ppm(
            path,
            format!("expected P6 magic, got `{magic}`"),
        ));
    }
    let parse = |tok: String, what: &str| -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| Error::ppm(path, format!("invalid {what}: `{tok}`")))
    };
    let width = parse(next_token(&bytes)?, "width")?;
    let height = parse(next_token(&bytes)?, "height")?;
    let maxval = parse(next_token(&bytes)?, "maxval")?;
    if maxval != 255 {
        return Err(Error::ppm(
            path,
            format!("unsupported maxval {maxval}, only 255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::ppm(path, "zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::ppm(path, "missing header terminator"));
    }
    pos += 1;

    let expected = width * height * 3;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(Error::ppm(
            path,
            format!(
                "pixel data truncated: expected {expected} bytes, got {}",
                data.len()
            ),
        ));
    }
    Ok(RawFrame {
        width,
        height,
        pixels: data[..expected].to_vec(),
    })
}

/// Write one P6 frame with maxval 255. Output is byte-deterministic.
pub fn write_ppm(path: &Path, frame: &RawFrame) -> Result<()> {
    debug_assert_eq!(frame.pixels.len(), frame.width * frame.height * 3);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", frame.width, frame.height).map_err(|e| Error::io(path, e))?;
    w.write_all(&frame.pixels).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.ppm");
        let frame = RawFrame {
            width: 3,
            height: 2,
            pixels: (0u8..18).collect(),
        };
        write_ppm(&path, &frame).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.height, 2);
        assert_eq!(back.pixels, frame.pixels);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut bytes = b"P6\n# a comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        std::fs::write(&path, bytes).unwrap();
        let frame = read_ppm(&path).unwrap();
        assert_eq!((frame.width, frame.height), (2, 1));
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let dir = tempdir().unwrap();
        let bad_magic = dir.path().join("p5.ppm");
        std::fs::write(&bad_magic, b"P5\n2 2\n255\n0000").unwrap();
        assert!(read_ppm(&bad_magic).is_err());

        let short = dir.path().join("short.ppm");
        std::fs::write(&short, b"P6\n2 2\n255\nxx").unwrap();
        let err = read_ppm(&short).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }
}
