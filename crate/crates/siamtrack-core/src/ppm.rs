//! Binary PPM (P6, maxval 255) reading and writing for [`Frame`]s.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tracker::Frame;

/// Parsed P6 header: width, height, and the payload byte offset.
pub fn parse_p6_header(bytes: &[u8], name: &str) -> Result<(usize, usize, usize)> {
    let bad = |detail: &str| Error::format(name, detail.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(bad("missing P6 magic"));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace (with # comments to end of line) separates header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while let Some(b) = bytes.get(pos) {
            if b.is_ascii_digit() {
                pos += 1;
            } else {
                break;
            }
        }
        if pos == start {
            return Err(bad("expected a decimal field in header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are UTF-8");
        *field = text.parse().map_err(|_| bad("header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("expected single whitespace after maxval")),
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if w == 0 || h == 0 {
        return Err(bad("zero dimension"));
    }
    Ok((w, h, pos))
}

pub fn read_ppm(path: &Path) -> Result<Frame> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&name, e))?;
    let (w, h, offset) = parse_p6_header(&bytes, &name)?;
    let expected = 3 * w * h;
    let payload = &bytes[offset..];
    if payload.len() != expected {
        return Err(Error::format(
            &name,
            format!("payload has {} bytes, {w}x{h} needs {expected}", payload.len()),
        ));
    }
    Frame::new(w, h, payload.to_vec())
}

pub fn write_ppm(frame: &Frame, path: &Path) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    bytes.extend_from_slice(&frame.pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_example() {
        let (w, h, offset) = parse_p6_header(b"P6\n8 4\n255\nxxxx", "t").unwrap();
        assert_eq!((w, h), (8, 4));
        assert_eq!(offset, 11);
        assert_eq!(3 * w * h, 96);
    }

    #[test]
    fn header_with_comment() {
        let (w, h, _) = parse_p6_header(b"P6\n# made by hand\n8 4\n255\n", "t").unwrap();
        assert_eq!((w, h), (8, 4));
    }

    #[test]
    fn rejects_wrong_magic_and_maxval() {
        assert!(parse_p6_header(b"P5\n8 4\n255\n", "t").is_err());
        assert!(parse_p6_header(b"P6\n8 4\n65535\n", "t").is_err());
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = std::env::temp_dir().join("siamtrack-ppm-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("frame.ppm");
        let pixels: Vec<u8> = (0..3 * 8 * 4).map(|i| (i * 37 % 256) as u8).collect();
        let frame = Frame::new(8, 4, pixels).unwrap();
        write_ppm(&frame, &path).unwrap();
        assert_eq!(read_ppm(&path).unwrap(), frame);
    }

    #[test]
    fn rejects_payload_mismatch() {
        let dir = std::env::temp_dir().join("siamtrack-ppm-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("short.ppm");
        std::fs::write(&path, b"P6\n8 4\n255\nshort").unwrap();
        let err = read_ppm(&path).unwrap_err();
        assert!(err.to_string().contains("short.ppm"), "got {err}");
    }
}
