//! Binary PGM (P5) image I/O, 8- or 16-bit, with byte-offset error
//! reporting. 16-bit samples are big-endian per the format.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::Read;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

/// Writes an `[H, W]` tensor of [0, 1] values; deterministic bytes.
pub fn write_pgm(path: &Path, img: &Tensor, depth: PgmDepth) -> Result<()> {
    let (h, w) = match img.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::shape("[H, W] image", format!("{s:?}"))),
    };
    let maxval: u32 = match depth {
        PgmDepth::Eight => 255,
        PgmDepth::Sixteen => 65535,
    };
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        match depth {
            PgmDepth::Eight => out.push(q as u8),
            PgmDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a binary PGM into an `[H, W]` tensor of [0, 1] values.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Malformed {
            offset: 0,
            reason: "bad magic bytes (expected P5)".into(),
        });
    }
    let mut pos = 2;
    let w = read_header_int(bytes, &mut pos)?;
    let h = read_header_int(bytes, &mut pos)?;
    let maxval = read_header_int(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Malformed {
            offset: pos,
            reason: format!("maxval {maxval} out of range"),
        });
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Malformed {
            offset: pos,
            reason: "missing whitespace before payload".into(),
        });
    }
    pos += 1;
    let wide = maxval > 255;
    let per = if wide { 2 } else { 1 };
    let need = h * w * per;
    if bytes.len() < pos + need {
        return Err(Error::Malformed {
            offset: bytes.len(),
            reason: format!(
                "truncated payload: need {} bytes, have {}",
                need,
                bytes.len() - pos
            ),
        });
    }
    let mut data = Vec::with_capacity(h * w);
    let scale = 1.0 / maxval as f64;
    for i in 0..h * w {
        let v = if wide {
            u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as f64
        } else {
            bytes[pos + i] as f64
        };
        data.push(v * scale);
    }
    Tensor::from_vec(vec![h, w], data)
}

/// Parses one whitespace-delimited decimal, skipping `#` comment lines.
fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::Malformed {
            offset: start,
            reason: "expected a decimal header field".into(),
        });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(Error::Malformed {
            offset: start,
            reason: "unparseable header field".into(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn random_image(seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        Tensor::from_vec(vec![6, 4], (0..24).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn eight_bit_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = random_image(1);
        write_pgm(&path, &img, PgmDepth::Eight).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn sixteen_bit_round_trip_is_tighter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img16.pgm");
        let img = random_image(2);
        write_pgm(&path, &img, PgmDepth::Sixteen).unwrap();
        let back = read_pgm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn byte_output_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.pgm");
        let b = dir.path().join("b.pgm");
        let img = random_image(3);
        write_pgm(&a, &img, PgmDepth::Eight).unwrap();
        write_pgm(&b, &img, PgmDepth::Eight).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn rejects_wrong_magic() {
        let err = parse_pgm(b"P6\n2 2\n255\n....").unwrap_err();
        assert!(matches!(err, Error::Malformed { offset: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_truncated_payload_with_offset() {
        let bytes = b"P5\n4 4\n255\n\x01\x02";
        let err = parse_pgm(bytes).unwrap_err();
        match err {
            Error::Malformed { offset, reason } => {
                assert_eq!(offset, bytes.len());
                assert!(reason.contains("truncated"), "{reason}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 250]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.shape(), &[1, 2]);
        assert!((img[0] - 7.0 / 255.0).abs() < 1e-12);
    }
}
