use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Writes `[1, H, W]` (or `[H, W]`) values in `[0, 1]` as binary 8-bit PGM.
pub fn write_pgm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (h, w) = match image.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        s => return Err(shape_err!("write_pgm: expected [1, H, W], got {s:?}")),
    };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn header_token(reader: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut token = String::new();
    loop {
        let mut byte = [0u8; 1];
        if reader.read(&mut byte)? == 0 {
            break;
        }
        match byte[0] {
            b'#' if token.is_empty() => {
                let mut comment = Vec::new();
                reader.read_until(b'\n', &mut comment)?;
            }
            b if b.is_ascii_whitespace() => {
                if !token.is_empty() {
                    break;
                }
            }
            b => token.push(b as char),
        }
    }
    if token.is_empty() {
        return Err(Error::Image(format!("{}: truncated PGM header", path.display())));
    }
    Ok(token)
}

/// Reads a binary 8-bit PGM into `[1, H, W]` scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Tensor<f32>> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let bad = |what: &str| Error::Image(format!("{}: {what}", path.display()));
    if header_token(&mut reader, path)? != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        header_token(&mut reader, path)?
            .parse::<usize>()
            .map_err(|_| bad(&format!("bad {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let mut pixels = vec![0u8; w * h];
    reader
        .read_exact(&mut pixels)
        .map_err(|_| bad("pixel data shorter than the header declares"))?;
    let scale = maxval as f32;
    Tensor::new([1, h, w], pixels.iter().map(|&p| (p as f32 / scale).min(1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_on_the_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let img = Tensor::from_fn([1, 5, 7], |k| (k * 37 % 256) as f32 / 255.0);
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(read_pgm(&path).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn truncated_and_wrong_magic_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        std::fs::write(&path, b"P5\n4 4\n255\n\x00\x01").unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Image(_))));
        std::fs::write(&path, b"P2\n1 1\n255\n0").unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Image(_))));
    }
}
