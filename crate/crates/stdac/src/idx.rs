//! IDX files (the MNIST distribution format), plain or gzip-compressed.
//!
//! Header: big-endian `u32` magic (`0x803` for 3-d unsigned-byte image
//! stacks, `0x801` for 1-d label vectors), one big-endian `u32` per
//! dimension, then the unsigned-byte payload.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use stdac_core::data::ImageSet;
use stdac_core::Tensor;

use crate::error::{io_err, Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Raw image stack as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Reads a file, inflating it when it is gzip data. Compression is detected
/// from the `.gz` extension or the gzip magic bytes.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(io_err(path))?;
    let gz = path.extension().is_some_and(|e| e == "gz") || raw.starts_with(&GZIP_MAGIC);
    if !gz {
        return Ok(raw);
    }
    let mut out = Vec::new();
    GzDecoder::new(raw.as_slice())
        .read_to_end(&mut out)
        .map_err(io_err(path))?;
    Ok(out)
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(io_err(path))?;
        enc.finish().map_err(io_err(path))?;
        Ok(())
    } else {
        fs::write(path, bytes).map_err(io_err(path))
    }
}

fn header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 * (1 + dims);
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: need,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let found = word(0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < need {
        return Err(Error::Truncated {
            path: path.into(),
            expected: need,
            actual: bytes.len(),
        });
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

fn check_payload(bytes: &[u8], path: &Path, expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let dims = header(bytes, path, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let expected = 16 + count * rows * cols;
    check_payload(bytes, path, expected)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let count = header(bytes, path, LABELS_MAGIC, 1)?[0];
    check_payload(bytes, path, 8 + count)?;
    let labels = bytes[8..8 + count].to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(Error::LabelRange {
            path: path.into(),
            index,
            label,
        });
    }
    Ok(labels)
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    parse_images(&read_maybe_gz(path)?, path)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(&read_maybe_gz(path)?, path)
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes an image stack; a `.gz` path is gzip-compressed.
pub fn write_images(path: &Path, images: &IdxImages) -> Result<()> {
    write_maybe_gz(path, &encode_images(images))
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    write_maybe_gz(path, &encode_labels(labels))
}

impl IdxImages {
    /// Pixels scaled by 1/255 into an `n×rows×cols×1` tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let data = self.pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
        Ok(Tensor::new(&[self.count, self.rows, self.cols, 1], data)?)
    }

    /// Inverse of [`IdxImages::to_tensor`]: rounds each value back to a byte.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[3] != 1 {
            return Err(Error::Unsupported(format!(
                "IDX needs n×h×w×1 images, got shape {s:?}"
            )));
        }
        let pixels = t
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Ok(IdxImages {
            count: s[0],
            rows: s[1],
            cols: s[2],
            pixels,
        })
    }
}

/// Loads an image file and an optional label file into an [`ImageSet`].
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<ImageSet> {
    let raw = read_images(images)?;
    let labels = labels.map(read_labels).transpose()?;
    if let Some(l) = &labels {
        if l.len() != raw.count {
            return Err(Error::CountMismatch {
                images: raw.count,
                labels: l.len(),
            });
        }
    }
    Ok(ImageSet::new(raw.to_tensor()?, labels)?)
}

/// Writes an [`ImageSet`] as `<stem>-images-idx3-ubyte` plus, when labels are
/// present, `<stem>-labels-idx1-ubyte`, both with the given suffix
/// (`""` or `".gz"`).
pub fn save_idx(
    set: &ImageSet,
    dir: &Path,
    stem: &str,
    suffix: &str,
) -> Result<(PathBuf, Option<PathBuf>)> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let img_path = dir.join(format!("{stem}-images-idx3-ubyte{suffix}"));
    write_images(&img_path, &IdxImages::from_tensor(set.images())?)?;
    let lbl_path = match set.labels() {
        Some(l) => {
            let p = dir.join(format!("{stem}-labels-idx1-ubyte{suffix}"));
            write_labels(&p, l)?;
            Some(p)
        }
        None => None,
    };
    Ok((img_path, lbl_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> IdxImages {
        IdxImages {
            count: 2,
            rows: 2,
            cols: 3,
            pixels: vec![0, 1, 2, 253, 254, 255, 7, 8, 9, 10, 11, 12],
        }
    }

    #[test]
    fn header_layout() {
        let b = encode_images(&tiny());
        assert_eq!(&b[..16], &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3]);
        assert_eq!(parse_images(&b, Path::new("x")).unwrap(), tiny());
        let l = encode_labels(&[3, 9]);
        assert_eq!(l, vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 9]);
    }

    #[test]
    fn labels_passed_as_images_is_bad_magic() {
        let l = encode_labels(&[1, 2, 3]);
        let e = parse_images(&l, Path::new("l")).unwrap_err();
        assert!(
            matches!(
                e,
                Error::BadMagic {
                    found: 0x801,
                    expected: 0x803,
                    ..
                }
            ),
            "{e}"
        );
        let e = parse_labels(&encode_images(&tiny()), Path::new("i")).unwrap_err();
        assert!(matches!(e, Error::BadMagic { found: 0x803, .. }));
    }

    #[test]
    fn truncation_names_both_sizes() {
        let b = encode_images(&tiny());
        let e = parse_images(&b[..20], Path::new("t")).unwrap_err();
        assert!(matches!(
            e,
            Error::Truncated {
                expected: 28,
                actual: 20,
                ..
            }
        ));
        assert!(e.to_string().contains("expected 28 bytes, found 20"), "{e}");
        let e = parse_images(&b[..10], Path::new("t")).unwrap_err();
        assert!(matches!(
            e,
            Error::Truncated {
                expected: 16,
                actual: 10,
                ..
            }
        ));
    }

    #[test]
    fn pixels_scale_by_255() {
        let t = tiny().to_tensor().unwrap();
        assert_eq!(t.shape(), &[2, 2, 3, 1]);
        assert_eq!(t.data()[5], 1.0);
        assert_eq!(t.data()[1], 1.0 / 255.0);
        assert_eq!(IdxImages::from_tensor(&t).unwrap(), tiny());
    }
}
