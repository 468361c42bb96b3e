//! Grayscale raster input and output (8-bit PGM and PNG).
//!
//! Every write goes to a temporary file next to the destination and is then
//! renamed into place, so a failed write never leaves a partial file behind.

use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageError, ImageFormat, ImageReader};

use crate::clustering::{ChangeMap, Label};
use crate::error::{Error, Result};
use crate::operators::DifferenceMap;
use crate::tensor::Matrix2;

/// Ground-truth pixels strictly above this value are `changed`.
pub const TRUTH_THRESHOLD: f64 = 127.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrayFormat {
    Pgm,
    Png,
}

impl GrayFormat {
    /// Picks the output format from the file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("png") => Ok(GrayFormat::Png),
            Some("pgm") | Some("pnm") => Ok(GrayFormat::Pgm),
            _ => Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "output extension must be .png or .pgm".into(),
            }),
        }
    }
}

fn luma(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

fn map_decode_error(path: &Path, err: ImageError) -> Error {
    match err {
        ImageError::Unsupported(e) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        ImageError::IoError(e) if e.kind() == ErrorKind::NotFound => {
            Error::NotFound(path.to_path_buf())
        }
        other => Error::CorruptFile {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Decodes an 8-bit grayscale PGM or PNG into intensities in `[0, 255]`.
///
/// RGB(A) input is accepted and reduced with `0.299 R + 0.587 G + 0.114 B`;
/// alpha is ignored.
pub fn load_gray(path: impl AsRef<Path>) -> Result<Matrix2> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| {
        if e.kind() == ErrorKind::NotFound {
            Error::NotFound(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let reader = reader.with_guessed_format().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: match other {
                    Some(f) => format!("{f:?} is not supported"),
                    None => "unrecognized file signature".into(),
                },
            })
        }
    }
    let decoded = reader.decode().map_err(|e| map_decode_error(path, e))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: "image has no pixels".into(),
        });
    }

    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(img) => img.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLumaA8(img) => img.pixels().map(|p| f64::from(p.0[0])).collect(),
        DynamicImage::ImageRgb8(img) => {
            log::warn!("{}: RGB input converted to luma", path.display());
            img.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect()
        }
        DynamicImage::ImageRgba8(img) => {
            log::warn!("{}: RGBA input converted to luma", path.display());
            img.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect()
        }
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("only 8-bit samples are supported, got {:?}", other.color()),
            })
        }
    };
    Matrix2::new(h, w, data)
}

/// Reads a reference map; pixels above [`TRUTH_THRESHOLD`] are changed.
pub fn load_truth(path: impl AsRef<Path>) -> Result<ChangeMap> {
    let gray = load_gray(path)?;
    let changed: Vec<bool> = gray
        .as_slice()
        .iter()
        .map(|&v| v > TRUTH_THRESHOLD)
        .collect();
    ChangeMap::from_bools(gray.rows(), gray.cols(), &changed)
}

/// Anything that can be written as an 8-bit grayscale raster.
pub trait GrayRaster {
    /// `(rows, cols, row-major bytes)`.
    fn to_gray8(&self) -> (usize, usize, Vec<u8>);
}

impl GrayRaster for ChangeMap {
    fn to_gray8(&self) -> (usize, usize, Vec<u8>) {
        let bytes = self
            .labels()
            .iter()
            .map(|l| match l {
                Label::Changed => 255,
                Label::Unchanged => 0,
            })
            .collect();
        (self.rows(), self.cols(), bytes)
    }
}

impl GrayRaster for DifferenceMap {
    /// Min-max scaled to `[0, 255]`, rounded half up; constant maps are black.
    fn to_gray8(&self) -> (usize, usize, Vec<u8>) {
        let v = self.values();
        let (lo, hi) = (v.min(), v.max());
        let span = hi - lo;
        let bytes = v
            .as_slice()
            .iter()
            .map(|&x| {
                if span > 0.0 {
                    ((x - lo) / span * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        (v.rows(), v.cols(), bytes)
    }
}

pub fn encode_gray8(rows: usize, cols: usize, bytes: &[u8], format: GrayFormat) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let (w, h) = (cols as u32, rows as u32);
    let result = match format {
        GrayFormat::Png => {
            PngEncoder::new(&mut out).write_image(bytes, w, h, ExtendedColorType::L8)
        }
        GrayFormat::Pgm => PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(bytes, w, h, ExtendedColorType::L8),
    };
    result.map_err(|e| Error::invalid(format!("encoding failed: {e}")))?;
    Ok(out)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.flush().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Saves a change map (0 / 255) or a difference map (rescaled) as PNG or PGM,
/// chosen by the file extension.
pub fn save_map(map: &impl GrayRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = GrayFormat::from_path(path)?;
    let (rows, cols, bytes) = map.to_gray8();
    let encoded = encode_gray8(rows, cols, &bytes, format)?;
    write_atomic(path, &encoded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn pgm(w: usize, h: usize, pixels: &[u8]) -> Vec<u8> {
        let mut v = format!("P5\n{w} {h}\n255\n").into_bytes();
        v.extend_from_slice(pixels);
        v
    }

    #[test]
    fn decodes_binary_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, pgm(2, 2, &[0, 128, 255, 64])).unwrap();
        let m = load_gray(&p).unwrap();
        assert_eq!(m, Matrix2::from_rows(&[[0.0, 128.0], [255.0, 64.0]]));
    }

    #[test]
    fn decodes_ascii_pgm_with_header_dims() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, "P2\n# comment\n3 1\n255\n1 2 3\n").unwrap();
        let m = load_gray(&p).unwrap();
        assert_eq!(m.dims(), (1, 3));
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rgb_png_is_reduced_to_luma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let px: [u8; 12] = [255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30];
        let mut buf = Vec::new();
        PngEncoder::new(&mut buf)
            .write_image(&px, 2, 2, ExtendedColorType::Rgb8)
            .unwrap();
        fs::write(&p, buf).unwrap();
        let m = load_gray(&p).unwrap();
        let expected = [
            0.299 * 255.0,
            0.587 * 255.0,
            0.114 * 255.0,
            0.299 * 10.0 + 0.587 * 20.0 + 0.114 * 30.0,
        ];
        for (a, b) in m.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn error_variants() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_gray(dir.path().join("missing.pgm")),
            Err(Error::NotFound(_))
        ));

        let truncated = dir.path().join("t.pgm");
        fs::write(&truncated, pgm(4, 4, &[1, 2, 3])).unwrap();
        assert!(matches!(
            load_gray(&truncated),
            Err(Error::CorruptFile { .. })
        ));

        let junk = dir.path().join("junk.bmp");
        fs::write(&junk, b"definitely not an image").unwrap();
        assert!(matches!(
            load_gray(&junk),
            Err(Error::UnsupportedFormat { .. })
        ));

        assert!(matches!(
            save_map(
                &ChangeMap::filled(1, 1, Label::Changed),
                dir.path().join("x.jpg")
            ),
            Err(Error::UnsupportedFormat { .. })
        ));
    }

    #[test]
    fn change_map_round_trips_through_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let map = ChangeMap::from_bools(2, 3, &[true, false, false, true, true, false]).unwrap();
        for name in ["m.png", "m.pgm"] {
            let p = dir.path().join(name);
            save_map(&map, &p).unwrap();
            assert_eq!(load_truth(&p).unwrap(), map);
        }
    }

    #[test]
    fn all_changed_map_is_white() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.pgm");
        save_map(&ChangeMap::filled(3, 2, Label::Changed), &p).unwrap();
        assert!(load_gray(&p)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 255.0));
    }

    #[test]
    fn difference_map_scaling() {
        let di = DifferenceMap::new(Matrix2::from_rows(&[[1.0, 2.0, 3.0]])).unwrap();
        // 127.5 rounds half up
        assert_eq!(di.to_gray8().2, vec![0, 128, 255]);
        let flat = DifferenceMap::new(Matrix2::filled(2, 2, 0.7)).unwrap();
        assert_eq!(flat.to_gray8().2, vec![0; 4]);
    }

    #[test]
    fn truth_threshold_is_strict() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        fs::write(&p, pgm(6, 1, &[0, 60, 127, 128, 200, 255])).unwrap();
        let t = load_truth(&p).unwrap();
        let changed: Vec<bool> = t.labels().iter().map(|l| l.is_changed()).collect();
        assert_eq!(changed, [false, false, false, true, true, true]);
    }
}
