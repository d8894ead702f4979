//! MNIST ingestion from IDX files.
//!
//! IDX is big-endian: a `u32` magic (`0x00000803` for 3-d unsigned-byte
//! images, `0x00000801` for 1-d labels), one `u32` per dimension, then the
//! raw bytes. Files may be gzip-compressed; compression is detected from the
//! gzip header, not the file name.

use flate2::read::GzDecoder;
use rand::seq::index;
use sha2::{Digest, Sha256};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: wrong magic 0x{found:08x}, expected 0x{expected:08x}")]
    WrongMagic { path: String, expected: u32, found: u32 },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated { path: String, expected: u64, found: u64 },
    #[error("{path}: dimensions {dims:?} overflow")]
    DimensionOverflow { path: String, dims: Vec<u32> },
    #[error("{path}: label {value} at index {index} is outside 0..{NUM_CLASSES}")]
    LabelOutOfRange { path: String, index: usize, value: u8 },
    #[error("{count_images} images but {count_labels} labels")]
    CountMismatch { count_images: usize, count_labels: usize },
    #[error("subset size {n} outside 1..={available}")]
    BadSubset { n: usize, available: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Where a dataset came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub files: Vec<SourceFile>,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SourceFile {
    pub path: PathBuf,
    /// SHA-256 of the file bytes as stored on disk.
    pub sha256: String,
}

/// Raw image block of an IDX image file.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub source: SourceFile,
}

impl IdxImages {
    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    /// Image `k` scaled to `[0, 1]`.
    pub fn image(&self, k: usize) -> Vec<f64> {
        let n = self.pixels_per_image();
        self.pixels[k * n..(k + 1) * n].iter().map(|&p| p as f64 / 255.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
    pub source: SourceFile,
}

fn read_file(path: &Path) -> Result<(Vec<u8>, SourceFile), DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.display().to_string(), source };
    let stored = std::fs::read(path).map_err(io_err)?;
    let sha256 = hex_digest(&stored);
    let bytes = if stored.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&stored[..]).read_to_end(&mut out).map_err(io_err)?;
        out
    } else {
        stored
    };
    Ok((bytes, SourceFile { path: path.to_path_buf(), sha256 }))
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Header<'a> {
    path: String,
    bytes: &'a [u8],
}

impl<'a> Header<'a> {
    fn u32_at(&self, offset: usize) -> Result<u32, DatasetError> {
        self.bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| DatasetError::Truncated {
                path: self.path.clone(),
                expected: (offset + 4) as u64,
                found: self.bytes.len() as u64,
            })
    }

    fn expect_magic(&self, expected: u32) -> Result<(), DatasetError> {
        let found = self.u32_at(0)?;
        if found != expected {
            return Err(DatasetError::WrongMagic { path: self.path.clone(), expected, found });
        }
        Ok(())
    }

    fn payload(&self, header_len: usize, dims: &[u32]) -> Result<&'a [u8], DatasetError> {
        let overflow = || DatasetError::DimensionOverflow { path: self.path.clone(), dims: dims.to_vec() };
        let n = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .filter(|&n| n <= isize::MAX as u64)
            .ok_or_else(overflow)?;
        let available = (self.bytes.len() - header_len) as u64;
        if available < n {
            return Err(DatasetError::Truncated { path: self.path.clone(), expected: n, found: available });
        }
        Ok(&self.bytes[header_len..header_len + n as usize])
    }
}

/// Parses an IDX image file (raw or gzip).
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages, DatasetError> {
    let path = path.as_ref();
    let (bytes, source) = read_file(path)?;
    let h = Header { path: path.display().to_string(), bytes: &bytes };
    h.expect_magic(IMAGE_MAGIC)?;
    let dims = [h.u32_at(4)?, h.u32_at(8)?, h.u32_at(12)?];
    let pixels = h.payload(16, &dims)?.to_vec();
    Ok(IdxImages {
        count: dims[0] as usize,
        rows: dims[1] as usize,
        cols: dims[2] as usize,
        pixels,
        source,
    })
}

/// Parses an IDX label file (raw or gzip); every label must be a digit.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<IdxLabels, DatasetError> {
    let path = path.as_ref();
    let (bytes, source) = read_file(path)?;
    let h = Header { path: path.display().to_string(), bytes: &bytes };
    h.expect_magic(LABEL_MAGIC)?;
    let count = h.u32_at(4)?;
    let labels = h.payload(8, &[count])?.to_vec();
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
        return Err(DatasetError::LabelOutOfRange { path: h.path, index, value });
    }
    Ok(IdxLabels { labels, source })
}

pub fn write_idx_images<W: Write>(mut w: W, rows: usize, cols: usize, pixels: &[u8]) -> io::Result<()> {
    let per = rows * cols;
    assert!(per > 0 && pixels.len().is_multiple_of(per), "pixel count must be a multiple of rows * cols");
    for v in [IMAGE_MAGIC, (pixels.len() / per) as u32, rows as u32, cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(pixels)
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> io::Result<()> {
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)
}

/// Paired images and labels. Pixels are kept as bytes and scaled by 1/255
/// on access, so every pixel is in `[0, 1]` by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn from_parts(images: IdxImages, labels: IdxLabels) -> Result<Self, DatasetError> {
        if images.count != labels.labels.len() {
            return Err(DatasetError::CountMismatch {
                count_images: images.count,
                count_labels: labels.labels.len(),
            });
        }
        Ok(Self {
            rows: images.rows,
            cols: images.cols,
            pixels: images.pixels,
            labels: labels.labels,
            provenance: Provenance { files: vec![images.source, labels.source] },
        })
    }

    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_parts(load_idx_images(images)?, load_idx_labels(labels)?)
    }

    /// In-memory dataset; panics if shapes disagree or a label is not a digit.
    pub fn from_raw(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), rows * cols * labels.len(), "pixel/label count mismatch");
        assert!(labels.iter().all(|&l| (l as usize) < NUM_CLASSES), "label out of range");
        Self { rows, cols, pixels, labels, provenance: Provenance::default() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn label(&self, k: usize) -> u8 {
        self.labels[k]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn raw_image(&self, k: usize) -> &[u8] {
        let n = self.pixels_per_image();
        &self.pixels[k * n..(k + 1) * n]
    }

    /// Writes image `k`, scaled to `[0, 1]`, into `out`.
    pub fn image_into(&self, k: usize, out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(self.raw_image(k)) {
            *o = p as f64 / 255.0;
        }
    }

    pub fn image(&self, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.pixels_per_image()];
        self.image_into(k, &mut v);
        v
    }

    /// Examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.pixels_per_image());
        let mut labels = Vec::with_capacity(indices.len());
        for &k in indices {
            pixels.extend_from_slice(self.raw_image(k));
            labels.push(self.labels[k]);
        }
        Dataset { rows: self.rows, cols: self.cols, pixels, labels, provenance: self.provenance.clone() }
    }

    /// Writes the dataset back as a pair of raw IDX files.
    pub fn write_idx(&self, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> io::Result<()> {
        write_idx_images(io::BufWriter::new(std::fs::File::create(images)?), self.rows, self.cols, &self.pixels)?;
        write_idx_labels(io::BufWriter::new(std::fs::File::create(labels)?), &self.labels)
    }
}

/// Indices of a seeded sample of `n` out of `available`, without
/// replacement.
pub fn subset_indices(available: usize, n: usize, seed: u64) -> Result<Vec<usize>, DatasetError> {
    if n == 0 || n > available {
        return Err(DatasetError::BadSubset { n, available });
    }
    let mut rng = crate::rng::stream(seed, crate::rng::Stream::Subset);
    Ok(index::sample(&mut rng, available, n).into_vec())
}

/// Seeded sample of `n` examples without replacement.
pub fn subset(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    Ok(dataset.select(&subset_indices(dataset.len(), n, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::collections::HashSet;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    fn images_bytes(count: u32, rows: u32, cols: u32, fill: u8) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend(std::iter::repeat_n(fill, (count * rows * cols) as usize));
        v
    }

    fn labels_bytes(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        write_idx_labels(&mut v, labels).unwrap();
        v
    }

    #[test]
    fn magic_bytes_are_the_format_constants() {
        assert_eq!(IMAGE_MAGIC.to_be_bytes(), [0, 0, 8, 3]);
        assert_eq!(LABEL_MAGIC.to_be_bytes(), [0, 0, 8, 1]);
    }

    #[test]
    fn two_white_images() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "img", &images_bytes(2, 28, 28, 255));
        let imgs = load_idx_images(&p).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (2, 28, 28));
        assert!(imgs.image(0).iter().chain(imgs.image(1).iter()).all(|&v| v == 1.0));
        assert_eq!(imgs.image(1).len(), 784);
    }

    #[test]
    fn three_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "lbl", &labels_bytes(&[7, 2, 1]));
        assert_eq!(load_idx_labels(&p).unwrap().labels, vec![7, 2, 1]);
    }

    #[test]
    fn label_file_given_to_image_loader_is_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "lbl", &labels_bytes(&[1, 2, 3]));
        match load_idx_images(&p) {
            Err(DatasetError::WrongMagic { expected, found, .. }) => {
                assert_eq!(expected, IMAGE_MAGIC);
                assert_eq!(found, LABEL_MAGIC);
            }
            other => panic!("expected wrong magic, got {other:?}"),
        }
        let p = write(dir.path(), "img", &images_bytes(1, 2, 2, 0));
        assert!(matches!(load_idx_labels(&p), Err(DatasetError::WrongMagic { .. })));
    }

    #[test]
    fn label_ten_is_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "lbl", &labels_bytes(&[3, 10, 1]));
        assert!(matches!(
            load_idx_labels(&p),
            Err(DatasetError::LabelOutOfRange { index: 1, value: 10, .. })
        ));
    }

    #[test]
    fn truncation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = images_bytes(3, 4, 4, 9);
        b.truncate(b.len() - 5);
        let p = write(dir.path(), "img", &b);
        assert!(matches!(load_idx_images(&p), Err(DatasetError::Truncated { expected: 48, found: 43, .. })));
        let p = write(dir.path(), "short", &[0, 0, 8]);
        assert!(matches!(load_idx_images(&p), Err(DatasetError::Truncated { .. })));
        let mut l = labels_bytes(&[1, 2, 3]);
        l.pop();
        let p = write(dir.path(), "lbl", &l);
        assert!(matches!(load_idx_labels(&p), Err(DatasetError::Truncated { .. })));
    }

    #[test]
    fn dimension_overflow_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = Vec::new();
        for x in [IMAGE_MAGIC, u32::MAX, u32::MAX, u32::MAX] {
            b.extend_from_slice(&x.to_be_bytes());
        }
        let p = write(dir.path(), "img", &b);
        assert!(matches!(load_idx_images(&p), Err(DatasetError::DimensionOverflow { .. })));
    }

    #[test]
    fn count_mismatch_at_pairing() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "img", &images_bytes(2, 2, 2, 0));
        let l = write(dir.path(), "lbl", &labels_bytes(&[1, 2, 3]));
        assert!(matches!(
            Dataset::load(&i, &l),
            Err(DatasetError::CountMismatch { count_images: 2, count_labels: 3 })
        ));
    }

    #[test]
    fn gzip_files_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let raw = images_bytes(2, 3, 3, 51);
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        let p = write(dir.path(), "img.gz", &gz);
        let imgs = load_idx_images(&p).unwrap();
        assert_eq!(imgs.count, 2);
        assert!(imgs.image(0).iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert_eq!(imgs.source.sha256, hex_digest(&gz));
    }

    #[test]
    fn write_and_reload_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..5 * 12).map(|k| (k * 37 % 256) as u8).collect();
        let ds = Dataset::from_raw(3, 4, pixels, vec![0, 9, 4, 4, 1]);
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        ds.write_idx(&i, &l).unwrap();
        let back = Dataset::load(&i, &l).unwrap();
        assert_eq!(back.labels(), ds.labels());
        for k in 0..ds.len() {
            assert_eq!(back.raw_image(k), ds.raw_image(k));
            assert_eq!(back.image(k), ds.image(k));
        }
        assert_eq!(back.provenance.files.len(), 2);
    }

    #[test]
    fn subset_is_deterministic_and_a_permutation_at_full_size() {
        let idx = subset_indices(100, 100, 3).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_eq!(subset_indices(1000, 10, 42).unwrap(), subset_indices(1000, 10, 42).unwrap());
        assert!(subset_indices(10, 0, 1).is_err());
        assert!(subset_indices(10, 11, 1).is_err());
    }

    #[test]
    fn subsets_of_different_seeds_overlap_as_expected() {
        // Two independent 1000-of-60000 samples share 1000 * 1000 / 60000
        // ~ 16.7 indices on average (hypergeometric), sd ~ 4.
        let a: HashSet<usize> = subset_indices(60_000, 1000, 1).unwrap().into_iter().collect();
        let b: HashSet<usize> = subset_indices(60_000, 1000, 2).unwrap().into_iter().collect();
        let common = a.intersection(&b).count();
        assert!(a != b);
        assert!((4..=35).contains(&common), "overlap {common}");
    }
}
