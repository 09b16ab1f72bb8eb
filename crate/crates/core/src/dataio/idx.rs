use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::{read::GzDecoder, write::GzEncoder, Compression};

use super::{DataError, ImageSet};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Reads a whole file, transparently inflating `.gz`.
pub(crate) fn read_all(path: &Path) -> Result<Vec<u8>, DataError> {
    let file = File::open(path).map_err(|source| DataError::BadPath {
        path: path.to_path_buf(),
        source,
    })?;
    let mut buf = Vec::new();
    if is_gz(path) {
        GzDecoder::new(BufReader::new(file)).read_to_end(&mut buf)?;
    } else {
        BufReader::new(file).read_to_end(&mut buf)?;
    }
    Ok(buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::BadPath {
        path: path.to_path_buf(),
        source,
    })?;
    if is_gz(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?.flush()?;
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(bytes)?;
        w.flush()?;
    }
    Ok(())
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::TruncatedFile(format!("{what} header")))
}

/// Loads an MNIST-style IDX image/label file pair; pixels are scaled by
/// 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageSet, DataError> {
    let images = read_all(images_path)?;
    let labels = read_all(labels_path)?;

    let magic = be_u32(&images, 0, "image")?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(&images, 4, "image")? as usize;
    let rows = be_u32(&images, 8, "image")? as usize;
    let cols = be_u32(&images, 12, "image")? as usize;

    let magic = be_u32(&labels, 0, "label")?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n_labels = be_u32(&labels, 4, "label")? as usize;
    if n_labels != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }

    let payload = &images[16..];
    if payload.len() < n * rows * cols {
        return Err(DataError::TruncatedFile(format!(
            "{} pixel bytes for {n} images of {rows}x{cols}",
            payload.len()
        )));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < n {
        return Err(DataError::TruncatedFile(format!(
            "{} label bytes for {n} labels",
            label_bytes.len()
        )));
    }

    let pixels = payload[..n * rows * cols]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    let labels = label_bytes[..n].iter().map(|&b| b as usize).collect();
    ImageSet::new(1, rows, cols, pixels, labels)
}

/// Writes a single-channel set as an IDX pair, quantizing pixels to bytes.
pub fn write_idx(set: &ImageSet, images_path: &Path, labels_path: &Path) -> Result<(), DataError> {
    if set.channels() != 1 {
        return Err(DataError::Invalid(format!(
            "IDX images are single-channel, set has {}",
            set.channels()
        )));
    }
    if let Some(&l) = set.labels().iter().find(|&&l| l > u8::MAX as usize) {
        return Err(DataError::Invalid(format!("label {l} does not fit in a byte")));
    }
    let n = set.len() as u32;
    let mut img = Vec::with_capacity(16 + set.pixels().len());
    for v in [IMAGE_MAGIC, n, set.height() as u32, set.width() as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(set.pixels().iter().map(|&p| (p * 255.0).round() as u8));

    let mut lab = Vec::with_capacity(8 + set.len());
    for v in [LABEL_MAGIC, n] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(set.labels().iter().map(|&l| l as u8));

    write_all(images_path, &img)?;
    write_all(labels_path, &lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn single_white_image() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        std::fs::write(&ip, idx_bytes(IMAGE_MAGIC, &[1, 2, 2], &[255; 4])).unwrap();
        std::fs::write(&lp, idx_bytes(LABEL_MAGIC, &[1], &[3])).unwrap();
        let set = load_idx(&ip, &lp).unwrap();
        assert_eq!((set.len(), set.channels(), set.height(), set.width()), (1, 1, 2, 2));
        assert!(set.pixels().iter().all(|&p| p == 1.0));
        assert_eq!(set.labels(), &[3]);
    }

    #[test]
    fn count_mismatch_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        std::fs::write(&ip, idx_bytes(IMAGE_MAGIC, &[2, 1, 1], &[0, 0])).unwrap();
        std::fs::write(&lp, idx_bytes(LABEL_MAGIC, &[1], &[0])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DataError::CountMismatch { images: 2, labels: 1 })
        ));
        assert!(matches!(
            load_idx(&lp, &ip),
            Err(DataError::BadMagic { expected: IMAGE_MAGIC, .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        std::fs::write(&ip, idx_bytes(IMAGE_MAGIC, &[2, 2, 2], &[0; 7])).unwrap();
        std::fs::write(&lp, idx_bytes(LABEL_MAGIC, &[2], &[0, 1])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(DataError::TruncatedFile(_))));
        std::fs::write(&ip, [0u8, 0, 8]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(DataError::TruncatedFile(_))));
    }

    #[test]
    fn missing_file_is_bad_path() {
        let p = Path::new("/definitely/not/here");
        assert!(matches!(load_idx(p, p), Err(DataError::BadPath { .. })));
    }

    #[test]
    fn round_trip_is_byte_identical_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        let payload: Vec<u8> = (0..=255u8).chain(0..=255u8).take(3 * 4 * 5).collect();
        let (ip, lp) = (dir.path().join("a-idx3"), dir.path().join("a-idx1"));
        let img = idx_bytes(IMAGE_MAGIC, &[3, 4, 5], &payload);
        let lab = idx_bytes(LABEL_MAGIC, &[3], &[9, 0, 4]);
        std::fs::write(&ip, &img).unwrap();
        std::fs::write(&lp, &lab).unwrap();
        let set = load_idx(&ip, &lp).unwrap();

        let (ip2, lp2) = (dir.path().join("b-idx3"), dir.path().join("b-idx1"));
        write_idx(&set, &ip2, &lp2).unwrap();
        assert_eq!(std::fs::read(&ip2).unwrap(), img);
        assert_eq!(std::fs::read(&lp2).unwrap(), lab);

        let (ip3, lp3) = (dir.path().join("c-idx3.gz"), dir.path().join("c-idx1.gz"));
        write_idx(&set, &ip3, &lp3).unwrap();
        assert_eq!(load_idx(&ip3, &lp3).unwrap(), set);
    }
}
