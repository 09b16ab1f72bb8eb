use std::path::Path;

use super::idx::read_all;
use super::{DataError, ImageSet};

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;
const RECORD: usize = 1 + PIXELS;

/// Loads and concatenates CIFAR-10 binary batches: 3073-byte records of one
/// label byte followed by planar R, G, B bytes.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P]) -> Result<ImageSet, DataError> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = read_all(path)?;
        if bytes.len() % RECORD != 0 {
            return Err(DataError::TruncatedFile(format!(
                "{}: {} bytes is not a whole number of {RECORD}-byte records",
                path.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(RECORD) {
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    ImageSet::new(3, SIDE, SIDE, pixels, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_black_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("batch.bin");
        let mut rec = vec![0u8; RECORD];
        rec[0] = 7;
        std::fs::write(&p, &rec).unwrap();
        let set = load_cifar_binary(&[&p]).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.labels(), &[7]);
        assert_eq!((set.channels(), set.height(), set.width()), (3, 32, 32));
        assert!(set.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn planes_are_read_in_rgb_order_across_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![1u8];
        rec.extend(std::iter::repeat_n(255u8, 1024));
        rec.extend(std::iter::repeat_n(0u8, 2048));
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        std::fs::write(&a, &rec).unwrap();
        std::fs::write(&b, [rec.clone(), rec].concat()).unwrap();
        let set = load_cifar_binary(&[a, b]).unwrap();
        assert_eq!(set.len(), 3);
        let red = set.channel(0).unwrap();
        assert!(red.plane(2).iter().all(|&v| v == 1.0));
        assert!(set.channel(1).unwrap().plane(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_file_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.bin");
        std::fs::write(&p, vec![0u8; 3072]).unwrap();
        assert!(matches!(load_cifar_binary(&[p]), Err(DataError::TruncatedFile(_))));
    }
}
