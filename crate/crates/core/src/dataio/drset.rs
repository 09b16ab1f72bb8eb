use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::idx::read_all;
use super::{DataError, ImageSet};

const MAGIC: &[u8; 5] = b"DRSET";
pub const DRSET_VERSION: u32 = 1;
const HEADER_LEN: usize = 5 + 4 * 5;

/// Writes the native container: `DRSET`, then little-endian u32 version,
/// n, channels, height, width, then f32 pixels and u32 labels.
pub fn save_drset(set: &ImageSet, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::BadPath {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    for v in [
        DRSET_VERSION,
        set.len() as u32,
        set.channels() as u32,
        set.height() as u32,
        set.width() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for p in set.pixels() {
        w.write_all(&p.to_le_bytes())?;
    }
    for &l in set.labels() {
        w.write_all(&(l as u32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_drset(path: &Path) -> Result<ImageSet, DataError> {
    let bytes = read_all(path)?;
    if bytes.len() < HEADER_LEN || &bytes[..5] != MAGIC {
        return Err(DataError::BadHeader(format!(
            "{} is not a DRSET file",
            path.display()
        )));
    }
    let field = |i: usize| {
        let at = 5 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
    };
    let version = field(0) as u32;
    if version != DRSET_VERSION {
        return Err(DataError::VersionMismatch {
            expected: DRSET_VERSION,
            found: version,
        });
    }
    let (n, channels, height, width) = (field(1), field(2), field(3), field(4));
    let count = n * channels * height * width;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * count + 4 * n {
        return Err(DataError::TruncatedFile(format!(
            "{} payload bytes for {n} samples of {channels}x{height}x{width}",
            body.len()
        )));
    }
    let (px, lab) = body.split_at(4 * count);
    let pixels = px
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = lab
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    ImageSet::new(channels, height, width, pixels, labels)
}
