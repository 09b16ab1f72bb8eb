use std::env;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use drdetect::dataio::{load_cifar_binary, load_drset, load_idx, ImageSet};

/// Environment variable overriding the directory behind the bare `mnist`
/// dataset name.
pub const MNIST_DIR_VAR: &str = "DRDETECT_MNIST_DIR";
const DEFAULT_MNIST_DIR: &str = "data/mnist";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Dataset argument forms: `mnist`, `mnist:<dir>`, `cifar:<dir>`, or the
/// path of a DRSET file. The split only applies to the named datasets.
pub fn load(spec: &str, split: Split, limit: Option<usize>) -> anyhow::Result<ImageSet> {
    let set = if spec == "mnist" {
        let dir = env::var_os(MNIST_DIR_VAR).map_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR), PathBuf::from);
        load_mnist(&dir, split)?
    } else if let Some(dir) = spec.strip_prefix("mnist:") {
        load_mnist(Path::new(dir), split)?
    } else if let Some(dir) = spec.strip_prefix("cifar:") {
        load_cifar(Path::new(dir), split)?
    } else {
        load_drset(Path::new(spec)).with_context(|| format!("cannot load dataset {spec}"))?
    };
    match limit {
        Some(0) => bail!("--limit must be positive"),
        Some(n) => Ok(set.head(n)),
        None => Ok(set),
    }
}

/// True for the named datasets that have train and test splits.
pub fn has_splits(spec: &str) -> bool {
    spec == "mnist" || spec.starts_with("mnist:") || spec.starts_with("cifar:")
}

fn existing(dir: &Path, name: &str) -> PathBuf {
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        gz
    } else if dir.join(name).exists() {
        dir.join(name)
    } else {
        gz
    }
}

fn load_mnist(dir: &Path, split: Split) -> anyhow::Result<ImageSet> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = existing(dir, &format!("{prefix}-images-idx3-ubyte"));
    let labels = existing(dir, &format!("{prefix}-labels-idx1-ubyte"));
    load_idx(&images, &labels).with_context(|| {
        format!(
            "cannot load MNIST from {} (run scripts/fetch-mnist.sh, or set {MNIST_DIR_VAR})",
            dir.display()
        )
    })
}

fn load_cifar(dir: &Path, split: Split) -> anyhow::Result<ImageSet> {
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    load_cifar_binary(&files).with_context(|| format!("cannot load CIFAR-10 from {}", dir.display()))
}
