#![allow(dead_code)]

use std::path::PathBuf;

use sqsglu::data::{Dataset, DatasetName, Split};

/// `$SQS_DATA_DIR`, else `<workspace>/data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("SQS_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// The split, or `None` (with a note on stderr) when the files are absent.
pub fn try_load(name: DatasetName, split: Split) -> Option<Dataset> {
    let dir = data_dir();
    if Dataset::files(&dir, name, split).is_err() {
        eprintln!("skipping: {name} IDX files not found under {} (run scripts/fetch_data.sh)", dir.display());
        return None;
    }
    Some(Dataset::load(&dir, name, split).expect("IDX files present but unreadable"))
}
