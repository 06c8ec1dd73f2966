//! MNIST-family data: IDX containers, normalization, batching, input noise.
//!
//! Pixels are normalized as `u8 / 255` with no mean-centering, so exported
//! eigenvectors live in raw pixel space. Training noise is added after
//! normalization and is not clipped.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Decompress if the bytes start with the gzip magic, otherwise borrow them.
fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.len() >= 2 && bytes[..2] == GZIP_MAGIC {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip: {e}")))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset,
            msg: "truncated IDX header".into(),
        })
}

/// Raw images from an IDX3 file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` bytes, row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

/// Parse an IDX image file (magic 2051). Gzipped input is accepted.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let bytes = maybe_gunzip(bytes)?;
    let magic = be_u32(&bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("IDX image magic {magic}, expected {IMAGE_MAGIC}")));
    }
    let count = be_u32(&bytes, 4)? as usize;
    let rows = be_u32(&bytes, 8)? as usize;
    let cols = be_u32(&bytes, 12)? as usize;
    let payload = count * rows * cols;
    let have = bytes.len() - 16;
    if have != payload {
        return Err(Error::Parse {
            offset: 16 + have.min(payload),
            msg: format!("IDX image payload is {have} bytes, header says {payload}"),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

/// Parse an IDX label file (magic 2049); every label must be ≤ 9.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let bytes = maybe_gunzip(bytes)?;
    let magic = be_u32(&bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("IDX label magic {magic}, expected {LABEL_MAGIC}")));
    }
    let count = be_u32(&bytes, 4)? as usize;
    let have = bytes.len() - 8;
    if have != count {
        return Err(Error::Parse {
            offset: 8 + have.min(count),
            msg: format!("IDX label payload is {have} bytes, header says {count}"),
        });
    }
    let labels = bytes[8..].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Format(format!("label {} at index {pos} exceeds 9", labels[pos])));
    }
    Ok(labels)
}

pub fn serialize_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn serialize_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Mnist,
    Fmnist,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Fmnist => "fmnist",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetName::Mnist),
            "fmnist" | "fashion" | "fashion-mnist" | "fashion_mnist" => Ok(DatasetName::Fmnist),
            other => Err(Error::Parameter(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Normalized images and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: DatasetName,
    pub rows: usize,
    pub cols: usize,
    /// `count × rows·cols`, each pixel in `[0, 1]`.
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn from_idx(name: DatasetName, images: &IdxImages, labels: Vec<u8>) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            )));
        }
        Ok(Dataset {
            name,
            rows: images.rows,
            cols: images.cols,
            images: images.pixels.iter().map(|&p| p as f32 / 255.0).collect(),
            labels,
        })
    }

    /// Locate `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` under
    /// `dir/<name>/` or directly in `dir`.
    pub fn files(dir: &Path, name: DatasetName, split: Split) -> Result<(PathBuf, PathBuf)> {
        let find = |stem: String| -> Result<PathBuf> {
            for base in [dir.join(name.as_str()), dir.to_path_buf()] {
                for candidate in [base.join(&stem), base.join(format!("{stem}.gz"))] {
                    if candidate.is_file() {
                        return Ok(candidate);
                    }
                }
            }
            Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{stem} not found under {}", dir.display()),
            )))
        };
        Ok((
            find(format!("{}-images-idx3-ubyte", split.prefix()))?,
            find(format!("{}-labels-idx1-ubyte", split.prefix()))?,
        ))
    }

    pub fn load(dir: impl AsRef<Path>, name: DatasetName, split: Split) -> Result<Self> {
        let (img, lab) = Self::files(dir.as_ref(), name, split)?;
        let images = parse_idx_images(&std::fs::read(img)?)?;
        let labels = parse_idx_labels(&std::fs::read(lab)?)?;
        Dataset::from_idx(name, &images, labels)
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

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.pixels_per_image();
        &self.images[i * n..(i + 1) * n]
    }

    /// The first `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            name: self.name,
            rows: self.rows,
            cols: self.cols,
            images: self.images[..n * self.pixels_per_image()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Gather the given samples into a batch.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let n = self.pixels_per_image();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Batch {
            indices: indices.to_vec(),
            x: Tensor::new(vec![indices.len(), n], data).expect("batch shape"),
            labels: indices.iter().map(|&i| self.labels[i] as usize).collect(),
        }
    }
}

/// A minibatch: `x` is `[len × pixels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub x: Tensor,
    pub labels: Vec<usize>,
}

/// Index groups for one epoch: a permutation of `0..count` keyed by
/// `(seed, epoch)`, cut into `batch_size` chunks with the remainder kept.
pub fn epoch_order(count: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be ≥ 1".into()));
    }
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Shuffled batches of `ds` for one epoch.
pub fn make_batches(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<impl Iterator<Item = Batch> + '_> {
    let order = epoch_order(ds.len(), batch_size, seed, epoch)?;
    Ok(order.into_iter().map(move |idx| ds.batch(&idx)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Add i.i.d. `N(0, std²)` to every pixel in training mode; evaluation data is
/// left untouched.
pub fn apply_input_noise<R: Rng + ?Sized>(batch: &mut Batch, std: f32, rng: &mut R, mode: Mode) -> Result<()> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::Config(format!("noise std must be ≥ 0, got {std}")));
    }
    if mode == Mode::Eval || std == 0.0 {
        return Ok(());
    }
    for v in batch.x.data_mut() {
        let z: f32 = rng.sample(StandardNormal);
        *v += std * z;
    }
    Ok(())
}
