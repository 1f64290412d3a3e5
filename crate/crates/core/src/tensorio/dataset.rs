use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{read_tensor, Tensor};
use crate::error::{Error, Result};

/// Labeled images: `images` is f32 `[N, ...sample dims]`, one label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<i32>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<i32>) -> Result<Self> {
        if images.as_f32().is_none() || images.rank() < 2 {
            return Err(Error::InvalidTensor(
                "dataset images must be f32 with a leading sample dimension".into(),
            ));
        }
        if images.dims()[0] != labels.len() {
            return Err(Error::InvalidTensor(format!(
                "{} images but {} labels",
                images.dims()[0],
                labels.len()
            )));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_dims(&self) -> &[usize] {
        &self.images.dims()[1..]
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n: usize = self.sample_dims().iter().product();
        &self.images.as_f32().unwrap()[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> i32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.clamp(1, self.len());
        let per: usize = self.sample_dims().iter().product();
        let mut dims = self.images.dims().to_vec();
        dims[0] = n;
        let data = self.images.as_f32().unwrap()[..n * per].to_vec();
        Dataset {
            images: Tensor::from_f32(dims, data).expect("sub-slice of a valid tensor"),
            labels: self.labels[..n].to_vec(),
        }
    }
}

#[derive(Deserialize)]
struct DatasetManifest {
    images: String,
    labels: String,
}

/// Loads `{"images": path, "labels": path}`; labels may be i32 or u8 tensors.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let images = read_tensor(base.join(&m.images))?;
    let labels_t = read_tensor(base.join(&m.labels))?;
    let labels = match labels_t.data() {
        super::TensorData::I32(v) => v.clone(),
        super::TensorData::U8(v) => v.iter().map(|&x| x as i32).collect(),
        super::TensorData::F32(_) => {
            return Err(Error::InvalidTensor("labels must be integer typed".into()))
        }
    };
    Dataset::new(images, labels)
}
