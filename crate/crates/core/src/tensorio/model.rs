use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_tensor, write_tensor, Tensor};
use crate::elpbsd::{write_quantized, QuantizedTensor, CQNT_MAGIC};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
    Relu,
    Maxpool,
}

impl LayerKind {
    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Fc)
    }
}

/// One manifest entry. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDef {
    pub name: String,
    pub kind: LayerKind,
    #[serde(rename = "weights", default, skip_serializing_if = "Option::is_none")]
    pub weights_ref: Option<PathBuf>,
    #[serde(rename = "bias", default, skip_serializing_if = "Option::is_none")]
    pub bias_ref: Option<PathBuf>,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
}

fn one() -> usize {
    1
}

impl LayerDef {
    fn validate_refs(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Manifest(format!("layer `{}`: {msg}", self.name)));
        if self.kind.has_weights() && self.weights_ref.is_none() {
            return bad("conv/fc layers need a weights file");
        }
        if !self.kind.has_weights() && (self.weights_ref.is_some() || self.bias_ref.is_some()) {
            return bad("relu/maxpool layers take no weights or bias");
        }
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Manifest(format!("layer `{}`: {msg}", self.name)));
        if self.stride == 0 {
            return bad("stride must be positive");
        }
        match (self.kind, self.pool_size) {
            (LayerKind::Maxpool, None | Some(0)) => bad("maxpool needs a positive pool_size"),
            (LayerKind::Maxpool, _) | (_, None) => Ok(()),
            (_, Some(_)) => bad("pool_size is only valid on maxpool"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Float(Tensor),
    Quantized(QuantizedTensor),
}

impl Weights {
    pub fn dims(&self) -> &[usize] {
        match self {
            Weights::Float(t) => t.dims(),
            Weights::Quantized(q) => q.dims(),
        }
    }

    /// Real-valued weights; quantized weights are decoded.
    pub fn values(&self) -> Vec<f64> {
        match self {
            Weights::Float(t) => t.to_f64_vec(),
            Weights::Quantized(q) => q.decode_all(),
        }
    }

    pub fn as_quantized(&self) -> Option<&QuantizedTensor> {
        match self {
            Weights::Quantized(q) => Some(q),
            Weights::Float(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub def: LayerDef,
    pub weights: Option<Weights>,
    pub bias: Option<Tensor>,
}

impl Layer {
    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn kind(&self) -> LayerKind {
        self.def.kind
    }

    pub fn bias_values(&self) -> Option<&[f32]> {
        self.bias.as_ref().and_then(|b| b.as_f32())
    }

    /// Output shape given an input shape, validating weights against it.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |detail: String| Error::ShapeMismatch {
            layer: self.def.name.clone(),
            detail,
        };
        match self.def.kind {
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Maxpool => {
                let &[c, h, w] = input else {
                    return Err(mismatch(format!("maxpool needs [C,H,W] input, got {input:?}")));
                };
                let p = self.def.pool_size.unwrap_or(1);
                if h < p || w < p {
                    return Err(mismatch(format!("pool {p} larger than {h}x{w} input")));
                }
                let s = self.def.stride;
                Ok(vec![c, (h - p) / s + 1, (w - p) / s + 1])
            }
            LayerKind::Conv => {
                let wd = self.weight_dims()?;
                let &[c, h, w] = input else {
                    return Err(mismatch(format!("conv needs [C,H,W] input, got {input:?}")));
                };
                let &[o, i, kh, kw] = wd else {
                    return Err(mismatch(format!("conv weights must be rank 4, got {wd:?}")));
                };
                if i != c {
                    return Err(mismatch(format!(
                        "weights expect {i} input channels but producer gives {c}"
                    )));
                }
                let (hp, wp) = (h + 2 * self.def.pad, w + 2 * self.def.pad);
                if hp < kh || wp < kw {
                    return Err(mismatch(format!("kernel {kh}x{kw} larger than padded input")));
                }
                self.check_bias(o)?;
                let s = self.def.stride;
                Ok(vec![o, (hp - kh) / s + 1, (wp - kw) / s + 1])
            }
            LayerKind::Fc => {
                let wd = self.weight_dims()?;
                let &[o, i] = wd else {
                    return Err(mismatch(format!("fc weights must be rank 2, got {wd:?}")));
                };
                let n: usize = input.iter().product();
                if i != n {
                    return Err(mismatch(format!("weights expect {i} inputs but producer gives {n}")));
                }
                self.check_bias(o)?;
                Ok(vec![o])
            }
        }
    }

    fn weight_dims(&self) -> Result<&[usize]> {
        self.weights
            .as_ref()
            .map(Weights::dims)
            .ok_or_else(|| Error::Manifest(format!("layer `{}` has no weights", self.def.name)))
    }

    fn check_bias(&self, out: usize) -> Result<()> {
        match &self.bias {
            Some(b) if b.as_f32().is_none() || b.len() != out => Err(Error::ShapeMismatch {
                layer: self.def.name.clone(),
                detail: format!("bias must be {out} f32 values, got {:?} {:?}", b.dtype(), b.dims()),
            }),
            _ => Ok(()),
        }
    }
}

/// A feed-forward CNN. Immutable once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub input_dims: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn new(input_dims: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let m = Model { input_dims, layers };
        m.validate()?;
        Ok(m)
    }

    /// Input shape of every layer followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_dims.clone()];
        for layer in &self.layers {
            let next = layer.output_dims(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        super::check_dims(&self.input_dims)?;
        for l in &self.layers {
            l.def.validate()?;
            if l.kind().has_weights() != l.weights.is_some() || (!l.kind().has_weights() && l.bias.is_some()) {
                return Err(Error::Manifest(format!(
                    "layer `{}`: conv/fc layers need weights, relu/maxpool take none",
                    l.name()
                )));
            }
        }
        self.shapes().map(|_| ())
    }

    /// Indices of conv/fc layers in execution order.
    pub fn weight_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].kind().has_weights())
            .collect()
    }

    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.shapes()?.last().unwrap().iter().product())
    }

    pub fn is_quantized(&self) -> bool {
        self.layers
            .iter()
            .filter_map(|l| l.weights.as_ref())
            .all(|w| matches!(w, Weights::Quantized(_)))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    input_dims: Vec<usize>,
    layers: Vec<LayerDef>,
}

fn load_weights(path: &Path) -> Result<Weights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(CQNT_MAGIC) {
        Ok(Weights::Quantized(QuantizedTensor::from_bytes(&bytes)?))
    } else {
        Ok(Weights::Float(Tensor::from_bytes(&bytes)?))
    }
}

/// Loads a JSON manifest and every tensor it references. Weight files may
/// be plain CTNS tensors or CQNT quantized tensors.
pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<Model> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for def in manifest.layers {
        def.validate_refs()?;
        let weights = def
            .weights_ref
            .as_ref()
            .map(|p| load_weights(&base.join(p)))
            .transpose()?;
        let bias = def
            .bias_ref
            .as_ref()
            .map(|p| read_tensor(base.join(p)))
            .transpose()?;
        layers.push(Layer { def, weights, bias });
    }
    Model::new(manifest.input_dims, layers)
}

/// Writes `model` into `dir` as `manifest_name` plus one file per tensor.
/// Float weights go to `<layer>.w.ctns`, quantized ones to `<layer>.w.cqnt`.
pub fn write_model(model: &Model, dir: impl AsRef<Path>, manifest_name: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut defs = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let mut def = layer.def.clone();
        def.weights_ref = match &layer.weights {
            Some(Weights::Float(t)) => {
                let name = format!("{}.w.ctns", def.name);
                write_tensor(t, dir.join(&name))?;
                Some(name.into())
            }
            Some(Weights::Quantized(q)) => {
                let name = format!("{}.w.cqnt", def.name);
                write_quantized(q, dir.join(&name))?;
                Some(name.into())
            }
            None => None,
        };
        def.bias_ref = match &layer.bias {
            Some(b) => {
                let name = format!("{}.b.ctns", def.name);
                write_tensor(b, dir.join(&name))?;
                Some(name.into())
            }
            None => None,
        };
        defs.push(def);
    }
    let manifest = Manifest {
        input_dims: model.input_dims.clone(),
        layers: defs,
    };
    let path = dir.join(manifest_name);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
