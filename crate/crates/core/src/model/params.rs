use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

pub const PARAM_MAGIC: &[u8; 8] = b"MIXF0001";

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.d_model;
    let mut out = vec![(
        "embed.token".to_string(),
        vec![config.vocab_size, d],
        Init::Xavier,
    )];
    for l in 0..config.n_layers {
        let p = |s: &str| format!("layer{l}.{s}");
        for proj in ["q", "k", "v", "o"] {
            out.push((p(&format!("attn.w{proj}")), vec![d, d], Init::Xavier));
            out.push((p(&format!("attn.b{proj}")), vec![d], Init::Zeros));
        }
        out.push((p("ln1.gain"), vec![d], Init::Ones));
        out.push((p("ln1.bias"), vec![d], Init::Zeros));
        out.push((p("ffn.w1"), vec![d, config.d_ff], Init::Xavier));
        out.push((p("ffn.b1"), vec![config.d_ff], Init::Zeros));
        out.push((p("ffn.w2"), vec![config.d_ff, d], Init::Xavier));
        out.push((p("ffn.b2"), vec![d], Init::Zeros));
        out.push((p("ln2.gain"), vec![d], Init::Ones));
        out.push((p("ln2.bias"), vec![d], Init::Zeros));
    }
    out.push(("pooler.weight".into(), vec![d, d], Init::Xavier));
    out.push(("pooler.bias".into(), vec![d], Init::Zeros));
    let c = config.head.output_width();
    out.push(("head.weight".into(), vec![d, c], Init::Xavier));
    out.push(("head.bias".into(), vec![c], Init::Zeros));
    out
}

/// Named trainable tensors in a fixed order. The same type holds gradients
/// and optimizer moments, so every slot mirrors a parameter by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    tensors: IndexMap<String, Tensor>,
}

impl Parameters {
    pub fn from_map(tensors: IndexMap<String, Tensor>) -> Self {
        Parameters { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::validation(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::validation(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Parameters {
        Parameters {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.zeros_like()))
                .collect(),
        }
    }

    /// Adds `delta` into the named slot.
    pub fn accumulate(&mut self, name: &str, delta: &Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != delta.shape() {
            return Err(Error::Shape {
                op: "accumulate",
                left: slot.shape().to_vec(),
                right: delta.shape().to_vec(),
            });
        }
        slot.add_assign(delta);
        Ok(())
    }

    /// Tensors in parameter order, for routines that work on plain lists.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.tensors.values().cloned().collect()
    }

    /// Same names, new values (in parameter order, shapes must match).
    pub fn with_tensors(&self, values: &[Tensor]) -> Result<Parameters> {
        if values.len() != self.tensors.len() {
            return Err(Error::validation(format!(
                "expected {} tensors, got {}",
                self.tensors.len(),
                values.len()
            )));
        }
        let mut tensors = IndexMap::with_capacity(values.len());
        for ((name, old), new) in self.tensors.iter().zip(values) {
            if old.shape() != new.shape() {
                return Err(Error::Shape {
                    op: "with_tensors",
                    left: old.shape().to_vec(),
                    right: new.shape().to_vec(),
                });
            }
            tensors.insert(name.clone(), new.clone());
        }
        Ok(Parameters { tensors })
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    /// First tensor containing NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(k, _)| k.as_str())
    }

    pub fn bit_eq(&self, other: &Parameters) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }

    /// Checks names and shapes against what `config` expects.
    pub fn check_compatible(&self, config: &ModelConfig) -> Result<()> {
        let expected = layout(config);
        for (name, shape, _) in &expected {
            match self.tensors.get(name) {
                None => {
                    return Err(Error::validation(format!(
                        "parameter '{name}' missing from parameter set"
                    )))
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::validation(format!(
                        "parameter '{name}': expected shape {shape:?}, found {:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self
            .tensors
            .keys()
            .find(|k| !expected.iter().any(|(n, _, _)| n == *k))
        {
            return Err(Error::validation(format!(
                "unexpected parameter '{extra}' for this model configuration"
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases, unit layer-norm gains, drawn from a
/// stream seeded by `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<Parameters> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "init", 0);
    let mut tensors = IndexMap::new();
    for (name, shape, init) in layout(config) {
        let t = match init {
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::full(&shape, 1.0),
            Init::Xavier => {
                let (fan_in, fan_out) = (shape[0], shape[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n = fan_in * fan_out;
                Tensor::new(shape, (0..n).map(|_| rng.random_range(-a..a)).collect())?
            }
        };
        tensors.insert(name, t);
    }
    Ok(Parameters { tensors })
}

/// Writes `MIXF0001`, a little-endian u64 header length, a JSON header
/// `{name: shape}` and the tensor values as little-endian f64 in header order.
pub fn save_params(params: &Parameters, path: &Path) -> Result<()> {
    let header: IndexMap<&str, &[usize]> = params.iter().map(|(k, t)| (k, t.shape())).collect();
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + header.len() + params.num_values() * 8);
    buf.extend_from_slice(PARAM_MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, t) in params.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Parameters> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}

fn decode_params(bytes: &[u8]) -> Result<Parameters> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "file too short ({} bytes) to hold magic and header length",
            bytes.len()
        )));
    }
    if &bytes[..8] != PARAM_MAGIC {
        return Err(Error::Format("bad magic, expected MIXF0001".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = 16usize
        .checked_add(usize::try_from(header_len).unwrap_or(usize::MAX))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            Error::Format(format!("header length {header_len} runs past end of file"))
        })?;
    let header: IndexMap<String, Vec<usize>> = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;

    let mut offset = header_end;
    let mut tensors = IndexMap::with_capacity(header.len());
    for (name, shape) in header {
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|_| !shape.is_empty() && shape.iter().all(|&d| d > 0))
            .ok_or_else(|| Error::Format(format!("tensor '{name}' has invalid shape {shape:?}")))?;
        let need = count.checked_mul(8).unwrap_or(usize::MAX);
        let remaining = bytes.len() - offset;
        if need > remaining {
            return Err(Error::Format(format!(
                "tensor '{name}' with shape {shape:?} needs {need} bytes but only {remaining} remain"
            )));
        }
        let data = bytes[offset..offset + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += need;
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    if offset != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - offset
        )));
    }
    Ok(Parameters { tensors })
}
