//! Parameter checkpoint: one JSON header line, then the tensors as
//! little-endian f64 in header order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GcnParams, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    meta: serde_json::Value,
    tensors: Vec<TensorHeader>,
}

const FORMAT: &str = "cfgd-ckpt-v1";

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.push(NamedTensor { name: name.into(), shape, data });
    }

    pub fn push_gcn(&mut self, prefix: &str, p: &GcnParams) {
        self.push(format!("{prefix}.w1"), vec![p.w1.rows(), p.w1.cols()], p.w1.as_slice().to_vec());
        self.push(format!("{prefix}.b1"), vec![p.b1.len()], p.b1.clone());
        self.push(format!("{prefix}.w2"), vec![p.w2.rows(), p.w2.cols()], p.w2.as_slice().to_vec());
        self.push(format!("{prefix}.b2"), vec![p.b2.len()], p.b2.clone());
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn gcn(&self, prefix: &str) -> Result<GcnParams> {
        let matrix = |t: &NamedTensor| -> Result<DenseMatrix> {
            match t.shape.as_slice() {
                [r, c] => DenseMatrix::from_vec(*r, *c, t.data.clone()),
                _ => Err(Error::shape("checkpoint", format!("{} is not a matrix", t.name))),
            }
        };
        let [w1, b1, w2, b2] = TENSOR_NAMES.map(|n| self.get(&format!("{prefix}.{n}")));
        let (w1, b1, w2, b2) = (matrix(w1?)?, b1?.data.clone(), matrix(w2?)?, b2?.data.clone());
        if w1.cols() != b1.len() || w2.rows() != w1.cols() || w2.cols() != b2.len() {
            return Err(Error::shape("checkpoint", format!("inconsistent shapes for `{prefix}`")));
        }
        Ok(GcnParams { w1, b1, w2, b2 })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: FORMAT.into(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorHeader { name: t.name.clone(), shape: t.shape.clone() })
                .collect(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::shape("checkpoint", format!("{} shape {:?}", t.name, t.shape)));
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut line = Vec::new();
        reader
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::io("<checkpoint>", e))?;
        let header: Header = serde_json::from_slice(&line)?;
        if header.format != FORMAT {
            return Err(Error::invalid(format!("unknown checkpoint format `{}`", header.format)));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut buf = [0u8; 8];
        for th in header.tensors {
            let len: usize = th.shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                reader.read_exact(&mut buf).map_err(|e| Error::io("<checkpoint>", e))?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push(NamedTensor { name: th.name, shape: th.shape, data });
        }
        let mut rest = Vec::new();
        reader.read_to_end(&mut rest).map_err(|e| Error::io("<checkpoint>", e))?;
        if !rest.is_empty() {
            return Err(Error::invalid(format!("{} trailing bytes in checkpoint", rest.len())));
        }
        Ok(Self { meta: header.meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }
}
