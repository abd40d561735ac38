use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{NclmError, Result};
use crate::util::{push_f32s, ByteReader};

/// Named trainable tensors in a fixed registration order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    vars: Vec<Var>,
    index: HashMap<String, usize>,
    dtype: DType,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            names: Vec::new(),
            vars: Vec::new(),
            index: HashMap::new(),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn push(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.vars.len());
        self.names.push(name.to_string());
        self.vars.push(Var::from_tensor(&tensor.to_dtype(self.dtype)?)?);
        Ok(())
    }

    pub fn add_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.push(name, Tensor::from_vec(values, shape, &Device::Cpu)?)
    }

    pub fn add_const(&mut self, name: &str, shape: &[usize], value: f64) -> Result<()> {
        let n: usize = shape.iter().product();
        self.push(name, Tensor::from_vec(vec![value; n], shape, &Device::Cpu)?)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.vars[self.index[name]].as_tensor()
    }

    pub fn var(&self, name: &str) -> &Var {
        &self.vars[self.index[name]]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.iter().map(|v| v.elem_count()).sum()
    }

    /// Flat f64 copy of one parameter.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name).flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)
    }

    pub fn set_values(&self, name: &str, values: &[f64]) -> Result<()> {
        let var = self.var(name);
        let t = Tensor::from_vec(values.to_vec(), var.shape(), &Device::Cpu)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }

    /// Serialized as `u32 json_len | json [(name, shape)] | f32 values`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entries: Vec<Entry> = self
            .names
            .iter()
            .zip(&self.vars)
            .map(|(n, v)| Entry {
                name: n.clone(),
                shape: v.dims().to_vec(),
            })
            .collect();
        let json = serde_json::to_vec(&entries).expect("entries serialize");
        let mut out = Vec::new();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.vars {
            let values: Vec<f32> = v.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
            push_f32s(&mut out, &values);
        }
        Ok(out)
    }

    /// Loads values into an existing store with identical names and shapes.
    pub fn load_bytes(&self, bytes: &[u8]) -> Result<()> {
        let corrupt = |e: std::io::Error| NclmError::Corrupt(e.to_string());
        let mut r = ByteReader::new(bytes);
        let n = r.u32().map_err(corrupt)? as usize;
        let entries: Vec<Entry> = serde_json::from_slice(r.take(n).map_err(corrupt)?)
            .map_err(|e| NclmError::Corrupt(e.to_string()))?;
        if entries.len() != self.vars.len() {
            return Err(NclmError::Corrupt("parameter count mismatch".into()));
        }
        for (entry, (name, var)) in entries.iter().zip(self.names.iter().zip(&self.vars)) {
            if &entry.name != name || entry.shape != var.dims() {
                return Err(NclmError::Corrupt(format!("parameter {} does not match", entry.name)));
            }
            let values = r.f32_vec(var.elem_count()).map_err(corrupt)?;
            let t = Tensor::from_vec(values, var.shape(), &Device::Cpu)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        if r.remaining() != 0 {
            return Err(NclmError::Corrupt("trailing parameter bytes".into()));
        }
        Ok(())
    }

    /// Deep copy with fresh storage.
    pub fn deep_clone(&self) -> Result<Self> {
        let mut out = Self::new(self.dtype);
        for (name, var) in self.names.iter().zip(&self.vars) {
            out.push(name, var.as_tensor().copy()?)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ParamStore::new(DType::F32);
        a.add_normal("w", &[3, 4], 1.0, &mut rng).unwrap();
        a.add_const("b", &[4], 0.5).unwrap();
        let b = a.deep_clone().unwrap();
        b.set_values("b", &[0.0; 4]).unwrap();
        assert_ne!(a.values("b").unwrap(), b.values("b").unwrap());
        b.load_bytes(&a.to_bytes().unwrap()).unwrap();
        assert_eq!(a.values("w").unwrap(), b.values("w").unwrap());
        assert_eq!(a.values("b").unwrap(), vec![0.5; 4]);
        assert_eq!(a.num_parameters(), 16);
    }
}
