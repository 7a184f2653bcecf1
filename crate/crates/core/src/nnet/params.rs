//! Named parameter storage, gradient buffers, Adam, and checkpoints.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// Ordered set of named parameter tensors. Values are read-only during a
/// batch; gradients live in separate [`Grads`] buffers so independent
/// samples can accumulate in parallel and reduce deterministically.
#[derive(Debug, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    by_name: BTreeMap<String, usize>,
    /// Optimizer step counter (checkpointed).
    pub step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            by_name: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let id = self.values.len();
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Kaiming-style uniform init for a [rows, cols] weight.
    pub fn add_weight(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * bound)
            .collect();
        self.add(name, Tensor::from_vec(&[rows, cols], data)?)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|t| t.all_finite())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient accumulator aligned with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Grads {
    tensors: Vec<Tensor>,
    populated: bool,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            tensors: params
                .values
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
            populated: false,
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    /// Mutable gradient buffer; marks the set populated.
    pub fn acc(&mut self, id: ParamId) -> &mut Tensor {
        self.populated = true;
        &mut self.tensors[id.0]
    }

    pub fn is_populated(&self) -> bool {
        self.populated
    }

    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.data.fill(0.0);
        }
        self.populated = false;
    }

    /// Element-wise sum; used for the deterministic in-order batch reduce.
    pub fn add_from(&mut self, other: &Grads) {
        debug_assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
        self.populated |= other.populated;
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.scale(s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment state for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params
                .values
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
            v: params
                .values
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
        }
    }
}

/// One Adam update with decoupled weight decay. Errors when no backward
/// pass populated the gradients.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Grads,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !grads.is_populated() {
        return Err(Error::InvalidState(
            "adam_step called without populated gradients".into(),
        ));
    }
    params.step += 1;
    let t = params.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for ((value, grad), (m, v)) in params
        .values
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..value.data.len() {
            let g = grad.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            value.data[i] -=
                cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * value.data[i]);
        }
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TGCKPT01";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    step: u64,
    dtype: String,
    entries: Vec<CheckpointEntry>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
}

/// Writes all parameters as versioned magic + JSON header + flat LE f64s.
pub fn save_checkpoint(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let header = CheckpointHeader {
        version: 1,
        step: params.step,
        dtype: "f64".to_string(),
        entries: params
            .names
            .iter()
            .zip(&params.values)
            .map(|(n, t)| CheckpointEntry {
                name: n.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for t in &params.values {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint into a ParamSet with identical names and shapes.
pub fn load_checkpoint(params: &mut ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse("bad checkpoint magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header_json).map_err(|e| Error::Parse(e.to_string()))?;
    if header.dtype != "f64" {
        return Err(Error::Parse(format!("unsupported dtype {}", header.dtype)));
    }
    if header.entries.len() != params.len() {
        return Err(Error::Parse(format!(
            "checkpoint has {} tensors, model has {}",
            header.entries.len(),
            params.len()
        )));
    }
    for (entry, (name, value)) in header
        .entries
        .iter()
        .zip(params.names.iter().zip(params.values.iter_mut()))
    {
        if &entry.name != name || entry.shape != value.shape {
            return Err(Error::Parse(format!(
                "checkpoint tensor {:?} {:?} does not match model {:?} {:?}",
                entry.name, entry.shape, name, value.shape
            )));
        }
        let mut buf = [0u8; 8];
        for v in &mut value.data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    params.step = header.step;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(ps.add("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut ps = ParamSet::new();
        let id = ps
            .add("w", Tensor::from_vec(&[2], vec![0.5, -0.25]).unwrap())
            .unwrap();
        let mut grads = Grads::zeros_like(&ps);
        grads.acc(id); // populate with zeros
        let mut state = AdamState::new(&ps);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        adam_step(&mut ps, &grads, &mut state, &cfg).unwrap();
        assert_eq!(ps.value(id).data, vec![0.5, -0.25]);
    }

    #[test]
    fn adam_first_step_is_minus_lr() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::from_vec(&[1], vec![1.0]).unwrap()).unwrap();
        let mut grads = Grads::zeros_like(&ps);
        grads.acc(id).data[0] = 1.0;
        let mut state = AdamState::new(&ps);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        adam_step(&mut ps, &grads, &mut state, &cfg).unwrap();
        let delta = ps.value(id).data[0] - 1.0;
        assert!((delta + 0.1).abs() < 1e-6, "first-step delta {delta}");
    }

    #[test]
    fn weight_decay_shrinks_params() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::from_vec(&[1], vec![2.0]).unwrap()).unwrap();
        let mut grads = Grads::zeros_like(&ps);
        grads.acc(id); // zero gradient
        let mut state = AdamState::new(&ps);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.05,
            ..Default::default()
        };
        adam_step(&mut ps, &grads, &mut state, &cfg).unwrap();
        let w = ps.value(id).data[0];
        assert!(w < 2.0 && w > 1.9);
    }

    #[test]
    fn adam_requires_gradients() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::zeros(&[1])).unwrap();
        let grads = Grads::zeros_like(&ps);
        let mut state = AdamState::new(&ps);
        let err = adam_step(&mut ps, &grads, &mut state, &AdamConfig::default());
        assert!(matches!(err, Err(Error::InvalidState(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = rng_from_seed(4);
        let mut ps = ParamSet::new();
        ps.add_weight("a", 3, 4, &mut rng).unwrap();
        ps.add_zeros("b", &[5]).unwrap();
        ps.step = 42;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ps, &path).unwrap();

        let mut rng2 = rng_from_seed(5);
        let mut restored = ParamSet::new();
        restored.add_weight("a", 3, 4, &mut rng2).unwrap();
        restored.add_zeros("b", &[5]).unwrap();
        load_checkpoint(&mut restored, &path).unwrap();
        assert_eq!(restored.step, 42);
        assert_eq!(restored.value(restored.id_of("a").unwrap()).data,
                   ps.value(ps.id_of("a").unwrap()).data);
    }

    #[test]
    fn checkpoint_shape_mismatch_rejected() {
        let mut rng = rng_from_seed(6);
        let mut ps = ParamSet::new();
        ps.add_weight("a", 3, 4, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ps, &path).unwrap();
        let mut other = ParamSet::new();
        other.add_weight("a", 4, 4, &mut rng).unwrap();
        assert!(load_checkpoint(&mut other, &path).is_err());
    }
}
