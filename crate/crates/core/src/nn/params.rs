use std::collections::BTreeMap;
use std::path::Path;

use crate::tensor::{GradientMap, Graph, Tensor, Var};
use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"KGANP1";

/// Gradients keyed by parameter name.
pub type NamedGrads = BTreeMap<String, Tensor>;

/// Named parameter tensors of one network.
///
/// Binary layout (all integers little-endian):
///
/// ```text
/// "KGANP1" | u32 count | count x ( u32 name_len | name | u32 rank | rank x u64 dim | f64 values... )
/// ```
///
/// Records are written in name order, so equal sets serialise to equal bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
    init_seed: u64,
}

impl ParameterSet {
    pub fn new(init_seed: u64) -> Self {
        Self {
            tensors: BTreeMap::new(),
            init_seed,
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn set_init_seed(&mut self, seed: u64) {
        self.init_seed = seed;
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Largest absolute value over every parameter.
    pub fn max_abs(&self) -> f64 {
        self.tensors.values().map(Tensor::max_abs).fold(0.0, f64::max)
    }

    /// Clamps every parameter into `[-limit, limit]`.
    pub fn clamp_all(&mut self, limit: f64) {
        for t in self.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = v.clamp(-limit, limit));
        }
    }

    /// Registers every tensor as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, track: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), g.leaf(t.clone(), track)))
            .collect();
        BoundParams { vars }
    }

    /// Merges `other` into `self`, prefixing every name with `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParameterSet) {
        for (name, t) in other.iter() {
            self.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> ParameterSet {
        let mut out = ParameterSet::new(self.init_seed);
        for (name, t) in self.iter() {
            if let Some(rest) = name.strip_prefix(prefix) {
                out.insert(rest, t.clone());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "bad magic, expected KGANP1".into(),
            });
        }
        let count = r.u32()?;
        let mut set = ParameterSet::new(0);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Parse {
                    offset: at,
                    message: "parameter name is not UTF-8".into(),
                })?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let at = r.pos;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            let t = Tensor::new(shape, data).map_err(|e| Error::Parse {
                offset: at,
                message: format!("tensor {name}: {e}"),
            })?;
            set.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse {
                offset: r.pos,
                message: "trailing bytes after last record".into(),
            });
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                message: format!("truncated: needed {n} bytes at offset {}", self.pos),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Graph variables for the parameters of one network.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    /// Weight and bias of layer `i`.
    pub fn layer(&self, i: usize) -> Result<(Var, Var)> {
        Ok((self.get(&super::weight_name(i))?, self.get(&super::bias_name(i))?))
    }

    /// Points `name` at a different variable (used by gradient checks).
    pub fn replace(&mut self, name: &str, v: Var) {
        self.vars.insert(name.to_string(), v);
    }

    /// Collects the gradient of every bound parameter.
    pub fn gradients(&self, grads: &GradientMap) -> NamedGrads {
        self.vars
            .iter()
            .filter_map(|(name, v)| grads.get(*v).map(|t| (name.clone(), t.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::new(0);
        p.insert("a.weight", Tensor::new([2, 3], vec![1.0, -2.5, 3.25, 0.0, -0.0, 1e-300]).unwrap());
        p.insert("a.bias", Tensor::new([2], vec![0.1, 0.2]).unwrap());
        p
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let p = sample();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..6], b"KGANP1");
        let q = ParameterSet::from_bytes(&bytes).unwrap();
        assert_eq!(q.to_bytes(), bytes);
        let w = q.get("a.weight").unwrap();
        assert_eq!(w.data()[4].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn layout_is_as_documented() {
        let mut p = ParameterSet::new(0);
        p.insert("w", Tensor::new([1], vec![2.0]).unwrap());
        let b = p.to_bytes();
        let mut expect = b"KGANP1".to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.push(b'w');
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u64.to_le_bytes());
        expect.extend(2.0f64.to_le_bytes());
        assert_eq!(b, expect);
    }

    #[test]
    fn malformed_bytes_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(ParameterSet::from_bytes(b"KGANP2\0\0\0\0"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(
            ParameterSet::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Parse { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ParameterSet::from_bytes(&extra).is_err());
    }

    #[test]
    fn prefix_helpers() {
        let mut all = ParameterSet::new(0);
        all.extend_prefixed("generator/", &sample());
        assert_eq!(all.len(), 2);
        assert_eq!(all.strip_prefix("generator/"), sample());
        assert!(all.strip_prefix("discriminator/").is_empty());
    }
}
