use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{read_tensor_record, write_tensor_record, HasParams, ParamSet, Tensor};

use super::fsutil::{read_file, write_atomic, ByteReader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VLMM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Nnlm = 1,
    Rnn = 2,
    Rcnn = 3,
    Fill = 4,
}

impl ModelKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(ModelKind::Nnlm),
            2 => Some(ModelKind::Rnn),
            3 => Some(ModelKind::Rcnn),
            4 => Some(ModelKind::Fill),
            _ => None,
        }
    }
}

/// Model kind, a block of `u32` hyperparameters, and named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub hyper: Vec<u32>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model<M: HasParams<f32>>(kind: ModelKind, hyper: Vec<u32>, model: &M) -> Self {
        Checkpoint {
            kind,
            hyper,
            tensors: model
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.push(self.kind as u8);
        b.extend_from_slice(&(self.hyper.len() as u32).to_le_bytes());
        for h in &self.hyper {
            b.extend_from_slice(&h.to_le_bytes());
        }
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            write_tensor_record(&mut b, name, t).expect("writing to a Vec cannot fail");
        }
        b
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let tag = r.u8()?;
        let kind = ModelKind::from_tag(tag)
            .ok_or_else(|| Error::format(path, format!("unknown model kind tag {tag}")))?;
        let nh = r.u32()? as usize;
        let mut hyper = Vec::with_capacity(nh.min(64));
        for _ in 0..nh {
            hyper.push(r.u32()?);
        }
        let nt = r.u32()? as usize;
        let mut rest = r.remaining();
        let mut tensors = Vec::with_capacity(nt.min(64));
        for _ in 0..nt {
            let (name, t) = read_tensor_record::<f32, _>(&mut rest).map_err(|e| Error::format(path, e.to_string()))?;
            tensors.push((name, t));
        }
        if !rest.is_empty() {
            return Err(Error::format(path, format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { kind, hyper, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &read_file(path)?)
    }

    pub fn expect_kind(&self, kind: ModelKind, hyper_len: usize) -> Result<()> {
        if self.kind != kind {
            return Err(Error::contract(format!(
                "checkpoint holds a {:?} model, expected {:?}",
                self.kind, kind
            )));
        }
        if self.hyper.len() != hyper_len {
            return Err(Error::contract(format!(
                "{:?} checkpoint has {} hyperparameters, expected {hyper_len}",
                kind,
                self.hyper.len()
            )));
        }
        Ok(())
    }

    /// Copies the stored tensors into `model`, matching names and shapes.
    pub fn restore_into<M: HasParams<f32>>(&self, model: &mut M) -> Result<()> {
        let mut set = ParamSet::new();
        for (n, t) in &self.tensors {
            set.push(n, t.clone());
        }
        model.params_mut().assign(&set).map_err(|e| Error::contract(format!("checkpoint mismatch: {e}")))?;
        model.params().ensure_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_version_check() {
        let c = Checkpoint {
            kind: ModelKind::Rcnn,
            hyper: vec![30, 8, 4],
            tensors: vec![("a".into(), Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap())],
        };
        let b = c.to_bytes();
        assert_eq!(&b[..4], b"VLMM");
        assert_eq!(b[8], 3);
        assert_eq!(Checkpoint::from_bytes(Path::new("c"), &b).unwrap(), c);
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(Checkpoint::from_bytes(Path::new("c"), &bad)
            .unwrap_err()
            .to_string()
            .contains("version"));
        let mut bad = b;
        bad[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(Path::new("c"), &bad),
            Err(Error::Format { .. })
        ));
    }
}
