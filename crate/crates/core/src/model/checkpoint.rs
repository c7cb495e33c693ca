//! Binary checkpoint container.
//!
//! All integers are little-endian `u32` unless noted, floats are `f64` LE.
//!
//! ```text
//! magic      8 bytes  "MVLIFTCK"
//! version    u32      1
//! landmarks, root, width, blocks   u32 × 4
//! output_scale                     f64
//! mode       u8       0 = train, 1 = eval
//! epoch      u64      epochs completed when written
//! tensors    u32 count, then per tensor:
//!            u32 name length, UTF-8 name, u32 rank, u32 × rank dims, f64 × len values
//! optimizer  u8 flag; if 1: u64 step, then first and second moments as
//!            tensor lists in learnable order (same encoding as above)
//! ```
//!
//! The layout is fully determined by the parameters, so identical models
//! produce identical bytes.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, ArrayViewD, IxDyn};

use super::{BatchNorm, Dense, Mode, ModelConfig, ModelParams, ResidualBlock};
use crate::train::OptimizerState;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MVLIFTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub epoch: u64,
    pub optimizer: Option<OptimizerState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, name: &str, t: &ArrayViewD<'_, f64>) {
        self.u32(name.len());
        self.0.extend_from_slice(name.as_bytes());
        self.u32(t.ndim());
        for d in t.shape() {
            self.u32(*d);
        }
        for v in t.iter() {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn tensor(&mut self) -> Result<(String, ArrayD<f64>)> {
        let len = self.u32()?;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = self.u32()?;
        let dims = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        if count.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(Error::Checkpoint(format!(
                "tensor {name} exceeds file size"
            )));
        }
        let values = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let t = ArrayD::from_shape_vec(IxDyn(&dims), values).expect("count matches dims");
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let c = p.config();
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION as usize);
        w.u32(c.n_landmarks);
        w.u32(c.root);
        w.u32(c.width);
        w.u32(c.blocks);
        w.f64(c.output_scale);
        w.u8(match p.mode() {
            Mode::Train => 0,
            Mode::Eval => 1,
        });
        w.u64(self.epoch);
        let tensors = p.all_tensors();
        w.u32(tensors.len());
        for (name, t) in &tensors {
            w.tensor(name, t);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                w.u64(opt.step);
                let names = p.learnable_names();
                for moments in [&opt.first_moment, &opt.second_moment] {
                    w.u32(moments.len());
                    for (name, t) in names.iter().zip(moments) {
                        w.tensor(name, &t.view());
                    }
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config = ModelConfig {
            n_landmarks: r.u32()?,
            root: r.u32()?,
            width: r.u32()?,
            blocks: r.u32()?,
            output_scale: r.f64()?,
        };
        config.validate()?;
        let mode = match r.u8()? {
            0 => Mode::Train,
            1 => Mode::Eval,
            m => return Err(Error::Checkpoint(format!("unknown mode {m}"))),
        };
        let epoch = r.u64()?;
        let count = r.u32()?;
        let mut tensors = std::collections::HashMap::new();
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            tensors.insert(name, t);
        }
        let mut take = |name: String| {
            tensors
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let vec1 = |t: ArrayD<f64>, name: &str| -> Result<Array1<f64>> {
            t.into_dimensionality()
                .map_err(|_| Error::Checkpoint(format!("{name} is not a vector")))
        };
        let mat2 = |t: ArrayD<f64>, name: &str| -> Result<Array2<f64>> {
            t.into_dimensionality()
                .map_err(|_| Error::Checkpoint(format!("{name} is not a matrix")))
        };
        let dense =
            |prefix: &str, take: &mut dyn FnMut(String) -> Result<ArrayD<f64>>| -> Result<Dense> {
                Ok(Dense {
                    weight: mat2(take(format!("{prefix}.weight"))?, prefix)?,
                    bias: vec1(take(format!("{prefix}.bias"))?, prefix)?,
                })
            };
        let input = dense("input", &mut take)?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            let norm = |tag: &str,
                        take: &mut dyn FnMut(String) -> Result<ArrayD<f64>>|
             -> Result<BatchNorm> {
                let prefix = format!("blocks.{i}.{tag}");
                Ok(BatchNorm {
                    gamma: vec1(take(format!("{prefix}.gamma"))?, &prefix)?,
                    beta: vec1(take(format!("{prefix}.beta"))?, &prefix)?,
                    running_mean: vec1(take(format!("{prefix}.running_mean"))?, &prefix)?,
                    running_var: vec1(take(format!("{prefix}.running_var"))?, &prefix)?,
                })
            };
            let first = dense(&format!("blocks.{i}.first"), &mut take)?;
            let first_norm = norm("first_norm", &mut take)?;
            let second = dense(&format!("blocks.{i}.second"), &mut take)?;
            let second_norm = norm("second_norm", &mut take)?;
            blocks.push(ResidualBlock {
                first,
                first_norm,
                second,
                second_norm,
            });
        }
        let output = dense("output", &mut take)?;
        let params = ModelParams::from_parts(config, input, blocks, output, mode)?;

        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let shapes: Vec<Vec<usize>> = params
                    .learnable()
                    .iter()
                    .map(|t| t.shape().to_vec())
                    .collect();
                let read_list = |r: &mut Reader<'_>| -> Result<Vec<ArrayD<f64>>> {
                    let n = r.u32()?;
                    if n != shapes.len() {
                        return Err(Error::Checkpoint("optimizer tensor count mismatch".into()));
                    }
                    (0..n)
                        .map(|i| {
                            let (name, t) = r.tensor()?;
                            if t.shape() != shapes[i].as_slice() {
                                return Err(Error::Checkpoint(format!(
                                    "optimizer tensor {name} has the wrong shape"
                                )));
                            }
                            Ok(t)
                        })
                        .collect()
                };
                let first_moment = read_list(&mut r)?;
                let second_moment = read_list(&mut r)?;
                Some(OptimizerState {
                    step,
                    first_moment,
                    second_moment,
                })
            }
            f => return Err(Error::Checkpoint(format!("unknown optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            params,
            epoch,
            optimizer,
        })
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
