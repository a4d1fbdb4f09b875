//! Domain types, the MSE loss, and synthetic dataset generation.
//!
//! Instances live in `[0, 10]^d`. The harness always computes losses itself;
//! model-reported numbers are recorded for audit but never scored.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("arity mismatch: expected {expected} values, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("solution contains a non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("instance {id}: {reason}")]
    InvalidInstance { id: String, reason: String },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
}

/// A predicted point `(ŷ1, ..., ŷd)`. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Solution {
    values: Vec<f64>,
}

impl Solution {
    pub fn new(values: Vec<f64>) -> Result<Self, DomainError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(DomainError::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl fmt::Display for Solution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// A non-negative MSE value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossValue(f64);

impl LossValue {
    pub fn new(value: f64) -> Result<Self, DomainError> {
        if !value.is_finite() || value < 0.0 {
            return Err(DomainError::NonFinite { index: 0 });
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for LossValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One optimization problem: target vector `y` and the shared starting
/// solution used by both the model trial and the oracle reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub id: String,
    pub d: usize,
    pub y: Vec<f64>,
    pub init: Vec<f64>,
}

impl ProblemInstance {
    pub fn new(id: String, y: Vec<f64>, init: Vec<f64>) -> Result<Self, DomainError> {
        let d = y.len();
        if d == 0 {
            return Err(DomainError::InvalidInstance {
                id,
                reason: "dimension must be at least 1".into(),
            });
        }
        if init.len() != d {
            return Err(DomainError::ArityMismatch {
                expected: d,
                got: init.len(),
            });
        }
        if let Some(v) = y.iter().find(|v| !(0.0..=10.0).contains(*v)) {
            return Err(DomainError::InvalidInstance {
                id,
                reason: format!("y value {v} outside [0, 10]"),
            });
        }
        if init.iter().any(|v| !v.is_finite()) {
            return Err(DomainError::InvalidInstance {
                id,
                reason: "init contains a non-finite value".into(),
            });
        }
        Ok(Self { id, d, y, init })
    }

    pub fn init_solution(&self) -> Solution {
        Solution {
            values: self.init.clone(),
        }
    }
}

/// Mean squared error `(1/d) Σ (ŷi − yi)²` between a solution and the
/// instance targets.
pub fn mse_loss(instance: &ProblemInstance, s: &Solution) -> Result<LossValue, DomainError> {
    if s.len() != instance.d {
        return Err(DomainError::ArityMismatch {
            expected: instance.d,
            got: s.len(),
        });
    }
    let sum: f64 = instance
        .y
        .iter()
        .zip(s.values())
        .map(|(y, yhat)| (yhat - y) * (yhat - y))
        .sum();
    Ok(LossValue(sum / instance.d as f64))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Derives an independent, platform-stable RNG stream from a root seed, a
/// label, and a counter. Streams never depend on execution order, so
/// parallel runs cannot perturb sampling.
pub fn derive_rng(seed: u64, label: &str, counter: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(label.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&counter.to_le_bytes());
    key[24..32].copy_from_slice(b"optbench");
    ChaCha8Rng::from_seed(key)
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Samples one instance: `y` uniform in `[0, 10]^d` (kept at 6 decimal
/// places so prompts stay readable), `init` uniform over the integer points
/// of `[0, 10]^d`.
pub fn make_instance(d: usize, seed: u64, index: u32) -> ProblemInstance {
    assert!(d >= 1, "dimension must be at least 1");
    let mut rng = derive_rng(seed, &format!("instance-d{d}"), u64::from(index));
    let y: Vec<f64> = (0..d).map(|_| round6(rng.random_range(0.0..=10.0))).collect();
    let init: Vec<f64> = (0..d).map(|_| f64::from(rng.random_range(0..=10u8))).collect();
    let id = format!("s{seed}-d{d:02}-i{index:03}");
    ProblemInstance { id, d, y, init }
}

/// A seeded collection of instances, grouped by dimension in stable order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub instances: Vec<ProblemInstance>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    id: String,
    d: usize,
    y: Vec<f64>,
    init: Vec<f64>,
    seed: u64,
}

impl Dataset {
    pub fn dimensions(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.instances.iter().map(|i| i.d).collect();
        dims.sort_unstable();
        dims.dedup();
        dims
    }

    /// One instance per line with fields id, d, y, init, seed. Ordering is
    /// bit-stable: same dataset, same bytes.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for inst in &self.instances {
            let record = InstanceRecord {
                id: inst.id.clone(),
                d: inst.d,
                y: inst.y.clone(),
                init: inst.init.clone(),
                seed: self.seed,
            };
            out.push_str(&serde_json::to_string(&record).expect("instance serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DomainError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, DomainError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut seed = 0;
        let mut instances = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: InstanceRecord =
                serde_json::from_str(&line).map_err(|source| DomainError::Malformed {
                    line: i + 1,
                    source,
                })?;
            seed = record.seed;
            instances.push(ProblemInstance::new(record.id, record.y, record.init)?);
        }
        Ok(Self { seed, instances })
    }
}

/// Generates `per_dim` instances for every requested dimension.
pub fn gen_dataset(dims: &[usize], per_dim: usize, seed: u64) -> Dataset {
    assert!(!dims.is_empty(), "dims must be non-empty");
    let mut instances = Vec::with_capacity(dims.len() * per_dim);
    for &d in dims {
        for index in 0..per_dim {
            instances.push(make_instance(d, seed, index as u32));
        }
    }
    Dataset { seed, instances }
}
