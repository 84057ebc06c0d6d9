//! Deterministic synthetic tensors and KV streams.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::codec::Tensor;
use crate::error::{MantError, Result};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit-scale value distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueDistribution {
    Gaussian,
    Laplace,
    Uniform,
    /// Student-t with 3 degrees of freedom.
    StudentT,
}

impl ValueDistribution {
    pub const ALL: [ValueDistribution; 4] = [Self::Gaussian, Self::Laplace, Self::Uniform, Self::StudentT];

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian => StandardNormal.sample(rng),
            Self::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                let tail = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
                -u.signum() * tail.ln()
            }
            Self::Uniform => rng.random_range(-1.0..1.0),
            Self::StudentT => StudentT::new(3.0).expect("valid dof").sample(rng),
        }
    }
}

impl fmt::Display for ValueDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Laplace => "laplace",
            Self::Uniform => "uniform",
            Self::StudentT => "student-t",
        })
    }
}

impl FromStr for ValueDistribution {
    type Err = MantError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "laplace" => Ok(Self::Laplace),
            "uniform" => Ok(Self::Uniform),
            "student-t" | "studentt" | "t" => Ok(Self::StudentT),
            other => Err(MantError::Format(format!("unknown distribution '{other}'"))),
        }
    }
}

/// Tensor of i.i.d. samples multiplied by `scale`.
pub fn random_tensor(dims: &[usize], dist: ValueDistribution, scale: f64, seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed);
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| (dist.sample(&mut rng) * scale) as f32).collect();
    Tensor::new(dims.to_vec(), data).expect("length matches dims")
}

/// Distribution, scale and offset of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub dist: ValueDistribution,
    pub scale: f64,
    pub offset: f64,
}

/// Per-channel statistics of one head's K or V stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadProfile {
    pub channels: Vec<ChannelProfile>,
}

impl HeadProfile {
    /// Heterogeneous channels: mixed distributions, log-normal scales,
    /// random offsets and a few large-magnitude outlier channels.
    pub fn random<R: Rng + ?Sized>(head_dim: usize, outlier_rate: f64, offset_ratio: f64, rng: &mut R) -> Self {
        let channels = (0..head_dim)
            .map(|_| {
                let dist = ValueDistribution::ALL[rng.random_range(0..3)];
                let z: f64 = StandardNormal.sample(rng);
                let mut scale = (0.5 * z).exp();
                if rng.random::<f64>() < outlier_rate {
                    scale *= 4.0;
                }
                let o: f64 = StandardNormal.sample(rng);
                ChannelProfile {
                    dist,
                    scale,
                    offset: offset_ratio * scale * o,
                }
            })
            .collect();
        Self { channels }
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f32> {
        self.channels
            .iter()
            .map(|c| (c.offset + c.scale * c.dist.sample(rng)) as f32)
            .collect()
    }
}

/// Shape of a synthetic Q/K/V stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamParams {
    /// Channel mean of K relative to the channel scale.
    pub k_offset: f64,
    /// Channel mean of V relative to the channel scale.
    pub v_offset: f64,
    /// Fraction of K channels with 4x larger magnitude.
    pub k_outlier_rate: f64,
    /// Standard deviation of query elements.
    pub query_scale: f64,
}

impl Default for StreamParams {
    fn default() -> Self {
        Self {
            k_offset: 0.5,
            v_offset: 0.5,
            k_outlier_rate: 0.05,
            query_scale: 1.0,
        }
    }
}

/// Synthetic multi-head Q/K/V stream.
#[derive(Debug, Clone)]
pub struct KvSource {
    k: Vec<HeadProfile>,
    v: Vec<HeadProfile>,
    query_scale: f64,
    rng: ChaCha8Rng,
}

impl KvSource {
    pub fn new(heads: usize, head_dim: usize, seed: u64) -> Self {
        Self::with_params(heads, head_dim, seed, StreamParams::default())
    }

    pub fn with_params(heads: usize, head_dim: usize, seed: u64, params: StreamParams) -> Self {
        let mut rng = seeded_rng(seed);
        let k = (0..heads)
            .map(|_| HeadProfile::random(head_dim, params.k_outlier_rate, params.k_offset, &mut rng))
            .collect();
        let v = (0..heads)
            .map(|_| HeadProfile::random(head_dim, 0.0, params.v_offset, &mut rng))
            .collect();
        Self {
            k,
            v,
            query_scale: params.query_scale,
            rng,
        }
    }

    pub fn heads(&self) -> usize {
        self.k.len()
    }

    pub fn k_profile(&self, head: usize) -> &HeadProfile {
        &self.k[head]
    }

    pub fn v_profile(&self, head: usize) -> &HeadProfile {
        &self.v[head]
    }

    pub fn next_k(&mut self, head: usize) -> Vec<f32> {
        self.k[head].sample_row(&mut self.rng)
    }

    pub fn next_v(&mut self, head: usize) -> Vec<f32> {
        self.v[head].sample_row(&mut self.rng)
    }

    pub fn next_q(&mut self, head: usize) -> Vec<f32> {
        let d = self.k[head].channels.len();
        (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                (z * self.query_scale) as f32
            })
            .collect()
    }

    /// `rows` consecutive samples of one stream, row-major.
    pub fn rows(&mut self, head: usize, rows: usize, which: Stream) -> Vec<f32> {
        (0..rows)
            .flat_map(|_| match which {
                Stream::Q => self.next_q(head),
                Stream::K => self.next_k(head),
                Stream::V => self.next_v(head),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Q,
    K,
    V,
}
