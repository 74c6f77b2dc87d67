//! The shared parameterised distance `d_B(h_i, h_j) = ‖B (h_i − h_j)‖`.
//!
//! Both the structural probe and the perceptron parser train the same `r × d`
//! matrix `B`; they differ only in their loss.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::graph::DistanceMatrix;
use crate::rng;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPBM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Below this norm the gradient of the unsquared distance is taken as zero.
pub const NORM_EPSILON: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeParams {
    b: Array2<f64>,
}

impl ProbeParams {
    pub fn new(b: Array2<f64>) -> Result<Self> {
        let (r, d) = b.dim();
        if r > d {
            return Err(Error::config(
                "rank",
                format!("rank {r} exceeds embedding dim {d}"),
            ));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(
                "parameter matrix has non-finite entries".into(),
            ));
        }
        Ok(ProbeParams { b })
    }

    /// I.i.d. uniform entries on `[-s, s]` with `s = sqrt(1 / d)`.
    pub fn init_uniform(rank: usize, dim: usize, seed: u64) -> Result<Self> {
        let scale = (1.0 / dim as f64).sqrt();
        let mut r = rng::stream(seed, "init");
        let b = Array2::from_shape_simple_fn((rank, dim), || r.random_range(-scale..=scale));
        Self::new(b)
    }

    pub fn zeros(rank: usize, dim: usize) -> Result<Self> {
        Self::new(Array2::zeros((rank, dim)))
    }

    pub fn rank(&self) -> usize {
        self.b.nrows()
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.b.view()
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.b
    }

    fn check_dim(&self, what: &str, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::dimension(what, self.dim(), len));
        }
        Ok(())
    }

    /// `‖B (h_i − h_j)‖`, or its square.
    pub fn distance(
        &self,
        h_i: ArrayView1<'_, f64>,
        h_j: ArrayView1<'_, f64>,
        squared: bool,
    ) -> Result<f64> {
        self.check_dim("h_i length", h_i.len())?;
        self.check_dim("h_j length", h_j.len())?;
        let delta = &h_i - &h_j;
        let projected = self.b.dot(&delta);
        let sq = projected.dot(&projected);
        Ok(if squared { sq } else { sq.sqrt() })
    }

    /// Rows of `H Bᵀ`: each word projected into the rank-`r` space.
    pub fn project(&self, emb: &EmbeddingSequence) -> Result<Array2<f64>> {
        self.check_dim("embedding dim", emb.dim())?;
        Ok(emb.vectors.dot(&self.b.t()))
    }

    /// Gradient of `d_B²` with respect to `B`: `2 B δ δᵀ`, `δ = h_i − h_j`.
    pub fn grad_squared_distance(
        &self,
        h_i: ArrayView1<'_, f64>,
        h_j: ArrayView1<'_, f64>,
    ) -> Result<Array2<f64>> {
        self.check_dim("h_i length", h_i.len())?;
        self.check_dim("h_j length", h_j.len())?;
        let delta = &h_i - &h_j;
        let projected = self.b.dot(&delta);
        let col = projected.insert_axis(ndarray::Axis(1));
        let row = delta.insert_axis(ndarray::Axis(0));
        Ok(2.0 * col.dot(&row))
    }

    /// Gradient of the unsquared distance, `B δ δᵀ / d_B`; zero at the kink.
    pub fn grad_distance(
        &self,
        h_i: ArrayView1<'_, f64>,
        h_j: ArrayView1<'_, f64>,
    ) -> Result<Array2<f64>> {
        let d = self.distance(h_i, h_j, false)?;
        if d < NORM_EPSILON {
            return Ok(Array2::zeros(self.b.raw_dim()));
        }
        Ok(self.grad_squared_distance(h_i, h_j)? / (2.0 * d))
    }
}

/// Predicted pairwise distances for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwisePrediction {
    pub distances: DistanceMatrix,
    pub squared: bool,
}

/// Fills `D(i, j) = d_B(w_i, w_j)` (or its square) for all `i < j`.
pub fn predict_matrix(
    params: &ProbeParams,
    emb: &EmbeddingSequence,
    squared: bool,
) -> Result<PairwisePrediction> {
    let projected = params.project(emb)?;
    let distances = DistanceMatrix::from_fn(emb.n(), |i, j| {
        let diff = &projected.row(i - 1) - &projected.row(j - 1);
        let sq = diff.dot(&diff);
        if squared {
            sq
        } else {
            sq.sqrt()
        }
    });
    Ok(PairwisePrediction { distances, squared })
}

/// Inverted dropout on embedding coordinates: each coordinate is zeroed with
/// probability `rate`, survivors are scaled by `1 / (1 - rate)`.
pub fn apply_dropout<R: Rng + ?Sized>(
    emb: &EmbeddingSequence,
    rate: f64,
    rng: &mut R,
) -> Result<EmbeddingSequence> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(
            "dropout_rate",
            format!("{rate} is outside [0, 1)"),
        ));
    }
    if rate == 0.0 {
        return Ok(emb.clone());
    }
    let keep = 1.0 / (1.0 - rate);
    let vectors = emb.vectors.mapv(|v| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            v * keep
        }
    });
    Ok(EmbeddingSequence::new(emb.sentence_id.clone(), vectors))
}

/// Writes `B` with its default distance flag:
/// `"SPBM"`, version u32, r u32, d u32, squared u8, then r·d f64 row-major.
pub fn write_checkpoint<W: Write>(params: &ProbeParams, squared: bool, mut out: W) -> Result<()> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(params.rank() as u32).to_le_bytes())?;
    out.write_all(&(params.dim() as u32).to_le_bytes())?;
    out.write_all(&[squared as u8])?;
    let mut payload = Vec::with_capacity(params.b.len() * 8);
    for v in params.b.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload)?;
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub rank: u32,
    pub dim: u32,
    pub squared: bool,
}

pub fn read_checkpoint_header<R: Read>(mut input: R) -> Result<CheckpointHeader> {
    let mut head = [0u8; 17];
    input
        .read_exact(&mut head)
        .map_err(|_| Error::Format("checkpoint header truncated".into()))?;
    if head[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, expected \"SPBM\"".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let squared = match head[16] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format(format!(
                "squared flag byte {other} is not 0 or 1"
            )))
        }
    };
    Ok(CheckpointHeader {
        version,
        rank: u32::from_le_bytes(head[8..12].try_into().unwrap()),
        dim: u32::from_le_bytes(head[12..16].try_into().unwrap()),
        squared,
    })
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(ProbeParams, bool)> {
    let header = read_checkpoint_header(&mut input)?;
    let (r, d) = (header.rank as usize, header.dim as usize);
    let mut payload = vec![0u8; r * d * 8];
    input.read_exact(&mut payload).map_err(|_| Error::Corrupt {
        offset: 17,
        message: format!("expected {} bytes of parameters", r * d * 8),
    })?;
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let b = Array2::from_shape_vec((r, d), values).expect("payload size checked");
    Ok((ProbeParams::new(b)?, header.squared))
}
