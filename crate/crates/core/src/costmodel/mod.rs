//! Latency models: the decode step-time table and the prefill throughput
//! estimator, plus the ground-truth prefill cost the engine executes against.

mod lut;
mod throughput;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::Tokens;
use crate::error::{Result, SimError};

pub(crate) use lut::ceil_us;
pub use lut::{
    default_seq_buckets, reference_anchors, synth_profile_from_anchors, DecodeStepLut, LutAnchor, SynthProfile,
    DEFAULT_BSZ_BUCKETS,
};
pub use throughput::{reference_prefill_anchors, ChunkSpan, PrefillAnchor, PrefillCost, PrefillThroughputEstimator};

/// On-disk profile: the decode LUT grid and one prefill throughput sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    pub bsz_buckets: Vec<u64>,
    pub seq_buckets: Vec<Tokens>,
    /// Mean step time per cell in microseconds, indexed `[bsz][seq]`.
    pub entries_us: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
    pub prefill_anchor: PrefillAnchor,
}

impl ProfileFile {
    pub fn from_lut(lut: &DecodeStepLut, prefill_anchor: PrefillAnchor) -> Self {
        let nb = lut.bsz_buckets().len();
        let ns = lut.seq_buckets().len();
        let mut entries_us = vec![vec![0.0; ns]; nb];
        let mut counts = vec![vec![0; ns]; nb];
        for bi in 0..nb {
            for si in 0..ns {
                let (mean, count) = lut.entry(bi, si);
                entries_us[bi][si] = mean.unwrap_or(0.0);
                counts[bi][si] = count;
            }
        }
        ProfileFile {
            bsz_buckets: lut.bsz_buckets().to_vec(),
            seq_buckets: lut.seq_buckets().to_vec(),
            entries_us,
            counts,
            prefill_anchor,
        }
    }

    /// Rebuilds the LUT, checking that both matrices match the grid.
    pub fn to_lut(&self) -> Result<DecodeStepLut> {
        let nb = self.bsz_buckets.len();
        let ns = self.seq_buckets.len();
        let shape_ok = |m: usize, rows: &[usize]| m == nb && rows.iter().all(|&r| r == ns);
        let e_rows: Vec<usize> = self.entries_us.iter().map(Vec::len).collect();
        let c_rows: Vec<usize> = self.counts.iter().map(Vec::len).collect();
        if !shape_ok(self.entries_us.len(), &e_rows) || !shape_ok(self.counts.len(), &c_rows) {
            return Err(SimError::config(format!(
                "profile grid shape mismatch: expected {nb}x{ns} entries_us and counts"
            )));
        }
        let mut lut = DecodeStepLut::empty(self.bsz_buckets.clone(), self.seq_buckets.clone())?;
        for bi in 0..nb {
            for si in 0..ns {
                lut.set_entry(bi, si, self.entries_us[bi][si], self.counts[bi][si])?;
            }
        }
        Ok(lut)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SimError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
