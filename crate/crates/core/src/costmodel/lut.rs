//! Decode step-time lookup table.
//!
//! The table maps a (batch size, sequence length) grid point to the mean
//! observed decode step time. Off-grid queries interpolate bilinearly and
//! clamp to the grid edges. Each cell keeps the running sum of its
//! observations rather than a running mean, so the stored mean is always the
//! arithmetic mean of everything folded into it.

use serde::{Deserialize, Serialize};

use crate::domain::{SimTime, Tokens};
use crate::error::{Result, SimError};

/// Default batch-size grid.
pub const DEFAULT_BSZ_BUCKETS: [u64; 9] = [1, 2, 4, 8, 16, 32, 64, 128, 256];

/// Default sequence-length grid: 8K to 256K in 8K steps.
pub fn default_seq_buckets() -> Vec<Tokens> {
    (1..=32).map(|i| i * 8192).collect()
}

/// Rounds a microsecond value up to the next whole microsecond. Values within
/// 1e-6 us of an integer are treated as that integer so float noise from
/// interpolation does not add a microsecond.
pub(crate) fn ceil_us(us: f64) -> SimTime {
    debug_assert!(us.is_finite() && us >= 0.0);
    SimTime::from_micros((us - 1e-6).ceil().max(0.0) as u64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Cell {
    sum_us: f64,
    count: u64,
}

impl Cell {
    fn mean_us(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_us / self.count as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeStepLut {
    bsz_buckets: Vec<u64>,
    seq_buckets: Vec<Tokens>,
    /// Row-major, `bsz_buckets.len()` rows by `seq_buckets.len()` columns.
    cells: Vec<Cell>,
}

fn check_axis(name: &str, axis: &[u64], min: u64) -> Result<()> {
    if axis.is_empty() {
        return Err(SimError::config(format!("{name} must not be empty")));
    }
    if axis[0] < min {
        return Err(SimError::config(format!("{name} must start at >= {min}")));
    }
    if axis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::config(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

/// Position of `x` on a sorted axis: lower index, upper index and the
/// interpolation weight of the upper index. Clamps outside the axis.
fn bracket(axis: &[u64], x: u64) -> (usize, usize, f64) {
    let last = axis.len() - 1;
    if x <= axis[0] {
        return (0, 0, 0.0);
    }
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|&b| b <= x);
    let lo = hi - 1;
    let w = (x - axis[lo]) as f64 / (axis[hi] - axis[lo]) as f64;
    (lo, hi, w)
}

/// Index of the bucket containing `x`: the last grid point not above it.
fn floor_bucket(axis: &[u64], x: u64) -> usize {
    axis.partition_point(|&b| b <= x).saturating_sub(1)
}

impl DecodeStepLut {
    /// A grid with no observations.
    pub fn empty(bsz_buckets: Vec<u64>, seq_buckets: Vec<Tokens>) -> Result<Self> {
        check_axis("bsz_buckets", &bsz_buckets, 1)?;
        check_axis("seq_buckets", &seq_buckets, 1)?;
        let cells = vec![Cell::default(); bsz_buckets.len() * seq_buckets.len()];
        Ok(DecodeStepLut {
            bsz_buckets,
            seq_buckets,
            cells,
        })
    }

    pub fn bsz_buckets(&self) -> &[u64] {
        &self.bsz_buckets
    }

    pub fn seq_buckets(&self) -> &[Tokens] {
        &self.seq_buckets
    }

    fn idx(&self, bi: usize, si: usize) -> usize {
        bi * self.seq_buckets.len() + si
    }

    /// Overwrites one cell with `count` observations averaging `mean_us`.
    pub fn set_entry(&mut self, bi: usize, si: usize, mean_us: f64, count: u64) -> Result<()> {
        if bi >= self.bsz_buckets.len() || si >= self.seq_buckets.len() {
            return Err(SimError::config(format!("LUT cell ({bi}, {si}) out of range")));
        }
        if count > 0 && !(mean_us.is_finite() && mean_us > 0.0) {
            return Err(SimError::config(format!(
                "LUT cell ({bi}, {si}) has non-positive mean {mean_us}"
            )));
        }
        let i = self.idx(bi, si);
        self.cells[i] = Cell {
            sum_us: if count > 0 { mean_us * count as f64 } else { 0.0 },
            count,
        };
        Ok(())
    }

    /// Mean step time (us) and observation count of a grid cell.
    pub fn entry(&self, bi: usize, si: usize) -> (Option<f64>, u64) {
        let c = self.cells[self.idx(bi, si)];
        (c.mean_us(), c.count)
    }

    pub fn is_populated(&self) -> bool {
        self.cells.iter().any(|c| c.count > 0)
    }

    /// Fails unless at least one cell holds an observation.
    pub fn ensure_populated(&self) -> Result<()> {
        if self.is_populated() {
            Ok(())
        } else {
            Err(SimError::config("decode step LUT has no populated entries"))
        }
    }

    /// Interpolated step time in (fractional) microseconds.
    ///
    /// Unpopulated corners drop out of the bilinear blend; if none of the
    /// weighted corners is populated the nearest populated cell is used.
    pub fn lookup_us(&self, bsz: u64, seq_len: Tokens) -> f64 {
        let (b0, b1, wb) = bracket(&self.bsz_buckets, bsz);
        let (s0, s1, ws) = bracket(&self.seq_buckets, seq_len);
        let corners = [
            (b0, s0, (1.0 - wb) * (1.0 - ws)),
            (b0, s1, (1.0 - wb) * ws),
            (b1, s0, wb * (1.0 - ws)),
            (b1, s1, wb * ws),
        ];
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for &(bi, si, w) in &corners {
            if w == 0.0 {
                continue;
            }
            if let Some(m) = self.cells[self.idx(bi, si)].mean_us() {
                acc += w * m;
                wsum += w;
            }
        }
        if wsum > 0.0 {
            return acc / wsum;
        }
        let bn = if wb < 0.5 { b0 } else { b1 };
        let sn = if ws < 0.5 { s0 } else { s1 };
        self.nearest_populated(bn, sn)
            .expect("lookup on a decode step LUT with no populated entries")
    }

    fn nearest_populated(&self, bi: usize, si: usize) -> Option<f64> {
        let mut best: Option<(usize, usize, f64)> = None;
        for b in 0..self.bsz_buckets.len() {
            for s in 0..self.seq_buckets.len() {
                if let Some(m) = self.cells[self.idx(b, s)].mean_us() {
                    let d = b.abs_diff(bi) + s.abs_diff(si);
                    let key = (d, self.idx(b, s));
                    if best.is_none_or(|(bd, bidx, _)| key < (bd, bidx)) {
                        best = Some((d, self.idx(b, s), m));
                    }
                }
            }
        }
        best.map(|(_, _, m)| m)
    }

    /// Predicted step time, rounded up to the microsecond.
    ///
    /// Panics on an empty table; callers validate with
    /// [`ensure_populated`](Self::ensure_populated) before simulating.
    pub fn lookup(&self, bsz: u64, seq_len: Tokens) -> SimTime {
        assert!(bsz >= 1, "batch size must be >= 1");
        ceil_us(self.lookup_us(bsz, seq_len))
    }

    pub fn try_lookup(&self, bsz: u64, seq_len: Tokens) -> Result<SimTime> {
        self.ensure_populated()?;
        Ok(self.lookup(bsz, seq_len))
    }

    /// Folds one observed step time into the bucket containing
    /// `(bsz, max_seq_len)`.
    pub fn update(&mut self, bsz: u64, max_seq_len: Tokens, observed: SimTime) {
        assert!(observed > SimTime::ZERO, "observed step time must be positive");
        let bi = floor_bucket(&self.bsz_buckets, bsz);
        let si = floor_bucket(&self.seq_buckets, max_seq_len);
        let i = self.idx(bi, si);
        let cell = &mut self.cells[i];
        cell.sum_us += observed.as_micros() as f64;
        cell.count += 1;
    }

    /// Grid indices of the bucket an update with this key lands in.
    pub fn bucket_of(&self, bsz: u64, seq_len: Tokens) -> (usize, usize) {
        (
            floor_bucket(&self.bsz_buckets, bsz),
            floor_bucket(&self.seq_buckets, seq_len),
        )
    }
}

/// One profiled decode step time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutAnchor {
    pub bsz: u64,
    pub seq_len: Tokens,
    pub step_time: SimTime,
}

/// Parameters for building a table from a handful of solo-batch anchors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub anchors: Vec<LutAnchor>,
    /// Relative step-time growth per extra request in the batch.
    #[serde(default = "default_gamma")]
    pub batch_growth: f64,
    /// Observation count credited to every synthesized cell.
    #[serde(default = "default_prior_weight")]
    pub prior_weight: u64,
    #[serde(default = "default_bsz")]
    pub bsz_buckets: Vec<u64>,
    #[serde(default = "default_seq_buckets")]
    pub seq_buckets: Vec<Tokens>,
}

fn default_gamma() -> f64 {
    0.03
}

fn default_prior_weight() -> u64 {
    100
}

fn default_bsz() -> Vec<u64> {
    DEFAULT_BSZ_BUCKETS.to_vec()
}

/// The two solo-batch latencies measured for an 8K and a 128K context.
pub fn reference_anchors() -> Vec<LutAnchor> {
    vec![
        LutAnchor {
            bsz: 1,
            seq_len: 8192,
            step_time: SimTime::from_micros(11_000),
        },
        LutAnchor {
            bsz: 1,
            seq_len: 131_072,
            step_time: SimTime::from_micros(40_300),
        },
    ]
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            anchors: reference_anchors(),
            batch_growth: default_gamma(),
            prior_weight: default_prior_weight(),
            bsz_buckets: default_bsz(),
            seq_buckets: default_seq_buckets(),
        }
    }
}

impl SynthProfile {
    /// Solo step time at `seq_len`, interpolated between the bsz=1 anchors and
    /// clamped outside them.
    fn base_us(solo: &[(Tokens, f64)], seq_len: Tokens) -> f64 {
        let (first, last) = (solo[0], solo[solo.len() - 1]);
        if seq_len <= first.0 {
            return first.1;
        }
        if seq_len >= last.0 {
            return last.1;
        }
        let hi = solo.partition_point(|&(s, _)| s <= seq_len);
        let (s0, t0) = solo[hi - 1];
        let (s1, t1) = solo[hi];
        t0 + (t1 - t0) * (seq_len - s0) as f64 / (s1 - s0) as f64
    }

    /// Generating formula of the synthesized table, in microseconds.
    pub fn step_time_us(&self, bsz: u64, seq_len: Tokens) -> Result<f64> {
        let solo = self.solo_anchors()?;
        Ok(Self::base_us(&solo, seq_len) * (1.0 + self.batch_growth * (bsz as f64 - 1.0)))
    }

    fn solo_anchors(&self) -> Result<Vec<(Tokens, f64)>> {
        let mut solo: Vec<(Tokens, f64)> = self
            .anchors
            .iter()
            .filter(|a| a.bsz == 1)
            .map(|a| (a.seq_len, a.step_time.as_micros() as f64))
            .collect();
        if solo.is_empty() {
            return Err(SimError::config("profile synthesis needs at least one bsz=1 anchor"));
        }
        solo.sort_by_key(|a| a.0);
        if solo.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(SimError::config("duplicate bsz=1 anchor sequence length"));
        }
        Ok(solo)
    }

    /// Builds the table: every cell holds the formula value rounded to the
    /// microsecond, weighted as `prior_weight` observations.
    pub fn build(&self) -> Result<DecodeStepLut> {
        if !(self.batch_growth.is_finite() && self.batch_growth >= 0.0) {
            return Err(SimError::config("batch_growth must be >= 0"));
        }
        if self.prior_weight == 0 {
            return Err(SimError::config("prior_weight must be >= 1"));
        }
        let solo = self.solo_anchors()?;
        if self.anchors.iter().any(|a| a.bsz != 1) {
            log::warn!("profile synthesis ignores anchors with bsz != 1");
        }
        if solo.windows(2).any(|w| w[1].1 <= w[0].1) {
            log::warn!("decode anchors are not increasing in sequence length");
        }
        let mut lut = DecodeStepLut::empty(self.bsz_buckets.clone(), self.seq_buckets.clone())?;
        for (bi, &b) in self.bsz_buckets.iter().enumerate() {
            for (si, &s) in self.seq_buckets.iter().enumerate() {
                let us = (Self::base_us(&solo, s) * (1.0 + self.batch_growth * (b as f64 - 1.0))).round();
                lut.set_entry(bi, si, us.max(1.0), self.prior_weight)?;
            }
        }
        Ok(lut)
    }
}

/// Convenience wrapper matching the profile-synthesis operation.
pub fn synth_profile_from_anchors(anchors: &[LutAnchor], batch_growth: f64) -> Result<DecodeStepLut> {
    SynthProfile {
        anchors: anchors.to_vec(),
        batch_growth,
        ..SynthProfile::default()
    }
    .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_anchor_lut() -> DecodeStepLut {
        let mut lut = DecodeStepLut::empty(vec![1], vec![8192, 131_072]).unwrap();
        lut.set_entry(0, 0, 11_000.0, 100).unwrap();
        lut.set_entry(0, 1, 40_300.0, 100).unwrap();
        lut
    }

    #[test]
    fn lookup_reproduces_anchors_and_midpoint() {
        let lut = two_anchor_lut();
        assert_eq!(lut.lookup(1, 8192), SimTime::from_micros(11_000));
        assert_eq!(lut.lookup(1, 131_072), SimTime::from_micros(40_300));
        assert_eq!(lut.lookup(1, 69_632), SimTime::from_micros(25_650));
    }

    #[test]
    fn lookup_clamps_outside_grid() {
        let lut = two_anchor_lut();
        assert_eq!(lut.lookup(1, 1), SimTime::from_micros(11_000));
        assert_eq!(lut.lookup(64, 1_000_000), SimTime::from_micros(40_300));
    }

    #[test]
    fn empty_lut_is_a_config_error() {
        let lut = DecodeStepLut::empty(vec![1], vec![8192]).unwrap();
        assert!(matches!(lut.try_lookup(1, 8192), Err(SimError::Config(_))));
        assert!(lut.ensure_populated().is_err());
    }

    #[test]
    fn update_running_mean() {
        let mut lut = DecodeStepLut::empty(vec![1, 2], vec![8192, 16384]).unwrap();
        lut.update(1, 8192, SimTime::from_millis(10));
        assert_eq!(lut.entry(0, 0), (Some(10_000.0), 1));
        lut.update(1, 8192, SimTime::from_millis(12));
        assert_eq!(lut.entry(0, 0), (Some(11_000.0), 2));
        lut.update(1, 8192, SimTime::from_millis(11));
        assert_eq!(lut.entry(0, 0), (Some(11_000.0), 3));
    }

    #[test]
    fn update_lands_in_floor_bucket() {
        let mut lut = DecodeStepLut::empty(vec![1, 2, 4], vec![8192, 16384]).unwrap();
        lut.update(3, 16000, SimTime::from_millis(9));
        assert_eq!(lut.entry(1, 0), (Some(9_000.0), 1));
        lut.update(300, 1, SimTime::from_millis(7));
        assert_eq!(lut.entry(2, 0), (Some(7_000.0), 1));
    }

    #[test]
    fn partially_populated_grid_uses_available_corners() {
        let mut lut = DecodeStepLut::empty(vec![1, 2], vec![100, 200]).unwrap();
        lut.set_entry(0, 0, 1_000.0, 1).unwrap();
        lut.set_entry(0, 1, 3_000.0, 1).unwrap();
        // Only the empty bsz=2 row carries weight, so the nearest populated
        // cell to the rounded-up corner answers.
        assert_eq!(lut.lookup(2, 150), SimTime::from_micros(3_000));
        assert_eq!(lut.lookup(1, 150), SimTime::from_micros(2_000));
        let mut lut = DecodeStepLut::empty(vec![1, 2], vec![100, 200]).unwrap();
        lut.set_entry(1, 1, 5_000.0, 1).unwrap();
        assert_eq!(lut.lookup(1, 100), SimTime::from_micros(5_000));
    }

    #[test]
    fn synth_profile_examples() {
        let anchors = reference_anchors();
        let lut = synth_profile_from_anchors(&anchors, 0.0).unwrap();
        assert_eq!(lut.lookup(1, 8192), SimTime::from_micros(11_000));
        assert_eq!(lut.lookup(1, 131_072), SimTime::from_micros(40_300));
        assert_eq!(lut.lookup(7, 131_072), SimTime::from_micros(40_300));

        let lut = synth_profile_from_anchors(&anchors, 0.03).unwrap();
        assert_eq!(lut.lookup(2, 131_072), SimTime::from_micros(41_509));
        assert_eq!(lut.entry(0, 0).1, 100);

        let single = [LutAnchor {
            bsz: 1,
            seq_len: 4096,
            step_time: SimTime::from_millis(9),
        }];
        let lut = synth_profile_from_anchors(&single, 0.0).unwrap();
        for (b, s) in [(1, 1), (3, 50_000), (256, 262_144)] {
            assert_eq!(lut.lookup(b, s), SimTime::from_millis(9));
        }
    }

    #[test]
    fn synth_rejects_missing_solo_anchor() {
        let anchors = [LutAnchor {
            bsz: 2,
            seq_len: 8192,
            step_time: SimTime::from_millis(11),
        }];
        assert!(synth_profile_from_anchors(&anchors, 0.0).is_err());
    }

    #[test]
    fn synth_accepts_decreasing_anchors() {
        let anchors = [
            LutAnchor {
                bsz: 1,
                seq_len: 8192,
                step_time: SimTime::from_millis(20),
            },
            LutAnchor {
                bsz: 1,
                seq_len: 16384,
                step_time: SimTime::from_millis(10),
            },
        ];
        assert!(synth_profile_from_anchors(&anchors, 0.0).is_ok());
    }

    #[test]
    fn axes_are_validated() {
        assert!(DecodeStepLut::empty(vec![], vec![1]).is_err());
        assert!(DecodeStepLut::empty(vec![0, 1], vec![1]).is_err());
        assert!(DecodeStepLut::empty(vec![1, 1], vec![1]).is_err());
    }
}
