//! On-off keying detection with a Gaussian count model: MAP threshold with
//! genie-aided decision feedback, per-slot bit error probability by exact
//! enumeration of the preceding bits, and a binomial bit-level Monte Carlo
//! check.
//!
//! ISI sequences are ordered most recent first: `seq[0]` is the bit sent one
//! slot earlier and weights `p_R[2]`, `seq[k]` weights `p_R[k + 2]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::cir::CirTable;
use crate::config::ScenarioConfig;
use crate::error::{FamcError, Result};
use crate::special::q_function;

/// Largest ISI memory handled by exhaustive enumeration.
pub const MAX_ENUMERATED_MEMORY: usize = 16;

/// Frames per Monte Carlo block; fixed so results do not depend on threads.
const MC_BLOCK: u64 = 4096;

/// z-score of the reported Wilson interval.
pub const WILSON_Z: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BepMethod {
    Analytic,
    BitLevelMc,
}

impl std::fmt::Display for BepMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BepMethod::Analytic => "analytic",
            BepMethod::BitLevelMc => "bit-level-mc",
        })
    }
}

/// Count statistics for one slot given the preceding bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianStats {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma0: f64,
    pub sigma1: f64,
}

/// Decision threshold and whether it came from the no-crossing fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub gamma: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionStats {
    pub slot_index: usize,
    pub isi_sequence: Vec<bool>,
    pub mu0: f64,
    pub mu1: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub threshold: f64,
    pub p_fa: f64,
    pub p_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BepResult {
    /// P_e for slots 1..=L.
    pub per_slot: Vec<f64>,
    /// 1 − Q(√(N p_R[1])).
    pub isi_free_pd: f64,
    pub method: BepMethod,
    /// Wilson interval of the last slot (Monte Carlo only).
    pub interval: Option<(f64, f64)>,
}

impl BepResult {
    /// BEP at the last (reported) slot.
    pub fn reported(&self) -> f64 {
        *self.per_slot.last().expect("at least one slot")
    }
}

/// Means and standard deviations of the count under both hypotheses.
pub fn gaussian_stats(cir: &CirTable, seq: &[bool], n: u64) -> Result<GaussianStats> {
    if seq.len() + 1 > cir.len() {
        return Err(FamcError::InvalidArgument(format!(
            "ISI sequence of length {} needs {} slots, table has {}",
            seq.len(),
            seq.len() + 1,
            cir.len()
        )));
    }
    let n = n as f64;
    let mut mu0 = 0.0;
    let mut var0 = 0.0;
    for (k, &b) in seq.iter().enumerate() {
        if b {
            let p = cir.slot_probs[k + 1];
            mu0 += n * p;
            var0 += n * p * (1.0 - p);
        }
    }
    let p1 = cir.slot_probs[0];
    Ok(GaussianStats {
        mu0,
        mu1: mu0 + n * p1,
        sigma0: var0.sqrt(),
        sigma1: (var0 + n * p1 * (1.0 - p1)).sqrt(),
    })
}

/// Threshold where the prior-weighted Gaussian likelihoods cross.
///
/// With unequal variances the crossing is a quadratic root; the one inside
/// `(μ0, μ1)` is used, otherwise the one nearest the midpoint. With no real
/// crossing the midpoint is returned and flagged. A point-mass H0 (σ0 = 0)
/// gets `μ0 + 1/2`, half a count above the only value H0 can produce,
/// capped at the midpoint.
pub fn map_threshold(stats: &GaussianStats, prior_one: f64) -> Threshold {
    let GaussianStats { mu0, mu1, sigma0, sigma1 } = *stats;
    let mid = 0.5 * (mu0 + mu1);
    let ok = |gamma| Threshold { gamma, fallback: false };
    if !(mu1 > mu0) {
        return Threshold { gamma: mid, fallback: true };
    }
    if sigma0 == 0.0 {
        return ok((mu0 + 0.5).min(mid));
    }
    let (p1, p0) = (prior_one, 1.0 - prior_one);
    if sigma1 == 0.0 {
        return ok((mu1 - 0.5).max(mid));
    }
    if (sigma1 - sigma0).abs() <= 1e-12 * sigma1 {
        let s2 = sigma0 * sigma0;
        return ok(mid + s2 * (p0 / p1).ln() / (mu1 - mu0));
    }
    let (v0, v1) = (sigma0 * sigma0, sigma1 * sigma1);
    let a = 0.5 / v0 - 0.5 / v1;
    let b = mu1 / v1 - mu0 / v0;
    let c = 0.5 * mu0 * mu0 / v0 - 0.5 * mu1 * mu1 / v1 + (p1 / p0).ln() - (sigma1 / sigma0).ln();
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Threshold { gamma: mid, fallback: true };
    }
    // numerically stable pair of roots
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots = [q / a, if q != 0.0 { c / q } else { q / a }];
    roots.sort_by(f64::total_cmp);
    let inside: Vec<f64> = roots.iter().copied().filter(|&g| g > mu0 && g < mu1).collect();
    let gamma = match inside.as_slice() {
        [g] => *g,
        _ => {
            let cand: &[f64] = if inside.is_empty() { &roots } else { &inside };
            *cand
                .iter()
                .min_by(|x, y| (*x - mid).abs().total_cmp(&(*y - mid).abs()))
                .expect("two roots")
        }
    };
    ok(gamma)
}

/// P(Y > γ) for a Gaussian count; a zero-width count is a point mass.
fn exceed(gamma: f64, mu: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        q_function((gamma - mu) / sigma)
    } else if gamma <= mu {
        1.0
    } else {
        0.0
    }
}

/// False-alarm and detection probabilities at threshold `gamma`.
pub fn fa_pd(stats: &GaussianStats, gamma: f64) -> (f64, f64) {
    (
        exceed(gamma, stats.mu0, stats.sigma0),
        exceed(gamma, stats.mu1, stats.sigma1),
    )
}

/// Full detector summary for slot `slot_index` with preceding bits `seq`.
pub fn detection_stats(cir: &CirTable, seq: &[bool], n: u64, prior_one: f64, slot_index: usize) -> Result<DetectionStats> {
    let st = gaussian_stats(cir, seq, n)?;
    let th = map_threshold(&st, prior_one);
    let (p_fa, p_d) = fa_pd(&st, th.gamma);
    Ok(DetectionStats {
        slot_index,
        isi_sequence: seq.to_vec(),
        mu0: st.mu0,
        mu1: st.mu1,
        sigma0: st.sigma0,
        sigma1: st.sigma1,
        threshold: th.gamma,
        p_fa,
        p_d,
    })
}

fn check_memory(cir: &CirTable) -> Result<usize> {
    let l = cir.len();
    if l > MAX_ENUMERATED_MEMORY {
        return Err(FamcError::EnumerationGuard {
            requested: l,
            max: MAX_ENUMERATED_MEMORY,
        });
    }
    Ok(l)
}

fn check_prior(prior_one: f64) -> Result<()> {
    if !(prior_one > 0.0 && prior_one < 1.0) {
        return Err(FamcError::InvalidArgument(format!(
            "prior of bit 1 must lie in (0, 1), got {prior_one}"
        )));
    }
    Ok(())
}

/// Bits of `j` as a sequence of length `len`, most recent first.
fn sequence(j: usize, len: usize) -> Vec<bool> {
    (0..len).map(|k| (j >> k) & 1 == 1).collect()
}

/// Prior probability of a sequence of i.i.d. bits.
fn sequence_weight(seq: &[bool], prior_one: f64) -> f64 {
    seq.iter().map(|&b| if b { prior_one } else { 1.0 - prior_one }).product()
}

/// Analytic BEP for slots 1..=L by enumerating all preceding-bit sequences.
pub fn bep(cir: &CirTable, cfg: &ScenarioConfig) -> Result<BepResult> {
    let l = check_memory(cir)?;
    let n = cfg.particles_per_bit;
    let prior = cfg.prior_one;
    check_prior(prior)?;
    let mut per_slot = Vec::with_capacity(l);
    for i in 1..=l {
        let len = i - 1;
        let mut pe = 0.0;
        for j in 0..(1usize << len) {
            let seq = sequence(j, len);
            let st = gaussian_stats(cir, &seq, n)?;
            let th = map_threshold(&st, prior);
            let (p_fa, p_d) = fa_pd(&st, th.gamma);
            pe += sequence_weight(&seq, prior) * ((1.0 - prior) * p_fa + prior * (1.0 - p_d));
        }
        per_slot.push(pe.clamp(0.0, 1.0));
    }
    Ok(BepResult {
        per_slot,
        isi_free_pd: 1.0 - q_function((n as f64 * cir.slot_probs[0]).sqrt()),
        method: BepMethod::Analytic,
        interval: None,
    })
}

/// Wilson score interval for `errors` out of `trials` at z-score `z`.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn binomial(n: u64, p: f64, rng: &mut ChaCha8Rng) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

/// Bit-level simulation with binomial counts. Each trial is a frame of L
/// i.i.d. bits; slot i of the frame sees the i − 1 earlier bits as ISI and
/// is decided with the threshold for the true earlier bits. `frames` is the
/// number of decisions per slot.
pub fn bep_bitlevel_mc(cir: &CirTable, cfg: &ScenarioConfig, frames: u64, seed: u64) -> Result<BepResult> {
    let l = check_memory(cir)?;
    if frames < 10_000 {
        return Err(FamcError::InvalidArgument(format!(
            "bit-level Monte Carlo needs at least 10^4 frames, got {frames}"
        )));
    }
    let n = cfg.particles_per_bit;
    let prior = cfg.prior_one;
    check_prior(prior)?;
    // thresholds for every (slot, earlier bits) pair
    let mut thresholds: Vec<Vec<f64>> = Vec::with_capacity(l);
    for i in 1..=l {
        let len = i - 1;
        let row = (0..(1usize << len))
            .map(|j| -> Result<f64> {
                let st = gaussian_stats(cir, &sequence(j, len), n)?;
                Ok(map_threshold(&st, prior).gamma)
            })
            .collect::<Result<Vec<_>>>()?;
        thresholds.push(row);
    }
    let blocks = frames.div_ceil(MC_BLOCK);
    let partial: Vec<Vec<u64>> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(blk);
            let mut errors = vec![0u64; l];
            let mut bits = vec![false; l];
            for _ in (blk * MC_BLOCK)..((blk + 1) * MC_BLOCK).min(frames) {
                for b in bits.iter_mut() {
                    *b = rng.gen::<f64>() < prior;
                }
                for i in 0..l {
                    // ISI: bit at frame position i - 1 - k weights p_R[k + 2]
                    let mut y = 0u64;
                    let mut key = 0usize;
                    for k in 0..i {
                        if bits[i - 1 - k] {
                            y += binomial(n, cir.slot_probs[k + 1], &mut rng);
                            key |= 1 << k;
                        }
                    }
                    if bits[i] {
                        y += binomial(n, cir.slot_probs[0], &mut rng);
                    }
                    let decided = y as f64 > thresholds[i][key];
                    if decided != bits[i] {
                        errors[i] += 1;
                    }
                }
            }
            errors
        })
        .collect();
    let mut errors = vec![0u64; l];
    for p in &partial {
        for i in 0..l {
            errors[i] += p[i];
        }
    }
    Ok(BepResult {
        per_slot: errors.iter().map(|&e| e as f64 / frames as f64).collect(),
        isi_free_pd: 1.0 - q_function((n as f64 * cir.slot_probs[0]).sqrt()),
        method: BepMethod::BitLevelMc,
        interval: Some(wilson_interval(errors[l - 1], frames, WILSON_Z)),
    })
}
