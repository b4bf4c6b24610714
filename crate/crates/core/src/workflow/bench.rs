//! Timing harness for attribute signing and verification.
//!
//! Two sweeps are supported: attribute value length with one attribute, and
//! number of attributes per owner. Trials are interleaved round-robin across
//! the sweep points, so slow drift in machine load spreads evenly instead of
//! landing on one point.
//!
//! Absolute times depend on the machine. The checks assert shapes: sign and
//! verify time flat in value length, total time linear in attribute count,
//! and verification slower than signing.

use std::time::Instant;

use rand::distributions::Alphanumeric;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use super::WorkflowError;
use crate::abms::{attribute_digest, verify_attribute, AttributeSignature, SignatureAuthority};
use crate::attribute::AttributeId;
use crate::pairing::{bls_sign, PairingParams};

pub const BENCH_SCHEMA_VERSION: u32 = 1;
pub const MIN_TRIALS: usize = 30;
pub const DEFAULT_LENGTHS: [usize; 4] = [10, 100, 1000, 10000];
pub const DEFAULT_COUNTS: [usize; 5] = [1, 3, 5, 7, 9];
const WARMUP_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchScenario {
    VaryLength,
    VaryCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

impl Stat {
    fn of(samples: &[f64]) -> Self {
        let stddev = if samples.len() > 1 { samples.std_dev() } else { 0.0 };
        Self { mean: samples.mean(), stddev }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    /// Value length or attribute count.
    pub x: usize,
    /// Total time for all attributes at this point, in milliseconds.
    pub sign_ms: Stat,
    pub verify_ms: Stat,
    /// `sign_ms.mean / x` for count sweeps, equal to `sign_ms.mean` otherwise.
    pub sign_per_attr_ms: f64,
    pub verify_per_attr_ms: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub max_flatness: f64,
    pub min_r2: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { max_flatness: 1.25, min_r2: 0.98 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeChecks {
    /// max mean / min mean across points, for length sweeps.
    pub sign_flatness: Option<f64>,
    pub verify_flatness: Option<f64>,
    /// Linear-fit R² of total time against count, for count sweeps with
    /// at least two points.
    pub sign_r2: Option<f64>,
    pub verify_r2: Option<f64>,
    pub verify_exceeds_sign: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub scenario: BenchScenario,
    pub tolerances: Tolerances,
    pub points: Vec<BenchPoint>,
    pub checks: ShapeChecks,
}

/// Least-squares line through `(x, y)` and its coefficient of determination.
pub fn linear_r2(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let (mx, my) = (xs.mean(), ys.mean());
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - (intercept + slope * x)).powi(2)).sum();
    Some(if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot })
}

fn flatness(means: &[f64]) -> Option<f64> {
    if means.is_empty() {
        return None;
    }
    let max = means.iter().cloned().fold(f64::MIN, f64::max);
    let min = means.iter().cloned().fold(f64::MAX, f64::min);
    Some(max / min)
}

fn random_value(rng: &mut impl RngCore, len: usize) -> String {
    rng.sample_iter(&Alphanumeric).take(len).map(char::from).collect()
}

struct Signer {
    params: PairingParams,
    keys: Vec<(AttributeId, crate::pairing::SigningKey, crate::pairing::VerificationKey)>,
}

impl Signer {
    fn new(count: usize, rng: &mut (impl RngCore + rand::CryptoRng)) -> Result<Self, WorkflowError> {
        let params = PairingParams::setup(128)?;
        let mut auth = SignatureAuthority::new("bench");
        let mut keys = Vec::with_capacity(count);
        for i in 0..count {
            let id = AttributeId::new("bench", format!("attr{i}"))?;
            let k = auth.setup_attribute(&params, &id, rng)?;
            keys.push((id, k.signature_key.clone(), k.verification_key));
        }
        Ok(Self { params, keys })
    }

    /// Time signing then verifying the first `n` attributes with the given
    /// values. Returns milliseconds.
    fn trial(&self, values: &[String]) -> Result<(f64, f64), WorkflowError> {
        let start = Instant::now();
        let mut sigs = Vec::with_capacity(values.len());
        for ((id, sk, _), v) in self.keys.iter().zip(values) {
            let digest = attribute_digest(id, v);
            let signature = bls_sign(&self.params, sk, &digest)?;
            sigs.push(AttributeSignature { attribute: id.clone(), signature, hashed_value_digest: digest });
        }
        let sign = start.elapsed().as_secs_f64() * 1e3;
        let start = Instant::now();
        let mut ok = true;
        for ((_, _, vk), sig) in self.keys.iter().zip(&sigs) {
            ok &= verify_attribute(&self.params, sig, vk)?.is_accept();
        }
        let verify = start.elapsed().as_secs_f64() * 1e3;
        if !ok {
            return Err(WorkflowError::Unexpected("benchmark signature failed to verify".into()));
        }
        Ok((sign, verify))
    }
}

fn check_trials(trials: usize) -> Result<(), WorkflowError> {
    if trials < MIN_TRIALS {
        return Err(WorkflowError::Invalid(format!("trials must be at least {MIN_TRIALS}, got {trials}")));
    }
    Ok(())
}

/// Sign and verify one attribute whose value has each of `lengths`
/// characters, drawing a fresh value for every trial.
pub fn bench_length(
    lengths: &[usize],
    trials: usize,
    tolerances: Tolerances,
    rng: &mut (impl RngCore + rand::CryptoRng),
) -> Result<BenchReport, WorkflowError> {
    check_trials(trials)?;
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(WorkflowError::Invalid("lengths must be non-empty and positive".into()));
    }
    let signer = Signer::new(1, rng)?;
    let mut samples = vec![(Vec::with_capacity(trials), Vec::with_capacity(trials)); lengths.len()];
    for round in 0..WARMUP_ROUNDS + trials {
        for (i, &len) in lengths.iter().enumerate() {
            let value = random_value(rng, len);
            let (s, v) = signer.trial(std::slice::from_ref(&value))?;
            if round >= WARMUP_ROUNDS {
                samples[i].0.push(s);
                samples[i].1.push(v);
            }
        }
    }
    let points: Vec<BenchPoint> = lengths
        .iter()
        .zip(&samples)
        .map(|(&x, (s, v))| {
            let (sign_ms, verify_ms) = (Stat::of(s), Stat::of(v));
            BenchPoint {
                x,
                sign_ms,
                verify_ms,
                sign_per_attr_ms: sign_ms.mean,
                verify_per_attr_ms: verify_ms.mean,
                trials,
            }
        })
        .collect();
    let sign_flatness = flatness(&points.iter().map(|p| p.sign_ms.mean).collect::<Vec<_>>());
    let verify_flatness = flatness(&points.iter().map(|p| p.verify_ms.mean).collect::<Vec<_>>());
    let verify_exceeds_sign = points.iter().all(|p| p.verify_per_attr_ms > p.sign_per_attr_ms);
    let passed = verify_exceeds_sign
        && sign_flatness.is_some_and(|f| f <= tolerances.max_flatness)
        && verify_flatness.is_some_and(|f| f <= tolerances.max_flatness);
    Ok(BenchReport {
        schema_version: BENCH_SCHEMA_VERSION,
        scenario: BenchScenario::VaryLength,
        tolerances,
        points,
        checks: ShapeChecks {
            sign_flatness,
            verify_flatness,
            sign_r2: None,
            verify_r2: None,
            verify_exceeds_sign,
            passed,
        },
    })
}

/// Sign and verify `count` attributes per trial for each of `counts`.
/// Values are 10 characters, fresh per trial.
pub fn bench_count(
    counts: &[usize],
    trials: usize,
    tolerances: Tolerances,
    rng: &mut (impl RngCore + rand::CryptoRng),
) -> Result<BenchReport, WorkflowError> {
    check_trials(trials)?;
    if counts.is_empty() || counts.contains(&0) {
        return Err(WorkflowError::Invalid("counts must be non-empty and positive".into()));
    }
    let max = *counts.iter().max().expect("non-empty");
    let signer = Signer::new(max, rng)?;
    let mut samples = vec![(Vec::with_capacity(trials), Vec::with_capacity(trials)); counts.len()];
    for round in 0..WARMUP_ROUNDS + trials {
        for (i, &count) in counts.iter().enumerate() {
            let values: Vec<String> = (0..count).map(|_| random_value(rng, 10)).collect();
            let (s, v) = signer.trial(&values)?;
            if round >= WARMUP_ROUNDS {
                samples[i].0.push(s);
                samples[i].1.push(v);
            }
        }
    }
    let points: Vec<BenchPoint> = counts
        .iter()
        .zip(&samples)
        .map(|(&x, (s, v))| {
            let (sign_ms, verify_ms) = (Stat::of(s), Stat::of(v));
            BenchPoint {
                x,
                sign_ms,
                verify_ms,
                sign_per_attr_ms: sign_ms.mean / x as f64,
                verify_per_attr_ms: verify_ms.mean / x as f64,
                trials,
            }
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.x as f64).collect();
    let sign_r2 = linear_r2(&xs, &points.iter().map(|p| p.sign_ms.mean).collect::<Vec<_>>());
    let verify_r2 = linear_r2(&xs, &points.iter().map(|p| p.verify_ms.mean).collect::<Vec<_>>());
    let verify_exceeds_sign = points.iter().all(|p| p.verify_per_attr_ms > p.sign_per_attr_ms);
    let fit_ok = |r: Option<f64>| r.map_or(points.len() < 2, |r| r >= tolerances.min_r2);
    let passed = verify_exceeds_sign && fit_ok(sign_r2) && fit_ok(verify_r2);
    Ok(BenchReport {
        schema_version: BENCH_SCHEMA_VERSION,
        scenario: BenchScenario::VaryCount,
        tolerances,
        points,
        checks: ShapeChecks {
            sign_flatness: None,
            verify_flatness: None,
            sign_r2,
            verify_r2,
            verify_exceeds_sign,
            passed,
        },
    })
}
