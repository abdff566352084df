//! Bit-level noise: ε-noisy copies, noisy vectors, the noise-regeneration
//! sampler and keyed, counter-based random streams.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Identifier of the generator family, recorded in output metadata.
pub const GENERATOR_ID: &str = "chacha12-keyed-v1";

/// Largest `t` for which a regeneration mask table is stored explicitly.
pub const MAX_REGEN_T: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("noise parameter {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("regeneration needs 0 < epsilon < 1/2, got {0}")]
    RegenRange(f64),
    #[error("regeneration length t must be >= 1")]
    ZeroLength,
    #[error("regeneration length t = {0} exceeds the table limit {MAX_REGEN_T}")]
    TooLong(usize),
    #[error("epsilon^t underflows for t = {t}, epsilon = {epsilon}")]
    Underflow { t: usize, epsilon: f64 },
    #[error("invalid bit string {0:?}")]
    BadBits(String),
}

/// Flip probability of a binary symmetric link.
///
/// Channel use accepts the closed interval [0, 1] (the degenerate ends are
/// handy for deterministic checks); regeneration narrows this to (0, 1/2).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseParam(f64);

impl NoiseParam {
    pub fn new(epsilon: f64) -> Result<Self, NoiseError> {
        if !(0.0..=1.0).contains(&epsilon) || epsilon.is_nan() {
            return Err(NoiseError::OutOfRange(epsilon));
        }
        Ok(NoiseParam(epsilon))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The noise of a single copy that is as informative as `t` independent
    /// copies at this parameter: ε^t.
    pub fn pow(self, t: usize) -> NoiseParam {
        NoiseParam(self.0.powi(t as i32))
    }

    pub fn check_regen_range(self) -> Result<(), NoiseError> {
        if self.0 > 0.0 && self.0 < 0.5 {
            Ok(())
        } else {
            Err(NoiseError::RegenRange(self.0))
        }
    }
}

impl TryFrom<f64> for NoiseParam {
    type Error = NoiseError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        NoiseParam::new(v)
    }
}

impl From<NoiseParam> for f64 {
    fn from(p: NoiseParam) -> f64 {
        p.0
    }
}

/// Key identifying an independent random stream: a domain tag plus indices
/// (node, trial, time, ...).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub tag: String,
    pub indices: Vec<u64>,
}

impl StreamKey {
    pub fn new(tag: &str, indices: &[u64]) -> Self {
        StreamKey {
            tag: tag.to_string(),
            indices: indices.to_vec(),
        }
    }

    pub fn with(&self, index: u64) -> Self {
        let mut k = self.clone();
        k.indices.push(index);
        k
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn derive_seed(seed: u64, key: &StreamKey) -> [u8; 32] {
    let mut state = seed ^ fnv1a(key.tag.as_bytes()).rotate_left(17);
    let mut acc = [splitmix64(&mut state); 4];
    for (i, &ix) in key.indices.iter().enumerate() {
        state ^= ix.wrapping_mul(0xD605_BBB5_8C8A_BBE3).wrapping_add(i as u64);
        let m = splitmix64(&mut state);
        acc[i % 4] ^= m;
        acc[(i + 1) % 4] = acc[(i + 1) % 4].rotate_left(23) ^ splitmix64(&mut state);
    }
    state ^= key.indices.len() as u64;
    let mut out = [0u8; 32];
    for (j, a) in acc.iter().enumerate() {
        let v = a ^ splitmix64(&mut state);
        out[j * 8..j * 8 + 8].copy_from_slice(&v.to_le_bytes());
    }
    out
}

/// A deterministic random stream addressed by `(seed, key, counter)`.
///
/// Streams are values: cloning one forks an identical copy, and streams with
/// distinct keys are independent ChaCha12 keystreams.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    key: StreamKey,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, key: StreamKey) -> Self {
        let rng = ChaCha12Rng::from_seed(derive_seed(seed, &key));
        RngStream { seed, key, rng }
    }

    pub fn keyed(seed: u64, tag: &str, indices: &[u64]) -> Self {
        Self::new(seed, StreamKey::new(tag, indices))
    }

    /// Stream positioned at `counter` (measured in 32-bit words).
    pub fn at(seed: u64, key: StreamKey, counter: u64) -> Self {
        let mut s = Self::new(seed, key);
        s.rng.set_word_pos(counter as u128);
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn key(&self) -> &StreamKey {
        &self.key
    }

    pub fn counter(&self) -> u64 {
        self.rng.get_word_pos() as u64
    }

    /// Independent child stream under an extended key.
    pub fn child(&self, index: u64) -> RngStream {
        RngStream::new(self.seed, self.key.with(index))
    }

    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// `true` with probability `p`; one 64-bit draw.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Index drawn from a finite distribution given by `probs`.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.unit();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
            }
            acc += p;
            if u < acc {
                return i;
            }
        }
        last_positive
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Fixed-length bit string. Bit `j` is character `j` of the text form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVector(Vec<bool>);

impl BitVector {
    pub fn zeros(n: usize) -> Self {
        BitVector(vec![false; n])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        BitVector(bits)
    }

    /// Bits of `index`, least significant first.
    pub fn from_index(index: u64, n: usize) -> Self {
        BitVector((0..n).map(|j| (index >> j) & 1 == 1).collect())
    }

    pub fn index(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &b)| acc | ((b as u64) << j))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn parity(&self) -> bool {
        self.0.iter().fold(false, |acc, &b| acc ^ b)
    }

    pub fn xor(&self, other: &BitVector) -> BitVector {
        assert_eq!(self.len(), other.len(), "bit vector length mismatch");
        BitVector(self.0.iter().zip(&other.0).map(|(a, b)| a ^ b).collect())
    }

    pub fn complement(&self) -> BitVector {
        BitVector(self.0.iter().map(|b| !b).collect())
    }

    /// Concatenation of several vectors.
    pub fn concat(parts: &[BitVector]) -> BitVector {
        BitVector(parts.iter().flat_map(|p| p.0.iter().copied()).collect())
    }

    /// Consecutive chunks of length `n`.
    pub fn chunks(&self, n: usize) -> Vec<BitVector> {
        if n == 0 {
            return Vec::new();
        }
        self.0.chunks(n).map(|c| BitVector(c.to_vec())).collect()
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitVector {
    type Err = NoiseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(NoiseError::BadBits(s.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(BitVector)
    }
}

impl Serialize for BitVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BitVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `b ⊕ η` with `η ~ Bernoulli(ε)`; consumes one draw.
pub fn noisy_copy(b: bool, eps: NoiseParam, rng: &mut RngStream) -> bool {
    b ^ rng.bernoulli(eps.value())
}

/// `x ⊕ z` with the coordinates of `z` iid Bernoulli(ε).
pub fn noisy_vector(x: &BitVector, eps: NoiseParam, rng: &mut RngStream) -> BitVector {
    BitVector(x.0.iter().map(|&b| noisy_copy(b, eps, rng)).collect())
}

/// Mask distribution used to turn one ε^t-noisy copy into `t` independent
/// ε-noisy copies.
#[derive(Clone, Debug, PartialEq)]
pub struct RegenTable {
    t: usize,
    epsilon: f64,
    /// Indexed by mask; bit `j` of the index is δ_{j+1}.
    probs: Vec<f64>,
}

impl RegenTable {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Noise level of the single copy the table expects: γ = ε^t.
    pub fn gamma(&self) -> f64 {
        self.epsilon.powi(self.t as i32)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, mask: &BitVector) -> f64 {
        self.probs[mask.index() as usize]
    }

    /// Largest violation of the complementary-pair equations
    /// `(1−γ)p_u + γp_ū = ε^{|u|}(1−ε)^{t−|u|}`.
    pub fn pair_residual(&self) -> f64 {
        let full = (1usize << self.t) - 1;
        let gamma = self.gamma();
        self.probs
            .iter()
            .enumerate()
            .map(|(u, &p)| {
                let w = u.count_ones() as i32;
                let target =
                    self.epsilon.powi(w) * (1.0 - self.epsilon).powi(self.t as i32 - w);
                ((1.0 - gamma) * p + gamma * self.probs[full ^ u] - target).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Serialize, Deserialize)]
struct RegenTableFile {
    t: usize,
    epsilon: f64,
    probs: BTreeMap<String, f64>,
}

impl Serialize for RegenTable {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let probs = self
            .probs
            .iter()
            .enumerate()
            .map(|(u, &p)| (BitVector::from_index(u as u64, self.t).to_string(), p))
            .collect();
        RegenTableFile {
            t: self.t,
            epsilon: self.epsilon,
            probs,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RegenTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let file = RegenTableFile::deserialize(d)?;
        if file.t == 0 || file.t > MAX_REGEN_T {
            return Err(D::Error::custom(format!("unsupported t = {}", file.t)));
        }
        let mut probs = vec![f64::NAN; 1 << file.t];
        for (k, p) in &file.probs {
            let bits: BitVector = k.parse().map_err(D::Error::custom)?;
            if bits.len() != file.t {
                return Err(D::Error::custom(format!("mask {k:?} has wrong length")));
            }
            probs[bits.index() as usize] = *p;
        }
        if probs.iter().any(|p| p.is_nan()) {
            return Err(D::Error::custom("regeneration table is missing masks"));
        }
        Ok(RegenTable {
            t: file.t,
            epsilon: file.epsilon,
            probs,
        })
    }
}

/// Solves the complementary-pair system for the mask law.
pub fn regen_table(t: usize, eps: NoiseParam) -> Result<RegenTable, NoiseError> {
    if t == 0 {
        return Err(NoiseError::ZeroLength);
    }
    eps.check_regen_range()?;
    if t > MAX_REGEN_T {
        return Err(NoiseError::TooLong(t));
    }
    let e = eps.value();
    let gamma = e.powi(t as i32);
    if gamma < 1e-300 {
        return Err(NoiseError::Underflow { t, epsilon: e });
    }
    let ti = t as i32;
    let probs = (0..1usize << t)
        .map(|u| {
            let w = u.count_ones() as i32;
            let own = e.powi(w) * (1.0 - e).powi(ti - w);
            let other = e.powi(ti - w) * (1.0 - e).powi(w);
            let p = ((1.0 - gamma) * own - gamma * other) / (1.0 - 2.0 * gamma);
            // Exact zeros (e.g. the t = 1 table) can come out as -1e-17.
            if p < 0.0 && p > -1e-15 {
                0.0
            } else {
                p
            }
        })
        .collect();
    Ok(RegenTable {
        t,
        epsilon: e,
        probs,
    })
}

/// Draws a mask from `table` and returns `(c ⊕ δ_1, …, c ⊕ δ_t)`.
pub fn regenerate(c: bool, table: &RegenTable, rng: &mut RngStream) -> BitVector {
    let mask = rng.categorical(&table.probs) as u64;
    BitVector::from_index(mask, table.t).xor(&BitVector(vec![c; table.t]))
}

/// Exact output law of `regenerate(noisy_copy(b, γ))`, indexed like masks.
pub fn regen_output_law(table: &RegenTable, source: bool) -> Vec<f64> {
    let gamma = table.gamma();
    let full = (1usize << table.t) - 1;
    let mut law = vec![0.0; 1 << table.t];
    for (c, pc) in [(source, 1.0 - gamma), (!source, gamma)] {
        let shift = if c { full } else { 0 };
        for (mask, &pm) in table.probs.iter().enumerate() {
            law[mask ^ shift] += pc * pm;
        }
    }
    law
}

/// Law of `t` independent ε-noisy copies of `b`, indexed like masks.
pub fn iid_copies_law(b: bool, t: usize, eps: f64) -> Vec<f64> {
    (0..1usize << t)
        .map(|y| {
            let flips = if b {
                t as u32 - y.count_ones()
            } else {
                y.count_ones()
            } as i32;
            eps.powi(flips) * (1.0 - eps).powi(t as i32 - flips)
        })
        .collect()
}

/// Total-variation distance between two laws on the same index set.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eps(e: f64) -> NoiseParam {
        NoiseParam::new(e).unwrap()
    }

    #[test]
    fn zero_and_full_noise_are_deterministic() {
        let mut rng = RngStream::keyed(1, "t", &[]);
        for _ in 0..1000 {
            assert!(!noisy_copy(false, eps(0.0), &mut rng));
            assert!(!noisy_copy(true, eps(1.0), &mut rng));
        }
        let x: BitVector = "0110".parse().unwrap();
        assert_eq!(noisy_vector(&x, eps(1.0), &mut rng), x.complement());
        assert_eq!(
            noisy_vector(&BitVector::zeros(5), eps(0.0), &mut rng),
            BitVector::zeros(5)
        );
    }

    #[test]
    fn noisy_copy_consumes_one_draw() {
        let mut rng = RngStream::keyed(3, "draws", &[]);
        let before = rng.counter();
        noisy_copy(true, eps(0.3), &mut rng);
        assert_eq!(rng.counter() - before, 2);
    }

    #[test]
    fn noisy_copy_mean_within_three_sigma() {
        let trials = 1_000_000;
        let mut rng = RngStream::keyed(11, "mean", &[]);
        let ones = (0..trials)
            .filter(|_| noisy_copy(false, eps(0.2), &mut rng))
            .count();
        let mean = ones as f64 / trials as f64;
        assert!((mean - 0.2).abs() <= 3.0 * (0.16f64 / trials as f64).sqrt());
    }

    #[test]
    fn uniform_noise_vector_law_is_uniform() {
        // Each of the 8 outcomes has probability 1/8: the exact law of x ⊕ z
        // with z ~ B(3, 1/2) is the product of fair bits.
        let law: Vec<f64> = (0..8u64)
            .map(|y| {
                let v = BitVector::from_index(y, 3);
                (0..3).map(|j| if v.get(j) { 0.5 } else { 0.5 }).product()
            })
            .collect();
        assert!(law.iter().all(|&p| (p - 0.125).abs() < 1e-15));
        let mut rng = RngStream::keyed(5, "unif", &[]);
        let mut counts = [0usize; 8];
        for _ in 0..80_000 {
            counts[noisy_vector(&BitVector::zeros(3), eps(0.5), &mut rng).index() as usize] += 1;
        }
        for c in counts {
            let p = c as f64 / 80_000.0;
            assert!((p - 0.125).abs() < 4.0 * (0.125f64 * 0.875 / 80_000.0).sqrt());
        }
    }

    #[test]
    fn streams_reproduce_by_key_and_counter() {
        let key = StreamKey::new("node", &[4, 9]);
        let mut a = RngStream::new(42, key.clone());
        let mut b = RngStream::new(42, key.clone());
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let mut c = RngStream::at(42, key, 10);
        assert_eq!(c.next_u64(), xs[5]);
        let mut d = RngStream::keyed(42, "node", &[9, 4]);
        assert_ne!(d.next_u64(), xs[0]);
        let mut e = RngStream::keyed(43, "node", &[4, 9]);
        assert_ne!(e.next_u64(), xs[0]);
    }

    #[test]
    fn regen_t1_is_identity() {
        let table = regen_table(1, eps(0.3)).unwrap();
        assert!((table.probs()[0] - 1.0).abs() < 1e-15);
        assert_eq!(table.probs()[1], 0.0);
        let mut rng = RngStream::keyed(0, "r", &[]);
        for c in [false, true] {
            assert_eq!(regenerate(c, &table, &mut rng), BitVector::from_bits(vec![c]));
        }
    }

    #[test]
    fn regen_t2_matches_hand_solution() {
        let table = regen_table(2, eps(0.2)).unwrap();
        let p = table.probs();
        assert!((p[0] - 0.6128 / 0.92).abs() < 1e-12);
        assert!((p[3] - 0.0128 / 0.92).abs() < 1e-12);
        assert!((p[1] - 0.16).abs() < 1e-12);
        assert!((p[2] - 0.16).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(table.pair_residual() < 1e-12);
        for b in [false, true] {
            let tv = total_variation(&regen_output_law(&table, b), &iid_copies_law(b, 2, 0.2));
            assert!(tv < 1e-12);
        }
    }

    #[test]
    fn regen_t3_joint_law_by_enumeration() {
        // Enumerate (source noise, mask) pairs directly rather than through
        // `regen_output_law`.
        let e = 0.1;
        let table = regen_table(3, eps(e)).unwrap();
        let gamma = e * e * e;
        for b in [false, true] {
            let mut law = [0.0; 8];
            for eta in [false, true] {
                let pc = if eta { gamma } else { 1.0 - gamma };
                let c = b ^ eta;
                for mask in 0..8u64 {
                    let out = BitVector::from_index(mask, 3).xor(&BitVector::from_bits(vec![c; 3]));
                    law[out.index() as usize] += pc * table.probs()[mask as usize];
                }
            }
            for (y, &p) in law.iter().enumerate() {
                let flips = BitVector::from_index(y as u64, 3)
                    .bits()
                    .iter()
                    .filter(|&&v| v != b)
                    .count() as i32;
                let target = e.powi(flips) * (1.0 - e).powi(3 - flips);
                assert!((p - target).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn regen_rejects_bad_ranges() {
        assert_eq!(regen_table(2, eps(0.5)), Err(NoiseError::RegenRange(0.5)));
        assert_eq!(regen_table(0, eps(0.1)), Err(NoiseError::ZeroLength));
        assert!(matches!(regen_table(21, eps(0.1)), Err(NoiseError::TooLong(21))));
        assert!(matches!(
            regen_table(20, eps(1e-16)),
            Err(NoiseError::Underflow { .. })
        ));
        assert!(NoiseParam::new(1.5).is_err());
    }

    #[test]
    fn regen_table_json_roundtrip() {
        let table = regen_table(2, eps(0.2)).unwrap();
        let text = serde_json::to_string(&table).unwrap();
        assert!(text.contains("\"t\":2"));
        assert!(text.contains("\"01\""));
        let back: RegenTable = serde_json::from_str(&text).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn regenerate_sampling_matches_table() {
        let table = regen_table(2, eps(0.2)).unwrap();
        let mut rng = RngStream::keyed(8, "sample", &[]);
        let trials = 200_000;
        let zeros = (0..trials)
            .filter(|_| regenerate(false, &table, &mut rng).index() == 0)
            .count();
        let p = zeros as f64 / trials as f64;
        let target = 0.6128 / 0.92;
        assert!((p - target).abs() < 4.0 * (target * (1.0 - target) / trials as f64).sqrt());
    }
}
