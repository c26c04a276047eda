//! Synthetic claims with planted fraud rules.
//!
//! Codes are laid out as
//! `0 = unknown | G1 | G2 (add-on codes) | G3 (their prerequisites) | background`.
//! Fraud is drawn from a logistic model over three signals:
//!
//! * R1, row-local: some row bills a G1 code with a factor of at least
//!   `r1_min_factor`. Summing one-hots separately loses this pairing.
//! * R2, cross-row: some add-on code `g_i` from G2 appears without its own
//!   prerequisite `p_i` from G3. Prerequisites of other pairs appear as decoys,
//!   so only the specific pairing matters.
//! * length: `ln T / ln 100`, so longer claims are more often fraudulent.
//!
//! Each claim uses its own ChaCha stream derived from the seed and the claim
//! index, so generation is independent of ordering and parallelism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use super::{Claim, ClaimRow, DataError, Dataset, Result, FORMAT_VERSION, MAX_ROWS};

pub const NUM_FACTORS: usize = 6;

/// Multiplier applied to a code's basis amount for each factor level.
const FACTOR_MULTIPLIERS: [f64; NUM_FACTORS] = [1.0, 1.15, 1.8, 2.3, 2.5, 3.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub format_version: u32,
    pub n_claims: usize,
    pub seed: u64,
    #[serde(default = "defaults::code_vocab")]
    pub code_vocab: u32,
    /// Fraud probability of a one-row claim that triggers no rule.
    #[serde(default = "defaults::base_rate")]
    pub base_rate: f64,
    #[serde(default = "defaults::mean_length")]
    pub mean_length: f64,
    /// Exponent of the Zipf law over background codes.
    #[serde(default = "defaults::zipf_exponent")]
    pub zipf_exponent: f64,
    #[serde(default = "defaults::factor_weights")]
    pub factor_weights: [f64; NUM_FACTORS],
    #[serde(default = "defaults::r1_group_size")]
    pub r1_group_size: u32,
    /// Probability that a row's code is drawn from G1.
    #[serde(default = "defaults::r1_row_prob")]
    pub r1_row_prob: f64,
    #[serde(default = "defaults::r1_min_factor")]
    pub r1_min_factor: u8,
    #[serde(default = "defaults::r1_weight")]
    pub r1_weight: f64,
    #[serde(default = "defaults::r2_pairs")]
    pub r2_pairs: u32,
    /// Probability that a claim bills an add-on code.
    #[serde(default = "defaults::r2_claim_prob")]
    pub r2_claim_prob: f64,
    /// Probability that the add-on's prerequisite is billed alongside it.
    #[serde(default = "defaults::r2_partner_prob")]
    pub r2_partner_prob: f64,
    /// Probability that a claim bills some prerequisite code as a decoy.
    #[serde(default = "defaults::r2_decoy_prob")]
    pub r2_decoy_prob: f64,
    #[serde(default = "defaults::r2_weight")]
    pub r2_weight: f64,
    #[serde(default = "defaults::length_weight")]
    pub length_weight: f64,
    /// Probability of flipping each label after sampling.
    #[serde(default = "defaults::label_noise")]
    pub label_noise: f64,
    #[serde(default = "defaults::correction_beta")]
    pub correction_beta: (f64, f64),
    /// Lower bound on a positive claim's correction.
    #[serde(default = "defaults::correction_floor")]
    pub correction_floor: f64,
}

mod defaults {
    use super::NUM_FACTORS;

    pub fn code_vocab() -> u32 {
        4000
    }
    pub fn base_rate() -> f64 {
        0.004
    }
    pub fn mean_length() -> f64 {
        8.0
    }
    pub fn zipf_exponent() -> f64 {
        1.05
    }
    pub fn factor_weights() -> [f64; NUM_FACTORS] {
        [0.30, 0.22, 0.16, 0.12, 0.11, 0.09]
    }
    pub fn r1_group_size() -> u32 {
        40
    }
    pub fn r1_row_prob() -> f64 {
        0.05
    }
    pub fn r1_min_factor() -> u8 {
        4
    }
    pub fn r1_weight() -> f64 {
        7.0
    }
    pub fn r2_pairs() -> u32 {
        24
    }
    pub fn r2_claim_prob() -> f64 {
        0.2
    }
    pub fn r2_partner_prob() -> f64 {
        0.6
    }
    pub fn r2_decoy_prob() -> f64 {
        0.5
    }
    pub fn r2_weight() -> f64 {
        7.0
    }
    pub fn length_weight() -> f64 {
        1.5
    }
    pub fn label_noise() -> f64 {
        0.05
    }
    pub fn correction_beta() -> (f64, f64) {
        (2.0, 5.0)
    }
    pub fn correction_floor() -> f64 {
        20.5
    }
}

impl GeneratorSpec {
    /// Default benchmark parameters for `n_claims` claims.
    pub fn new(n_claims: usize, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            n_claims,
            seed,
            code_vocab: defaults::code_vocab(),
            base_rate: defaults::base_rate(),
            mean_length: defaults::mean_length(),
            zipf_exponent: defaults::zipf_exponent(),
            factor_weights: defaults::factor_weights(),
            r1_group_size: defaults::r1_group_size(),
            r1_row_prob: defaults::r1_row_prob(),
            r1_min_factor: defaults::r1_min_factor(),
            r1_weight: defaults::r1_weight(),
            r2_pairs: defaults::r2_pairs(),
            r2_claim_prob: defaults::r2_claim_prob(),
            r2_partner_prob: defaults::r2_partner_prob(),
            r2_decoy_prob: defaults::r2_decoy_prob(),
            r2_weight: defaults::r2_weight(),
            length_weight: defaults::length_weight(),
            label_noise: defaults::label_noise(),
            correction_beta: defaults::correction_beta(),
            correction_floor: defaults::correction_floor(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s).map_err(|e| DataError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(DataError::Config(format!("{field}: {why}")));
        if self.format_version != FORMAT_VERSION {
            return bad("format_version", format!("unsupported version {}", self.format_version));
        }
        for (name, p) in [
            ("base_rate", self.base_rate),
            ("r1_row_prob", self.r1_row_prob),
            ("r2_claim_prob", self.r2_claim_prob),
            ("r2_partner_prob", self.r2_partner_prob),
            ("r2_decoy_prob", self.r2_decoy_prob),
            ("label_noise", self.label_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(name, format!("probability {p} outside [0, 1]"));
            }
        }
        for (name, w) in [
            ("r1_weight", self.r1_weight),
            ("r2_weight", self.r2_weight),
            ("length_weight", self.length_weight),
        ] {
            if !w.is_finite() {
                return bad(name, "must be finite".into());
            }
        }
        if !(self.mean_length >= 1.0) || !self.mean_length.is_finite() {
            return bad("mean_length", format!("must be at least 1, got {}", self.mean_length));
        }
        if !(self.zipf_exponent > 0.0) || !self.zipf_exponent.is_finite() {
            return bad("zipf_exponent", format!("must be positive, got {}", self.zipf_exponent));
        }
        if self.factor_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || self.factor_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("factor_weights", "need nonnegative weights with a positive sum".into());
        }
        if usize::from(self.r1_min_factor) >= NUM_FACTORS {
            return bad("r1_min_factor", format!("must be below {NUM_FACTORS}"));
        }
        let reserved = 1 + self.r1_group_size as u64 + 2 * self.r2_pairs as u64;
        if reserved + 1 > self.code_vocab as u64 {
            return bad(
                "code_vocab",
                format!("{} codes leave no background codes after {reserved} reserved", self.code_vocab),
            );
        }
        if self.r1_group_size == 0 && self.r1_row_prob > 0.0 {
            return bad("r1_group_size", "must be positive when r1_row_prob > 0".into());
        }
        if self.r2_pairs == 0 && self.r2_claim_prob > 0.0 {
            return bad("r2_pairs", "must be positive when r2_claim_prob > 0".into());
        }
        let (a, b) = self.correction_beta;
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return bad("correction_beta", format!("shape parameters must be positive, got ({a}, {b})"));
        }
        if !(self.correction_floor > 0.0) || !self.correction_floor.is_finite() {
            return bad("correction_floor", "must be positive".into());
        }
        Ok(())
    }

    pub fn g1(&self) -> std::ops::Range<u32> {
        1..1 + self.r1_group_size
    }

    pub fn g2(&self) -> std::ops::Range<u32> {
        let s = self.g1().end;
        s..s + self.r2_pairs
    }

    pub fn g3(&self) -> std::ops::Range<u32> {
        let s = self.g2().end;
        s..s + self.r2_pairs
    }

    pub fn background(&self) -> std::ops::Range<u32> {
        self.g3().end..self.code_vocab
    }

    /// Prerequisite of add-on code `g`.
    pub fn partner_of(&self, g: u32) -> u32 {
        g + self.r2_pairs
    }

    /// `P(T = t)` of the truncated geometric length distribution, `t` in 1..=100.
    pub fn length_pmf(&self, t: usize) -> f64 {
        let q = 1.0 / self.mean_length;
        if q >= 1.0 {
            return if t == 1 { 1.0 } else { 0.0 };
        }
        let norm = 1.0 - (1.0 - q).powi(MAX_ROWS as i32);
        (1.0 - q).powi(t as i32 - 1) * q / norm
    }

    /// Fraud logit for the given indicators. `-inf` / `+inf` at base rates 0 / 1.
    pub fn logit(&self, r1: bool, r2: bool, length: usize) -> f64 {
        let base = (self.base_rate / (1.0 - self.base_rate)).ln();
        let len_term = (length as f64).ln() / (MAX_ROWS as f64).ln();
        base + self.r1_weight * f64::from(u8::from(r1))
            + self.r2_weight * f64::from(u8::from(r2))
            + self.length_weight * len_term
    }
}

/// Ground truth behind one generated claim.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaimLatent {
    pub r1: bool,
    pub r2: bool,
    pub length: usize,
    pub logit: f64,
    /// Label before noise.
    pub clean_label: u8,
}

pub fn generate_dataset(spec: &GeneratorSpec) -> Result<Dataset> {
    Ok(generate_with_latents(spec)?.0)
}

pub fn generate_with_latents(spec: &GeneratorSpec) -> Result<(Dataset, Vec<ClaimLatent>)> {
    spec.validate()?;
    let tables = CodeTables::new(spec);
    let mut claims = Vec::with_capacity(spec.n_claims);
    let mut latents = Vec::with_capacity(spec.n_claims);
    for i in 0..spec.n_claims {
        let (c, l) = generate_claim(spec, &tables, i)?;
        claims.push(c);
        latents.push(l);
    }
    Ok((Dataset::new(claims), latents))
}

struct CodeTables {
    basis: Vec<f64>,
    zipf: Option<Zipf<f64>>,
    factor_cdf: [f64; NUM_FACTORS],
}

impl CodeTables {
    fn new(spec: &GeneratorSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let basis_dist = Normal::new(40f64.ln(), 0.8).expect("valid normal");
        let basis = (0..spec.code_vocab).map(|_| basis_dist.sample(&mut rng).exp()).collect();
        let n_background = spec.background().len();
        let zipf = Zipf::new(n_background as f64, spec.zipf_exponent).ok();
        let total: f64 = spec.factor_weights.iter().sum();
        let mut factor_cdf = [0.0; NUM_FACTORS];
        let mut acc = 0.0;
        for (c, w) in factor_cdf.iter_mut().zip(&spec.factor_weights) {
            acc += w / total;
            *c = acc;
        }
        factor_cdf[NUM_FACTORS - 1] = 1.0;
        Self {
            basis,
            zipf,
            factor_cdf,
        }
    }
}

fn sample_length(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> usize {
    let q = 1.0 / spec.mean_length;
    if q >= 1.0 {
        return 1;
    }
    // inverse CDF of the geometric distribution truncated to 1..=MAX_ROWS
    let tail = 1.0 - (1.0 - q).powi(MAX_ROWS as i32);
    let u: f64 = rng.random();
    let t = 1.0 + ((1.0 - u * tail).ln() / (1.0 - q).ln()).floor();
    (t as usize).clamp(1, MAX_ROWS)
}

fn generate_claim(spec: &GeneratorSpec, tables: &CodeTables, index: usize) -> Result<(Claim, ClaimLatent)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);

    let t = sample_length(spec, &mut rng);
    let g1 = spec.g1();
    let background = spec.background();
    let mut codes = Vec::with_capacity(t);
    let mut factors = Vec::with_capacity(t);
    for _ in 0..t {
        let code = if rng.random::<f64>() < spec.r1_row_prob {
            rng.random_range(g1.clone())
        } else {
            let z = tables.zipf.as_ref().expect("validated background size");
            background.start + (z.sample(&mut rng) as u32 - 1).min(background.len() as u32 - 1)
        };
        codes.push(code);
        let u: f64 = rng.random();
        let factor = tables.factor_cdf.iter().position(|c| u < *c).unwrap_or(NUM_FACTORS - 1);
        factors.push(factor as u8);
    }

    // Plant the cross-row pattern on distinct positions.
    let mut free: Vec<usize> = (0..t).collect();
    let mut take_slot = |rng: &mut ChaCha8Rng| -> Option<usize> {
        if free.is_empty() {
            None
        } else {
            Some(free.swap_remove(rng.random_range(0..free.len())))
        }
    };
    if rng.random::<f64>() < spec.r2_claim_prob {
        let addon = rng.random_range(spec.g2());
        if let Some(pos) = take_slot(&mut rng) {
            codes[pos] = addon;
        }
        if rng.random::<f64>() < spec.r2_partner_prob {
            if let Some(pos) = take_slot(&mut rng) {
                codes[pos] = spec.partner_of(addon);
            }
        }
    }
    if rng.random::<f64>() < spec.r2_decoy_prob && spec.r2_pairs > 0 {
        let decoy = rng.random_range(spec.g3());
        if let Some(pos) = take_slot(&mut rng) {
            codes[pos] = decoy;
        }
    }

    let r1 = codes
        .iter()
        .zip(&factors)
        .any(|(c, f)| g1.contains(c) && *f >= spec.r1_min_factor);
    let r2 = codes
        .iter()
        .filter(|c| spec.g2().contains(*c))
        .any(|g| !codes.contains(&spec.partner_of(*g)));

    let noise: Normal<f64> = Normal::new(0.0, 0.1).expect("valid normal");
    let mut rows = Vec::with_capacity(t);
    for (code, factor) in codes.iter().zip(&factors) {
        let amount = tables.basis[*code as usize]
            * FACTOR_MULTIPLIERS[usize::from(*factor)]
            * noise.sample(&mut rng).exp();
        rows.push(ClaimRow::new(*code, *factor, (amount * 100.0).round().max(1.0) / 100.0)?);
    }

    let logit = spec.logit(r1, r2, t);
    let p = 1.0 / (1.0 + (-logit).exp());
    let clean_label = u8::from(rng.random::<f64>() < p);
    let flip = rng.random::<f64>() < spec.label_noise;
    let label = clean_label ^ u8::from(flip);

    let correction = if label == 1 {
        let (a, b) = spec.correction_beta;
        let frac = Beta::new(a, b).expect("validated beta").sample(&mut rng);
        let total: f64 = rows.iter().map(|r| r.amount).sum();
        ((total * frac).max(spec.correction_floor) * 100.0).round() / 100.0
    } else {
        0.0
    };

    let claim = Claim::new(format!("claim-{index:07}"), rows, label, correction)?;
    Ok((
        claim,
        ClaimLatent {
            r1,
            r2,
            length: t,
            logit,
            clean_label,
        },
    ))
}
