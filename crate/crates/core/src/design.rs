//! Bernoulli randomization designs and the exact-enumeration expectation oracle.
//!
//! Everything downstream that claims an exact expectation is checked against
//! [`exact_expectation`], which walks all `2^n_r` assignments with compensated
//! summation. The walk is capped at [`ENUMERATION_CAP`] units.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Hard cap on the number of randomization units for exhaustive enumeration.
pub const ENUMERATION_CAP: usize = 20;

/// One realized assignment of the randomization units, entries in {0, 1}.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TreatmentVector {
    bits: Vec<u8>,
}

impl TreatmentVector {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Parameter("treatment entries must be 0 or 1".into()));
        }
        Ok(Self { bits })
    }

    /// Assignment encoded by the low `n` bits of `index`; bit `r` is unit r's treatment.
    pub fn from_index(index: u64, n: usize) -> Self {
        let bits = (0..n).map(|r| ((index >> r) & 1) as u8).collect();
        Self { bits }
    }

    pub fn zeros(n: usize) -> Self {
        Self { bits: vec![0; n] }
    }

    pub fn ones(n: usize) -> Self {
        Self { bits: vec![1; n] }
    }

    /// Parse a bitstring like "0110"; position i is unit i's treatment.
    pub fn parse_bits(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Parameter(format!(
                    "treatment bitstring may contain only 0 and 1, found {other:?}"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Treatment of unit `r` as a bool.
    pub fn treated(&self, r: usize) -> bool {
        self.bits[r] == 1
    }

    /// Treatment of unit `r` as 0.0 or 1.0.
    pub fn value(&self, r: usize) -> f64 {
        f64::from(self.bits[r])
    }

    pub fn bit(&self, r: usize) -> u8 {
        self.bits[r]
    }

    pub fn count_treated(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }
}

impl std::fmt::Debug for TreatmentVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TreatmentVector(")?;
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        write!(f, ")")
    }
}

impl std::fmt::Display for TreatmentVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Independent Bernoulli(p) assignment of `n_r` randomization units.
///
/// Draws are a pure function of (seed, stream): the same pair always yields
/// the same assignment, regardless of how many draws happened in between.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliDesign {
    n_r: usize,
    p: f64,
    seed: u64,
}

impl BernoulliDesign {
    pub fn new(n_r: usize, p: f64, seed: u64) -> Result<Self> {
        if n_r == 0 {
            return Err(Error::Parameter("design needs at least one randomization unit".into()));
        }
        check_probability(p)?;
        Ok(Self { n_r, p, seed })
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Draw the assignment for the given replication stream.
    pub fn draw(&self, stream: u64) -> TreatmentVector {
        let mut rng = substream_rng(self.seed, stream);
        let bits = (0..self.n_r)
            .map(|_| u8::from(rng.random_bool(self.p)))
            .collect();
        TreatmentVector { bits }
    }

    /// Probability the design assigns exactly this vector.
    pub fn assignment_probability(&self, t: &TreatmentVector) -> Result<f64> {
        if t.len() != self.n_r {
            return Err(Error::Dimension(format!(
                "assignment has {} entries, design has {}",
                t.len(),
                self.n_r
            )));
        }
        let k = t.count_treated() as i32;
        Ok(self.p.powi(k) * (1.0 - self.p).powi(self.n_r as i32 - k))
    }
}

/// Reject p outside the open interval (0, 1); every inverse-probability weight
/// divides by both p and 1-p.
pub fn check_probability(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Parameter(format!(
            "treatment probability must lie strictly between 0 and 1, got {p}"
        )));
    }
    Ok(())
}

/// splitmix64 finalizer; decorrelates substream seeds derived from one master seed.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for (master seed, stream index).
pub fn subseed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Seeded generator for one substream.
pub fn substream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(seed, stream))
}

/// Compensated (Kahan) accumulator; exact expectations sum up to 2^20 terms
/// of mixed sign and the acceptance tolerances are 1e-10 and tighter.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Iterator over all `2^n_r` assignments with their design probabilities.
pub struct AssignmentIter {
    n_r: usize,
    p: f64,
    next: u64,
    total: u64,
}

impl Iterator for AssignmentIter {
    type Item = (TreatmentVector, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let t = TreatmentVector::from_index(index, self.n_r);
        let k = index.count_ones() as i32;
        let prob = self.p.powi(k) * (1.0 - self.p).powi(self.n_r as i32 - k);
        Some((t, prob))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = (self.total - self.next) as usize;
        (rest, Some(rest))
    }
}

/// All assignments of `n_r` units under independent Bernoulli(p).
pub fn enumerate_assignments(n_r: usize, p: f64) -> Result<AssignmentIter> {
    if n_r > ENUMERATION_CAP {
        return Err(Error::EnumerationCap { n_r, cap: ENUMERATION_CAP });
    }
    check_probability(p)?;
    Ok(AssignmentIter { n_r, p, next: 0, total: 1u64 << n_r })
}

/// Exact E[f(T)] under the Bernoulli(p) design, by full enumeration.
pub fn exact_expectation<F>(n_r: usize, p: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&TreatmentVector) -> f64,
{
    let mut acc = KahanSum::new();
    for (t, prob) in enumerate_assignments(n_r, p)? {
        acc.add(prob * f(&t));
    }
    Ok(acc.value())
}

/// Exact E[f(T)] where evaluating the statistic itself can fail.
pub fn exact_expectation_checked<F>(n_r: usize, p: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&TreatmentVector) -> Result<f64>,
{
    let mut acc = KahanSum::new();
    for (t, prob) in enumerate_assignments(n_r, p)? {
        acc.add(prob * f(&t)?);
    }
    Ok(acc.value())
}

/// Exact Cov(f(T), g(T)) under the Bernoulli(p) design.
pub fn exact_covariance<F, G>(n_r: usize, p: f64, mut f: F, mut g: G) -> Result<f64>
where
    F: FnMut(&TreatmentVector) -> f64,
    G: FnMut(&TreatmentVector) -> f64,
{
    let mut ef = KahanSum::new();
    let mut eg = KahanSum::new();
    let mut efg = KahanSum::new();
    for (t, prob) in enumerate_assignments(n_r, p)? {
        let fv = f(&t);
        let gv = g(&t);
        ef.add(prob * fv);
        eg.add(prob * gv);
        efg.add(prob * fv * gv);
    }
    Ok(efg.value() - ef.value() * eg.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_is_complete_and_probabilities_sum_to_one() {
        for n_r in 1..=6 {
            for &p in &[0.2, 0.5, 0.8] {
                let mut seen = std::collections::HashSet::new();
                let mut total = KahanSum::new();
                for (t, prob) in enumerate_assignments(n_r, p).unwrap() {
                    assert!(prob > 0.0);
                    total.add(prob);
                    seen.insert(t);
                }
                assert_eq!(seen.len(), 1 << n_r);
                assert!((total.value() - 1.0).abs() < 1e-12, "p={p} n_r={n_r}");
            }
        }
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let err = enumerate_assignments(ENUMERATION_CAP + 1, 0.5).err().unwrap();
        assert!(matches!(err, Error::EnumerationCap { n_r: 21, cap: 20 }));
    }

    #[test]
    fn degenerate_probabilities_are_rejected() {
        assert!(BernoulliDesign::new(4, 0.0, 0).is_err());
        assert!(BernoulliDesign::new(4, 1.0, 0).is_err());
        assert!(BernoulliDesign::new(4, f64::NAN, 0).is_err());
        assert!(enumerate_assignments(4, 1.0).is_err());
    }

    #[test]
    fn oracle_is_linear() {
        // E[aX + bY] = aE[X] + bE[Y] for arbitrary statistics.
        let f = |t: &TreatmentVector| t.value(0) * 3.0 + t.value(2);
        let g = |t: &TreatmentVector| t.value(1) - 2.0 * t.value(0) * t.value(2);
        let combined = exact_expectation(3, 0.3, |t| 2.0 * f(t) - 5.0 * g(t)).unwrap();
        let ef = exact_expectation(3, 0.3, f).unwrap();
        let eg = exact_expectation(3, 0.3, g).unwrap();
        assert!((combined - (2.0 * ef - 5.0 * eg)).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_bernoulli_moments() {
        // E[T_r] = p and E[prod T_r] = p^k for independent coordinates.
        let e1 = exact_expectation(5, 0.3, |t| t.value(2)).unwrap();
        assert!((e1 - 0.3).abs() < 1e-14);
        let e3 = exact_expectation(5, 0.3, |t| t.value(0) * t.value(3) * t.value(4)).unwrap();
        assert!((e3 - 0.3_f64.powi(3)).abs() < 1e-14);
    }

    #[test]
    fn exact_covariance_of_coordinates_is_diagonal() {
        for &p in &[0.2, 0.5, 0.8] {
            for r in 0..4 {
                for s in 0..4 {
                    let cov =
                        exact_covariance(4, p, |t| t.value(r), |t| t.value(s)).unwrap();
                    let want = if r == s { p * (1.0 - p) } else { 0.0 };
                    assert!(
                        (cov - want).abs() < 1e-12,
                        "p={p} r={r} s={s} cov={cov} want={want}"
                    );
                }
            }
        }
    }

    #[test]
    fn draws_are_reproducible_and_streams_differ() {
        let design = BernoulliDesign::new(64, 0.5, 11).unwrap();
        assert_eq!(design.draw(3), design.draw(3));
        assert_ne!(design.draw(3), design.draw(4));

        let other_seed = BernoulliDesign::new(64, 0.5, 12).unwrap();
        assert_ne!(design.draw(3), other_seed.draw(3));
    }

    #[test]
    fn draw_frequencies_are_close_to_p() {
        let design = BernoulliDesign::new(1000, 0.3, 7).unwrap();
        let t = design.draw(0);
        let frac = t.count_treated() as f64 / 1000.0;
        assert!((frac - 0.3).abs() < 0.05, "frac={frac}");
    }

    #[test]
    fn assignment_probability_matches_enumeration_weight() {
        let design = BernoulliDesign::new(6, 0.4, 0).unwrap();
        for (t, prob) in enumerate_assignments(6, 0.4).unwrap() {
            let direct = design.assignment_probability(&t).unwrap();
            assert!((direct - prob).abs() < 1e-15);
        }
    }

    #[test]
    fn bitstring_round_trip() {
        let t = TreatmentVector::parse_bits("01101").unwrap();
        assert_eq!(t.to_string(), "01101");
        assert!(t.treated(1) && t.treated(2) && t.treated(4));
        assert!(!t.treated(0) && !t.treated(3));
        assert!(TreatmentVector::parse_bits("01x1").is_err());
    }

    #[test]
    fn kahan_survives_adversarial_cancellation() {
        // A plain fold absorbs every 1e-16 into 1.0 and returns exactly 0;
        // compensation keeps the error near machine epsilon of the total
        // magnitude instead.
        let mut acc = KahanSum::new();
        let mut naive = 0.0;
        acc.add(1.0);
        naive += 1.0;
        for _ in 0..10_000 {
            acc.add(1e-16);
            naive += 1e-16;
        }
        acc.add(-1.0);
        naive += -1.0;
        assert_eq!(naive, 0.0);
        assert!((acc.value() - 1e-12).abs() < 5e-16);
    }
}
