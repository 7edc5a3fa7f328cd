//! Integer-rule oracle: a brute-force stand-in for a language model.
//!
//! Items must be integers. Mining searches every rule of the grammar
//!
//! ```text
//! value >= c | value < c | value mod m in [a, b]   (m = 2, 4, ..., 512)
//! ```
//!
//! for the one with the highest accuracy on the exemplars. Ties prefer rules with "rounder"
//! constants (fewest binary digits needed to place each cut), then the smallest modulus
//! (threshold rules rank after every modulus), then the smallest constant.

use std::fmt;

use crate::corpus::SemanticItem;

use super::{FeatureDescriptor, MiningRequest, Oracle, OracleError};

const MODULI: [i64; 9] = [2, 4, 8, 16, 32, 64, 128, 256, 512];
const MAX_THRESHOLD_SWEEP: i64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntRule {
    AtLeast(i64),
    Below(i64),
    ModRange { modulus: i64, low: i64, high: i64 },
}

impl IntRule {
    pub fn eval(&self, v: i64) -> bool {
        match *self {
            IntRule::AtLeast(c) => v >= c,
            IntRule::Below(c) => v < c,
            IntRule::ModRange { modulus, low, high } => {
                let r = v.rem_euclid(modulus);
                low <= r && r <= high
            }
        }
    }

    pub fn parse(text: &str) -> Option<IntRule> {
        let s = text.trim().replace('≥', ">=");
        let rest = s.strip_prefix("value")?.trim();
        if let Some(c) = rest.strip_prefix(">=") {
            return c.trim().parse().ok().map(IntRule::AtLeast);
        }
        if let Some(c) = rest.strip_prefix('<') {
            return c.trim().parse().ok().map(IntRule::Below);
        }
        let rest = rest.strip_prefix("mod")?.trim();
        let (m, interval) = rest.split_once(" in ")?;
        let interval = interval.trim().strip_prefix('[')?.strip_suffix(']')?;
        let (a, b) = interval.split_once(',')?;
        let modulus: i64 = m.trim().parse().ok()?;
        let (low, high) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        (modulus > 0 && 0 <= low && low <= high && high < modulus)
            .then_some(IntRule::ModRange { modulus, low, high })
    }

    fn complexity(&self) -> u32 {
        match *self {
            IntRule::AtLeast(c) | IntRule::Below(c) => significant_bits(c),
            IntRule::ModRange { modulus, low, high } => {
                boundary_bits(low, modulus) + boundary_bits(high + 1, modulus)
            }
        }
    }

    fn tie_key(&self) -> (u32, i64, i64, i64, u8) {
        match *self {
            IntRule::ModRange { modulus, low, high } => {
                (self.complexity(), modulus, low, high, 0)
            }
            IntRule::AtLeast(c) => (self.complexity(), i64::MAX, c, 0, 1),
            IntRule::Below(c) => (self.complexity(), i64::MAX, c, 0, 2),
        }
    }
}

impl fmt::Display for IntRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntRule::AtLeast(c) => write!(f, "value >= {c}"),
            IntRule::Below(c) => write!(f, "value < {c}"),
            IntRule::ModRange { modulus, low, high } => {
                write!(f, "value mod {modulus} in [{low}, {high}]")
            }
        }
    }
}

/// Binary digits needed to place a cut at `b` within `[0, modulus]` (a power of two):
/// 0 at either end, 1 at the midpoint, 2 at the quarter points, and so on.
fn boundary_bits(b: i64, modulus: i64) -> u32 {
    if b == 0 || b == modulus {
        return 0;
    }
    modulus.trailing_zeros() - b.trailing_zeros()
}

/// Binary digits left after dropping trailing zeros: 256 -> 1, 192 -> 2, 255 -> 8.
fn significant_bits(n: i64) -> u32 {
    if n == 0 {
        return 0;
    }
    let m = n.unsigned_abs();
    let odd = m >> m.trailing_zeros();
    (64 - odd.leading_zeros()) + u32::from(n < 0)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticOracle;

impl SyntheticOracle {
    pub fn new() -> Self {
        Self
    }

    fn value(item: &SemanticItem) -> Result<i64, OracleError> {
        item.text.trim().parse().map_err(|_| {
            OracleError::InvalidRequest(format!("item `{}` is not an integer", item.id))
        })
    }

    fn rule(descriptor: &FeatureDescriptor) -> Result<IntRule, OracleError> {
        IntRule::parse(descriptor.text()).ok_or_else(|| {
            OracleError::InvalidRequest(format!("`{descriptor}` is not an integer rule"))
        })
    }

    /// Highest-accuracy rule on the exemplars, with the documented tie order.
    pub fn best_rule(positives: &[i64], negatives: &[i64]) -> IntRule {
        let mut best: Option<(usize, IntRule)> = None;
        let mut consider = |correct: usize, rule: IntRule| {
            let better = match &best {
                None => true,
                Some((c, r)) => correct > *c || (correct == *c && rule.tie_key() < r.tie_key()),
            };
            if better {
                best = Some((correct, rule));
            }
        };

        let all = positives.iter().chain(negatives);
        let lo = *all.clone().min().expect("non-empty request");
        let hi = *all.clone().max().expect("non-empty request");
        let mut cutpoints: Vec<i64> = if hi - lo <= MAX_THRESHOLD_SWEEP {
            (lo..=hi + 1).collect()
        } else {
            all.flat_map(|&v| [v, v + 1]).collect()
        };
        cutpoints.sort_unstable();
        cutpoints.dedup();
        for &c in &cutpoints {
            let pos_above = positives.iter().filter(|&&v| v >= c).count();
            let neg_above = negatives.iter().filter(|&&v| v >= c).count();
            consider(pos_above + (negatives.len() - neg_above), IntRule::AtLeast(c));
            consider(
                (positives.len() - pos_above) + neg_above,
                IntRule::Below(c),
            );
        }

        for &m in &MODULI {
            let size = m as usize;
            let mut pos_prefix = vec![0usize; size + 1];
            let mut neg_prefix = vec![0usize; size + 1];
            for &v in positives {
                pos_prefix[v.rem_euclid(m) as usize + 1] += 1;
            }
            for &v in negatives {
                neg_prefix[v.rem_euclid(m) as usize + 1] += 1;
            }
            for r in 0..size {
                pos_prefix[r + 1] += pos_prefix[r];
                neg_prefix[r + 1] += neg_prefix[r];
            }
            for a in 0..size {
                for b in a..size {
                    let pos_in = pos_prefix[b + 1] - pos_prefix[a];
                    let neg_in = neg_prefix[b + 1] - neg_prefix[a];
                    consider(
                        pos_in + (negatives.len() - neg_in),
                        IntRule::ModRange {
                            modulus: m,
                            low: a as i64,
                            high: b as i64,
                        },
                    );
                }
            }
        }
        best.expect("grammar is non-empty").1
    }
}

impl Oracle for SyntheticOracle {
    fn name(&self) -> &'static str {
        "synthetic"
    }

    fn extract(&self, item: &SemanticItem, descriptor: &FeatureDescriptor) -> Result<bool, OracleError> {
        Ok(Self::rule(descriptor)?.eval(Self::value(item)?))
    }

    fn extract_batch(
        &self,
        items: &[SemanticItem],
        descriptor: &FeatureDescriptor,
    ) -> Result<Vec<bool>, OracleError> {
        let rule = Self::rule(descriptor)?;
        items
            .iter()
            .map(|it| Self::value(it).map(|v| rule.eval(v)))
            .collect()
    }

    fn mine(&self, request: &MiningRequest) -> Result<FeatureDescriptor, OracleError> {
        let pos: Vec<i64> = request.positives.iter().map(Self::value).collect::<Result<_, _>>()?;
        let neg: Vec<i64> = request.negatives.iter().map(Self::value).collect::<Result<_, _>>()?;
        Ok(FeatureDescriptor::new(Self::best_rule(&pos, &neg).to_string()))
    }

    fn propose_zero_shot(
        &self,
        _items: &[SemanticItem],
        _task_description: &str,
        _n: usize,
    ) -> Result<Vec<FeatureDescriptor>, OracleError> {
        Err(OracleError::Unsupported("synthetic"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::integer_dataset;
    use proptest::prelude::*;

    fn items(values: impl IntoIterator<Item = i64>) -> Vec<SemanticItem> {
        values
            .into_iter()
            .map(|v| SemanticItem::new(v.to_string(), v.to_string()))
            .collect()
    }

    fn mine(pos: impl IntoIterator<Item = i64>, neg: impl IntoIterator<Item = i64>) -> IntRule {
        let req = MiningRequest::new(items(pos), items(neg)).unwrap();
        IntRule::parse(SyntheticOracle.mine(&req).unwrap().text()).unwrap()
    }

    #[test]
    fn extract_evaluates_rule() {
        let d = FeatureDescriptor::new("value ≥ 256");
        let o = SyntheticOracle;
        assert!(o.extract(&SemanticItem::new("a", "300"), &d).unwrap());
        assert!(!o.extract(&SemanticItem::new("b", "12"), &d).unwrap());
    }

    #[test]
    fn batch_bit_seven_matches_per_item_loop() {
        let data = integer_dataset(512);
        let d = FeatureDescriptor::new("value mod 256 in [128, 255]");
        let batch = SyntheticOracle.extract_batch(data.items(), &d).unwrap();
        assert_eq!(batch.iter().filter(|&&b| b).count(), 256);
        for (t, item) in data.items().iter().enumerate() {
            assert_eq!(batch[t], SyntheticOracle.extract(item, &d).unwrap());
            assert_eq!(batch[t], t & 128 != 0);
        }
        let single = SyntheticOracle.extract_batch(&data.items()[5..6], &d).unwrap();
        assert_eq!(single, vec![SyntheticOracle.extract(&data.items()[5], &d).unwrap()]);
    }

    #[test]
    fn mine_first_split_is_the_256_threshold() {
        let rule = mine(0..256, 256..512);
        for v in 0..512 {
            assert_eq!(rule.eval(v), v < 256, "{rule}");
        }
    }

    #[test]
    fn mine_second_split_is_bit_seven_unset() {
        let rule = mine((0..128).chain(256..384), (128..256).chain(384..512));
        for v in 0..512 {
            assert_eq!(rule.eval(v), v & 128 == 0, "{rule}");
        }
    }

    #[test]
    fn swapped_groups_give_the_complement() {
        let a = mine(0..256, 256..512);
        let b = mine(256..512, 0..256);
        for v in 0..512 {
            assert_eq!(a.eval(v), !b.eval(v));
        }
    }

    #[test]
    fn sparse_exemplars_still_pick_the_round_boundary() {
        let rule = mine([300, 411, 260, 509, 287], [3, 77, 140, 231, 250]);
        for v in 0..512 {
            assert_eq!(rule.eval(v), v >= 256, "{rule}");
        }
    }

    #[test]
    fn midpoint_cut_beats_quarter_cut() {
        // Residues 9..15 vs 1..3: both [4, 15] and [8, 15] (mod 16) separate them.
        let rule = mine([9, 25, 47, 63, 111], [1, 18, 35, 50, 99]);
        assert_eq!(rule, IntRule::ModRange { modulus: 16, low: 8, high: 15 });
    }

    #[test]
    fn zero_shot_is_unsupported() {
        assert_eq!(
            SyntheticOracle.propose_zero_shot(&[], "task", 5),
            Err(OracleError::Unsupported("synthetic"))
        );
    }

    #[test]
    fn rule_text_round_trips() {
        for rule in [
            IntRule::AtLeast(-3),
            IntRule::Below(256),
            IntRule::ModRange { modulus: 8, low: 0, high: 3 },
        ] {
            assert_eq!(IntRule::parse(&rule.to_string()), Some(rule));
        }
        assert_eq!(IntRule::parse("value mod 8 in [5, 3]"), None);
        assert_eq!(IntRule::parse("is a big house"), None);
    }

    #[test]
    fn significant_bit_counts() {
        assert_eq!(significant_bits(0), 0);
        assert_eq!(significant_bits(256), 1);
        assert_eq!(significant_bits(192), 2);
        assert_eq!(significant_bits(255), 8);
    }

    proptest! {
        #[test]
        fn separable_splits_are_mined_perfectly(
            kind in 0u8..3,
            c in 1i64..511,
            bit in 0u32..9,
            sample in proptest::collection::vec(0i64..512, 4..40),
        ) {
            let truth = |v: i64| match kind {
                0 => v >= c,
                1 => v < c,
                _ => v & (1 << bit) != 0,
            };
            let (pos, neg): (Vec<i64>, Vec<i64>) = sample.iter().partition(|&&v| truth(v));
            prop_assume!(!pos.is_empty() && !neg.is_empty());
            let rule = SyntheticOracle::best_rule(&pos, &neg);
            prop_assert!(pos.iter().all(|&v| rule.eval(v)));
            prop_assert!(neg.iter().all(|&v| !rule.eval(v)));
        }
    }
}
