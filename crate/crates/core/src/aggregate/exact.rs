//! Order-independent summation of non-negative costs.
//!
//! Every finite non-negative `f64` is an integer multiple of 2^-1074, so a sum
//! of them is an integer in those units. [`ExactSum`] keeps that integer in
//! 32-bit digits held in `u64` limbs (carries are deferred) and rounds it to
//! the nearest `f64` only when read. The result is the correctly rounded sum,
//! which does not depend on the order of the additions or on how partial sums
//! were merged.

const DIGIT_BITS: u32 = 32;
const DIGIT_MASK: u64 = (1 << DIGIT_BITS) - 1;
const MANTISSA_BITS: u64 = 53;
const FRACTION_MASK: u64 = (1 << 52) - 1;
/// Additions allowed between carry normalizations; each adds < 2^32 per limb.
const MAX_PENDING: u32 = 1 << 30;

#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    /// Global digit index of `limbs[0]`.
    lo: u32,
    limbs: Vec<u64>,
    pending: u32,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a finite, non-negative value.
    pub fn add(&mut self, x: f64) {
        debug_assert!(x.is_finite() && x >= 0.0, "ExactSum::add({x})");
        let bits = x.to_bits() & !(1 << 63);
        if bits == 0 {
            return;
        }
        let exp_field = (bits >> 52) as u32;
        let (mantissa, shift) = if exp_field == 0 {
            (bits & FRACTION_MASK, 0)
        } else {
            ((bits & FRACTION_MASK) | (1 << 52), exp_field - 1)
        };
        let digit = shift / DIGIT_BITS;
        let wide = (mantissa as u128) << (shift % DIGIT_BITS);
        self.reserve(digit, digit + 2);
        let base = (digit - self.lo) as usize;
        self.limbs[base] += (wide as u64) & DIGIT_MASK;
        self.limbs[base + 1] += ((wide >> 32) as u64) & DIGIT_MASK;
        self.limbs[base + 2] += (wide >> 64) as u64;
        self.pending += 1;
        if self.pending >= MAX_PENDING {
            self.normalize();
        }
    }

    /// Folds another accumulator into this one.
    pub fn merge(&mut self, other: &ExactSum) {
        if other.limbs.is_empty() {
            return;
        }
        self.normalize();
        let mut other = other.clone();
        other.normalize();
        let top = other.lo + other.limbs.len() as u32 - 1;
        self.reserve(other.lo, top);
        let base = (other.lo - self.lo) as usize;
        for (i, v) in other.limbs.iter().enumerate() {
            self.limbs[base + i] += v;
        }
        self.pending = 1;
    }

    /// The correctly rounded (ties to even) value of the sum.
    pub fn value(&self) -> f64 {
        let mut n = self.clone();
        n.normalize();
        let Some(top) = n.limbs.iter().rposition(|&l| l != 0) else {
            return 0.0;
        };
        let top_bits = 64 - n.limbs[top].leading_zeros() as u64;
        // Bit length of the integer (in units of 2^-1074).
        let len = (n.lo as u64 + top as u64) * DIGIT_BITS as u64 + top_bits;
        if len <= MANTISSA_BITS {
            let mut int = 0u64;
            for (i, &l) in n.limbs.iter().enumerate() {
                let pos = (n.lo as u64 + i as u64) * DIGIT_BITS as u64;
                if l != 0 {
                    int |= l << pos;
                }
            }
            return int as f64 * f64::from_bits(1);
        }
        let lsb = len - MANTISSA_BITS;
        let mut mantissa = 0u64;
        for pos in (lsb..len).rev() {
            mantissa = (mantissa << 1) | n.bit(pos);
        }
        let guard = n.bit(lsb - 1) == 1;
        let sticky = n.any_below(lsb - 1);
        let mut exponent = lsb;
        if guard && (sticky || mantissa & 1 == 1) {
            mantissa += 1;
            if mantissa == 1 << MANTISSA_BITS {
                mantissa >>= 1;
                exponent += 1;
            }
        }
        let biased = exponent + 1;
        if biased >= 0x7ff {
            return f64::INFINITY;
        }
        f64::from_bits((biased << 52) | (mantissa & FRACTION_MASK))
    }

    fn reserve(&mut self, lo: u32, hi: u32) {
        if self.limbs.is_empty() {
            self.lo = lo;
            self.limbs = vec![0; (hi - lo + 1) as usize];
            return;
        }
        if lo < self.lo {
            let extra = (self.lo - lo) as usize;
            self.limbs.splice(0..0, std::iter::repeat_n(0, extra));
            self.lo = lo;
        }
        let needed = (hi - self.lo + 1) as usize;
        if needed > self.limbs.len() {
            self.limbs.resize(needed, 0);
        }
    }

    fn normalize(&mut self) {
        let mut carry = 0u64;
        for limb in self.limbs.iter_mut() {
            let v = *limb + carry;
            *limb = v & DIGIT_MASK;
            carry = v >> DIGIT_BITS;
        }
        while carry > 0 {
            self.limbs.push(carry & DIGIT_MASK);
            carry >>= DIGIT_BITS;
        }
        self.pending = 0;
    }

    /// Bit at global position `pos`; requires a normalized accumulator.
    fn bit(&self, pos: u64) -> u64 {
        let digit = pos / DIGIT_BITS as u64;
        if digit < self.lo as u64 {
            return 0;
        }
        match self.limbs.get((digit - self.lo as u64) as usize) {
            Some(l) => (l >> (pos % DIGIT_BITS as u64)) & 1,
            None => 0,
        }
    }

    /// Whether any bit strictly below global position `pos` is set.
    fn any_below(&self, pos: u64) -> bool {
        let digit = pos / DIGIT_BITS as u64;
        for (i, &l) in self.limbs.iter().enumerate() {
            let d = self.lo as u64 + i as u64;
            if d < digit {
                if l != 0 {
                    return true;
                }
            } else if d == digit {
                let mask = (1u64 << (pos % DIGIT_BITS as u64)) - 1;
                return l & mask != 0;
            } else {
                break;
            }
        }
        false
    }
}

impl Extend<f64> for ExactSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        s.extend(iter);
        s
    }
}

/// Exactly rounded sum of non-negative finite values.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<ExactSum>().value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_integers_sum_exactly() {
        assert_eq!(exact_sum([1.0, 2.0, 3.0]), 6.0);
        assert_eq!(exact_sum([]), 0.0);
        assert_eq!(exact_sum([0.0, 0.0]), 0.0);
    }

    #[test]
    fn recovers_bits_lost_by_naive_summation() {
        // Naive left-to-right gives 1e16; the exact sum is 1e16 + 2.
        let xs = [1e16, 1.0, 1.0];
        assert_eq!(xs.iter().sum::<f64>(), 1e16);
        assert_eq!(exact_sum(xs), 1e16 + 2.0);
    }

    #[test]
    fn ties_round_to_even() {
        // 2^53 + 1 is a tie between 2^53 and 2^53 + 2.
        let two53 = 9007199254740992.0;
        assert_eq!(exact_sum([two53, 1.0]), two53);
        // 2^53 + 3 is a tie between 2^53 + 2 and 2^53 + 4; even mantissa is +4.
        assert_eq!(exact_sum([two53, 1.0, 2.0]), two53 + 4.0);
        // A sticky bit below the tie breaks it upward.
        assert_eq!(exact_sum([two53, 1.0, 2f64.powi(-60)]), two53 + 2.0);
    }

    #[test]
    fn subnormals_and_extremes() {
        let tiny = f64::from_bits(1);
        assert_eq!(exact_sum([tiny, tiny, tiny]), f64::from_bits(3));
        assert_eq!(exact_sum([f64::MAX]), f64::MAX);
        assert_eq!(exact_sum([f64::MAX, f64::MAX]), f64::INFINITY);
        assert_eq!(exact_sum([f64::MIN_POSITIVE, tiny]), f64::MIN_POSITIVE + tiny);
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 1.37).sqrt() * 1e3).collect();
        let whole = exact_sum(xs.iter().copied());
        let mut a: ExactSum = xs[..333].iter().copied().collect();
        let b: ExactSum = xs[333..].iter().copied().collect();
        a.merge(&b);
        assert_eq!(a.value(), whole);
    }

    proptest! {
        #[test]
        fn order_independent(mut xs in proptest::collection::vec(0.0f64..1e9, 0..64), seed in any::<u64>()) {
            let forward = exact_sum(xs.iter().copied());
            // deterministic shuffle
            let mut s = seed | 1;
            for i in (1..xs.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                xs.swap(i, (s % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(forward, exact_sum(xs.iter().copied()));
        }

        #[test]
        fn matches_integer_arithmetic(xs in proptest::collection::vec(0u64..(1 << 40), 0..100)) {
            let want: u128 = xs.iter().map(|&x| x as u128).sum();
            prop_assert_eq!(exact_sum(xs.iter().map(|&x| x as f64)), want as f64);
        }
    }
}
