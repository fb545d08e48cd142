//! Summation and softmax helpers.

/// 32-bit digits needed to hold any finite double as an integer multiple of
/// 2^-1074, plus room for the 85-bit shifted mantissa to spill over.
const DIGITS: usize = 70;
const DIGIT_BITS: u32 = 32;
const DIGIT_MASK: i64 = (1 << DIGIT_BITS) - 1;
/// Each add puts less than 2^32 into a digit; renormalize well before an
/// `i64` digit could overflow.
const ADDS_BEFORE_CARRY: u32 = 1 << 30;

/// Correctly rounded floating-point sum.
///
/// Terms are accumulated exactly as a fixed-point integer in units of
/// 2^-1074 and rounded once at the end, so the result does not depend on the
/// order of the terms. That makes reductions over permuted channels
/// bit-identical.
#[derive(Debug, Clone)]
pub struct ExactSum {
    digits: [i64; DIGITS],
    lo: usize,
    hi: usize,
    pending: u32,
    /// Plain sum of non-finite terms; overrides the result once one is seen.
    special: f64,
    has_special: bool,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self {
            digits: [0; DIGITS],
            lo: DIGITS,
            hi: 0,
            pending: 0,
            special: 0.0,
            has_special: false,
        }
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        if !x.is_finite() {
            self.special += x;
            self.has_special = true;
            return;
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as u32;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, pos) = if exp == 0 { (frac, 0) } else { (frac | (1u64 << 52), exp - 1) };
        if mant == 0 {
            return;
        }
        let idx = (pos / DIGIT_BITS) as usize;
        let shifted = (mant as u128) << (pos % DIGIT_BITS);
        let parts = [
            (shifted as i64) & DIGIT_MASK,
            ((shifted >> 32) as i64) & DIGIT_MASK,
            (shifted >> 64) as i64,
        ];
        if bits >> 63 == 1 {
            for (k, p) in parts.iter().enumerate() {
                self.digits[idx + k] -= p;
            }
        } else {
            for (k, p) in parts.iter().enumerate() {
                self.digits[idx + k] += p;
            }
        }
        self.lo = self.lo.min(idx);
        self.hi = self.hi.max(idx + 2);
        self.pending += 1;
        if self.pending >= ADDS_BEFORE_CARRY {
            self.propagate();
        }
    }

    /// Brings every digit into `[0, 2^32)` except the top one, which keeps
    /// the sign.
    fn propagate(&mut self) {
        let mut carry = 0i64;
        for k in self.lo..DIGITS {
            let v = self.digits[k] + carry;
            if k + 1 == DIGITS {
                self.digits[k] = v;
                break;
            }
            self.digits[k] = v & DIGIT_MASK;
            carry = v >> DIGIT_BITS;
            if carry != 0 {
                self.hi = self.hi.max(k + 1);
            } else if k >= self.hi {
                break;
            }
        }
        self.pending = 0;
    }

    pub fn value(&self) -> f64 {
        self.clone().into_value()
    }

    pub fn into_value(mut self) -> f64 {
        if self.has_special {
            return self.special;
        }
        if self.lo > self.hi {
            return 0.0;
        }
        self.propagate();
        let lo = self.lo;
        let d = &mut self.digits;
        // Any residue above `hi` is either zero or the sign digit.
        let negative = d[lo..].iter().rev().find(|v| **v != 0).is_some_and(|v| *v < 0);
        if negative {
            // two's complement magnitude over the used range
            let mut carry = 1i64;
            for v in d[lo..].iter_mut() {
                let n = (!*v & DIGIT_MASK) + carry;
                *v = n & DIGIT_MASK;
                carry = n >> DIGIT_BITS;
            }
        }
        let Some(top) = (lo..DIGITS).rev().find(|&k| d[k] != 0) else {
            return 0.0;
        };
        let digit = |k: usize| if k < DIGITS { d[k] as u64 as u128 } else { 0 };
        let below = |k: usize| if k >= 1 { digit(k - 1) } else { 0 };
        let bit_len = top as u32 * DIGIT_BITS + (64 - (d[top] as u64).leading_zeros());
        let sign = if negative { 1u64 << 63 } else { 0 };

        if bit_len <= 53 {
            let m = (digit(top) << (DIGIT_BITS * top as u32)) | if top == 1 { digit(0) } else { 0 };
            let v = m as u64 as f64 * f64::from_bits(1);
            return if negative { -v } else { v };
        }

        let mut window = (digit(top) << 64) | (below(top) << 32) | if top >= 2 { digit(top - 2) } else { 0 };
        let sticky_low = (lo..top.saturating_sub(2)).any(|k| d[k] != 0);
        window <<= window.leading_zeros();
        let mut mant = (window >> 75) as u64;
        let guard = (window >> 74) & 1 == 1;
        let rest = window & ((1u128 << 74) - 1) != 0 || sticky_low;
        let mut len = bit_len as i64;
        if guard && (rest || mant & 1 == 1) {
            mant += 1;
            if mant == 1u64 << 53 {
                mant >>= 1;
                len += 1;
            }
        }
        let exponent = len - 1 - 1074;
        if exponent > 1023 {
            return if negative { f64::NEG_INFINITY } else { f64::INFINITY };
        }
        f64::from_bits(sign | (((exponent + 1023) as u64) << 52) | (mant & ((1u64 << 52) - 1)))
    }
}

pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = ExactSum::new();
    for v in values {
        acc.add(v);
    }
    acc.into_value()
}

/// Order-independent dot product.
pub fn exact_dot<'a, A, B>(a: A, b: B) -> f64
where
    A: IntoIterator<Item = &'a f64>,
    B: IntoIterator<Item = &'a f64>,
{
    exact_sum(a.into_iter().zip(b).map(|(x, y)| x * y))
}

/// Softmax in place with max subtraction.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in row.iter_mut() {
        *v = (*v - max).exp();
    }
    let total = exact_sum(row.iter().copied());
    for v in row.iter_mut() {
        *v /= total;
    }
}
