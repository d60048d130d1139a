//! Fixed-point currency.
//!
//! Amounts are held as integer micro-units so that settlement, budget
//! bookkeeping and the log audit are exact. Conversions from real-valued
//! strategy outputs round toward zero, which keeps every derived bid at or
//! below the budget it was computed from.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MICROS_PER_UNIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(u64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_micros(micros: u64) -> Self {
        Money(micros)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    /// Rounds toward zero. Negative and NaN inputs map to zero.
    pub fn from_f64(units: f64) -> Self {
        if !(units > 0.0) {
            return Money::ZERO;
        }
        let micros = (units * MICROS_PER_UNIT as f64).floor();
        if micros >= u64::MAX as f64 {
            Money(u64::MAX)
        } else {
            Money(micros as u64)
        }
    }

    /// Nearest-micro conversion, used when parsing logged values.
    pub fn from_f64_round(units: f64) -> Self {
        if !(units > 0.0) {
            return Money::ZERO;
        }
        Money((units * MICROS_PER_UNIT as f64).round() as u64)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_UNIT as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_sub(self, rhs: Money) -> Option<Money> {
        self.0.checked_sub(rhs.0).map(Money)
    }

    pub fn saturating_sub(self, rhs: Money) -> Money {
        Money(self.0.saturating_sub(rhs.0))
    }

    /// `self * fraction`, rounded toward zero; `fraction` is clamped to `[0, 1]`.
    pub fn scale(self, fraction: f64) -> Money {
        let f = if fraction.is_nan() { 0.0 } else { fraction.clamp(0.0, 1.0) };
        if f == 1.0 {
            return self;
        }
        Money::from_f64(self.to_f64() * f).min(self)
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0.checked_add(rhs.0).expect("currency overflow"))
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        *self = *self + rhs;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{:06}",
            self.0 / MICROS_PER_UNIT,
            self.0 % MICROS_PER_UNIT
        )
    }
}

impl FromStr for Money {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || crate::Error::Format(format!("invalid amount {s:?}"));
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if frac_part.len() > 6 || !frac_part.chars().all(|c| c.is_ascii_digit()) {
            // Fall back to float parsing for exponents or long fractions.
            let v: f64 = s.parse().map_err(|_| bad())?;
            if v < 0.0 || !v.is_finite() {
                return Err(bad());
            }
            return Ok(Money::from_f64_round(v));
        }
        let units: u64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        let mut frac = 0u64;
        for (i, c) in frac_part.chars().enumerate() {
            frac += (c as u64 - '0' as u64) * 10u64.pow(5 - i as u32);
        }
        units
            .checked_mul(MICROS_PER_UNIT)
            .and_then(|m| m.checked_add(frac))
            .map(Money)
            .ok_or_else(bad)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        if v < 0.0 || !v.is_finite() {
            return Err(serde::de::Error::custom("negative or non-finite amount"));
        }
        Ok(Money::from_f64_round(v))
    }
}
