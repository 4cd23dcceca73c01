//! Signed log-magnitude scalars.

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// `sign * exp(log_mag)`; `log_mag` is ignored when `sign == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogReal {
    pub sign: i8,
    pub log_mag: f64,
}

impl LogReal {
    pub const ZERO: LogReal = LogReal { sign: 0, log_mag: f64::NEG_INFINITY };
    pub const ONE: LogReal = LogReal { sign: 1, log_mag: 0.0 };

    pub fn new(sign: i8, log_mag: f64) -> Self {
        if sign == 0 || log_mag == f64::NEG_INFINITY {
            LogReal::ZERO
        } else {
            LogReal { sign: sign.signum(), log_mag }
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            LogReal::ZERO
        } else {
            LogReal { sign: if x > 0.0 { 1 } else { -1 }, log_mag: x.abs().ln() }
        }
    }

    /// Positive number given by its logarithm.
    pub fn from_ln(log_mag: f64) -> Self {
        LogReal::new(1, log_mag)
    }

    pub fn to_f64(self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            self.sign as f64 * self.log_mag.exp()
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn abs(self) -> Self {
        if self.sign == 0 {
            self
        } else {
            LogReal { sign: 1, log_mag: self.log_mag }
        }
    }

    pub fn powi(self, n: i32) -> Self {
        if n == 0 {
            return LogReal::ONE;
        }
        if self.sign == 0 {
            return LogReal::ZERO;
        }
        let sign = if self.sign < 0 && n % 2 != 0 { -1 } else { 1 };
        LogReal { sign, log_mag: self.log_mag * n as f64 }
    }

    pub fn powf(self, p: f64) -> Self {
        assert!(self.sign >= 0, "fractional power of a negative LogReal");
        if self.sign == 0 {
            return if p == 0.0 { LogReal::ONE } else { LogReal::ZERO };
        }
        LogReal { sign: 1, log_mag: self.log_mag * p }
    }

    /// Natural log of the magnitude (`-inf` for zero).
    pub fn ln_abs(self) -> f64 {
        if self.sign == 0 {
            f64::NEG_INFINITY
        } else {
            self.log_mag
        }
    }

    /// Relative difference `|a - b| / max(|a|, |b|)`.
    pub fn rel_diff(self, other: LogReal) -> f64 {
        if self.sign == 0 && other.sign == 0 {
            return 0.0;
        }
        let big = self.ln_abs().max(other.ln_abs());
        let d = (self - other).ln_abs();
        (d - big).exp()
    }
}

impl Mul for LogReal {
    type Output = LogReal;
    fn mul(self, o: LogReal) -> LogReal {
        if self.sign == 0 || o.sign == 0 {
            return LogReal::ZERO;
        }
        LogReal { sign: self.sign * o.sign, log_mag: self.log_mag + o.log_mag }
    }
}

impl Div for LogReal {
    type Output = LogReal;
    fn div(self, o: LogReal) -> LogReal {
        assert!(o.sign != 0, "division by a zero LogReal");
        if self.sign == 0 {
            return LogReal::ZERO;
        }
        LogReal { sign: self.sign * o.sign, log_mag: self.log_mag - o.log_mag }
    }
}

impl Neg for LogReal {
    type Output = LogReal;
    fn neg(self) -> LogReal {
        LogReal { sign: -self.sign, log_mag: self.log_mag }
    }
}

impl Add for LogReal {
    type Output = LogReal;
    fn add(self, o: LogReal) -> LogReal {
        if self.sign == 0 {
            return o;
        }
        if o.sign == 0 {
            return self;
        }
        let (big, small) = if self.log_mag >= o.log_mag { (self, o) } else { (o, self) };
        let t = (small.log_mag - big.log_mag).exp();
        if big.sign == small.sign {
            LogReal { sign: big.sign, log_mag: big.log_mag + t.ln_1p() }
        } else if t == 1.0 {
            LogReal::ZERO
        } else {
            LogReal { sign: big.sign, log_mag: big.log_mag + (-t).ln_1p() }
        }
    }
}

impl Sub for LogReal {
    type Output = LogReal;
    fn sub(self, o: LogReal) -> LogReal {
        self + (-o)
    }
}

impl std::iter::Sum for LogReal {
    fn sum<I: Iterator<Item = LogReal>>(iter: I) -> LogReal {
        iter.fold(LogReal::ZERO, |a, b| a + b)
    }
}

impl std::iter::Product for LogReal {
    fn product<I: Iterator<Item = LogReal>>(iter: I) -> LogReal {
        iter.fold(LogReal::ONE, |a, b| a * b)
    }
}

impl From<f64> for LogReal {
    fn from(x: f64) -> Self {
        LogReal::from_f64(x)
    }
}
