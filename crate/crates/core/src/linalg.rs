//! Log-domain determinants by LU with partial pivoting.

use crate::logreal::LogReal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub value: LogReal,
    /// Largest over smallest pivot magnitude (at least 1; infinite if singular).
    pub condition_hint: f64,
}

/// Double-double value `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd { hi: s, lo: (a - (s - bb)) + (b - bb) }
    }

    fn quick(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd { hi: s, lo: b - (s - a) }
    }

    fn sub(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, -o.hi);
        let t = Dd::two_sum(self.lo, -o.lo);
        let u = Dd::quick(s.hi, s.lo + t.hi);
        Dd::quick(u.hi, u.lo + t.lo)
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Dd::quick(p, e + (self.hi * o.lo + self.lo * o.hi))
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.hi / o.hi;
        let q = Dd::quick(q1, q2);
        Dd::quick(q.hi, q.lo + q3)
    }
}

/// Determinant of the row-major `n x n` matrix `a`. The elimination runs in
/// double-double arithmetic, so the result is insensitive to row/column order
/// up to the rounding of the inputs themselves.
pub fn log_det(a: Vec<f64>, n: usize) -> LogDet {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return LogDet { value: LogReal::ONE, condition_hint: 1.0 };
    }
    let mut a: Vec<Dd> = a.into_iter().map(Dd::from).collect();
    let mut sign = 1i8;
    let mut log_mag = 0.0;
    let (mut pmax, mut pmin) = (0.0f64, f64::INFINITY);
    for k in 0..n {
        let (mut p, mut best) = (k, a[k * n + k].hi.abs());
        for i in k + 1..n {
            let v = a[i * n + k].hi.abs();
            if v > best {
                p = i;
                best = v;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return LogDet { value: LogReal::ZERO, condition_hint: f64::INFINITY };
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            sign = -sign;
        }
        let piv = a[k * n + k];
        if piv.hi < 0.0 {
            sign = -sign;
        }
        log_mag += piv.hi.abs().ln() + (piv.lo / piv.hi).ln_1p();
        pmax = pmax.max(piv.hi.abs());
        pmin = pmin.min(piv.hi.abs());
        for i in k + 1..n {
            let l = a[i * n + k].div(piv);
            if l.hi != 0.0 {
                for j in k + 1..n {
                    a[i * n + j] = a[i * n + j].sub(l.mul(a[k * n + j]));
                }
            }
        }
    }
    LogDet { value: LogReal::new(sign, log_mag), condition_hint: (pmax / pmin).max(1.0) }
}

/// Plain determinant by Laplace expansion; used as an oracle for small n.
pub fn det_laplace(a: &[f64], n: usize) -> f64 {
    if n == 1 {
        return a[0];
    }
    let mut s = 0.0;
    for c in 0..n {
        let minor: Vec<f64> = (1..n)
            .flat_map(|i| (0..n).filter(move |&j| j != c).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j])
            .collect();
        let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
        s += sign * a[c] * det_laplace(&minor, n - 1);
    }
    s
}
