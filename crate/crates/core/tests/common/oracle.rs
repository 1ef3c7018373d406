//! Binary entropy in double-double arithmetic (about 32 significant digits),
//! written independently of the library code.

// Literals carry more digits than f64 on purpose.
#![allow(clippy::excessive_precision, clippy::approx_constant)]

#[derive(Debug, Clone, Copy)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd {
        hi: s,
        lo: (a - (s - bb)) + (b - bb),
    }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

impl Dd {
    pub const fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let s = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(s.hi, s.lo + t.lo)
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.hi, o.hi);
        quick_two_sum(p.hi, p.lo + (self.hi * o.lo + self.lo * o.hi))
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::new(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::new(q2)));
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2).add(Dd::new(q3))
    }

    pub fn scale(self, k: f64) -> Dd {
        // k is a power of two: exact.
        Dd {
            hi: self.hi * k,
            lo: self.lo * k,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// ln 2 to double-double precision.
pub const LN2: Dd = Dd {
    hi: 0.6931471805599453,
    lo: 2.3190468138462996e-17,
};

/// Natural log of a positive double-double.
pub fn ln(x: Dd) -> Dd {
    assert!(x.hi > 0.0);
    // x = m * 2^e with m in [sqrt(1/2), sqrt(2)).
    let mut e = x.hi.log2().round() as i32;
    let mut m = x.scale(2f64.powi(-e));
    if m.hi < std::f64::consts::FRAC_1_SQRT_2 {
        m = m.scale(2.0);
        e -= 1;
    } else if m.hi >= std::f64::consts::SQRT_2 {
        m = m.scale(0.5);
        e += 1;
    }
    // ln m = 2 atanh(z), z = (m - 1)/(m + 1), |z| < 0.172.
    let one = Dd::new(1.0);
    let z = m.sub(one).div(m.add(one));
    let z2 = z.mul(z);
    let mut term = z;
    let mut sum = z;
    for k in 1..40 {
        term = term.mul(z2);
        let next = term.div(Dd::new((2 * k + 1) as f64));
        sum = sum.add(next);
        if next.hi.abs() < 1e-34 {
            break;
        }
    }
    sum.scale(2.0).add(LN2.mul(Dd::new(e as f64)))
}

/// h2(x) for x in (0, 1), in double-double, rounded to f64.
pub fn binary_entropy(x: f64) -> f64 {
    assert!(x > 0.0 && x < 1.0);
    let xd = Dd::new(x);
    let y = Dd::new(1.0).sub(xd);
    let nats = xd.mul(ln(xd)).add(y.mul(ln(y))).neg();
    nats.div(LN2).to_f64()
}

/// Smallest grid point in (0, 0.5] where h2 reaches 1/(1+f), scanning with
/// `step`. Uses only the oracle above.
pub fn abort_qber_scan(f: f64, step: f64) -> f64 {
    let target = 1.0 / (1.0 + f);
    let n = (0.5 / step).round() as usize;
    for i in 1..=n {
        let q = i as f64 * step;
        if binary_entropy(q) >= target {
            return q;
        }
    }
    0.5
}

/// h2 values from an independent arbitrary-precision evaluation, rounded
/// to 20 significant digits.
pub const FROZEN_H2: &[(f64, f64)] = &[
    (0.001, 0.011407757737461135718),
    (0.01, 0.080793135895911172825),
    (0.02, 0.14144054254182064515),
    (0.0275, 0.18169519976312736678),
    (0.05, 0.28639695711595612877),
    (0.11, 0.49991595816452799564),
    (0.25, 0.81127812445913286391),
    (0.3, 0.88129089923069261822),
    (0.5, 1.0),
    (0.75, 0.81127812445913286391),
    (0.999, 0.011407757737461135718),
];

/// Root of h2(q) = 1/(1+f) on (0, 0.5) from the same source.
pub const FROZEN_ABORT: &[(f64, f64)] = &[
    (1.0, 0.11002786443835955126),
    (1.1, 0.10228282104711035472),
    (1.2, 0.095493538490715953173),
    (1.5, 0.079382600480649100112),
];
