//! Filter-bank catalog.
//!
//! Analysis filters are stored in correlation form: one analysis output is
//! `y[k] = sum_n f[n] * x[(2k + n) mod L]`. Synthesis filters scatter back with the
//! same indexing, `x[(2k + n) mod L] += y[k] * g[n]`, so for an orthogonal bank the
//! synthesis filters equal the analysis filters and synthesis is the adjoint of
//! analysis.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

const IDENTITY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WaveletBase {
    Haar,
    Db5,
    Sym4,
    Coif4,
    Bior3_1,
    Rbio2_2,
}

impl WaveletBase {
    pub const ALL: [WaveletBase; 6] = [
        WaveletBase::Haar,
        WaveletBase::Db5,
        WaveletBase::Sym4,
        WaveletBase::Coif4,
        WaveletBase::Bior3_1,
        WaveletBase::Rbio2_2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WaveletBase::Haar => "haar",
            WaveletBase::Db5 => "db5",
            WaveletBase::Sym4 => "sym4",
            WaveletBase::Coif4 => "coif4",
            WaveletBase::Bior3_1 => "bior3.1",
            WaveletBase::Rbio2_2 => "rbio2.2",
        }
    }

    pub fn is_orthogonal(&self) -> bool {
        !matches!(self, WaveletBase::Bior3_1 | WaveletBase::Rbio2_2)
    }
}

impl fmt::Display for WaveletBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WaveletBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "haar" | "db1" => Ok(WaveletBase::Haar),
            "db5" => Ok(WaveletBase::Db5),
            "sym4" => Ok(WaveletBase::Sym4),
            "coif4" => Ok(WaveletBase::Coif4),
            "bior3.1" => Ok(WaveletBase::Bior3_1),
            "rbio2.2" => Ok(WaveletBase::Rbio2_2),
            "dmey" => Err(Error::UnsupportedBase {
                name: s.to_string(),
                reason: "the discrete Meyer wavelet has infinite support and no finite filter bank".into(),
            }),
            _ => Err(Error::UnsupportedBase {
                name: s.to_string(),
                reason: "supported bases are haar, db5, sym4, coif4, bior3.1, rbio2.2".into(),
            }),
        }
    }
}

/// Analysis/synthesis filter quadruple for one wavelet base.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub base: WaveletBase,
    pub lo_a: Vec<f64>,
    pub hi_a: Vec<f64>,
    pub lo_s: Vec<f64>,
    pub hi_s: Vec<f64>,
    pub orthogonal: bool,
}

/// Looks up a filter bank by name and validates its identities before returning it.
pub fn filter_bank(name: &str) -> Result<FilterBank> {
    let base: WaveletBase = name.parse()?;
    let fb = FilterBank::build(base);
    fb.validate()?;
    Ok(fb)
}

impl FilterBank {
    pub fn new(base: WaveletBase) -> Result<Self> {
        let fb = Self::build(base);
        fb.validate()?;
        Ok(fb)
    }

    fn build(base: WaveletBase) -> Self {
        match base {
            WaveletBase::Haar => {
                let c = std::f64::consts::FRAC_1_SQRT_2;
                Self::orthogonal(base, vec![c, c])
            }
            WaveletBase::Db5 => Self::orthogonal(base, DB5_LO.to_vec()),
            WaveletBase::Sym4 => Self::orthogonal(base, SYM4_LO.to_vec()),
            WaveletBase::Coif4 => Self::orthogonal(base, COIF4_LO.to_vec()),
            WaveletBase::Bior3_1 => Self::biorthogonal(base, BIOR3_1_LO_A, BIOR3_1_HI_A, BIOR3_1_LO_S, BIOR3_1_HI_S),
            WaveletBase::Rbio2_2 => Self::biorthogonal(base, RBIO2_2_LO_A, RBIO2_2_HI_A, RBIO2_2_LO_S, RBIO2_2_HI_S),
        }
    }

    /// Highpass from lowpass by the quadrature-mirror relation `hi[n] = (-1)^n lo[L-1-n]`.
    fn orthogonal(base: WaveletBase, lo: Vec<f64>) -> Self {
        let len = lo.len();
        let hi: Vec<f64> = (0..len)
            .map(|n| {
                let v = lo[len - 1 - n];
                if n % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        FilterBank {
            base,
            lo_s: lo.clone(),
            hi_s: hi.clone(),
            lo_a: lo,
            hi_a: hi,
            orthogonal: true,
        }
    }

    fn biorthogonal(base: WaveletBase, lo_a: &[f64], hi_a: &[f64], lo_s: &[f64], hi_s: &[f64]) -> Self {
        FilterBank {
            base,
            lo_a: lo_a.to_vec(),
            hi_a: hi_a.to_vec(),
            lo_s: lo_s.to_vec(),
            hi_s: hi_s.to_vec(),
            orthogonal: false,
        }
    }

    pub fn name(&self) -> &'static str {
        self.base.as_str()
    }

    pub fn len(&self) -> usize {
        self.lo_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo_a.is_empty()
    }

    /// Checks the QMF identities (orthogonal banks) or the two-channel
    /// perfect-reconstruction identities (all banks).
    pub fn validate(&self) -> Result<()> {
        let fail = |what: String| {
            Err(Error::Numeric(format!(
                "filter bank {} fails identity check: {what}",
                self.name()
            )))
        };
        let sum_lo: f64 = self.lo_a.iter().sum();
        let sum_hi: f64 = self.hi_a.iter().sum();
        if (sum_lo - std::f64::consts::SQRT_2).abs() > IDENTITY_TOL {
            return fail(format!("lowpass sum {sum_lo} != sqrt(2)"));
        }
        if sum_hi.abs() > IDENTITY_TOL {
            return fail(format!("highpass sum {sum_hi} != 0"));
        }
        if self.orthogonal {
            if self.lo_s != self.lo_a || self.hi_s != self.hi_a {
                return fail("orthogonal synthesis filters differ from analysis filters".into());
            }
            let len = self.lo_a.len() as isize;
            let mut k = 0isize;
            while 2 * k < len {
                let ip = shifted_inner(&self.lo_a, &self.lo_a, 2 * k);
                let want = if k == 0 { 1.0 } else { 0.0 };
                if (ip - want).abs() > IDENTITY_TOL {
                    return fail(format!("<lo, lo shifted by {}> = {ip}", 2 * k));
                }
                let cross = shifted_inner(&self.lo_a, &self.hi_a, 2 * k);
                if cross.abs() > IDENTITY_TOL {
                    return fail(format!("<lo, hi shifted by {}> = {cross}", 2 * k));
                }
                k += 1;
            }
        }
        let residual = self.pr_residual();
        if residual > IDENTITY_TOL {
            return fail(format!("perfect-reconstruction residual {residual}"));
        }
        Ok(())
    }

    /// Largest deviation from `sum_{n = p mod 2} lo_a[n+d] lo_s[n] + hi_a[n+d] hi_s[n] = delta(d)`
    /// over all offsets `d` and both parities `p`.
    pub fn pr_residual(&self) -> f64 {
        let la = self.lo_a.len() as isize;
        let ls = self.lo_s.len() as isize;
        let mut worst = 0.0f64;
        for d in -(ls + la)..=(ls + la) {
            for parity in 0..2 {
                let mut acc = 0.0;
                let mut n = parity;
                while n < ls {
                    let j = n + d;
                    if (0..la).contains(&j) {
                        acc += self.lo_a[j as usize] * self.lo_s[n as usize]
                            + self.hi_a[j as usize] * self.hi_s[n as usize];
                    }
                    n += 2;
                }
                let want = if d == 0 { 1.0 } else { 0.0 };
                worst = worst.max((acc - want).abs());
            }
        }
        worst
    }
}

fn shifted_inner(a: &[f64], b: &[f64], shift: isize) -> f64 {
    let mut acc = 0.0;
    for (n, &av) in a.iter().enumerate() {
        let j = n as isize + shift;
        if j >= 0 && (j as usize) < b.len() {
            acc += av * b[j as usize];
        }
    }
    acc
}

// Lowpass analysis filters in correlation form. Highpass filters follow from the
// quadrature-mirror relation. Values are the standard published Daubechies,
// symlet and coiflet tables; `validate` re-checks them on every load.
const DB5_LO: &[f64] = &[
    0.16010239797419293,
    0.6038292697971896,
    0.7243085284377729,
    0.13842814590132074,
    -0.24229488706638203,
    -0.032244869584638375,
    0.07757149384004572,
    -0.006241490212798274,
    -0.012580751999081999,
    0.0033357252854737712,
];

const SYM4_LO: &[f64] = &[
    0.0322231006040427,
    -0.012603967262037833,
    -0.09921954357684722,
    0.29785779560527736,
    0.8037387518059161,
    0.49761866763201545,
    -0.02963552764599851,
    -0.07576571478927333,
];

const COIF4_LO: &[f64] = &[
    0.000892313902537003,
    -0.001629492425226786,
    -0.007346167936268051,
    0.01606894713157503,
    0.02668230466960483,
    -0.08126671024919373,
    -0.05607731960356926,
    0.41530842700068227,
    0.7822389344242826,
    0.43438603311435653,
    -0.06662747236681717,
    -0.09622042453595264,
    0.03933442260558915,
    0.02508225333794961,
    -0.015211728187697211,
    -0.0056582838001308835,
    0.0037514346971460866,
    0.0012665610789256603,
    -0.0005890202246332165,
    -0.0002599743371222568,
    6.233885431278719e-05,
    3.1229861599195265e-05,
    -3.259647940030751e-06,
    -1.7849909144933469e-06,
];

const BIOR3_1_LO_A: &[f64] = &[
    0.0,
    0.0,
    -0.3535533905932738,
    1.0606601717798212,
    1.0606601717798212,
    -0.3535533905932738,
    0.0,
    0.0,
];

const BIOR3_1_HI_A: &[f64] = &[
    0.0,
    0.0,
    0.1767766952966369,
    -0.5303300858899106,
    0.5303300858899106,
    -0.1767766952966369,
    0.0,
    0.0,
];

const BIOR3_1_LO_S: &[f64] = &[
    0.0,
    0.0,
    0.1767766952966369,
    0.5303300858899106,
    0.5303300858899106,
    0.1767766952966369,
    0.0,
    0.0,
];

const BIOR3_1_HI_S: &[f64] = &[
    0.0,
    0.0,
    -0.3535533905932738,
    -1.0606601717798212,
    1.0606601717798212,
    0.3535533905932738,
    0.0,
    0.0,
];

// Tabulated coefficients, kept digit for digit.
#[allow(clippy::approx_constant)]
const RBIO2_2_LO_A: &[f64] = &[
    0.0,
    0.3535533905932738,
    0.7071067811865476,
    0.3535533905932738,
    0.0,
    0.0,
];

const RBIO2_2_HI_A: &[f64] = &[
    0.0,
    0.1767766952966369,
    0.3535533905932738,
    -1.0606601717798212,
    0.3535533905932738,
    0.1767766952966369,
];

const RBIO2_2_LO_S: &[f64] = &[
    -0.1767766952966369,
    0.3535533905932738,
    1.0606601717798212,
    0.3535533905932738,
    -0.1767766952966369,
    0.0,
];

#[allow(clippy::approx_constant)]
const RBIO2_2_HI_S: &[f64] = &[
    0.0,
    0.0,
    0.3535533905932738,
    -0.7071067811865476,
    0.3535533905932738,
    0.0,
];
