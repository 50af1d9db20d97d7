//! Backoff function families and the contention-window schedule.
//!
//! A backoff scheme multiplies the initial window `W0` by `g(k)` after `k`
//! consecutive collisions. The families supported are exponential
//! (`r^k`), sub-exponential (`r^(k^a)`), polynomial (`1 + k^b`) and an
//! arbitrary finite table of `g` values.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Windows handed to the simulator never exceed this many slots.
pub const MAX_INTEGER_WINDOW: u64 = 1 << 62;

/// Minimum table length for a numeric gamma-limit estimate.
pub const MIN_TABLE_FOR_GAMMA: usize = 32;

/// Number of trailing ratios averaged by the table gamma estimate.
const GAMMA_RATIO_WINDOW: usize = 8;

/// Ratios closer to 1 than this count as sub-exponential growth.
const GAMMA_CLASS_TOL: f64 = 1e-6;

/// Relative spread of trailing ratios above which a table is "oscillating".
const OSCILLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Family<T> {
    /// `g(k) = r^k`, `r > 1`.
    Exponential { r: T },
    /// `g(k) = r^(k^a)`, `r > 1`, `0 < a < 1`.
    SubExponential { r: T, a: T },
    /// `g(k) = 1 + k^b`, `b > 0`.
    Polynomial { b: T },
    /// Explicit `g(0), g(1), ...`; positive and non-decreasing.
    Table(Vec<T>),
}

/// A backoff function together with the initial contention window.
#[derive(Debug, Clone, PartialEq)]
pub struct BackoffSpec<T> {
    family: Family<T>,
    w0: u32,
}

/// Contention window at one backoff stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window<T> {
    /// `g(k) * W0`, used by every analytical routine.
    pub analytic: T,
    /// `max(2, round(analytic))`, used only by the simulator.
    pub integer: u64,
}

/// Growth of `g(k)` compared with exponential functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthClass<T> {
    /// `g(k)` is in `Omega(r^k)` for some `r > 1`; `gamma > 1` is the growth ratio.
    AtLeastExponential { gamma: T },
    /// `g(k)` is in `o(r^k)` for every `r > 1`; the ratio limit is 1.
    SubExponential,
}

impl<T: Real> GrowthClass<T> {
    pub fn gamma(&self) -> T {
        match *self {
            GrowthClass::AtLeastExponential { gamma } => gamma,
            GrowthClass::SubExponential => T::one(),
        }
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self, GrowthClass::AtLeastExponential { .. })
    }
}

impl<T: Real> BackoffSpec<T> {
    pub fn new(family: Family<T>, w0: u32) -> Result<Self> {
        if w0 < 2 {
            return Err(invalid("w0", format!("must be at least 2, got {w0}")));
        }
        let finite_gt = |v: T, lo: T| v.is_finite() && v > lo;
        match &family {
            Family::Exponential { r } => {
                if !finite_gt(*r, T::one()) {
                    return Err(invalid("r", format!("must be > 1, got {r}")));
                }
            }
            Family::SubExponential { r, a } => {
                if !finite_gt(*r, T::one()) {
                    return Err(invalid("r", format!("must be > 1, got {r}")));
                }
                if !(finite_gt(*a, T::zero()) && *a < T::one()) {
                    return Err(invalid("a", format!("must lie in (0, 1), got {a}")));
                }
            }
            Family::Polynomial { b } => {
                if !finite_gt(*b, T::zero()) {
                    return Err(invalid("b", format!("must be > 0, got {b}")));
                }
            }
            Family::Table(values) => {
                if values.is_empty() {
                    return Err(invalid("values", "table is empty"));
                }
                if let Some(i) = values.iter().position(|v| !finite_gt(*v, T::zero())) {
                    return Err(invalid("values", format!("entry {i} is not strictly positive")));
                }
                if let Some(i) = values.windows(2).position(|w| w[1] < w[0]) {
                    return Err(invalid(
                        "values",
                        format!("table decreases between entries {i} and {}", i + 1),
                    ));
                }
            }
        }
        Ok(Self { family, w0 })
    }

    pub fn exponential(r: T, w0: u32) -> Result<Self> {
        Self::new(Family::Exponential { r }, w0)
    }

    pub fn sub_exponential(r: T, a: T, w0: u32) -> Result<Self> {
        Self::new(Family::SubExponential { r, a }, w0)
    }

    pub fn polynomial(b: T, w0: u32) -> Result<Self> {
        Self::new(Family::Polynomial { b }, w0)
    }

    pub fn table(values: Vec<T>, w0: u32) -> Result<Self> {
        Self::new(Family::Table(values), w0)
    }

    pub fn family(&self) -> &Family<T> {
        &self.family
    }

    pub fn w0(&self) -> u32 {
        self.w0
    }

    /// Same backoff function with a different initial window.
    pub fn with_w0(&self, w0: u32) -> Result<Self> {
        Self::new(self.family.clone(), w0)
    }

    /// Number of stages defined, `None` for the closed-form families.
    pub fn table_len(&self) -> Option<usize> {
        match &self.family {
            Family::Table(v) => Some(v.len()),
            _ => None,
        }
    }

    /// Short lowercase family tag as used in config files.
    pub fn family_tag(&self) -> &'static str {
        match self.family {
            Family::Exponential { .. } => "eb",
            Family::SubExponential { .. } => "seb",
            Family::Polynomial { .. } => "pb",
            Family::Table(_) => "table",
        }
    }

    fn check_index(&self, k: usize) -> Result<()> {
        match &self.family {
            Family::Table(v) if k >= v.len() => Err(Error::TableIndex {
                index: k,
                len: v.len(),
            }),
            _ => Ok(()),
        }
    }

    /// `g(k)`.
    pub fn growth_factor(&self, k: usize) -> Result<T> {
        self.check_index(k)?;
        let kf = T::from_count(k);
        Ok(match &self.family {
            Family::Exponential { r } => match i32::try_from(k) {
                Ok(ki) => r.powi(ki),
                Err(_) => r.powf(kf),
            },
            Family::SubExponential { r, a } => r.powf(kf.powf(*a)),
            Family::Polynomial { b } => T::one() + kf.powf(*b),
            Family::Table(v) => v[k],
        })
    }

    /// `ln g(k)`, finite even where `g(k)` itself overflows.
    pub fn ln_growth(&self, k: usize) -> Result<T> {
        self.check_index(k)?;
        let kf = T::from_count(k);
        Ok(match &self.family {
            Family::Exponential { r } => kf * r.ln(),
            Family::SubExponential { r, a } => kf.powf(*a) * r.ln(),
            Family::Polynomial { b } => kf.powf(*b).ln_1p(),
            Family::Table(v) => v[k].ln(),
        })
    }

    /// `ln W_k = ln W0 + ln g(k)`.
    pub fn ln_window(&self, k: usize) -> Result<T> {
        Ok(T::from_u32(self.w0).unwrap().ln() + self.ln_growth(k)?)
    }

    /// Window at stage `k`.
    pub fn window(&self, k: usize) -> Result<Window<T>> {
        let w0 = T::from_u32(self.w0).unwrap();
        let analytic = self.growth_factor(k)? * w0;
        let integer = if analytic.is_finite() {
            let rounded = analytic.round();
            let cap = T::from_u64(MAX_INTEGER_WINDOW).unwrap();
            if rounded >= cap {
                MAX_INTEGER_WINDOW
            } else {
                rounded.to_u64().unwrap_or(MAX_INTEGER_WINDOW).max(2)
            }
        } else {
            MAX_INTEGER_WINDOW
        };
        Ok(Window { analytic, integer })
    }

    /// Trailing ratios `g(J)/g(J-1)` of a table, most recent last.
    fn trailing_ratios(values: &[T]) -> Result<Vec<T>> {
        if values.len() < MIN_TABLE_FOR_GAMMA {
            return Err(Error::InsufficientData {
                len: values.len(),
                needed: MIN_TABLE_FOR_GAMMA,
            });
        }
        let j = values.len() - 1;
        Ok((j + 1 - GAMMA_RATIO_WINDOW..=j)
            .map(|i| values[i] / values[i - 1])
            .collect())
    }

    /// `lim g(j+1)/g(j)`: closed form for the families, averaged trailing
    /// ratios for tables. Tables whose trailing ratios disagree are reported
    /// as [`Error::Oscillating`] instead of being forced to a value.
    pub fn gamma_limit(&self) -> Result<T> {
        match &self.family {
            Family::Exponential { r } => Ok(*r),
            Family::SubExponential { .. } | Family::Polynomial { .. } => Ok(T::one()),
            Family::Table(values) => {
                let ratios = Self::trailing_ratios(values)?;
                let mean = ratios.iter().copied().sum::<T>() / T::from_count(ratios.len());
                let (min, max) = ratios
                    .iter()
                    .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| {
                        (lo.min(x), hi.max(x))
                    });
                if max - min > T::tol(OSCILLATION_TOL) * mean {
                    return Err(Error::Oscillating {
                        min: min.as_f64(),
                        max: max.as_f64(),
                    });
                }
                Ok(mean)
            }
        }
    }

    /// Exponential-or-faster versus slower growth.
    ///
    /// Oscillating tables have no ratio limit; for them the class follows the
    /// `Omega(r^k)` definition, estimated by the geometric-mean growth rate
    /// over the trailing ratio window.
    pub fn growth_class(&self) -> Result<GrowthClass<T>> {
        let gamma = match self.gamma_limit() {
            Ok(g) => g,
            Err(Error::Oscillating { .. }) => {
                let Family::Table(values) = &self.family else {
                    unreachable!("only tables oscillate")
                };
                let j = values.len() - 1;
                let span = T::from_count(GAMMA_RATIO_WINDOW);
                (values[j] / values[j - GAMMA_RATIO_WINDOW]).powf(span.recip())
            }
            Err(e) => return Err(e),
        };
        Ok(if gamma > T::one() + T::tol(GAMMA_CLASS_TOL) {
            GrowthClass::AtLeastExponential { gamma }
        } else {
            GrowthClass::SubExponential
        })
    }
}

/// Config-file representation of a backoff spec:
/// `{"family": "eb"|"seb"|"pb"|"table", "r", "a", "b", "values", "w0"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackoffConfig {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<u32>,
}

/// Initial window used when a config omits `w0`.
pub const DEFAULT_W0: u32 = 16;

impl BackoffConfig {
    pub fn to_spec<T: Real>(&self) -> Result<BackoffSpec<T>> {
        let need = |v: Option<f64>, name: &'static str| {
            v.map(T::lit)
                .ok_or_else(|| invalid(name, format!("required for family `{}`", self.family)))
        };
        let unexpected = |present: bool, name: &'static str| {
            if present {
                Err(invalid(name, format!("not used by family `{}`", self.family)))
            } else {
                Ok(())
            }
        };
        let family = match self.family.as_str() {
            "eb" => {
                unexpected(self.a.is_some(), "a")?;
                unexpected(self.b.is_some(), "b")?;
                unexpected(self.values.is_some(), "values")?;
                Family::Exponential { r: need(self.r, "r")? }
            }
            "seb" => {
                unexpected(self.b.is_some(), "b")?;
                unexpected(self.values.is_some(), "values")?;
                Family::SubExponential {
                    r: need(self.r, "r")?,
                    a: need(self.a, "a")?,
                }
            }
            "pb" => {
                unexpected(self.r.is_some(), "r")?;
                unexpected(self.a.is_some(), "a")?;
                unexpected(self.values.is_some(), "values")?;
                Family::Polynomial { b: need(self.b, "b")? }
            }
            "table" => {
                unexpected(self.r.is_some(), "r")?;
                unexpected(self.a.is_some(), "a")?;
                unexpected(self.b.is_some(), "b")?;
                let values = self
                    .values
                    .as_ref()
                    .ok_or_else(|| invalid("values", "required for family `table`"))?;
                Family::Table(values.iter().copied().map(T::lit).collect())
            }
            other => {
                return Err(invalid(
                    "family",
                    format!("unknown family `{other}` (expected eb, seb, pb or table)"),
                ))
            }
        };
        BackoffSpec::new(family, self.w0.unwrap_or(DEFAULT_W0))
    }
}

impl<T: Real> From<&BackoffSpec<T>> for BackoffConfig {
    fn from(spec: &BackoffSpec<T>) -> Self {
        let mut cfg = BackoffConfig {
            family: spec.family_tag().to_string(),
            r: None,
            a: None,
            b: None,
            values: None,
            w0: Some(spec.w0),
        };
        match &spec.family {
            Family::Exponential { r } => cfg.r = Some(r.as_f64()),
            Family::SubExponential { r, a } => {
                cfg.r = Some(r.as_f64());
                cfg.a = Some(a.as_f64());
            }
            Family::Polynomial { b } => cfg.b = Some(b.as_f64()),
            Family::Table(v) => cfg.values = Some(v.iter().map(|x| x.as_f64()).collect()),
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eb(r: f64, w0: u32) -> BackoffSpec<f64> {
        BackoffSpec::exponential(r, w0).unwrap()
    }

    #[test]
    fn growth_factor_examples() {
        assert_eq!(eb(2.0, 16).growth_factor(3).unwrap(), 8.0);
        assert_eq!(BackoffSpec::polynomial(3.0, 16).unwrap().growth_factor(2).unwrap(), 9.0);
        let seb = BackoffSpec::sub_exponential(4.0, 0.7, 32).unwrap();
        assert!((seb.growth_factor(1).unwrap() - 4.0_f64).abs() < 1e-12);
        assert_eq!(seb.growth_factor(0).unwrap(), 1.0);
        assert_eq!(BackoffSpec::polynomial(0.5, 16).unwrap().growth_factor(0).unwrap(), 1.0);
    }

    #[test]
    fn window_examples() {
        let w = eb(2.0, 16).window(3).unwrap();
        assert_eq!((w.analytic, w.integer), (128.0, 128));

        // 32 * 4^(2^0.7) evaluated at 30 digits: 304.228096212879026...
        let seb = BackoffSpec::sub_exponential(4.0, 0.7, 32).unwrap();
        let w = seb.window(2).unwrap();
        assert!((w.analytic - 304.228_096_212_879_f64).abs() < 1e-9);
        assert_eq!(w.integer, 304);

        let pb = BackoffSpec::polynomial(1.0, 16).unwrap().window(0).unwrap();
        assert_eq!((pb.analytic, pb.integer), (16.0, 16));
    }

    #[test]
    fn integer_window_floor_and_cap() {
        let spec = BackoffSpec::table(vec![1.0, 1.0], 2).unwrap();
        assert_eq!(spec.window(0).unwrap().integer, 2);
        let huge = eb(2.0, 16).window(200).unwrap();
        assert_eq!(huge.integer, MAX_INTEGER_WINDOW);
    }

    #[test]
    fn table_index_out_of_range() {
        let spec = BackoffSpec::table(vec![1.0, 2.0, 4.0], 16).unwrap();
        assert_eq!(
            spec.growth_factor(3),
            Err(Error::TableIndex { index: 3, len: 3 })
        );
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(BackoffSpec::exponential(1.0, 16).is_err());
        assert!(BackoffSpec::sub_exponential(4.0, 1.0, 16).is_err());
        assert!(BackoffSpec::polynomial(0.0, 16).is_err());
        assert!(BackoffSpec::<f64>::table(vec![], 16).is_err());
        assert!(BackoffSpec::table(vec![1.0, 0.5], 16).is_err());
        assert!(BackoffSpec::table(vec![0.0, 1.0], 16).is_err());
        assert!(BackoffSpec::exponential(2.0, 1).is_err());
    }

    #[test]
    fn gamma_limit_examples() {
        assert_eq!(eb(2.0, 16).gamma_limit().unwrap(), 2.0);
        assert_eq!(BackoffSpec::polynomial(3.0, 16).unwrap().gamma_limit().unwrap(), 1.0);
        let table: Vec<f64> = (0..32).map(|k| 2f64.powi(k)).collect();
        let g = BackoffSpec::table(table, 16).unwrap().gamma_limit().unwrap();
        assert!((g - 2.0).abs() < 1e-9);
    }

    #[test]
    fn short_table_has_no_gamma() {
        let spec = BackoffSpec::table(vec![1.0; 10], 16).unwrap();
        assert_eq!(
            spec.gamma_limit(),
            Err(Error::InsufficientData { len: 10, needed: 32 })
        );
    }

    #[test]
    fn alternating_table_is_oscillating_but_classified() {
        // even entries 2^k, odd entries 3 * 2^(k-1)
        let table: Vec<f64> = (0..40)
            .map(|k| if k % 2 == 0 { 2f64.powi(k) } else { 3.0 * 2f64.powi(k - 1) })
            .collect();
        let spec = BackoffSpec::table(table, 16).unwrap();
        assert!(matches!(spec.gamma_limit(), Err(Error::Oscillating { .. })));
        match spec.growth_class().unwrap() {
            GrowthClass::AtLeastExponential { gamma } => assert!((gamma - 2.0).abs() < 1e-9),
            other => panic!("expected exponential class, got {other:?}"),
        }
    }

    #[test]
    fn growth_class_examples() {
        assert_eq!(
            eb(2.0, 16).growth_class().unwrap(),
            GrowthClass::AtLeastExponential { gamma: 2.0 }
        );
        let seb = BackoffSpec::sub_exponential(4.0, 0.7, 16).unwrap();
        assert_eq!(seb.growth_class().unwrap(), GrowthClass::SubExponential);
        let pb = BackoffSpec::polynomial(5.0, 16).unwrap();
        assert_eq!(pb.growth_class().unwrap(), GrowthClass::SubExponential);
    }

    #[test]
    fn capped_table_is_sub_exponential() {
        // 802.11-style window cap: doubles six times, then stays flat
        let table: Vec<f64> = (0..40).map(|k| 2f64.powi(k.min(6))).collect();
        let spec = BackoffSpec::table(table, 16).unwrap();
        assert_eq!(spec.growth_class().unwrap(), GrowthClass::SubExponential);
    }

    #[test]
    fn eb_window_exact_to_k40() {
        for r in [1.5, 2.0, 3.0] {
            let spec = eb(r, 16);
            for k in 0..=40 {
                let w = spec.window(k).unwrap().analytic;
                let exact = 16.0 * r.powi(k as i32);
                assert!(((w - exact) / exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f32_scalar_works() {
        let spec = BackoffSpec::<f32>::exponential(2.0, 16).unwrap();
        assert_eq!(spec.window(3).unwrap().integer, 128);
        assert_eq!(spec.gamma_limit().unwrap(), 2.0f32);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let json = r#"{"family":"seb","r":4,"a":0.7,"w0":32}"#;
        let cfg: BackoffConfig = serde_json::from_str(json).unwrap();
        let spec: BackoffSpec<f64> = cfg.to_spec().unwrap();
        assert_eq!(BackoffConfig::from(&spec), cfg);

        let bad: BackoffConfig = serde_json::from_str(r#"{"family":"eb","b":2}"#).unwrap();
        assert!(bad.to_spec::<f64>().is_err());
        assert!(serde_json::from_str::<BackoffConfig>(r#"{"family":"eb","r":2,"x":1}"#).is_err());
        let defaulted: BackoffConfig = serde_json::from_str(r#"{"family":"pb","b":3}"#).unwrap();
        assert_eq!(defaulted.to_spec::<f64>().unwrap().w0(), DEFAULT_W0);
    }

    fn any_family() -> impl Strategy<Value = BackoffSpec<f64>> {
        prop_oneof![
            (1.01f64..4.0, 2u32..64).prop_map(|(r, w)| BackoffSpec::exponential(r, w).unwrap()),
            (1.01f64..6.0, 0.05f64..0.95, 2u32..64)
                .prop_map(|(r, a, w)| BackoffSpec::sub_exponential(r, a, w).unwrap()),
            (0.05f64..6.0, 2u32..64).prop_map(|(b, w)| BackoffSpec::polynomial(b, w).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn windows_are_monotone(spec in any_family()) {
            for k in 0..64 {
                let a = spec.window(k).unwrap().analytic;
                let b = spec.window(k + 1).unwrap().analytic;
                prop_assert!(b >= a);
                prop_assert!(spec.growth_factor(k).unwrap() > 0.0);
            }
        }

        #[test]
        fn growth_class_ignores_w0(spec in any_family(), w0 in 2u32..4096) {
            let scaled = spec.with_w0(w0).unwrap();
            prop_assert_eq!(spec.growth_class().unwrap(), scaled.growth_class().unwrap());
        }

        #[test]
        fn slow_families_have_unit_gamma(r in 1.01f64..8.0, a in 0.01f64..0.99, b in 0.01f64..8.0) {
            prop_assert_eq!(BackoffSpec::sub_exponential(r, a, 16).unwrap().gamma_limit().unwrap(), 1.0);
            prop_assert_eq!(BackoffSpec::polynomial(b, 16).unwrap().gamma_limit().unwrap(), 1.0);
            prop_assert_eq!(BackoffSpec::exponential(r, 16).unwrap().gamma_limit().unwrap(), r);
        }
    }
}
