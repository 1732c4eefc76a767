//! Threshold classification of PPM readings into air-quality categories.
//!
//! The scale has three bands over real-valued PPM:
//!
//! | category  | range          | indicator |
//! |-----------|----------------|-----------|
//! | Good      | `[0, 50]`      | green     |
//! | Moderate  | `(50, 150]`    | blue      |
//! | Unhealthy | `(150, ∞)`     | red       |
//!
//! Readings above 200 PPM stay `Unhealthy` and carry an out-of-scale flag.

use core::fmt;
use core::str::FromStr;

use thiserror::Error;

/// Upper bound (inclusive) of the Good band.
pub const GOOD_MAX_PPM: f64 = 50.0;
/// Upper bound (inclusive) of the Moderate band.
pub const MODERATE_MAX_PPM: f64 = 150.0;
/// Readings strictly above this are flagged out of scale.
pub const SCALE_MAX_PPM: f64 = 200.0;

const OUT_OF_SCALE_BIT: u8 = 0x80;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AqiError {
    #[error("ppm must be finite and non-negative, got {0}")]
    Domain(f64),
    #[error("invalid status code 0x{0:02x}")]
    StatusCode(u8),
    #[error("unknown category name {0:?}")]
    UnknownName(alloc::string::String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Good,
    Moderate,
    Unhealthy,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Good, Category::Moderate, Category::Unhealthy];

    /// Position on the scale, 0 for Good through 2 for Unhealthy.
    pub fn index(self) -> u8 {
        match self {
            Category::Good => 0,
            Category::Moderate => 1,
            Category::Unhealthy => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Good => "good",
            Category::Moderate => "moderate",
            Category::Unhealthy => "unhealthy",
        }
    }

    pub fn indicator(self) -> Indicator {
        match self {
            Category::Good => Indicator::Green,
            Category::Moderate => Indicator::Blue,
            Category::Unhealthy => Indicator::Red,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = AqiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "good" => Ok(Category::Good),
            "moderate" => Ok(Category::Moderate),
            "unhealthy" => Ok(Category::Unhealthy),
            other => Err(AqiError::UnknownName(other.into())),
        }
    }
}

/// Display color shown next to a reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Indicator {
    Green,
    Blue,
    Red,
}

impl Indicator {
    pub fn name(self) -> &'static str {
        match self {
            Indicator::Green => "green",
            Indicator::Blue => "blue",
            Indicator::Red => "red",
        }
    }

    pub fn category(self) -> Category {
        match self {
            Indicator::Green => Category::Good,
            Indicator::Blue => Category::Moderate,
            Indicator::Red => Category::Unhealthy,
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classified reading. `out_of_scale` is only ever set on `Unhealthy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AqiStatus {
    category: Category,
    out_of_scale: bool,
}

impl AqiStatus {
    pub const fn new(category: Category) -> Self {
        AqiStatus {
            category,
            out_of_scale: false,
        }
    }

    pub const fn out_of_scale() -> Self {
        AqiStatus {
            category: Category::Unhealthy,
            out_of_scale: true,
        }
    }

    pub fn category(self) -> Category {
        self.category
    }

    pub fn is_out_of_scale(self) -> bool {
        self.out_of_scale
    }

    /// Wire byte: category index in the low bits, bit 7 for out-of-scale.
    pub fn code(self) -> u8 {
        let flag = if self.out_of_scale {
            OUT_OF_SCALE_BIT
        } else {
            0
        };
        self.category.index() | flag
    }

    pub fn from_code(code: u8) -> Result<Self, AqiError> {
        let out_of_scale = code & OUT_OF_SCALE_BIT != 0;
        let category = match code & !OUT_OF_SCALE_BIT {
            0 => Category::Good,
            1 => Category::Moderate,
            2 => Category::Unhealthy,
            _ => return Err(AqiError::StatusCode(code)),
        };
        if out_of_scale && category != Category::Unhealthy {
            return Err(AqiError::StatusCode(code));
        }
        Ok(AqiStatus {
            category,
            out_of_scale,
        })
    }
}

impl From<Category> for AqiStatus {
    fn from(category: Category) -> Self {
        AqiStatus::new(category)
    }
}

/// Maps a PPM reading onto the scale.
pub fn classify(ppm: f64) -> Result<AqiStatus, AqiError> {
    if !ppm.is_finite() || ppm < 0.0 {
        return Err(AqiError::Domain(ppm));
    }
    let category = if ppm <= GOOD_MAX_PPM {
        Category::Good
    } else if ppm <= MODERATE_MAX_PPM {
        Category::Moderate
    } else {
        Category::Unhealthy
    };
    Ok(AqiStatus {
        category,
        out_of_scale: ppm > SCALE_MAX_PPM,
    })
}

/// Classification of a centi-PPM fixed-point value as carried on the wire.
pub fn classify_centi(ppm_centi: u32) -> AqiStatus {
    // Always finite and non-negative.
    classify(f64::from(ppm_centi) / 100.0).expect("centi-ppm is in domain")
}

pub fn indicator_for(status: AqiStatus) -> Indicator {
    status.category.indicator()
}

const GOOD_TEXT: &str =
    "Air pollution is little with no risk. The cleanness of the air is satisfied.";
const MODERATE_TEXT: &str = "Accepted quality of the air conditions, but some pollutants may cause diseases for sensitive people.";
const UNHEALTHY_TEXT: &str = "Very harmful and may cause death.";
const OUT_OF_SCALE_TEXT: &str = " Reading is above 200 PPM, beyond the top of the scale.";

/// Human-readable description of a status.
pub fn describe(status: AqiStatus) -> alloc::string::String {
    let mut text = alloc::string::String::from(match status.category {
        Category::Good => GOOD_TEXT,
        Category::Moderate => MODERATE_TEXT,
        Category::Unhealthy => UNHEALTHY_TEXT,
    });
    if status.out_of_scale {
        text.push_str(OUT_OF_SCALE_TEXT);
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(ppm: f64) -> Category {
        classify(ppm).unwrap().category()
    }

    #[test]
    fn table_rows() {
        assert_eq!(cat(45.0), Category::Good);
        assert_eq!(cat(100.0), Category::Moderate);
        assert_eq!(cat(175.0), Category::Unhealthy);
        assert_eq!(cat(0.0), Category::Good);
    }

    #[test]
    fn band_edges() {
        assert_eq!(cat(50.0), Category::Good);
        assert_eq!(cat(50.5), Category::Moderate);
        assert_eq!(cat(150.0), Category::Moderate);
        assert_eq!(cat(151.0), Category::Unhealthy);
        assert!(!classify(200.0).unwrap().is_out_of_scale());
        let s = classify(250.0).unwrap();
        assert_eq!(s, AqiStatus::out_of_scale());
    }

    #[test]
    fn integer_rows_agree_with_table() {
        for ppm in 0..=50 {
            assert_eq!(cat(f64::from(ppm)), Category::Good);
        }
        for ppm in 51..=150 {
            assert_eq!(cat(f64::from(ppm)), Category::Moderate);
        }
        for ppm in 151..=200 {
            assert_eq!(cat(f64::from(ppm)), Category::Unhealthy);
        }
    }

    #[test]
    fn rejects_negative_and_nan() {
        assert!(classify(-0.01).is_err());
        assert!(classify(f64::NAN).is_err());
        assert!(classify(f64::INFINITY).is_err());
    }

    #[test]
    fn sweep_is_total_and_monotone() {
        let mut prev = 0u8;
        for step in 0..=1600 {
            let ppm = f64::from(step) * 0.25;
            let s = classify(ppm).unwrap();
            assert!(s.category().index() >= prev, "non-monotone at {ppm}");
            assert_eq!(s.is_out_of_scale(), ppm > 200.0);
            if s.is_out_of_scale() {
                assert_eq!(s.category(), Category::Unhealthy);
            }
            prev = s.category().index();
        }
    }

    #[test]
    fn indicators() {
        assert_eq!(indicator_for(Category::Good.into()), Indicator::Green);
        assert_eq!(indicator_for(Category::Moderate.into()), Indicator::Blue);
        assert_eq!(indicator_for(Category::Unhealthy.into()), Indicator::Red);
        assert_eq!(indicator_for(AqiStatus::out_of_scale()), Indicator::Red);
        for c in Category::ALL {
            assert_eq!(c.indicator().category(), c);
        }
    }

    #[test]
    fn descriptions() {
        assert!(describe(Category::Good.into()).contains("no risk"));
        assert!(describe(Category::Unhealthy.into()).contains("Very harmful"));
        let plain = describe(Category::Unhealthy.into());
        let flagged = describe(AqiStatus::out_of_scale());
        assert!(flagged.starts_with(&plain));
        assert!(flagged.contains("above 200 PPM"));
    }

    #[test]
    fn status_codes() {
        assert_eq!(AqiStatus::new(Category::Good).code(), 0);
        assert_eq!(AqiStatus::new(Category::Moderate).code(), 1);
        assert_eq!(AqiStatus::new(Category::Unhealthy).code(), 2);
        assert_eq!(AqiStatus::out_of_scale().code(), 0x82);
        for code in 0..=255u8 {
            match AqiStatus::from_code(code) {
                Ok(s) => assert_eq!(s.code(), code),
                Err(_) => assert!(![0, 1, 2, 0x82].contains(&code)),
            }
        }
    }

    #[test]
    fn centi_matches_float() {
        assert_eq!(classify_centi(5000).category(), Category::Good);
        assert_eq!(classify_centi(5001).category(), Category::Moderate);
        assert_eq!(classify_centi(15000).category(), Category::Moderate);
        assert_eq!(classify_centi(15001).category(), Category::Unhealthy);
        assert!(!classify_centi(20000).is_out_of_scale());
        assert!(classify_centi(20001).is_out_of_scale());
    }

    #[test]
    fn names_roundtrip() {
        for c in Category::ALL {
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
        }
        assert!("bad".parse::<Category>().is_err());
    }
}
