//! MQ-135 sensing chain: ambient PPM to ADC counts and back.
//!
//! The forward chain runs `raw -> volts -> Rs -> Rs/R0 -> ppm`, using the
//! power-law sensitivity curve `ppm = a * (Rs/R0)^b` with `b < 0`. The sensor
//! sits on the high side of a voltage divider with load resistor `RL`, so the
//! ADC reads `Vcc * RL / (RL + Rs)`.

use alloc::vec::Vec;

use libm::{log, pow, round};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Samples never drive the inverse chain below this concentration.
pub const MIN_SAMPLE_PPM: f64 = 0.01;

/// Datasheet anchor points (Rs/R0, ppm) the default curve is fitted through.
pub const DATASHEET_ANCHORS: [(f64, f64); 2] = [(2.4, 10.0), (0.8, 200.0)];

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SensorError {
    #[error("ADC count {raw} outside 0..={max}")]
    AdcRange { raw: u32, max: u16 },
    #[error("voltage {0} V exceeds supply")]
    VoltageRange(f64),
    #[error("sensor saturated: divider voltage {0} V is not positive")]
    Saturation(f64),
    #[error("value {0} outside the curve's domain")]
    Domain(f64),
    #[error("anchor ratios are equal ({0}); cannot fit a curve")]
    DegenerateFit(f64),
    #[error("calibration needs non-empty positive samples and a positive clean-air ratio")]
    Calibration,
    #[error("invalid sensor curve: {0}")]
    InvalidCurve(&'static str),
    #[error("invalid ambient profile: {0}")]
    InvalidProfile(&'static str),
}

/// Power-law calibration plus the electrical setup around the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorCurve {
    /// PPM at Rs/R0 = 1.
    pub a: f64,
    /// Curve exponent, negative.
    pub b: f64,
    pub r0: f64,
    pub rl: f64,
    pub vcc: f64,
    pub adc_bits: u8,
}

impl Default for SensorCurve {
    fn default() -> Self {
        let fit = fit_curve(DATASHEET_ANCHORS[0], DATASHEET_ANCHORS[1])
            .expect("datasheet anchors are valid");
        SensorCurve {
            a: fit.a,
            b: fit.b,
            r0: 10_000.0,
            rl: 10_000.0,
            vcc: 5.0,
            adc_bits: 10,
        }
    }
}

impl SensorCurve {
    pub fn validate(&self) -> Result<(), SensorError> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.a) {
            return Err(SensorError::InvalidCurve("a must be positive"));
        }
        if !(self.b.is_finite() && self.b < 0.0) {
            return Err(SensorError::InvalidCurve("b must be negative"));
        }
        if !positive(self.r0) || !positive(self.rl) {
            return Err(SensorError::InvalidCurve("resistances must be positive"));
        }
        if !positive(self.vcc) {
            return Err(SensorError::InvalidCurve("vcc must be positive"));
        }
        if !(8..=16).contains(&self.adc_bits) {
            return Err(SensorError::InvalidCurve("adc_bits must be within 8..=16"));
        }
        Ok(())
    }

    /// Largest ADC count, `2^adc_bits - 1`.
    pub fn adc_max(&self) -> u16 {
        adc_max(self.adc_bits)
    }

    /// Width in PPM of the ADC step `raw..raw+1`, where both ends decode.
    pub fn lsb_width_at(&self, raw: u16) -> Option<f64> {
        let lo = adc_to_ppm(raw, self).ok()?;
        let hi = adc_to_ppm(raw.checked_add(1)?, self).ok()?;
        Some((lo - hi).abs())
    }
}

pub fn adc_max(adc_bits: u8) -> u16 {
    ((1u32 << adc_bits) - 1) as u16
}

pub fn adc_to_voltage(raw: u16, curve: &SensorCurve) -> Result<f64, SensorError> {
    let max = curve.adc_max();
    if raw > max {
        return Err(SensorError::AdcRange {
            raw: u32::from(raw),
            max,
        });
    }
    Ok(f64::from(raw) / f64::from(max) * curve.vcc)
}

/// Sensor resistance from the divider voltage.
pub fn voltage_to_rs(v: f64, curve: &SensorCurve) -> Result<f64, SensorError> {
    if v.is_nan() || v <= 0.0 {
        return Err(SensorError::Saturation(v));
    }
    if v > curve.vcc {
        return Err(SensorError::VoltageRange(v));
    }
    Ok(curve.rl * (curve.vcc - v) / v)
}

pub fn ratio_to_ppm(ratio: f64, curve: &SensorCurve) -> Result<f64, SensorError> {
    if ratio.is_nan() || ratio <= 0.0 {
        return Err(SensorError::Domain(ratio));
    }
    Ok(curve.a * pow(ratio, curve.b))
}

/// Coefficients of `ppm = a * ratio^b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveFit {
    pub a: f64,
    pub b: f64,
}

/// Fits the power law through two `(ratio, ppm)` anchors on a log-log line.
pub fn fit_curve(anchor1: (f64, f64), anchor2: (f64, f64)) -> Result<CurveFit, SensorError> {
    let (r1, p1) = anchor1;
    let (r2, p2) = anchor2;
    for x in [r1, p1, r2, p2] {
        if !(x.is_finite() && x > 0.0) {
            return Err(SensorError::Domain(x));
        }
    }
    if r1 == r2 {
        return Err(SensorError::DegenerateFit(r1));
    }
    let b = log(p1 / p2) / log(r1 / r2);
    let a = p1 / pow(r1, b);
    Ok(CurveFit { a, b })
}

/// Noise-free inverse chain, rounded to the nearest ADC count.
pub fn ppm_to_adc(ppm: f64, curve: &SensorCurve) -> Result<u16, SensorError> {
    if ppm.is_nan() || ppm <= 0.0 {
        return Err(SensorError::Domain(ppm));
    }
    let ratio = pow(ppm / curve.a, 1.0 / curve.b);
    let rs = ratio * curve.r0;
    let v = curve.vcc * curve.rl / (curve.rl + rs);
    let max = f64::from(curve.adc_max());
    let raw = round(v / curve.vcc * max);
    Ok(raw.clamp(0.0, max) as u16)
}

/// Forward chain from an ADC count to PPM.
pub fn adc_to_ppm(raw: u16, curve: &SensorCurve) -> Result<f64, SensorError> {
    let v = adc_to_voltage(raw, curve)?;
    let rs = voltage_to_rs(v, curve)?;
    ratio_to_ppm(rs / curve.r0, curve)
}

/// Clean-air R0 from a set of Rs readings and the datasheet clean-air ratio.
pub fn calibrate_r0(rs_samples: &[f64], clean_air_ratio: f64) -> Result<f64, SensorError> {
    if rs_samples.is_empty()
        || rs_samples.iter().any(|&r| !(r.is_finite() && r > 0.0))
        || !(clean_air_ratio.is_finite() && clean_air_ratio > 0.0)
    {
        return Err(SensorError::Calibration);
    }
    let mean = rs_samples.iter().sum::<f64>() / rs_samples.len() as f64;
    Ok(mean / clean_air_ratio)
}

/// Piecewise-linear ambient concentration schedule with noise settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientProfile {
    points: Vec<(f64, f64)>,
    noise_sigma: f64,
    seed: u64,
}

pub const DEFAULT_NOISE_SIGMA: f64 = 1.0;
pub const PRESET_SPAN_S: f64 = 7200.0;

impl AmbientProfile {
    pub fn new(points: Vec<(f64, f64)>, noise_sigma: f64, seed: u64) -> Result<Self, SensorError> {
        if points.is_empty() {
            return Err(SensorError::InvalidProfile("no points"));
        }
        if points
            .iter()
            .any(|&(t, p)| !t.is_finite() || !p.is_finite() || p < 0.0)
        {
            return Err(SensorError::InvalidProfile(
                "points must be finite with ppm >= 0",
            ));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SensorError::InvalidProfile(
                "times must be strictly increasing",
            ));
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(SensorError::InvalidProfile("noise sigma must be >= 0"));
        }
        Ok(AmbientProfile {
            points,
            noise_sigma,
            seed,
        })
    }

    /// Two-hour night decline, 70 to 40 PPM.
    pub fn night() -> Self {
        Self::new(
            alloc::vec![(0.0, 70.0), (PRESET_SPAN_S, 40.0)],
            DEFAULT_NOISE_SIGMA,
            0,
        )
        .unwrap()
    }

    /// Two-hour daytime rise, 30 to 44 PPM.
    pub fn day() -> Self {
        Self::new(
            alloc::vec![(0.0, 30.0), (PRESET_SPAN_S, 44.0)],
            DEFAULT_NOISE_SIGMA,
            0,
        )
        .unwrap()
    }

    pub fn constant(ppm: f64) -> Result<Self, SensorError> {
        Self::new(alloc::vec![(0.0, ppm)], DEFAULT_NOISE_SIGMA, 0)
    }

    pub fn with_noise(mut self, noise_sigma: f64) -> Result<Self, SensorError> {
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(SensorError::InvalidProfile("noise sigma must be >= 0"));
        }
        self.noise_sigma = noise_sigma;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Noise-free concentration at `t` seconds, clamped outside the schedule.
    pub fn ppm_at(&self, t: f64) -> f64 {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if t <= first.0 {
            return first.1;
        }
        if t >= last.0 {
            return last.1;
        }
        // First point strictly after t; t > first.0 so idx >= 1.
        let idx = self.points.partition_point(|&(pt, _)| pt <= t);
        let (t0, p0) = self.points[idx - 1];
        let (t1, p1) = self.points[idx];
        p0 + (p1 - p0) * (t - t0) / (t1 - t0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdcReading {
    pub raw: u16,
    /// Seconds from simulation start.
    pub t: f64,
}

/// Owns the profile RNG; one per simulated sensor.
#[derive(Debug, Clone)]
pub struct Sampler {
    profile: AmbientProfile,
    curve: SensorCurve,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

impl Sampler {
    pub fn new(profile: AmbientProfile, curve: SensorCurve) -> Result<Self, SensorError> {
        curve.validate()?;
        let noise = Normal::new(0.0, profile.noise_sigma)
            .map_err(|_| SensorError::InvalidProfile("noise sigma must be >= 0"))?;
        Ok(Sampler {
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            profile,
            curve,
            noise,
        })
    }

    pub fn profile(&self) -> &AmbientProfile {
        &self.profile
    }

    pub fn curve(&self) -> &SensorCurve {
        &self.curve
    }

    /// Ambient concentration at `t` with noise applied, floored at [`MIN_SAMPLE_PPM`].
    pub fn ambient_ppm(&mut self, t: f64) -> f64 {
        let ppm = self.profile.ppm_at(t) + self.noise.sample(&mut self.rng);
        ppm.max(MIN_SAMPLE_PPM)
    }

    pub fn sample(&mut self, t: f64) -> AdcReading {
        let ppm = self.ambient_ppm(t);
        let raw = ppm_to_adc(ppm, &self.curve).expect("validated curve, positive ppm");
        AdcReading { raw, t }
    }
}
