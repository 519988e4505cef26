use crate::error::{Error, Result};

/// Closed interval used for domain randomization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Bounds { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    pub fn lerp(&self, u: f64) -> f64 {
        self.lo + (self.hi - self.lo) * u
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::param(format!(
                "{name}: empty or non-finite range [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Physical constants and randomization bounds for episode synthesis.
///
/// Impedances are per-unit on `base_mva` and the nominal voltage; currents
/// come out in per-unit of the matching base current.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub nominal_voltage_kv: f64,
    pub frequency_hz: f64,
    pub sample_rate_hz: f64,
    pub samples_per_episode: usize,
    pub base_mva: f64,
    pub line_length_km: Bounds,
    pub line_impedance_ohm_per_km: f64,
    pub line_angle_deg: Bounds,
    pub source_impedance_pu: Bounds,
    pub source_angle_deg: Bounds,
    /// Zero- to positive-sequence impedance ratio.
    pub k0: Bounds,
    /// Pre-fault line loading, per-unit current.
    pub load_level: Bounds,
    pub load_angle_deg: Bounds,
    pub bus_voltage_pu: Bounds,
    pub bus_angle_deg: Bounds,
    pub fault_duration_s: Bounds,
    pub fault_resistance_pu: Bounds,
    pub dc_time_constant_s: Bounds,
    /// Scale of the disturbance seen by relays off the faulted line.
    pub attenuation: Bounds,
    pub clearing_time_constant_s: f64,
    pub snr_db: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nominal_voltage_kv: 90.0,
            frequency_hz: 50.0,
            sample_rate_hz: 6400.0,
            samples_per_episode: 6400,
            base_mva: 100.0,
            line_length_km: Bounds::new(20.0, 80.0),
            line_impedance_ohm_per_km: 0.4,
            line_angle_deg: Bounds::new(70.0, 80.0),
            source_impedance_pu: Bounds::new(0.04, 0.2),
            source_angle_deg: Bounds::new(80.0, 88.0),
            k0: Bounds::new(1.0, 1.5),
            load_level: Bounds::new(0.2, 1.0),
            load_angle_deg: Bounds::new(-30.0, 30.0),
            bus_voltage_pu: Bounds::new(0.97, 1.03),
            bus_angle_deg: Bounds::new(-10.0, 10.0),
            fault_duration_s: Bounds::new(0.06, 0.2),
            fault_resistance_pu: Bounds::new(0.0, 0.02),
            dc_time_constant_s: Bounds::new(0.02, 0.06),
            attenuation: Bounds::new(0.2, 0.6),
            clearing_time_constant_s: 0.005,
            snr_db: 60.0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nominal_voltage_kv", self.nominal_voltage_kv),
            ("frequency_hz", self.frequency_hz),
            ("sample_rate_hz", self.sample_rate_hz),
            ("base_mva", self.base_mva),
            ("line_impedance_ohm_per_km", self.line_impedance_ohm_per_km),
            ("clearing_time_constant_s", self.clearing_time_constant_s),
            ("snr_db", self.snr_db),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.samples_per_episode == 0 {
            return Err(Error::param("samples_per_episode must be positive"));
        }
        let ranges = [
            ("line_length_km", self.line_length_km),
            ("line_angle_deg", self.line_angle_deg),
            ("source_impedance_pu", self.source_impedance_pu),
            ("source_angle_deg", self.source_angle_deg),
            ("k0", self.k0),
            ("load_level", self.load_level),
            ("load_angle_deg", self.load_angle_deg),
            ("bus_voltage_pu", self.bus_voltage_pu),
            ("bus_angle_deg", self.bus_angle_deg),
            ("fault_duration_s", self.fault_duration_s),
            ("fault_resistance_pu", self.fault_resistance_pu),
            ("dc_time_constant_s", self.dc_time_constant_s),
            ("attenuation", self.attenuation),
        ];
        for (name, b) in ranges {
            b.check(name)?;
        }
        if self.line_length_km.lo <= 0.0 || self.source_impedance_pu.lo <= 0.0 {
            return Err(Error::param("line lengths and source impedances must be positive"));
        }
        if self.dc_time_constant_s.lo <= 0.0 || self.fault_duration_s.lo <= 0.0 {
            return Err(Error::param("time constants and durations must be positive"));
        }
        Ok(())
    }

    pub fn base_impedance_ohm(&self) -> f64 {
        self.nominal_voltage_kv * self.nominal_voltage_kv / self.base_mva
    }

    pub fn duration_s(&self) -> f64 {
        self.samples_per_episode as f64 / self.sample_rate_hz
    }
}
