use std::f64::consts::{PI, SQRT_2};

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::config::GridConfig;
use super::fault::FaultType;
use super::layout::{ChannelLayout, Quantity, CHANNEL_COUNT, LINE_COUNT, RELAY_COUNT, SUBSTATION_COUNT};
use super::physics::{phase_rotation, terminal_fault, FaultLoop, TerminalFault};
use crate::error::{Error, Result};
use crate::seed;

pub const LOC_MIN: f64 = 0.01;
pub const LOC_MAX: f64 = 0.99;

/// Half-width of the crop around inception; inception times are drawn so that
/// the full crop stays inside the episode.
pub const CROP_HALF_WIDTH_S: f64 = 0.08;

const STREAM_META: u64 = 1;
const STREAM_PHYSICS: u64 = 2;

/// Domain-randomization draws that produced an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Randomization {
    pub line_lengths_km: [f64; LINE_COUNT],
    pub load_level: f64,
    pub source_impedance_pu: [f64; SUBSTATION_COUNT],
    pub k0: f64,
    pub fault_resistance_pu: f64,
    pub dc_time_constant_s: f64,
    pub noise_seed: u64,
}

/// One simulated fault case. `signals` is channel-major (48 x samples).
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: u64,
    pub signals: Array2<f32>,
    pub sample_rate: f64,
    pub fault_type: FaultType,
    /// 1-based line id.
    pub faulted_line: usize,
    /// Fraction of the line length measured from the lower-numbered terminal.
    pub location_frac: f64,
    pub t_inception: f64,
    pub t_clearing: f64,
    pub seed: u64,
    pub randomization: Randomization,
}

impl Episode {
    pub fn inception_sample(&self) -> usize {
        (self.t_inception * self.sample_rate).round() as usize
    }

    pub fn clearing_sample(&self) -> usize {
        (self.t_clearing * self.sample_rate).round() as usize
    }

    pub fn samples(&self) -> usize {
        self.signals.ncols()
    }

    /// Check the structural invariants of an episode.
    pub fn validate(&self) -> Result<()> {
        if self.signals.nrows() != CHANNEL_COUNT {
            return Err(Error::contract(format!(
                "episode {} has {} channels",
                self.episode_id,
                self.signals.nrows()
            )));
        }
        if !self.signals.iter().all(|v| v.is_finite()) {
            return Err(Error::contract(format!(
                "episode {} has non-finite samples",
                self.episode_id
            )));
        }
        if !(LOC_MIN..=LOC_MAX).contains(&self.location_frac) {
            return Err(Error::contract(format!(
                "episode {} location {} outside [{LOC_MIN}, {LOC_MAX}]",
                self.episode_id, self.location_frac
            )));
        }
        let duration = self.samples() as f64 / self.sample_rate;
        if !(self.t_inception > 0.0
            && self.t_inception < self.t_clearing
            && self.t_clearing <= duration)
        {
            return Err(Error::contract(format!(
                "episode {} has inconsistent times ({}, {})",
                self.episode_id, self.t_inception, self.t_clearing
            )));
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, b: super::config::Bounds) -> f64 {
    b.lerp(rng.random::<f64>())
}

fn deg(d: f64) -> f64 {
    d * PI / 180.0
}

/// Steady-state and fault-component phasors for every channel.
struct ChannelPhasors {
    pre: [Complex64; CHANNEL_COUNT],
    fault: [Complex64; CHANNEL_COUNT],
}

struct Draws {
    line_lengths_km: [f64; LINE_COUNT],
    line_impedance: [Complex64; LINE_COUNT],
    source_impedance: [Complex64; SUBSTATION_COUNT],
    bus_voltage: [Complex64; SUBSTATION_COUNT],
    load_current: [Complex64; LINE_COUNT],
    load_level: f64,
    k0: f64,
    fault_resistance: f64,
    dc_tau: f64,
    duration: f64,
    relay_attenuation: [f64; RELAY_COUNT],
    bus_attenuation: [f64; SUBSTATION_COUNT],
    system_angle: f64,
    inception_sample: usize,
    noise_seed: u64,
}

fn draw<R: Rng>(cfg: &GridConfig, rng: &mut R) -> Draws {
    let zbase = cfg.base_impedance_ohm();
    let mut line_lengths_km = [0.0; LINE_COUNT];
    let mut line_impedance = [Complex64::new(0.0, 0.0); LINE_COUNT];
    for l in 0..LINE_COUNT {
        line_lengths_km[l] = uniform(rng, cfg.line_length_km);
        let angle = deg(uniform(rng, cfg.line_angle_deg));
        let mag = line_lengths_km[l] * cfg.line_impedance_ohm_per_km / zbase;
        line_impedance[l] = Complex64::from_polar(mag, angle);
    }
    let mut source_impedance = [Complex64::new(0.0, 0.0); SUBSTATION_COUNT];
    let mut bus_voltage = [Complex64::new(0.0, 0.0); SUBSTATION_COUNT];
    for s in 0..SUBSTATION_COUNT {
        let mag = uniform(rng, cfg.source_impedance_pu);
        source_impedance[s] = Complex64::from_polar(mag, deg(uniform(rng, cfg.source_angle_deg)));
        bus_voltage[s] = Complex64::from_polar(
            uniform(rng, cfg.bus_voltage_pu),
            deg(uniform(rng, cfg.bus_angle_deg)),
        );
    }
    let load_level = uniform(rng, cfg.load_level);
    let mut load_current = [Complex64::new(0.0, 0.0); LINE_COUNT];
    for l in 0..LINE_COUNT {
        let mag = load_level * rng.random_range(0.8..1.2);
        let direction = if rng.random::<bool>() { 0.0 } else { PI };
        load_current[l] =
            Complex64::from_polar(mag, deg(uniform(rng, cfg.load_angle_deg)) + direction);
    }
    let k0 = uniform(rng, cfg.k0);
    let fault_resistance = uniform(rng, cfg.fault_resistance_pu);
    let dc_tau = uniform(rng, cfg.dc_time_constant_s);
    let duration = uniform(rng, cfg.fault_duration_s);
    let mut relay_attenuation = [0.0; RELAY_COUNT];
    for a in relay_attenuation.iter_mut() {
        *a = uniform(rng, cfg.attenuation);
    }
    let mut bus_attenuation = [0.0; SUBSTATION_COUNT];
    for a in bus_attenuation.iter_mut() {
        *a = uniform(rng, cfg.attenuation);
    }
    let system_angle = rng.random_range(0.0..2.0 * PI);

    let fs = cfg.sample_rate_hz;
    let half = (CROP_HALF_WIDTH_S * fs).round() as usize;
    let total = cfg.samples_per_episode;
    // keep the crop inside the episode and let the longest fault clear before the end
    let latest_clear = ((cfg.fault_duration_s.hi * fs).ceil() as usize).max(half);
    let lo = half.max(1);
    let hi = total.saturating_sub(latest_clear).max(lo);
    let inception_sample = rng.random_range(lo..=hi);
    let noise_seed = rng.random::<u64>();

    Draws {
        line_lengths_km,
        line_impedance,
        source_impedance,
        bus_voltage,
        load_current,
        load_level,
        k0,
        fault_resistance,
        dc_tau,
        duration,
        relay_attenuation,
        bus_attenuation,
        system_angle,
        inception_sample,
        noise_seed,
    }
}

fn phasors(
    layout: &ChannelLayout,
    fault: FaultType,
    line: usize,
    loc: f64,
    d: &Draws,
) -> ChannelPhasors {
    let zero = Complex64::new(0.0, 0.0);
    let mut pre = [zero; CHANNEL_COUNT];
    let mut flt = [zero; CHANNEL_COUNT];

    let (lower, upper) = layout.line_ends(line);
    let zl = d.line_impedance[line - 1];
    let terminal = |sub: usize, frac: f64| -> TerminalFault {
        let lp = FaultLoop {
            source_voltage: d.bus_voltage[sub - 1],
            source_impedance: d.source_impedance[sub - 1],
            line_section: zl * frac,
            k0: d.k0,
            fault_resistance: d.fault_resistance,
        };
        terminal_fault(fault, &lp).expect("short-circuit fault type")
    };
    let near = terminal(lower, loc);
    let far = terminal(upper, 1.0 - loc);
    let at_terminal = |sub: usize| -> Option<&TerminalFault> {
        if sub == lower {
            Some(&near)
        } else if sub == upper {
            Some(&far)
        } else {
            None
        }
    };
    // nearest faulted-line terminal for substations off the faulted line
    let nearest_terminal = |sub: usize| -> (usize, usize) {
        let hl = layout.substation_hops(sub, lower);
        let hu = layout.substation_hops(sub, upper);
        if hl <= hu {
            (lower, hl)
        } else {
            (upper, hu)
        }
    };

    let mut bus_delta = [[zero; 3]; SUBSTATION_COUNT];
    for s in 1..=SUBSTATION_COUNT {
        bus_delta[s - 1] = match at_terminal(s) {
            Some(tf) => tf.voltage_delta,
            None => {
                let (t, hops) = nearest_terminal(s);
                let scale = d.bus_attenuation[s - 1].powi(hops as i32);
                at_terminal(t).unwrap().voltage_delta.map(|v| v * scale)
            }
        };
    }

    for relay in 1..=RELAY_COUNT {
        let placement = layout.relay_placement(relay);
        let sub = placement.substation;
        let rl = placement.line;
        let (lo_end, _) = layout.line_ends(rl);
        let load = if sub == lo_end {
            d.load_current[rl - 1]
        } else {
            -d.load_current[rl - 1]
        };
        let fault_current = if rl == line {
            at_terminal(sub).unwrap().current
        } else {
            let alpha = d.relay_attenuation[relay - 1];
            match at_terminal(sub) {
                // parallel lines feed the faulted terminal from behind the bus
                Some(tf) => tf.current.map(|i| -i * alpha),
                None => {
                    let (t, hops) = nearest_terminal(sub);
                    let scale = alpha.powi(hops as i32);
                    at_terminal(t).unwrap().current.map(|i| i * scale)
                }
            }
        };
        for p in 0..3 {
            let rot = phase_rotation(p);
            let ci = layout
                .channel(relay, Quantity::Current, crate::grid_sim::Phase::ALL[p])
                .expect("relay in range");
            let cv = ci + 3;
            pre[ci] = load * rot;
            flt[ci] = fault_current[p];
            pre[cv] = d.bus_voltage[sub - 1] * rot;
            flt[cv] = bus_delta[sub - 1][p];
        }
    }
    ChannelPhasors { pre, fault: flt }
}

/// Synthesize one labeled fault episode.
///
/// Pre-inception samples are steady-state sinusoids plus white noise. From
/// inception on, faulted-phase currents carry the short-circuit component with
/// a decaying DC offset; bus voltages step to their faulted values. After
/// clearing, all fault components decay back to zero.
pub fn synthesize_episode(
    cfg: &GridConfig,
    layout: &ChannelLayout,
    fault: FaultType,
    line: usize,
    loc: f64,
    seed: u64,
) -> Result<Episode> {
    if !fault.is_fault() {
        return Err(Error::param("cannot synthesize a NoFault episode"));
    }
    if !(1..=LINE_COUNT).contains(&line) {
        return Err(Error::param(format!("line {line} out of range 1..{LINE_COUNT}")));
    }
    if !(LOC_MIN..=LOC_MAX).contains(&loc) || !loc.is_finite() {
        return Err(Error::param(format!(
            "location {loc} outside [{LOC_MIN}, {LOC_MAX}]"
        )));
    }
    cfg.validate()?;

    let mut rng = seed::rng(seed, &[STREAM_PHYSICS]);
    let d = draw(cfg, &mut rng);
    let ph = phasors(layout, fault, line, loc, &d);

    let fs = cfg.sample_rate_hz;
    let n = cfg.samples_per_episode;
    let omega = 2.0 * PI * cfg.frequency_hz;
    let t_f = d.inception_sample as f64 / fs;
    let t_c = (t_f + d.duration).min(cfg.duration_s());
    let noise_scale = 10f64.powf(-cfg.snr_db / 20.0);
    let theta = d.system_angle;

    let mut signals = Array2::<f32>::zeros((CHANNEL_COUNT, n));
    let mut noise_rng = seed::rng(d.noise_seed, &[]);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    for (c, mut row) in signals.outer_iter_mut().enumerate() {
        let pre = ph.pre[c];
        let flt = ph.fault[c];
        let is_current = c % 6 < 3;
        let pre_amp = SQRT_2 * pre.norm();
        let pre_ang = pre.arg() + theta;
        let f_amp = SQRT_2 * flt.norm();
        let f_ang = flt.arg() + theta;
        let offset = if is_current {
            f_amp * (omega * t_f + f_ang).sin()
        } else {
            0.0
        };
        let sigma = pre.norm() * noise_scale;
        for (k, out) in row.iter_mut().enumerate() {
            let t = k as f64 / fs;
            let mut v = pre_amp * (omega * t + pre_ang).sin();
            if k >= d.inception_sample && f_amp > 0.0 {
                let mut f = f_amp * (omega * t + f_ang).sin();
                if is_current {
                    f -= offset * (-(t - t_f) / d.dc_tau).exp();
                }
                if t > t_c {
                    f *= (-(t - t_c) / cfg.clearing_time_constant_s).exp();
                }
                v += f;
            }
            v += sigma * std_normal.sample(&mut noise_rng);
            *out = v as f32;
        }
    }

    let ep = Episode {
        episode_id: 0,
        signals,
        sample_rate: fs,
        fault_type: fault,
        faulted_line: line,
        location_frac: loc,
        t_inception: t_f,
        t_clearing: t_c,
        seed,
        randomization: Randomization {
            line_lengths_km: d.line_lengths_km,
            load_level: d.load_level,
            source_impedance_pu: d.source_impedance.map(|z| z.norm()),
            k0: d.k0,
            fault_resistance_pu: d.fault_resistance,
            dc_time_constant_s: d.dc_tau,
            noise_seed: d.noise_seed,
        },
    };
    Ok(ep)
}

/// Fault metadata drawn for one episode of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodePlan {
    pub episode_id: u64,
    pub seed: u64,
    pub fault_type: FaultType,
    pub line: usize,
    pub location_frac: f64,
}

/// Deterministic per-episode draws; depends only on `(master_seed, episode_id)`.
pub fn plan_episode(master_seed: u64, episode_id: u64) -> EpisodePlan {
    let seed = seed::derive(master_seed, &[episode_id]);
    let mut rng = seed::rng(seed, &[STREAM_META]);
    let fault_type = FaultType::SHORT_CIRCUITS[rng.random_range(0..FaultType::SHORT_CIRCUITS.len())];
    let line = rng.random_range(1..=LINE_COUNT);
    let location_frac = LOC_MIN + (LOC_MAX - LOC_MIN) * rng.random::<f64>();
    EpisodePlan {
        episode_id,
        seed,
        fault_type,
        line,
        location_frac,
    }
}

pub fn synthesize_planned(
    cfg: &GridConfig,
    layout: &ChannelLayout,
    plan: &EpisodePlan,
) -> Result<Episode> {
    let mut ep = synthesize_episode(
        cfg,
        layout,
        plan.fault_type,
        plan.line,
        plan.location_frac,
        plan.seed,
    )?;
    ep.episode_id = plan.episode_id;
    Ok(ep)
}

/// Generate episodes `range` of the dataset keyed by `master_seed`, in parallel.
pub fn generate_range(
    cfg: &GridConfig,
    layout: &ChannelLayout,
    range: std::ops::Range<u64>,
    master_seed: u64,
) -> Result<Vec<Episode>> {
    range
        .into_par_iter()
        .map(|id| synthesize_planned(cfg, layout, &plan_episode(master_seed, id)))
        .collect()
}

/// Generate `n_episodes` episodes; identical output for any thread count.
pub fn generate_dataset(
    cfg: &GridConfig,
    layout: &ChannelLayout,
    n_episodes: usize,
    master_seed: u64,
) -> Result<Vec<Episode>> {
    if n_episodes == 0 {
        return Err(Error::param("n_episodes must be at least 1"));
    }
    cfg.validate()?;
    generate_range(cfg, layout, 0..n_episodes as u64, master_seed)
}

/// Sequential reference path, used to check parallel generation.
pub fn generate_dataset_sequential(
    cfg: &GridConfig,
    layout: &ChannelLayout,
    n_episodes: usize,
    master_seed: u64,
) -> Result<Vec<Episode>> {
    if n_episodes == 0 {
        return Err(Error::param("n_episodes must be at least 1"));
    }
    (0..n_episodes as u64)
        .map(|id| synthesize_planned(cfg, layout, &plan_episode(master_seed, id)))
        .collect()
}
