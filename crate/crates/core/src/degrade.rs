//! Observability-loss scenarios: channel masking, reduced sampling rate and
//! temporal communication loss.
//!
//! Operators take channel-major views (channels x time). Windows are stored
//! time-major, so they are degraded through their transposed view.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayViewMut2;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid_sim::{ChannelLayout, Phase, Quantity, CHANNEL_COUNT, RELAY_COUNT, SUBSTATION_COUNT};
use crate::preprocess::Window;
use crate::seed;

pub const RATE_FACTORS: [u32; 6] = [2, 4, 8, 16, 32, 64];
pub const TEMPORAL_LOSS_MS: [u32; 4] = [5, 10, 20, 40];
pub const SAMPLE_RATE_HZ: f64 = 6400.0;

/// One degradation scenario. Construct through [`DegradationSpec::parse`] or
/// the checked constructors so parameters stay in their domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegradationSpec {
    None,
    MissingVoltage,
    MissingCurrent,
    ReducedRate(u32),
    RelayFailure(usize),
    SubstationFailure(usize),
    PhaseFailure(Phase),
    TemporalLoss(u32),
}

impl DegradationSpec {
    pub fn reduced_rate(factor: u32) -> Result<Self> {
        if RATE_FACTORS.contains(&factor) {
            Ok(DegradationSpec::ReducedRate(factor))
        } else {
            Err(Error::param(format!(
                "rate factor {factor} not in {RATE_FACTORS:?}"
            )))
        }
    }

    pub fn relay_failure(relay: usize) -> Result<Self> {
        if (1..=RELAY_COUNT).contains(&relay) {
            Ok(DegradationSpec::RelayFailure(relay))
        } else {
            Err(Error::param(format!("relay out of range 1..{RELAY_COUNT}")))
        }
    }

    pub fn substation_failure(substation: usize) -> Result<Self> {
        if (1..=SUBSTATION_COUNT).contains(&substation) {
            Ok(DegradationSpec::SubstationFailure(substation))
        } else {
            Err(Error::param(format!(
                "substation out of range 1..{SUBSTATION_COUNT}"
            )))
        }
    }

    pub fn temporal_loss(ms: u32) -> Result<Self> {
        if TEMPORAL_LOSS_MS.contains(&ms) {
            Ok(DegradationSpec::TemporalLoss(ms))
        } else {
            Err(Error::param(format!(
                "temporal loss {ms} ms not in {TEMPORAL_LOSS_MS:?}"
            )))
        }
    }

    /// Re-check the parameter domain (for values built directly).
    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradationSpec::ReducedRate(k) => Self::reduced_rate(k).map(|_| ()),
            DegradationSpec::RelayFailure(r) => Self::relay_failure(r).map(|_| ()),
            DegradationSpec::SubstationFailure(s) => Self::substation_failure(s).map(|_| ()),
            DegradationSpec::TemporalLoss(ms) => Self::temporal_loss(ms).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s, None),
        };
        let need = |what: &str| -> Result<&str> {
            arg.ok_or_else(|| Error::param(format!("scenario {kind:?} needs a {what}")))
        };
        let int = |a: &str| -> Result<u64> {
            a.parse::<u64>()
                .map_err(|_| Error::param(format!("bad scenario parameter {a:?}")))
        };
        let spec = match kind {
            "none" | "baseline" => DegradationSpec::None,
            "missing_voltage" => DegradationSpec::MissingVoltage,
            "missing_current" => DegradationSpec::MissingCurrent,
            "rate" => Self::reduced_rate(int(need("factor")?)? as u32)?,
            "relay" => Self::relay_failure(int(need("relay id")?)? as usize)?,
            "substation" => Self::substation_failure(int(need("substation id")?)? as usize)?,
            "phase" => {
                let p = match need("phase")?.to_ascii_uppercase().as_str() {
                    "A" => Phase::A,
                    "B" => Phase::B,
                    "C" => Phase::C,
                    other => return Err(Error::param(format!("phase {other:?} not in A|B|C"))),
                };
                DegradationSpec::PhaseFailure(p)
            }
            "temporal" => Self::temporal_loss(int(need("duration in ms")?)? as u32)?,
            other => return Err(Error::param(format!("unknown scenario {other:?}"))),
        };
        if arg.is_some()
            && matches!(
                spec,
                DegradationSpec::None
                    | DegradationSpec::MissingVoltage
                    | DegradationSpec::MissingCurrent
            )
        {
            return Err(Error::param(format!("scenario {kind:?} takes no parameter")));
        }
        Ok(spec)
    }

    /// Scenario family name as used in result files.
    pub fn kind(&self) -> &'static str {
        match self {
            DegradationSpec::None => "none",
            DegradationSpec::MissingVoltage => "missing_voltage",
            DegradationSpec::MissingCurrent => "missing_current",
            DegradationSpec::ReducedRate(_) => "rate",
            DegradationSpec::RelayFailure(_) => "relay",
            DegradationSpec::SubstationFailure(_) => "substation",
            DegradationSpec::PhaseFailure(_) => "phase",
            DegradationSpec::TemporalLoss(_) => "temporal",
        }
    }

    /// Parameter as a string; empty for parameterless scenarios.
    pub fn param(&self) -> String {
        match self {
            DegradationSpec::ReducedRate(k) => k.to_string(),
            DegradationSpec::RelayFailure(r) => r.to_string(),
            DegradationSpec::SubstationFailure(s) => s.to_string(),
            DegradationSpec::PhaseFailure(p) => p.to_string(),
            DegradationSpec::TemporalLoss(ms) => ms.to_string(),
            _ => String::new(),
        }
    }

    pub fn is_masking(&self) -> bool {
        matches!(
            self,
            DegradationSpec::MissingVoltage
                | DegradationSpec::MissingCurrent
                | DegradationSpec::RelayFailure(_)
                | DegradationSpec::SubstationFailure(_)
                | DegradationSpec::PhaseFailure(_)
        )
    }

    /// Stable small integer used to key random streams.
    pub fn stream_id(&self) -> u64 {
        let (family, p) = match *self {
            DegradationSpec::None => (0, 0),
            DegradationSpec::MissingVoltage => (1, 0),
            DegradationSpec::MissingCurrent => (2, 0),
            DegradationSpec::ReducedRate(k) => (3, k as u64),
            DegradationSpec::RelayFailure(r) => (4, r as u64),
            DegradationSpec::SubstationFailure(s) => (5, s as u64),
            DegradationSpec::PhaseFailure(p) => (6, p.index() as u64),
            DegradationSpec::TemporalLoss(ms) => (7, ms as u64),
        };
        family * 1000 + p
    }

    /// Every row of the scenario table plus the baseline, baseline first.
    pub fn default_matrix() -> Vec<DegradationSpec> {
        let mut v = vec![
            DegradationSpec::None,
            DegradationSpec::MissingVoltage,
            DegradationSpec::MissingCurrent,
        ];
        v.extend(RATE_FACTORS.iter().map(|&k| DegradationSpec::ReducedRate(k)));
        v.extend((1..=RELAY_COUNT).map(DegradationSpec::RelayFailure));
        v.extend((1..=SUBSTATION_COUNT).map(DegradationSpec::SubstationFailure));
        v.extend(Phase::ALL.into_iter().map(DegradationSpec::PhaseFailure));
        v.extend(TEMPORAL_LOSS_MS.iter().map(|&ms| DegradationSpec::TemporalLoss(ms)));
        v
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegradationSpec::None | DegradationSpec::MissingVoltage | DegradationSpec::MissingCurrent => {
                f.write_str(self.kind())
            }
            _ => write!(f, "{}:{}", self.kind(), self.param()),
        }
    }
}

impl FromStr for DegradationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DegradationSpec::parse(s)
    }
}

/// Channels zeroed by a masking scenario.
pub fn mask_channels(spec: &DegradationSpec, layout: &ChannelLayout) -> Result<BTreeSet<usize>> {
    spec.validate()?;
    let all = (0..CHANNEL_COUNT).map(|c| (c, layout.describe(c).expect("channel in range")));
    let set = match *spec {
        DegradationSpec::MissingVoltage => all
            .filter(|(_, (_, q, _))| *q == Quantity::Voltage)
            .map(|(c, _)| c)
            .collect(),
        DegradationSpec::MissingCurrent => all
            .filter(|(_, (_, q, _))| *q == Quantity::Current)
            .map(|(c, _)| c)
            .collect(),
        DegradationSpec::RelayFailure(relay) => all
            .filter(|(_, (r, _, _))| *r == relay)
            .map(|(c, _)| c)
            .collect(),
        DegradationSpec::SubstationFailure(sub) => all
            .filter(|(_, (r, _, _))| layout.relay_substation(*r) == sub)
            .map(|(c, _)| c)
            .collect(),
        DegradationSpec::PhaseFailure(phase) => all
            .filter(|(_, (_, _, p))| *p == phase)
            .map(|(c, _)| c)
            .collect(),
        other => {
            return Err(Error::contract(format!(
                "{other} is not a channel-masking scenario"
            )))
        }
    };
    Ok(set)
}

/// Zero the masked rows; other rows are untouched.
pub fn apply_channel_mask(mut signals: ArrayViewMut2<f32>, mask: &BTreeSet<usize>) {
    for &c in mask {
        signals.row_mut(c).fill(0.0);
    }
}

/// Keep every `k`-th sample and hold it over the next `k - 1` columns.
pub fn decimate_hold(mut signals: ArrayViewMut2<f32>, k: u32) -> Result<()> {
    if k != 1 && !RATE_FACTORS.contains(&k) {
        return Err(Error::param(format!(
            "decimation factor {k} not in 1 or {RATE_FACTORS:?}"
        )));
    }
    let k = k as usize;
    if k == 1 {
        return Ok(());
    }
    for mut row in signals.rows_mut() {
        let mut held = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j % k == 0 {
                held = *v;
            } else {
                *v = held;
            }
        }
    }
    Ok(())
}

/// Number of samples covered by a temporal-loss block.
pub fn block_samples(duration_ms: u32) -> usize {
    (duration_ms as f64 * SAMPLE_RATE_HZ / 1000.0).round() as usize
}

/// Zero `block_samples(duration_ms)` consecutive columns starting at `onset`.
pub fn zero_block(mut signals: ArrayViewMut2<f32>, onset: usize, duration_ms: u32) -> Result<()> {
    if !TEMPORAL_LOSS_MS.contains(&duration_ms) {
        return Err(Error::param(format!(
            "block duration {duration_ms} ms not in {TEMPORAL_LOSS_MS:?}"
        )));
    }
    let len = block_samples(duration_ms);
    if onset + len > signals.ncols() {
        return Err(Error::contract(format!(
            "block [{onset}, {}) exceeds window of {} samples",
            onset + len,
            signals.ncols()
        )));
    }
    signals
        .slice_mut(ndarray::s![.., onset..onset + len])
        .fill(0.0);
    Ok(())
}

/// Random block onset for one window, keyed by (seed, episode, window start).
pub fn temporal_onset(seed: u64, window: &Window, duration_ms: u32) -> usize {
    let len = block_samples(duration_ms);
    let span = window.tensor.nrows().saturating_sub(len);
    let mut rng = seed::rng(seed, &[window.episode_id, window.start_sample as u64]);
    rng.random_range(0..=span)
}

fn degrade_window(
    window: &mut Window,
    spec: &DegradationSpec,
    mask: Option<&BTreeSet<usize>>,
    seed: u64,
) -> Result<()> {
    match *spec {
        DegradationSpec::None => Ok(()),
        DegradationSpec::ReducedRate(k) => decimate_hold(window.tensor.view_mut().reversed_axes(), k),
        DegradationSpec::TemporalLoss(ms) => {
            let onset = temporal_onset(seed, window, ms);
            zero_block(window.tensor.view_mut().reversed_axes(), onset, ms)
        }
        _ => {
            let mask = mask.expect("mask computed for masking scenarios");
            apply_channel_mask(window.tensor.view_mut().reversed_axes(), mask);
            Ok(())
        }
    }
}

/// Degrade every window in place. `None` leaves the data untouched.
pub fn apply_degradation(
    windows: &mut [Window],
    spec: &DegradationSpec,
    layout: &ChannelLayout,
    seed: u64,
) -> Result<()> {
    spec.validate()?;
    let mask = if spec.is_masking() {
        Some(mask_channels(spec, layout)?)
    } else {
        None
    };
    windows
        .par_iter_mut()
        .try_for_each(|w| degrade_window(w, spec, mask.as_ref(), seed))
}

/// Copying variant of [`apply_degradation`].
pub fn degraded(
    windows: &[Window],
    spec: &DegradationSpec,
    layout: &ChannelLayout,
    seed: u64,
) -> Result<Vec<Window>> {
    let mut out = windows.to_vec();
    apply_degradation(&mut out, spec, layout, seed)?;
    Ok(out)
}
