//! Phasor-domain short-circuit model.
//!
//! Each terminal of the faulted line is treated as a Thevenin source behind
//! `zs` feeding the fault through the line section `x`. Sequence networks are
//! homogeneous (`Z2 = Z1`, `Z0 = k0 * Z1` for both source and line), so the
//! healthy phases carry no fault component.

use num_complex::Complex64;

use super::fault::{FaultShape, FaultType};

/// `1∠120°`
pub fn a_op() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0)
}

/// Rotation carrying a phase-A phasor onto `phase` of a positive-sequence set.
pub fn phase_rotation(phase: usize) -> Complex64 {
    match phase % 3 {
        0 => Complex64::new(1.0, 0.0),
        1 => a_op() * a_op(),
        _ => a_op(),
    }
}

/// Sequence -> phase transform expressed in the frame of `reference`.
///
/// Returns phasors indexed by absolute phase (A=0, B=1, C=2).
pub fn sequence_to_phase(reference: usize, seq: [Complex64; 3]) -> [Complex64; 3] {
    let [zero, pos, neg] = seq;
    let a = a_op();
    let a2 = a * a;
    let mut out = [Complex64::new(0.0, 0.0); 3];
    out[reference % 3] = zero + pos + neg;
    out[(reference + 1) % 3] = zero + a2 * pos + a * neg;
    out[(reference + 2) % 3] = zero + a * pos + a2 * neg;
    out
}

/// Inverse transform in the phase-A frame: returns (zero, positive, negative).
pub fn phase_to_sequence(abc: [Complex64; 3]) -> [Complex64; 3] {
    let a = a_op();
    let a2 = a * a;
    let third = 1.0 / 3.0;
    [
        (abc[0] + abc[1] + abc[2]) * third,
        (abc[0] + a * abc[1] + a2 * abc[2]) * third,
        (abc[0] + a2 * abc[1] + a * abc[2]) * third,
    ]
}

/// Electrical quantities seen at one terminal of the faulted line.
#[derive(Debug, Clone, Copy)]
pub struct TerminalFault {
    /// Fault-component phase currents flowing from the bus into the line.
    pub current: [Complex64; 3],
    /// Change of the bus phase voltages caused by the fault.
    pub voltage_delta: [Complex64; 3],
}

/// Parameters of one terminal's fault loop.
#[derive(Debug, Clone, Copy)]
pub struct FaultLoop {
    /// Pre-fault phase-A voltage behind the terminal (RMS per-unit phasor).
    pub source_voltage: Complex64,
    pub source_impedance: Complex64,
    /// Line impedance between the terminal and the fault point.
    pub line_section: Complex64,
    /// Zero- to positive-sequence impedance ratio.
    pub k0: f64,
    pub fault_resistance: f64,
}

/// Sequence fault currents and bus voltage deltas for a bolted or resistive
/// short circuit of type `fault`. Returns `None` for `NoFault`.
pub fn terminal_fault(fault: FaultType, lp: &FaultLoop) -> Option<TerminalFault> {
    let shape = fault.shape()?;
    let reference = fault.reference_phase()?.index();
    let e = lp.source_voltage * phase_rotation(reference);
    let z1 = lp.source_impedance + lp.line_section;
    let z2 = z1;
    let z0 = z1 * lp.k0;
    let rf = Complex64::new(lp.fault_resistance, 0.0);
    let zero = Complex64::new(0.0, 0.0);

    let (i0, i1, i2) = match shape {
        FaultShape::SingleLineGround => {
            let i = e / (z0 + z1 + z2 + rf * 3.0);
            (i, i, i)
        }
        FaultShape::LineLine => {
            let i = e / (z1 + z2 + rf);
            (zero, i, -i)
        }
        FaultShape::DoubleLineGround => {
            let z0f = z0 + rf * 3.0;
            let i1 = e / (z1 + z2 * z0f / (z2 + z0f));
            let i2 = -i1 * z0f / (z2 + z0f);
            let i0 = -i1 * z2 / (z2 + z0f);
            (i0, i1, i2)
        }
        FaultShape::ThreePhase => (zero, e / (z1 + rf), zero),
    };

    let zs = lp.source_impedance;
    let current = sequence_to_phase(reference, [i0, i1, i2]);
    let voltage_delta =
        sequence_to_phase(reference, [-(zs * lp.k0) * i0, -zs * i1, -zs * i2]);
    Some(TerminalFault {
        current,
        voltage_delta,
    })
}
