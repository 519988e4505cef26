use std::fmt;
use std::str::FromStr;

use super::layout::Phase;
use crate::error::{Error, Result};

/// Window/episode class: ten short-circuit types plus `NoFault`.
///
/// The discriminant doubles as the classifier's class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultType {
    NoFault = 0,
    AG = 1,
    BG = 2,
    CG = 3,
    AB = 4,
    BC = 5,
    CA = 6,
    ABG = 7,
    BCG = 8,
    CAG = 9,
    ABC = 10,
}

pub const CLASS_COUNT: usize = 11;

/// Topology of the short circuit, independent of which phases are involved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultShape {
    SingleLineGround,
    LineLine,
    DoubleLineGround,
    ThreePhase,
}

impl FaultType {
    pub const ALL: [FaultType; CLASS_COUNT] = [
        FaultType::NoFault,
        FaultType::AG,
        FaultType::BG,
        FaultType::CG,
        FaultType::AB,
        FaultType::BC,
        FaultType::CA,
        FaultType::ABG,
        FaultType::BCG,
        FaultType::CAG,
        FaultType::ABC,
    ];

    pub const SHORT_CIRCUITS: [FaultType; 10] = [
        FaultType::AG,
        FaultType::BG,
        FaultType::CG,
        FaultType::AB,
        FaultType::BC,
        FaultType::CA,
        FaultType::ABG,
        FaultType::BCG,
        FaultType::CAG,
        FaultType::ABC,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FaultType> {
        FaultType::ALL.get(i).copied()
    }

    pub fn is_fault(self) -> bool {
        self != FaultType::NoFault
    }

    pub fn phases(self) -> &'static [Phase] {
        use Phase::*;
        match self {
            FaultType::NoFault => &[],
            FaultType::AG => &[A],
            FaultType::BG => &[B],
            FaultType::CG => &[C],
            FaultType::AB | FaultType::ABG => &[A, B],
            FaultType::BC | FaultType::BCG => &[B, C],
            FaultType::CA | FaultType::CAG => &[C, A],
            FaultType::ABC => &[A, B, C],
        }
    }

    pub fn involves_ground(self) -> bool {
        matches!(
            self,
            FaultType::AG
                | FaultType::BG
                | FaultType::CG
                | FaultType::ABG
                | FaultType::BCG
                | FaultType::CAG
        )
    }

    pub fn shape(self) -> Option<FaultShape> {
        match (self.phases().len(), self.involves_ground()) {
            (1, _) => Some(FaultShape::SingleLineGround),
            (2, false) => Some(FaultShape::LineLine),
            (2, true) => Some(FaultShape::DoubleLineGround),
            (3, _) => Some(FaultShape::ThreePhase),
            _ => None,
        }
    }

    /// Phase used as the symmetrical-component reference: the faulted phase
    /// for single-phase faults, the healthy phase for two-phase faults, and A
    /// for three-phase faults.
    pub fn reference_phase(self) -> Option<Phase> {
        match self.shape()? {
            FaultShape::SingleLineGround => Some(self.phases()[0]),
            FaultShape::LineLine | FaultShape::DoubleLineGround => Phase::ALL
                .into_iter()
                .find(|p| !self.phases().contains(p)),
            FaultShape::ThreePhase => Some(Phase::A),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultType::NoFault => "NoFault",
            FaultType::AG => "AG",
            FaultType::BG => "BG",
            FaultType::CG => "CG",
            FaultType::AB => "AB",
            FaultType::BC => "BC",
            FaultType::CA => "CA",
            FaultType::ABG => "ABG",
            FaultType::BCG => "BCG",
            FaultType::CAG => "CAG",
            FaultType::ABC => "ABC",
        }
    }
}

impl fmt::Display for FaultType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FaultType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param(format!("unknown fault type {s:?}")))
    }
}
