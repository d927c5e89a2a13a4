//! Amplitude-level model of the dual-rail photonic hardware.
//!
//! A qutrit lives in three of the four (polarization, rail) modes of a
//! single photon: `|0> = (H, rail 0)`, `|1> = (H, rail 1)`,
//! `|2> = (V, rail 1)`; `(V, rail 0)` is auxiliary and surfaces as leakage.
//! A qubit lives in the polarization pair of rail 0.
//!
//! Elements are half- and quarter-wave plates (Jones matrices on one rail's
//! polarization pair, axis angle in degrees) and beam displacers, which
//! route one polarization to a neighboring rail:
//!
//! * `BD(H-up)`   moves every `(H, r)` amplitude to `(H, r-1)`,
//! * `BD(V-down)` moves every `(V, r)` amplitude to `(V, r+1)`.
//!
//! Rail indices are unbounded integers; circuits declare rails `{0, 1}` and
//! anything escaping the encoded positions shows up in
//! [`detect`] as leakage rather than as an error, matching how normalized
//! photon counting would see it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qmath::{QState, QmathError, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error(transparent)]
    Math(#[from] QmathError),
    #[error("amplitude outside the encoded modes (total {amount:.3e}) cannot be decoded")]
    LeakageDetected { amount: f64 },
    #[error("encoding requires dimension {expected}, got {got}")]
    BadDimension { expected: usize, got: usize },
    #[error("circuit JSON: {0}")]
    Json(String),
}

/// Photon polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

/// Which polarization a beam displacer shifts, and where.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BdDirection {
    #[serde(rename = "H-up")]
    HUp,
    #[serde(rename = "V-down")]
    VDown,
}

/// One optical element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Element {
    HWP { rail: i32, theta_deg: f64 },
    QWP { rail: i32, theta_deg: f64 },
    BD { direction: BdDirection },
    /// Polarizing beam splitter used purely as the source initializer: its
    /// output is unit `(H, rail 0)` regardless of input.
    #[serde(rename = "PBS-init")]
    PbsInit,
}

/// Wave-plate kind selector for [`waveplate_jones`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveplateKind {
    Hwp,
    Qwp,
}

/// Jones matrix (H, V basis) of a wave plate with its fast axis at
/// `theta_deg` degrees.
///
/// `HWP(t) = [[cos 2t, sin 2t], [sin 2t, -cos 2t]]` and
/// `QWP(t) = [[cos^2 t + i sin^2 t, (1-i) sin t cos t],
///            [(1-i) sin t cos t,   sin^2 t + i cos^2 t]]`,
/// the global-phase convention with a real-positive H-H entry at t = 0.
pub fn waveplate_jones(kind: WaveplateKind, theta_deg: f64) -> [[C64; 2]; 2] {
    let t = theta_deg.to_radians();
    match kind {
        WaveplateKind::Hwp => {
            let (s2, c2) = (2.0 * t).sin_cos();
            [
                [C64::new(c2, 0.0), C64::new(s2, 0.0)],
                [C64::new(s2, 0.0), C64::new(-c2, 0.0)],
            ]
        }
        WaveplateKind::Qwp => {
            let (s, c) = t.sin_cos();
            let diag_h = C64::new(c * c, s * s);
            let diag_v = C64::new(s * s, c * c);
            let off = C64::new(1.0, -1.0) * (s * c);
            [[diag_h, off], [off, diag_v]]
        }
    }
}

/// Sparse complex amplitudes over (rail, polarization) modes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RailState {
    amplitudes: BTreeMap<(i32, Polarization), C64>,
}

impl RailState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_components(components: &[((i32, Polarization), C64)]) -> Self {
        let mut state = Self::new();
        for &(mode, amp) in components {
            state.add(mode.0, mode.1, amp);
        }
        state
    }

    pub fn amplitude(&self, rail: i32, pol: Polarization) -> C64 {
        self.amplitudes
            .get(&(rail, pol))
            .copied()
            .unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn set(&mut self, rail: i32, pol: Polarization, amp: C64) {
        if amp.norm_sqr() == 0.0 {
            self.amplitudes.remove(&(rail, pol));
        } else {
            self.amplitudes.insert((rail, pol), amp);
        }
    }

    pub fn add(&mut self, rail: i32, pol: Polarization, amp: C64) {
        let cur = self.amplitude(rail, pol);
        self.set(rail, pol, cur + amp);
    }

    /// Iterates occupied modes in (rail, polarization) order.
    pub fn components(&self) -> impl Iterator<Item = (&(i32, Polarization), &C64)> {
        self.amplitudes.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    /// Total probability sitting on rails outside `rails`.
    pub fn weight_outside_rails(&self, rails: &[i32]) -> f64 {
        self.amplitudes
            .iter()
            .filter(|((rail, _), _)| !rails.contains(rail))
            .map(|(_, amp)| amp.norm_sqr())
            .sum()
    }

    pub fn max_abs_diff(&self, other: &RailState) -> f64 {
        let mut keys: Vec<(i32, Polarization)> = self.amplitudes.keys().copied().collect();
        keys.extend(other.amplitudes.keys().copied());
        keys.iter()
            .map(|&(rail, pol)| (self.amplitude(rail, pol) - other.amplitude(rail, pol)).norm())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for RailState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.amplitudes.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for ((rail, pol), amp) in &self.amplitudes {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            let pol = match pol {
                Polarization::H => "H",
                Polarization::V => "V",
            };
            write!(f, "({:+.6}{:+.6}i)|{},{}>", amp.re, amp.im, pol, rail)?;
        }
        Ok(())
    }
}

/// What the declared input/output of a circuit encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    /// `|0> = (H,0)`, `|1> = (H,1)`, `|2> = (V,1)`.
    Qutrit,
    /// `|0> = (H,0)`, `|1> = (V,0)`.
    Qubit,
}

impl Encoding {
    /// The (rail, polarization) slot of each logical basis state.
    pub fn positions(&self) -> &'static [(i32, Polarization)] {
        match self {
            Encoding::Qutrit => &[
                (0, Polarization::H),
                (1, Polarization::H),
                (1, Polarization::V),
            ],
            Encoding::Qubit => &[(0, Polarization::H), (0, Polarization::V)],
        }
    }

    pub fn dim(&self) -> usize {
        self.positions().len()
    }
}

/// Ordered optical elements with declared encodings and rails.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub elements: Vec<Element>,
    pub input: Encoding,
    pub output: Encoding,
    pub rails: Vec<i32>,
}

impl Circuit {
    pub fn new(elements: Vec<Element>, encoding: Encoding) -> Self {
        Self {
            elements,
            input: encoding,
            output: encoding,
            rails: match encoding {
                Encoding::Qutrit => vec![0, 1],
                Encoding::Qubit => vec![0],
            },
        }
    }

    /// Serializes the element list (the wire format is just the JSON array).
    pub fn to_json(&self) -> Result<String, OpticsError> {
        serde_json::to_string_pretty(&self.elements).map_err(|e| OpticsError::Json(e.to_string()))
    }

    pub fn from_json(json: &str, encoding: Encoding) -> Result<Self, OpticsError> {
        let elements: Vec<Element> =
            serde_json::from_str(json).map_err(|e| OpticsError::Json(e.to_string()))?;
        Ok(Self::new(elements, encoding))
    }
}

/// Maps a qutrit onto its rail modes.
pub fn encode(psi: &QState) -> Result<RailState, OpticsError> {
    encode_with(psi, Encoding::Qutrit)
}

/// Maps a qubit onto the rail-0 polarization pair.
pub fn encode_qubit(psi: &QState) -> Result<RailState, OpticsError> {
    encode_with(psi, Encoding::Qubit)
}

pub fn encode_with(psi: &QState, encoding: Encoding) -> Result<RailState, OpticsError> {
    if psi.dim() != encoding.dim() {
        return Err(OpticsError::BadDimension {
            expected: encoding.dim(),
            got: psi.dim(),
        });
    }
    let mut state = RailState::new();
    for (&(rail, pol), &amp) in encoding.positions().iter().zip(psi.amplitudes()) {
        state.set(rail, pol, amp);
    }
    Ok(state)
}

/// Reads a logical state back out of the rail modes. Errors if more than
/// 1e-9 amplitude sits anywhere else (for a qutrit that includes the
/// auxiliary `(V, rail 0)` mode).
pub fn decode_with(state: &RailState, encoding: Encoding) -> Result<QState, OpticsError> {
    let positions = encoding.positions();
    let stray: f64 = state
        .components()
        .filter(|(mode, _)| !positions.contains(mode))
        .map(|(_, amp)| amp.norm())
        .sum();
    if stray > 1e-9 {
        return Err(OpticsError::LeakageDetected { amount: stray });
    }
    let amplitudes: Vec<C64> = positions
        .iter()
        .map(|&(rail, pol)| state.amplitude(rail, pol))
        .collect();
    Ok(QState::new(amplitudes)?)
}

pub fn decode(state: &RailState) -> Result<QState, OpticsError> {
    decode_with(state, Encoding::Qutrit)
}

/// Applies one element. Wave plates act on their rail's polarization pair,
/// beam displacers permute rails; all of these preserve the norm. `PBS-init`
/// is the source model and simply emits unit `(H, 0)`.
pub fn apply_element(state: &RailState, element: &Element) -> RailState {
    match element {
        Element::HWP { rail, theta_deg } => {
            apply_jones(state, *rail, waveplate_jones(WaveplateKind::Hwp, *theta_deg))
        }
        Element::QWP { rail, theta_deg } => {
            apply_jones(state, *rail, waveplate_jones(WaveplateKind::Qwp, *theta_deg))
        }
        Element::BD { direction } => {
            let mut out = RailState::new();
            for (&(rail, pol), &amp) in state.components() {
                let new_rail = match (direction, pol) {
                    (BdDirection::HUp, Polarization::H) => rail - 1,
                    (BdDirection::VDown, Polarization::V) => rail + 1,
                    _ => rail,
                };
                out.add(new_rail, pol, amp);
            }
            out
        }
        Element::PbsInit => {
            let mut out = RailState::new();
            out.set(0, Polarization::H, C64::new(1.0, 0.0));
            out
        }
    }
}

fn apply_jones(state: &RailState, rail: i32, m: [[C64; 2]; 2]) -> RailState {
    let mut out = state.clone();
    let h = state.amplitude(rail, Polarization::H);
    let v = state.amplitude(rail, Polarization::V);
    out.set(rail, Polarization::H, m[0][0] * h + m[0][1] * v);
    out.set(rail, Polarization::V, m[1][0] * h + m[1][1] * v);
    out
}

/// Runs the circuit, returning only the final state.
pub fn simulate(circuit: &Circuit, input: &RailState) -> RailState {
    circuit
        .elements
        .iter()
        .fold(input.clone(), |state, element| apply_element(&state, element))
}

/// Runs the circuit, returning the input followed by the state after each
/// element (`elements.len() + 1` entries).
pub fn simulate_trace(circuit: &Circuit, input: &RailState) -> Vec<RailState> {
    let mut trace = Vec::with_capacity(circuit.elements.len() + 1);
    trace.push(input.clone());
    for element in &circuit.elements {
        let next = apply_element(trace.last().unwrap(), element);
        trace.push(next);
    }
    trace
}

/// Outcome probabilities at the encoded detector positions plus the
/// probability that went anywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub probabilities: Vec<f64>,
    pub leakage: f64,
}

pub fn detect(state: &RailState, encoding: Encoding) -> Detection {
    let probabilities: Vec<f64> = encoding
        .positions()
        .iter()
        .map(|&(rail, pol)| state.amplitude(rail, pol).norm_sqr())
        .collect();
    let leakage = 1.0 - probabilities.iter().sum::<f64>();
    Detection {
        probabilities,
        leakage,
    }
}

/// Preparation plate angle `theta_1(phi) = pi/4 - phi/2`, in degrees.
pub fn preparation_angle_deg(phi: f64) -> f64 {
    45.0 - phi.to_degrees() / 2.0
}

/// Source stage: PBS initializer, preparation half-wave plate, displacer.
/// Simulating it (any input) yields the encoded family state for `phi`.
pub fn preparation_circuit(phi: f64) -> Circuit {
    Circuit::new(
        vec![
            Element::PbsInit,
            Element::HWP {
                rail: 0,
                theta_deg: preparation_angle_deg(phi),
            },
            Element::BD {
                direction: BdDirection::VDown,
            },
        ],
        Encoding::Qutrit,
    )
}

/// Qubit source stage: PBS initializer plus the preparation plate.
pub fn preparation_circuit_qubit(phi: f64) -> Circuit {
    Circuit::new(
        vec![
            Element::PbsInit,
            Element::HWP {
                rail: 0,
                theta_deg: preparation_angle_deg(phi),
            },
        ],
        Encoding::Qubit,
    )
}
