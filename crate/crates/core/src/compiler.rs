//! Compiles projective measurements into wave-plate settings for the staged
//! displacer interferometer, and regenerates the published angle tables.
//!
//! The qutrit hardware template is fixed: H3 on the lower rail, H2 at 45 on
//! the upper rail, a displacer that folds the lower H component up, H4 on
//! the upper rail, H5 at 45 on the lower rail, a displacer that folds the
//! upper V component down, the H6 compensator and H7 on the lower rail.
//! The amplitude map of that template, as a function of the three free
//! plates (c = cos 2t, s = sin 2t), is exactly
//!
//! ```text
//!        [  s4       c4 c3             c4 s3            ]
//!  M  =  [ -s7 c4    s7 s4 c3 + c7 s3  s7 s4 s3 - c7 c3 ]
//!        [  c7 c4   -c7 s4 c3 + s7 s3 -c7 s4 s3 - s7 c3 ]
//! ```
//!
//! which is orthogonal with determinant -1. A compiled circuit is correct
//! iff its simulated outcome probabilities match the Born probabilities of
//! the requested measurement (matrix equality is not required: per-row
//! signs and phases are unobservable), so the solver enumerates row-sign
//! patterns and both theta3 branches, and every result is verified by
//! simulation with the worst probability deviation recorded as the
//! solution's residual.
//!
//! Complex eigenbases factor as `rowphases * R * diag(d)` with `R` real and
//! `d` a pattern of unit/quarter phases; the `diag(d)` part is realized by
//! quarter-wave plates at 0 or 90 degrees ahead of the template. Rows that
//! cannot be factored this way are rejected as not compilable.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::optics::{detect, encode_with, simulate, BdDirection, Circuit, Element, Encoding};
use crate::qmath::{CMatrix, QState, QmathError, C64};
use crate::relations::{
    c_operator, d_operator, family_state, orthogonal_family, standard_pair, Observable,
    RelationsError,
};

/// Angles are accepted as matching a published table entry within this
/// tolerance after rounding to two decimals.
pub const TABLE_ANGLE_TOL_DEG: f64 = 0.005;

/// A compiled circuit must reproduce Born probabilities to this residual.
pub const COMPILE_RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CompilerError {
    #[error(transparent)]
    Math(#[from] QmathError),
    #[error(transparent)]
    Relations(#[from] RelationsError),
    #[error("basis rows are not orthonormal within 1e-10 (deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("matrix has complex entries (max imaginary magnitude {0:.3e}); the three-stage decomposition handles real orthogonal matrices only")]
    ComplexNotSupported(f64),
    #[error("block is not a reflection (det {0:+.6}); det +1 rotations are realized by composing with the stage's fixed 45-degree plate")]
    NotReflection(f64),
    #[error("dimension {0} is not compilable on this hardware template")]
    BadDimension(usize),
    #[error("ordering {0:?} is not a permutation of 0..{1}")]
    BadOrdering(Vec<usize>, usize),
    #[error("not compilable: {0}")]
    NotCompilable(String),
}

/// Assignment of eigenvalues to detector ports.
#[derive(Debug, Clone)]
pub enum PortOrdering {
    /// Port k carries the k-th smallest eigenvalue.
    Ascending,
    /// Port k carries the k-th largest eigenvalue.
    Descending,
    /// `perm[k]` is the index (in ascending eigenvalue order) routed to port k.
    Custom(Vec<usize>),
}

/// One detector port: the eigenvalue announced there and the bra `<m_k|`.
#[derive(Debug, Clone)]
pub struct PortProjector {
    pub eigenvalue: f64,
    /// Stored as the bra, so `<m|psi> = sum_j bra[j] psi[j]`.
    pub bra: Vec<C64>,
}

/// A projective measurement: per-port eigenvalues and orthonormal bras.
#[derive(Debug, Clone)]
pub struct MeasurementSetting {
    pub label: String,
    pub ports: Vec<PortProjector>,
}

impl MeasurementSetting {
    pub fn dim(&self) -> usize {
        self.ports.len()
    }

    /// Measurement of `observable` with eigenvalues routed per `ordering`.
    pub fn from_observable(
        label: impl Into<String>,
        observable: &Observable,
        ordering: &PortOrdering,
    ) -> Result<Self, CompilerError> {
        let eig = observable.eigen();
        let n = eig.eigenvalues.len();
        let perm = resolve_ordering(ordering, n)?;
        let ports = perm
            .iter()
            .map(|&idx| PortProjector {
                eigenvalue: eig.eigenvalues[idx],
                bra: eig.eigenvectors[idx].iter().map(|z| z.conj()).collect(),
            })
            .collect();
        let setting = Self {
            label: label.into(),
            ports,
        };
        setting.validate()?;
        Ok(setting)
    }

    pub fn from_ports(
        label: impl Into<String>,
        ports: Vec<PortProjector>,
    ) -> Result<Self, CompilerError> {
        let setting = Self {
            label: label.into(),
            ports,
        };
        setting.validate()?;
        Ok(setting)
    }

    fn validate(&self) -> Result<(), CompilerError> {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let dot: C64 = (0..n)
                    .map(|k| self.ports[i].bra[k].conj() * self.ports[j].bra[k])
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - C64::new(expected, 0.0)).norm());
            }
        }
        if worst > 1e-10 {
            return Err(CompilerError::NotUnitary(worst));
        }
        Ok(())
    }

    /// Born probabilities `|<m_k|psi>|^2` per port.
    pub fn born_probabilities(&self, psi: &QState) -> Vec<f64> {
        self.ports
            .iter()
            .map(|port| {
                port.bra
                    .iter()
                    .zip(psi.amplitudes())
                    .map(|(&b, &a)| b * a)
                    .sum::<C64>()
                    .norm_sqr()
            })
            .collect()
    }

    /// The rotation `U = sum_k |k><m_k|` whose rows are the port bras.
    pub fn unitary(&self) -> Result<CMatrix, CompilerError> {
        let n = self.dim();
        let mut entries = Vec::with_capacity(n * n);
        for port in &self.ports {
            entries.extend(port.bra.iter().copied());
        }
        Ok(CMatrix::new(n, entries)?)
    }
}

fn resolve_ordering(ordering: &PortOrdering, n: usize) -> Result<Vec<usize>, CompilerError> {
    let perm = match ordering {
        PortOrdering::Ascending => (0..n).collect::<Vec<_>>(),
        PortOrdering::Descending => (0..n).rev().collect(),
        PortOrdering::Custom(perm) => perm.clone(),
    };
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(CompilerError::BadOrdering(perm, n));
    }
    Ok(perm)
}

/// `U = sum_k |k><m_k|` for an observable and port ordering.
pub fn measurement_unitary(
    observable: &Observable,
    ordering: &PortOrdering,
) -> Result<CMatrix, CompilerError> {
    MeasurementSetting::from_observable("", observable, ordering)?.unitary()
}

// ---------------------------------------------------------------------------
// Three-stage decomposition (modes (1,2), then (0,1), then (1,2)).
// ---------------------------------------------------------------------------

/// Splits a real orthogonal 3x3 matrix as `U = U3 * U2 * U1` where `U1` and
/// `U3` act on modes (1,2) only and `U2` on modes (0,1) only. `U1` is the
/// reflection completion of `U`'s first row (first component taken
/// nonnegative) and `U2` a rotation, which pins the published block form.
pub fn decompose_three_stage(u: &CMatrix) -> Result<(CMatrix, CMatrix, CMatrix), CompilerError> {
    if u.dim() != 3 {
        return Err(CompilerError::BadDimension(u.dim()));
    }
    let max_im = u.entries().iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if max_im > 1e-10 {
        return Err(CompilerError::ComplexNotSupported(max_im));
    }
    let r = real_entries(u);
    check_orthogonal(&r)?;

    let e = r[0][0];
    let fnorm = r[0][1].hypot(r[0][2]);
    let (a, b, f) = if fnorm > 1e-9 {
        let (mut a, mut b) = (r[0][1] / fnorm, r[0][2] / fnorm);
        if a < -1e-12 || (a.abs() <= 1e-12 && b < 0.0) {
            a = -a;
            b = -b;
        }
        let f = if a.abs() >= b.abs() {
            r[0][1] / a
        } else {
            r[0][2] / b
        };
        (a, b, f)
    } else {
        (1.0, 0.0, 0.0)
    };

    let u1 = CMatrix::from_real(3, &[1.0, 0.0, 0.0, 0.0, a, b, 0.0, b, -a])?;
    let u2 = CMatrix::from_real(3, &[e, f, 0.0, -f, e, 0.0, 0.0, 0.0, 1.0])?;
    let u3 = u.matmul(&u1.adjoint())?.matmul(&u2.adjoint())?;
    Ok((u1, u2, u3))
}

fn real_entries(u: &CMatrix) -> Vec<[f64; 3]> {
    (0..3)
        .map(|i| [u.get(i, 0).re, u.get(i, 1).re, u.get(i, 2).re])
        .collect()
}

fn check_orthogonal(rows: &[[f64; 3]]) -> Result<(), CompilerError> {
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| rows[i][k] * rows[j][k]).sum();
            let expected = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - expected).abs());
        }
    }
    if worst > 1e-10 {
        return Err(CompilerError::NotUnitary(worst));
    }
    Ok(())
}

/// Folds an angle in degrees into (-90, 90].
pub fn fold_angle_deg(theta: f64) -> f64 {
    let mut t = theta % 180.0;
    if t <= -90.0 {
        t += 180.0;
    } else if t > 90.0 {
        t -= 180.0;
    }
    if t == 0.0 {
        t = 0.0; // normalize -0.0
    }
    t
}

/// Plate angle for a reflection block `[[c, s], [s, -c]]`:
/// `theta = atan2(s, c)/2` folded into (-90, 90].
pub fn solve_hwp_angle(block: &[[f64; 2]; 2]) -> Result<f64, CompilerError> {
    let det = block[0][0] * block[1][1] - block[0][1] * block[1][0];
    let symmetric = (block[0][1] - block[1][0]).abs() <= 1e-9
        && (block[0][0] + block[1][1]).abs() <= 1e-9;
    if (det + 1.0).abs() > 1e-9 || !symmetric {
        return Err(CompilerError::NotReflection(det));
    }
    Ok(fold_angle_deg(
        0.5 * block[0][1].atan2(block[0][0]).to_degrees(),
    ))
}

// ---------------------------------------------------------------------------
// Hardware templates.
// ---------------------------------------------------------------------------

/// Free plate angles of the standard qutrit template (degrees).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateAngles {
    pub theta3: f64,
    pub theta4: f64,
    pub theta7: f64,
}

/// Which sign of the stage-1 reflection's leading component to use when
/// solving. Both realize the same amplitude map; the published rows use
/// either, so the choice is recorded per table row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Theta3Branch {
    #[default]
    PositiveA,
    NegativeA,
}

/// Amplitude map of the standard template on the encoded qutrit modes.
fn standard_template_matrix(t: &TemplateAngles) -> [[f64; 3]; 3] {
    let (s3, c3) = (2.0 * t.theta3.to_radians()).sin_cos();
    let (s4, c4) = (2.0 * t.theta4.to_radians()).sin_cos();
    let (s7, c7) = (2.0 * t.theta7.to_radians()).sin_cos();
    [
        [s4, c4 * c3, c4 * s3],
        [-s7 * c4, s7 * s4 * c3 + c7 * s3, s7 * s4 * s3 - c7 * c3],
        [c7 * c4, -c7 * s4 * c3 + s7 * s3, -c7 * s4 * s3 - s7 * c3],
    ]
}

/// Element list of the standard template (H2 = H5 = 45, H6 = 0).
pub fn standard_template_circuit(t: &TemplateAngles) -> Circuit {
    Circuit::new(
        vec![
            Element::HWP {
                rail: 1,
                theta_deg: t.theta3,
            },
            Element::HWP {
                rail: 0,
                theta_deg: 45.0,
            },
            Element::BD {
                direction: BdDirection::HUp,
            },
            Element::HWP {
                rail: 0,
                theta_deg: t.theta4,
            },
            Element::HWP {
                rail: 1,
                theta_deg: 45.0,
            },
            Element::BD {
                direction: BdDirection::VDown,
            },
            Element::HWP {
                rail: 0,
                theta_deg: 0.0,
            },
            Element::HWP {
                rail: 1,
                theta_deg: t.theta7,
            },
        ],
        Encoding::Qutrit,
    )
}

/// Variant used by the published `C_-` rows: H3 = 0, H4 = 45, H7 = -45 and
/// an active H6. With H6 ahead of the second displacer the map is the
/// rotation `[[c6, s6, 0], [-s6, c6, 0], [0, 0, 1]]` on the encoded modes,
/// which reproduces the counting statistics of the physical layout without
/// parking amplitude on the auxiliary mode.
pub fn lower_witness_circuit(theta6: f64) -> Circuit {
    Circuit::new(
        vec![
            Element::HWP {
                rail: 1,
                theta_deg: 0.0,
            },
            Element::HWP {
                rail: 0,
                theta_deg: 45.0,
            },
            Element::BD {
                direction: BdDirection::HUp,
            },
            Element::HWP {
                rail: 0,
                theta_deg: 45.0,
            },
            Element::HWP {
                rail: 1,
                theta_deg: 45.0,
            },
            Element::HWP {
                rail: 0,
                theta_deg: theta6,
            },
            Element::BD {
                direction: BdDirection::VDown,
            },
            Element::HWP {
                rail: 1,
                theta_deg: -45.0,
            },
        ],
        Encoding::Qutrit,
    )
}

/// The published `D` template: quarter-wave plates at 45 in the middle
/// stage. Certified on the measured family (inputs without `|1>` support).
pub fn d_witness_circuit() -> Circuit {
    Circuit::new(
        vec![
            Element::HWP {
                rail: 1,
                theta_deg: 45.0,
            },
            Element::HWP {
                rail: 0,
                theta_deg: 45.0,
            },
            Element::BD {
                direction: BdDirection::HUp,
            },
            Element::QWP {
                rail: 0,
                theta_deg: 45.0,
            },
            Element::QWP {
                rail: 1,
                theta_deg: 45.0,
            },
            Element::BD {
                direction: BdDirection::VDown,
            },
            Element::HWP {
                rail: 0,
                theta_deg: 0.0,
            },
            Element::HWP {
                rail: 1,
                theta_deg: -90.0,
            },
        ],
        Encoding::Qutrit,
    )
}

/// Solves the standard template against a sign-adjusted real target.
/// Returns `None` when the target is outside the template's image (the
/// image is the det = -1 component, so exactly one row-sign parity works).
fn solve_standard_template(v: &[[f64; 3]; 3], branch: Theta3Branch) -> Option<TemplateAngles> {
    let s4 = v[0][0];
    let angles = if s4.abs() < 1.0 - 1e-12 {
        let fnorm = v[0][1].hypot(v[0][2]);
        if fnorm < 1e-9 {
            return None;
        }
        let (mut a, mut b) = (v[0][1] / fnorm, v[0][2] / fnorm);
        if a < -1e-12 || (a.abs() <= 1e-12 && b < 0.0) {
            a = -a;
            b = -b;
        }
        if branch == Theta3Branch::NegativeA {
            a = -a;
            b = -b;
        }
        let c4 = if a.abs() >= b.abs() {
            v[0][1] / a
        } else {
            v[0][2] / b
        };
        let s7 = -v[1][0] / c4;
        let c7 = v[2][0] / c4;
        if (s7.hypot(c7) - 1.0).abs() > 1e-9 {
            return None;
        }
        TemplateAngles {
            theta3: fold_angle_deg(0.5 * b.atan2(a).to_degrees()),
            theta4: fold_angle_deg(0.5 * s4.atan2(c4).to_degrees()),
            theta7: fold_angle_deg(0.5 * s7.atan2(c7).to_degrees()),
        }
    } else {
        // |s4| = 1 leaves only the mode (1,2) block; put it all on H7.
        let s7 = -v[2][2];
        let c7 = -v[1][2];
        if (s7.hypot(c7) - 1.0).abs() > 1e-9 {
            return None;
        }
        TemplateAngles {
            theta3: 0.0,
            theta4: if s4 > 0.0 { 45.0 } else { -45.0 },
            theta7: fold_angle_deg(0.5 * s7.atan2(c7).to_degrees()),
        }
    };

    let m = standard_template_matrix(&angles);
    let worst = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (m[i][j] - v[i][j]).abs())
        .fold(0.0, f64::max);
    (worst <= 1e-9).then_some(angles)
}

const SIGN_PATTERNS: [[i8; 3]; 8] = [
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
    [-1, 1, 1],
    [-1, 1, -1],
    [-1, -1, 1],
    [-1, -1, -1],
];

fn apply_signs(rows: &[[f64; 3]], sigma: &[i8; 3]) -> [[f64; 3]; 3] {
    let mut v = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            v[i][j] = sigma[i] as f64 * rows[i][j];
        }
    }
    v
}

// ---------------------------------------------------------------------------
// Compilation.
// ---------------------------------------------------------------------------

/// Which inputs a compiled circuit has been verified against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificationScope {
    /// Verified on the canonical family and on random states.
    AllInputs,
    /// Verified on the canonical measured family only; the published plate
    /// settings for this row are specific to those inputs.
    FamilyOnly,
    /// Verified only on the single family state the row was built for
    /// (rows whose witness weight vanishes there leave a plate free, and
    /// the published parking angle is wrong elsewhere).
    StateOnly,
}

/// Named plate slots of a solved setting, in degrees, plus the verification
/// residual. `None` means the plate is absent from the row.
#[derive(Debug, Clone)]
pub struct AngleSolution {
    pub q1: Option<f64>,
    pub h2: Option<f64>,
    pub h3: Option<f64>,
    pub h4: Option<f64>,
    pub q4: Option<f64>,
    pub h5: Option<f64>,
    pub q5: Option<f64>,
    pub h6: Option<f64>,
    pub h7: Option<f64>,
    /// Phase plates inserted ahead of the template by the exact compiler:
    /// (rail, angle in degrees).
    pub pre_qwps: Vec<(i32, f64)>,
    pub residual: f64,
    pub scope: CertificationScope,
    pub note: Option<String>,
}

impl AngleSolution {
    fn empty() -> Self {
        Self {
            q1: None,
            h2: None,
            h3: None,
            h4: None,
            q4: None,
            h5: None,
            q5: None,
            h6: None,
            h7: None,
            pre_qwps: Vec::new(),
            residual: f64::NAN,
            scope: CertificationScope::AllInputs,
            note: None,
        }
    }

    fn standard(t: &TemplateAngles) -> Self {
        Self {
            h2: Some(45.0),
            h3: Some(t.theta3),
            h4: Some(t.theta4),
            h5: Some(45.0),
            h6: Some(0.0),
            h7: Some(t.theta7),
            ..Self::empty()
        }
    }
}

/// A measurement together with its compiled circuit and solved angles.
#[derive(Debug, Clone)]
pub struct CompiledMeasurement {
    pub setting: MeasurementSetting,
    pub circuit: Circuit,
    pub solution: AngleSolution,
}

/// Pins for reproducing a specific published row; `None` fields fall back
/// to deterministic enumeration (first sign pattern and branch that solve).
#[derive(Debug, Clone, Default)]
pub struct CompileOptions {
    pub sigma: Option<[i8; 3]>,
    pub branch: Option<Theta3Branch>,
}

/// Worst per-eigenvalue probability deviation between the simulated circuit
/// and the Born rule, over the given inputs. Outcome probabilities are
/// summed within degenerate eigenvalues before comparison.
pub fn verify_circuit(circuit: &Circuit, setting: &MeasurementSetting, inputs: &[QState]) -> f64 {
    let encoding = if setting.dim() == 3 {
        Encoding::Qutrit
    } else {
        Encoding::Qubit
    };
    let mut worst = 0.0f64;
    for psi in inputs {
        let encoded = match encode_with(psi, encoding) {
            Ok(state) => state,
            Err(_) => return f64::INFINITY,
        };
        let out = simulate(circuit, &encoded);
        let sim = detect(&out, encoding).probabilities;
        let born = setting.born_probabilities(psi);

        // Group ports by eigenvalue (1e-9), compare summed probabilities.
        let mut remaining: Vec<usize> = (0..setting.dim()).collect();
        while let Some(&first) = remaining.first() {
            let lambda = setting.ports[first].eigenvalue;
            let (group, rest): (Vec<usize>, Vec<usize>) = remaining
                .iter()
                .partition(|&&i| (setting.ports[i].eigenvalue - lambda).abs() <= 1e-9);
            let sim_sum: f64 = group.iter().map(|&i| sim[i]).sum();
            let born_sum: f64 = group.iter().map(|&i| born[i]).sum();
            worst = worst.max((sim_sum - born_sum).abs());
            remaining = rest;
        }
    }
    worst
}

/// The twelve canonical family states for a dimension.
pub fn canonical_family(dim: usize) -> Vec<QState> {
    (1..=12)
        .map(|j| family_state(j as f64 * PI / 12.0, dim).expect("valid dims"))
        .collect()
}

/// Seeded random unit states used to certify all-input scope.
pub fn random_states(dim: usize, count: usize, seed: u64) -> Vec<QState> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<C64> = (0..dim)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            QState::from_unnormalized(&v).expect("nonzero with overwhelming probability")
        })
        .collect()
}

fn certify(
    circuit: &Circuit,
    setting: &MeasurementSetting,
    scope: CertificationScope,
) -> Result<f64, CompilerError> {
    let mut inputs = canonical_family(setting.dim());
    if scope == CertificationScope::AllInputs {
        inputs.extend(random_states(setting.dim(), 40, 0x5eed_cafe));
    }
    let residual = verify_circuit(circuit, setting, &inputs);
    if residual > COMPILE_RESIDUAL_TOL {
        return Err(CompilerError::NotCompilable(format!(
            "residual {residual:.3e} exceeds {COMPILE_RESIDUAL_TOL:.0e} for setting {}",
            setting.label
        )));
    }
    Ok(residual)
}

/// Strips a unit phase from `row` and returns the real part if the result
/// is real within 1e-9. The surviving sign ambiguity is fixed the same way
/// as eigenvector phases: first significant component positive.
fn realify_row(row: &[C64]) -> Option<Vec<f64>> {
    let z = row
        .iter()
        .copied()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())?;
    if z.norm() < 1e-12 {
        return None;
    }
    let phase = z.conj() / z.norm();
    let rotated: Vec<C64> = row.iter().map(|&w| w * phase).collect();
    if rotated.iter().map(|w| w.im.abs()).fold(0.0, f64::max) > 1e-9 {
        return None;
    }
    let mut real: Vec<f64> = rotated.iter().map(|w| w.re).collect();
    if let Some(&lead) = real.iter().find(|x| x.abs() > 1e-9) {
        if lead < 0.0 {
            for x in &mut real {
                *x = -*x;
            }
        }
    }
    Some(real)
}

/// Tries to factor the setting's bras as `rowphases * R * diag(d)` with `R`
/// real and `d_j` in {1, i}. Returns the real rows and the modes carrying a
/// quarter phase.
fn realify_rows(setting: &MeasurementSetting) -> Option<(Vec<Vec<f64>>, Vec<usize>)> {
    let n = setting.dim();
    let phase_patterns = 1usize << n;
    for pattern in 0..phase_patterns {
        let d: Vec<C64> = (0..n)
            .map(|j| {
                if pattern & (1 << j) != 0 {
                    C64::new(0.0, 1.0)
                } else {
                    C64::new(1.0, 0.0)
                }
            })
            .collect();
        let mut rows = Vec::with_capacity(n);
        let mut ok = true;
        for port in &setting.ports {
            let adjusted: Vec<C64> = port
                .bra
                .iter()
                .zip(&d)
                .map(|(&b, &dj)| b * dj.conj())
                .collect();
            match realify_row(&adjusted) {
                Some(real) => rows.push(real),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let quarter_modes = (0..n).filter(|j| pattern & (1 << j) != 0).collect();
            return Some((rows, quarter_modes));
        }
    }
    None
}

fn pre_qwp_elements(dim: usize, quarter_modes: &[usize]) -> Vec<Element> {
    quarter_modes
        .iter()
        .map(|&mode| match (dim, mode) {
            (3, 0) => Element::QWP {
                rail: 0,
                theta_deg: 90.0,
            },
            (3, 1) => Element::QWP {
                rail: 1,
                theta_deg: 90.0,
            },
            (3, 2) => Element::QWP {
                rail: 1,
                theta_deg: 0.0,
            },
            (2, 0) => Element::QWP {
                rail: 0,
                theta_deg: 90.0,
            },
            (2, 1) => Element::QWP {
                rail: 0,
                theta_deg: 0.0,
            },
            _ => unreachable!("modes checked by dimension"),
        })
        .collect()
}

/// Compiles a measurement onto the hardware template, verifying the result
/// by simulation. Options can pin the row-sign pattern and theta3 branch to
/// reproduce a specific published row; defaults take the first solving
/// combination in a fixed enumeration order.
pub fn compile_measurement(
    setting: &MeasurementSetting,
    options: &CompileOptions,
) -> Result<CompiledMeasurement, CompilerError> {
    match setting.dim() {
        3 => compile_qutrit(setting, options),
        2 => compile_qubit(setting),
        other => Err(CompilerError::BadDimension(other)),
    }
}

fn compile_qutrit(
    setting: &MeasurementSetting,
    options: &CompileOptions,
) -> Result<CompiledMeasurement, CompilerError> {
    let (rows, quarter_modes) = realify_rows(setting).ok_or_else(|| {
        CompilerError::NotCompilable(format!(
            "basis rows of {} do not factor into real rows with quarter phases",
            setting.label
        ))
    })?;
    let rows3: Vec<[f64; 3]> = rows.iter().map(|r| [r[0], r[1], r[2]]).collect();

    let sigmas: Vec<[i8; 3]> = match options.sigma {
        Some(sigma) => vec![sigma],
        None => SIGN_PATTERNS.to_vec(),
    };
    let branches: Vec<Theta3Branch> = match options.branch {
        Some(branch) => vec![branch],
        None => vec![Theta3Branch::PositiveA, Theta3Branch::NegativeA],
    };

    for sigma in &sigmas {
        for &branch in &branches {
            let v = apply_signs(&rows3, sigma);
            if let Some(angles) = solve_standard_template(&v, branch) {
                let mut elements = pre_qwp_elements(3, &quarter_modes);
                let template = standard_template_circuit(&angles);
                elements.extend(template.elements);
                let circuit = Circuit::new(elements, Encoding::Qutrit);
                let mut solution = AngleSolution::standard(&angles);
                solution.pre_qwps = quarter_modes
                    .iter()
                    .map(|&m| match m {
                        0 => (0, 90.0),
                        1 => (1, 90.0),
                        _ => (1, 0.0),
                    })
                    .collect();
                solution.residual = certify(&circuit, setting, CertificationScope::AllInputs)?;
                return Ok(CompiledMeasurement {
                    setting: setting.clone(),
                    circuit,
                    solution,
                });
            }
        }
    }
    Err(CompilerError::NotCompilable(format!(
        "no sign pattern / branch realizes {} on the standard template",
        setting.label
    )))
}

fn compile_qubit(setting: &MeasurementSetting) -> Result<CompiledMeasurement, CompilerError> {
    compile_qubit_with(setting, None)
}

/// `pinned_q1` restricts the pre-plate to one published choice (used where
/// the row degenerates and several plates would verify).
fn compile_qubit_with(
    setting: &MeasurementSetting,
    pinned_q1: Option<Option<f64>>,
) -> Result<CompiledMeasurement, CompilerError> {
    // Pre-plate candidates: none, QWP at 90 (quarter phase on |0>), QWP at 0
    // (quarter phase on |1>).
    let candidates: [(Option<f64>, [C64; 2]); 3] = [
        (None, [C64::new(1.0, 0.0), C64::new(1.0, 0.0)]),
        (Some(90.0), [C64::new(0.0, 1.0), C64::new(1.0, 0.0)]),
        (Some(0.0), [C64::new(1.0, 0.0), C64::new(0.0, 1.0)]),
    ];
    for (q1, d) in &candidates {
        if let Some(pin) = pinned_q1 {
            if *q1 != pin {
                continue;
            }
        }
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(2);
        let mut ok = true;
        for port in &setting.ports {
            let adjusted: Vec<C64> = port
                .bra
                .iter()
                .zip(d)
                .map(|(&b, &dj)| b * dj.conj())
                .collect();
            match realify_row(&adjusted) {
                Some(real) => rows.push(real),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        for sigma in [[1i8, 1], [1, -1], [-1, 1], [-1, -1]] {
            let c2 = sigma[0] as f64 * rows[0][0];
            let s2 = sigma[0] as f64 * rows[0][1];
            let row1 = [sigma[1] as f64 * rows[1][0], sigma[1] as f64 * rows[1][1]];
            if (row1[0] - s2).abs() > 1e-9 || (row1[1] + c2).abs() > 1e-9 {
                continue;
            }
            let theta2 = fold_angle_deg(0.5 * s2.atan2(c2).to_degrees());
            let mut elements = Vec::new();
            if let Some(q1_deg) = q1 {
                elements.push(Element::QWP {
                    rail: 0,
                    theta_deg: *q1_deg,
                });
            }
            elements.push(Element::HWP {
                rail: 0,
                theta_deg: theta2,
            });
            let circuit = Circuit::new(elements, Encoding::Qubit);
            let mut solution = AngleSolution::empty();
            solution.q1 = *q1;
            solution.h2 = Some(theta2);
            solution.residual = certify(&circuit, setting, CertificationScope::AllInputs)?;
            return Ok(CompiledMeasurement {
                setting: setting.clone(),
                circuit,
                solution,
            });
        }
    }
    Err(CompilerError::NotCompilable(format!(
        "no plate assignment realizes {} on the qubit template",
        setting.label
    )))
}

// ---------------------------------------------------------------------------
// Canonical settings and published rows.
// ---------------------------------------------------------------------------

fn qutrit_observables() -> Result<(CMatrix, CMatrix), CompilerError> {
    let pair = standard_pair(3)?;
    Ok((pair.a().clone(), pair.b().clone()))
}

/// Measurement of the normalized `Jx`, ports in ascending eigenvalue order
/// (-1, 0, +1). Reproduces the published H3 = -17.63, H4 = 75.00,
/// H7 = -62.63 row.
pub fn jx_measurement() -> Result<CompiledMeasurement, CompilerError> {
    let (jx, _) = qutrit_observables()?;
    let setting = MeasurementSetting::from_observable(
        "Jx",
        &Observable::new(jx)?,
        &PortOrdering::Ascending,
    )?;
    compile_measurement(
        &setting,
        &CompileOptions {
            sigma: Some([1, -1, 1]),
            branch: Some(Theta3Branch::PositiveA),
        },
    )
}

/// `Jx^2` with ports (1, 0, 1): the two eigenvalue-1 outcomes are summed
/// when estimating, and the eigenspace basis is the deterministic
/// eigensolver tie-break.
pub fn jx2_measurement() -> Result<CompiledMeasurement, CompilerError> {
    let (jx, _) = qutrit_observables()?;
    let jx2 = jx.matmul(&jx)?;
    let setting = MeasurementSetting::from_observable(
        "Jx^2",
        &Observable::new(jx2)?,
        &PortOrdering::Custom(vec![1, 0, 2]),
    )?;
    compile_measurement(
        &setting,
        &CompileOptions {
            sigma: Some([-1, -1, 1]),
            branch: Some(Theta3Branch::NegativeA),
        },
    )
}

/// The published half-wave-plate-only `Jy` row. `Jy`'s eigenbasis is
/// complex, but on the real measured family its Born probabilities equal
/// those of the mirrored `Jx` measurement, which is what the published
/// angles implement; certification is therefore family-scoped. Ports are
/// in ascending eigenvalue order.
pub fn jy_measurement() -> Result<CompiledMeasurement, CompilerError> {
    let (jx, jy) = qutrit_observables()?;
    let setting = MeasurementSetting::from_observable(
        "Jy",
        &Observable::new(jy)?,
        &PortOrdering::Ascending,
    )?;

    // Real proxy: the ascending Jx rows, mirrored in the last mode, with the
    // published row signs.
    let jx_rows =
        MeasurementSetting::from_observable("", &Observable::new(jx)?, &PortOrdering::Ascending)?;
    let u = jx_rows.unitary()?;
    let sigma = [-1.0, 1.0, -1.0];
    let mut v = [[0.0; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            let mirror = if j == 2 { -1.0 } else { 1.0 };
            *entry = sigma[i] * mirror * u.get(i, j).re;
        }
    }
    let angles = solve_standard_template(&v, Theta3Branch::PositiveA)
        .ok_or_else(|| CompilerError::NotCompilable("Jy proxy did not solve".into()))?;
    let circuit = standard_template_circuit(&angles);
    let mut solution = AngleSolution::standard(&angles);
    solution.scope = CertificationScope::FamilyOnly;
    solution.residual = verify_circuit(&circuit, &setting, &canonical_family(3));
    if solution.residual > COMPILE_RESIDUAL_TOL {
        return Err(CompilerError::NotCompilable(format!(
            "Jy family residual {:.3e}",
            solution.residual
        )));
    }
    Ok(CompiledMeasurement {
        setting,
        circuit,
        solution,
    })
}

/// Exact `Jy` measurement: a quarter-wave plate ahead of the template
/// supplies the eigenbasis phases, certified on all inputs.
pub fn jy_measurement_exact() -> Result<CompiledMeasurement, CompilerError> {
    let (_, jy) = qutrit_observables()?;
    let setting = MeasurementSetting::from_observable(
        "Jy(exact)",
        &Observable::new(jy)?,
        &PortOrdering::Ascending,
    )?;
    compile_measurement(&setting, &CompileOptions::default())
}

/// `Jy^2` with ports (1, 0, 1).
pub fn jy2_measurement() -> Result<CompiledMeasurement, CompilerError> {
    let (_, jy) = qutrit_observables()?;
    let jy2 = jy.matmul(&jy)?;
    let setting = MeasurementSetting::from_observable(
        "Jy^2",
        &Observable::new(jy2)?,
        &PortOrdering::Custom(vec![1, 0, 2]),
    )?;
    compile_measurement(
        &setting,
        &CompileOptions {
            sigma: Some([1, 1, -1]),
            branch: Some(Theta3Branch::NegativeA),
        },
    )
}

/// `Jz` with ports in descending order (+1, 0, -1), the published row.
pub fn jz_measurement() -> Result<CompiledMeasurement, CompilerError> {
    let jz = CMatrix::diagonal(&[1.0, 0.0, -1.0]);
    let setting = MeasurementSetting::from_observable(
        "Jz",
        &Observable::new(jz)?,
        &PortOrdering::Descending,
    )?;
    compile_measurement(
        &setting,
        &CompileOptions {
            sigma: Some([1, -1, 1]),
            branch: Some(Theta3Branch::PositiveA),
        },
    )
}

/// Witness `C_sign` for the optimal orthogonal state `(0, 1, 0)`. Both
/// signs share the `Jz` circuit; the witness outcome is port 0 for `C_-`
/// (eigenvalue 2 on `|0>`) and port 2 for `C_+`.
pub fn c_opt_measurement(sign: i8) -> Result<CompiledMeasurement, CompilerError> {
    let pair = standard_pair(3)?;
    let e1 = QState::from_real(&[0.0, 1.0, 0.0])?;
    let c = c_operator(&pair, &e1, sign)?;
    let perm = if sign < 0 { vec![2, 0, 1] } else { vec![0, 1, 2] };
    let label = if sign < 0 { "C-(opt)" } else { "C+(opt)" };
    let setting = MeasurementSetting::from_observable(label, &c, &PortOrdering::Custom(perm))?;
    compile_measurement(
        &setting,
        &CompileOptions {
            sigma: Some([1, -1, 1]),
            branch: Some(Theta3Branch::PositiveA),
        },
    )
}

/// Witness `C_sign` for the k-th published random orthogonal state at
/// `phi`, on the published plate settings: an active H6 for the minus sign
/// (witness supported on modes 0, 1), an H7 rotation for the plus sign
/// (modes 1, 2). The settings are specific to the measured family, and are
/// certified as such.
pub fn c_family_measurement(
    phi: f64,
    k: u8,
    sign: i8,
) -> Result<CompiledMeasurement, CompilerError> {
    let pair = standard_pair(3)?;
    let perp = orthogonal_family(phi, k)?;
    let c = c_operator(&pair, &perp.state, sign)?;
    let j = (phi / (PI / 12.0)).round() as i64;
    let label = format!("C{}(r{k}, phi={j}pi/12)", if sign < 0 { "-" } else { "+" });
    // Witness on port 1, zero-eigenvalue outcomes on ports 0 and 2.
    let setting =
        MeasurementSetting::from_observable(label, &c, &PortOrdering::Custom(vec![0, 2, 1]))?;

    let witness = &c.eigen().eigenvectors[2];
    let mut solution = AngleSolution::empty();
    let circuit = if sign < 0 {
        // |u0| fixes |sin 2 theta6|; the published rows use the negative
        // branch (one row is printed with the opposite sign, which measures
        // identically on the family).
        let u0 = witness[0].norm().min(1.0);
        let theta6 = -0.5 * u0.asin().to_degrees();
        solution.h2 = Some(45.0);
        solution.h3 = Some(0.0);
        solution.h4 = Some(45.0);
        solution.h5 = Some(45.0);
        solution.h6 = Some(theta6);
        solution.h7 = Some(-45.0);
        lower_witness_circuit(theta6)
    } else {
        // |u2| fixes |cos 2 theta7|; port 1 carries the witness. When the
        // witness weight on the family vanishes the published rows park the
        // plate at -45.
        let u2 = witness[2].norm().min(1.0);
        let theta7 = if phi.cos().abs() < 1e-9 {
            -45.0
        } else {
            -90.0 + 0.5 * u2.acos().to_degrees()
        };
        solution.h2 = Some(45.0);
        solution.h3 = Some(0.0);
        solution.h4 = Some(45.0);
        solution.h5 = Some(45.0);
        solution.h6 = Some(0.0);
        solution.h7 = Some(theta7);
        standard_template_circuit(&TemplateAngles {
            theta3: 0.0,
            theta4: 45.0,
            theta7,
        })
    };
    // Report the widest scope the row actually certifies at.
    let family_residual = verify_circuit(&circuit, &setting, &canonical_family(3));
    if family_residual <= COMPILE_RESIDUAL_TOL {
        solution.scope = CertificationScope::FamilyOnly;
        solution.residual = family_residual;
    } else {
        let state_residual =
            verify_circuit(&circuit, &setting, std::slice::from_ref(&family_state(phi, 3)?));
        if state_residual > COMPILE_RESIDUAL_TOL {
            return Err(CompilerError::NotCompilable(format!(
                "{} defining-state residual {:.3e}",
                setting.label, state_residual
            )));
        }
        solution.scope = CertificationScope::StateOnly;
        solution.residual = state_residual;
    }
    Ok(CompiledMeasurement {
        setting,
        circuit,
        solution,
    })
}

/// The `D` witness row: quarter-wave plates at 45 in the middle stage,
/// H3 = 45, H7 = -90. The witness outcome is port 0. Family-scoped: inputs
/// with support on `|1>` leak on this template exactly as they would in
/// the physical layout.
pub fn d_measurement() -> Result<CompiledMeasurement, CompilerError> {
    let pair = standard_pair(3)?;
    // psi_perp_{A+B} = (0,1,0) is phi-independent; any family angle works.
    let psi = family_state(PI / 12.0, 3)?;
    let (d, _) = d_operator(&pair, &psi)?;
    let setting =
        MeasurementSetting::from_observable("D", &d, &PortOrdering::Custom(vec![2, 0, 1]))?;
    let circuit = d_witness_circuit();
    let mut solution = AngleSolution::empty();
    solution.h2 = Some(45.0);
    solution.h3 = Some(45.0);
    solution.q4 = Some(45.0);
    solution.q5 = Some(45.0);
    solution.h6 = Some(0.0);
    solution.h7 = Some(-90.0);
    solution.scope = CertificationScope::FamilyOnly;
    solution.residual = verify_circuit(&circuit, &setting, &canonical_family(3));
    if solution.residual > COMPILE_RESIDUAL_TOL {
        return Err(CompilerError::NotCompilable(format!(
            "D family residual {:.3e}",
            solution.residual
        )));
    }
    Ok(CompiledMeasurement {
        setting,
        circuit,
        solution,
    })
}

/// Exact `D` measurement via a pre-template quarter-wave plate.
pub fn d_measurement_exact() -> Result<CompiledMeasurement, CompilerError> {
    let pair = standard_pair(3)?;
    let psi = family_state(PI / 12.0, 3)?;
    let (d, _) = d_operator(&pair, &psi)?;
    let setting =
        MeasurementSetting::from_observable("D(exact)", &d, &PortOrdering::Custom(vec![2, 0, 1]))?;
    compile_measurement(&setting, &CompileOptions::default())
}

fn qubit_pauli(which: char) -> Result<Observable, CompilerError> {
    let pair = standard_pair(2)?;
    let m = match which {
        'x' => pair.a().clone(),
        'y' => pair.b().clone(),
        _ => CMatrix::diagonal(&[1.0, -1.0]),
    };
    Ok(Observable::new(m)?)
}

/// Pauli-x measurement, ports (+1, -1): the published H2 = 22.50 row.
pub fn sigma_x_measurement() -> Result<CompiledMeasurement, CompilerError> {
    let setting = MeasurementSetting::from_observable(
        "sigma_x",
        &qubit_pauli('x')?,
        &PortOrdering::Descending,
    )?;
    compile_qubit(&setting)
}

/// Pauli-y measurement, ports (+1, -1): Q1 = 90.00, H2 = 22.50.
pub fn sigma_y_measurement() -> Result<CompiledMeasurement, CompilerError> {
    let setting = MeasurementSetting::from_observable(
        "sigma_y",
        &qubit_pauli('y')?,
        &PortOrdering::Descending,
    )?;
    compile_qubit(&setting)
}

/// Pauli-z measurement, ports (+1, -1): H2 = 0.
pub fn sigma_z_measurement() -> Result<CompiledMeasurement, CompilerError> {
    let setting = MeasurementSetting::from_observable(
        "sigma_z",
        &qubit_pauli('z')?,
        &PortOrdering::Descending,
    )?;
    compile_qubit(&setting)
}

/// The squared Paulis are the identity; one computational-basis row covers
/// both, with eigenvalue 1 on each port.
pub fn sigma_sq_measurement() -> Result<CompiledMeasurement, CompilerError> {
    let setting = MeasurementSetting::from_ports(
        "sigma_x^2,sigma_y^2",
        vec![
            PortProjector {
                eigenvalue: 1.0,
                bra: vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            },
            PortProjector {
                eigenvalue: 1.0,
                bra: vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            },
        ],
    )?;
    compile_qubit(&setting)
}

/// Qubit witness `C_sign` for the unique orthogonal state at `phi`; both
/// signs are diagonal, measured in the computational basis (H2 = 0).
pub fn c_qubit_measurement(phi: f64, sign: i8) -> Result<CompiledMeasurement, CompilerError> {
    let pair = standard_pair(2)?;
    let perp = QState::from_real(&[phi.cos(), -phi.sin()])?;
    let c = c_operator(&pair, &perp, sign)?;
    let label = format!("C{}(perp)", if sign < 0 { "-" } else { "+" });
    // Witness (largest eigenvalue) on the port matching its basis vector.
    let perm = if sign < 0 { vec![0, 1] } else { vec![1, 0] };
    let setting = MeasurementSetting::from_observable(label, &c, &PortOrdering::Custom(perm))?;
    compile_qubit(&setting)
}

/// Qubit `D` witness at `phi`: Q1 = 90, H2 = (phi - pi/2)/2.
pub fn d_qubit_measurement(phi: f64) -> Result<CompiledMeasurement, CompilerError> {
    let pair = standard_pair(2)?;
    let psi = family_state(phi, 2)?;
    let (d, _) = d_operator(&pair, &psi)?;
    let j = phi / (PI / 12.0);
    let label = if (j - j.round()).abs() < 1e-9 {
        format!("D(phi={}pi/12)", j.round() as i64)
    } else {
        format!("D(phi={phi:.4})")
    };
    let setting =
        MeasurementSetting::from_observable(label, &d, &PortOrdering::Custom(vec![1, 0]))?;
    compile_qubit_with(&setting, Some(Some(90.0)))
}

/// One row of a published angle table.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub observable: String,
    pub compiled: CompiledMeasurement,
}

/// The three published tables, regenerated from the compiler.
#[derive(Debug)]
pub struct AngleTables {
    /// (phi, H1 angle in degrees) for the twelve preparation settings.
    pub preparation: Vec<(f64, f64)>,
    /// Qutrit measurement rows, in published order.
    pub qutrit: Vec<TableRow>,
    /// Qubit measurement rows; the phi-dependent `D` row is expanded over
    /// the twelve canonical angles.
    pub qubit: Vec<TableRow>,
}

/// Regenerates every row the compiler certifies.
pub fn angle_tables() -> Result<AngleTables, CompilerError> {
    let preparation = (1..=12)
        .map(|j| {
            let phi = j as f64 * PI / 12.0;
            (phi, crate::optics::preparation_angle_deg(phi))
        })
        .collect();

    let mut qutrit = Vec::new();
    for compiled in [
        jx_measurement()?,
        jx2_measurement()?,
        jy_measurement()?,
        jy2_measurement()?,
        jz_measurement()?,
        c_opt_measurement(-1)?,
    ] {
        qutrit.push(TableRow {
            observable: compiled.setting.label.clone(),
            compiled,
        });
    }
    // Rename the shared optimal-witness row the way the table prints it.
    qutrit.last_mut().unwrap().observable = "C+-(opt)".to_string();

    let pair = standard_pair(3)?;
    for j in 1..=12 {
        let phi = j as f64 * PI / 12.0;
        let psi = family_state(phi, 3)?;
        let sign = crate::relations::family_mp1_sign(&pair, &psi, phi)?;
        for k in 1..=3u8 {
            let mut compiled = c_family_measurement(phi, k, sign)?;
            if j == 10 && k == 3 {
                compiled.solution.note = Some(
                    "published row lists H6 = +36.95; the sign does not affect family statistics"
                        .to_string(),
                );
            }
            qutrit.push(TableRow {
                observable: compiled.setting.label.clone(),
                compiled,
            });
        }
    }
    let d_row = d_measurement()?;
    qutrit.push(TableRow {
        observable: "D".to_string(),
        compiled: d_row,
    });

    let mut qubit = Vec::new();
    for compiled in [
        sigma_x_measurement()?,
        sigma_y_measurement()?,
        sigma_sq_measurement()?,
        sigma_z_measurement()?,
        c_qubit_measurement(PI / 12.0, -1)?,
    ] {
        qubit.push(TableRow {
            observable: compiled.setting.label.clone(),
            compiled,
        });
    }
    qubit.last_mut().unwrap().observable = "C+-(perp)".to_string();
    for j in 1..=12 {
        let compiled = d_qubit_measurement(j as f64 * PI / 12.0)?;
        qubit.push(TableRow {
            observable: compiled.setting.label.clone(),
            compiled,
        });
    }

    Ok(AngleTables {
        preparation,
        qutrit,
        qubit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn round2(x: f64) -> f64 {
        (x * 100.0).round() / 100.0
    }

    fn assert_angle(actual: Option<f64>, published: f64) {
        let actual = actual.expect("plate present");
        assert!(
            (round2(actual) - published).abs() <= TABLE_ANGLE_TOL_DEG + 1e-9,
            "angle {actual:.4} does not round to published {published}"
        );
    }

    #[test]
    fn measurement_unitary_of_jx_matches_published_rotation() {
        let (jx, _) = qutrit_observables().unwrap();
        let obs = Observable::new(jx).unwrap();
        let u = measurement_unitary(&obs, &PortOrdering::Ascending).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let published = CMatrix::from_real(3, &[0.5, -r, 0.5, -r, 0.0, r, 0.5, r, 0.5]).unwrap();
        // Rows agree up to per-row sign.
        for i in 0..3 {
            let direct: f64 = (0..3)
                .map(|j| (u.get(i, j) - published.get(i, j)).norm())
                .sum();
            let flipped: f64 = (0..3)
                .map(|j| (u.get(i, j) + published.get(i, j)).norm())
                .sum();
            assert!(direct.min(flipped) < 1e-10, "row {i}");
        }
    }

    #[test]
    fn measurement_unitary_of_diagonal_observable_is_permutation() {
        let obs = Observable::new(CMatrix::diagonal(&[1.0, 0.0, -1.0])).unwrap();
        let u = measurement_unitary(&obs, &PortOrdering::Descending).unwrap();
        assert!(u.max_abs_diff(&CMatrix::identity(3)) < 1e-12);
    }

    #[test]
    fn degenerate_observable_unitary_diagonalizes_it() {
        let (jx, _) = qutrit_observables().unwrap();
        let jx2 = jx.matmul(&jx).unwrap();
        let obs = Observable::new(jx2.clone()).unwrap();
        let u = measurement_unitary(&obs, &PortOrdering::Ascending).unwrap();
        let d = u.matmul(&jx2).unwrap().matmul(&u.adjoint()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(d.get(i, j).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn three_stage_decomposition_matches_published_blocks() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let u = CMatrix::from_real(3, &[0.5, -r, 0.5, -r, 0.0, r, 0.5, r, 0.5]).unwrap();
        let (u1, u2, u3) = decompose_three_stage(&u).unwrap();

        let s23 = (2f64 / 3.0).sqrt();
        let s13 = 1.0 / 3f64.sqrt();
        let h = 3f64.sqrt() / 2.0;
        let u1_pub = CMatrix::from_real(3, &[1., 0., 0., 0., s23, -s13, 0., -s13, -s23]).unwrap();
        let u2_pub = CMatrix::from_real(3, &[0.5, -h, 0., h, 0.5, 0., 0., 0., 1.]).unwrap();
        let u3_pub = CMatrix::from_real(3, &[1., 0., 0., 0., -s23, -s13, 0., s13, -s23]).unwrap();
        assert!(u1.max_abs_diff(&u1_pub) < 1e-10);
        assert!(u2.max_abs_diff(&u2_pub) < 1e-10);
        assert!(u3.max_abs_diff(&u3_pub) < 1e-10);

        let rebuilt = u3.matmul(&u2).unwrap().matmul(&u1).unwrap();
        assert!(rebuilt.max_abs_diff(&u) < 1e-10);
    }

    #[test]
    fn three_stage_decomposition_reconstructs_identity() {
        let id = CMatrix::identity(3);
        let (u1, u2, u3) = decompose_three_stage(&id).unwrap();
        let rebuilt = u3.matmul(&u2).unwrap().matmul(&u1).unwrap();
        assert!(rebuilt.max_abs_diff(&id) < 1e-12);
    }

    #[test]
    fn three_stage_decomposition_rejects_complex_input() {
        let mut u = CMatrix::identity(3);
        u.set(0, 0, C64::new(0.0, 1.0));
        u.set(1, 1, C64::new(0.0, 1.0));
        assert!(matches!(
            decompose_three_stage(&u),
            Err(CompilerError::ComplexNotSupported(_))
        ));
    }

    #[test]
    fn solve_hwp_angle_examples() {
        let s23 = (2f64 / 3.0).sqrt();
        let s13 = 1.0 / 3f64.sqrt();
        let theta = solve_hwp_angle(&[[s23, -s13], [-s13, -s23]]).unwrap();
        assert!((round2(theta) + 17.63).abs() < TABLE_ANGLE_TOL_DEG + 1e-9);

        assert!((solve_hwp_angle(&[[1., 0.], [0., -1.]]).unwrap() - 0.0).abs() < 1e-12);
        assert!((solve_hwp_angle(&[[0., 1.], [1., 0.]]).unwrap() - 45.0).abs() < 1e-12);

        // Rotations are rejected at this level.
        assert!(matches!(
            solve_hwp_angle(&[[0., -1.], [1., 0.]]),
            Err(CompilerError::NotReflection(_))
        ));
    }

    #[test]
    fn template_formula_matches_simulated_circuit() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..25 {
            let t = TemplateAngles {
                theta3: rng.gen_range(-90.0..90.0),
                theta4: rng.gen_range(-90.0..90.0),
                theta7: rng.gen_range(-90.0..90.0),
            };
            let m = standard_template_matrix(&t);
            let circuit = standard_template_circuit(&t);
            for j in 0..3 {
                let mut amps = [0.0; 3];
                amps[j] = 1.0;
                let psi = QState::from_real(&amps).unwrap();
                let out = simulate(&circuit, &encode_with(&psi, Encoding::Qutrit).unwrap());
                let det = detect(&out, Encoding::Qutrit);
                for i in 0..3 {
                    assert!(
                        (det.probabilities[i] - m[i][j] * m[i][j]).abs() < 1e-12,
                        "entry ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn published_qutrit_rows_are_reproduced() {
        let jx = jx_measurement().unwrap();
        assert_angle(jx.solution.h3, -17.63);
        assert_angle(jx.solution.h4, 75.00);
        assert_angle(jx.solution.h7, -62.63);
        assert_angle(jx.solution.h2, 45.0);
        assert_angle(jx.solution.h5, 45.0);
        assert_angle(jx.solution.h6, 0.0);
        assert!(jx.solution.residual < 1e-10);

        let jx2 = jx2_measurement().unwrap();
        assert_angle(jx2.solution.h3, 90.00);
        assert_angle(jx2.solution.h4, 0.00);
        assert_angle(jx2.solution.h7, 22.50);

        let jy = jy_measurement().unwrap();
        assert_angle(jy.solution.h3, 17.63);
        assert_angle(jy.solution.h4, -15.00);
        assert_angle(jy.solution.h7, -62.63);
        assert_eq!(jy.solution.scope, CertificationScope::FamilyOnly);
        assert!(jy.solution.residual < 1e-10);

        let jy2 = jy2_measurement().unwrap();
        assert_angle(jy2.solution.h3, 90.00);
        assert_angle(jy2.solution.h4, 90.00);
        assert_angle(jy2.solution.h7, 22.50);

        let jz = jz_measurement().unwrap();
        assert_angle(jz.solution.h3, 0.00);
        assert_angle(jz.solution.h4, 45.00);
        assert_angle(jz.solution.h7, -45.00);

        let c_opt = c_opt_measurement(-1).unwrap();
        assert_angle(c_opt.solution.h3, 0.00);
        assert_angle(c_opt.solution.h4, 45.00);
        assert_angle(c_opt.solution.h7, -45.00);

        let d = d_measurement().unwrap();
        assert_angle(d.solution.h3, 45.00);
        assert_angle(d.solution.q4, 45.00);
        assert_angle(d.solution.q5, 45.00);
        assert_angle(d.solution.h7, -90.00);
        assert!(d.solution.residual < 1e-10);
    }

    #[test]
    fn published_c_family_angles_are_reproduced() {
        // (phi index j, k, published plate angle): H6 for the minus rows,
        // H7 for the plus rows.
        let minus_rows = [
            (1, 1, -32.93),
            (1, 2, -37.74),
            (1, 3, -40.75),
            (2, 1, -24.55),
            (2, 2, -31.72),
            (2, 3, -36.95),
            (3, 1, -19.62),
            (3, 2, -27.37),
            (3, 3, -33.90),
            (10, 1, -24.55),
            (11, 2, -37.74),
            (12, 1, -45.00),
            (12, 3, -45.00),
        ];
        for (j, k, published) in minus_rows {
            let phi = j as f64 * PI / 12.0;
            let row = c_family_measurement(phi, k, -1).unwrap();
            assert_angle(row.solution.h6, published);
            assert_angle(row.solution.h7, -45.0);
            assert!(row.solution.residual < 1e-9, "row j={j} k={k}");
        }

        // The published plus rows carry slightly coarser rounding; allow
        // 0.03 degrees there.
        let plus_rows = [
            (4, 1, -69.55),
            (4, 2, -76.72),
            (4, 3, -81.95),
            (5, 1, -77.92),
            (5, 2, -82.74),
            (5, 3, -85.75),
            (6, 1, -45.00),
            (6, 2, -45.00),
            (6, 3, -45.00),
            (7, 2, -82.74),
            (8, 3, -81.95),
            (9, 1, -64.62),
            (9, 2, -72.37),
            (9, 3, -78.90),
        ];
        for (j, k, published) in plus_rows {
            let phi = j as f64 * PI / 12.0;
            let row = c_family_measurement(phi, k, 1).unwrap();
            let got = row.solution.h7.unwrap();
            assert!(
                (got - published).abs() < 0.03,
                "row j={j} k={k}: {got:.4} vs {published}"
            );
            assert!(row.solution.residual < 1e-9);
        }
    }

    #[test]
    fn published_qubit_rows_are_reproduced() {
        let sx = sigma_x_measurement().unwrap();
        assert!(sx.solution.q1.is_none());
        assert_angle(sx.solution.h2, 22.50);

        let sy = sigma_y_measurement().unwrap();
        assert_angle(sy.solution.q1, 90.00);
        assert_angle(sy.solution.h2, 22.50);

        let ssq = sigma_sq_measurement().unwrap();
        assert_angle(ssq.solution.h2, 0.00);

        let sz = sigma_z_measurement().unwrap();
        assert_angle(sz.solution.h2, 0.00);

        let c = c_qubit_measurement(PI / 12.0, -1).unwrap();
        assert_angle(c.solution.h2, 0.00);

        for j in 1..=12 {
            let phi = j as f64 * PI / 12.0;
            let d = d_qubit_measurement(phi).unwrap();
            assert_angle(d.solution.q1, 90.00);
            let expected = (phi.to_degrees() - 90.0) / 2.0;
            assert!(
                (d.solution.h2.unwrap() - expected).abs() < 1e-9,
                "D qubit at j={j}"
            );
        }
    }

    #[test]
    fn exact_complex_compiles_certify_on_random_states() {
        let jy = jy_measurement_exact().unwrap();
        assert_eq!(jy.solution.scope, CertificationScope::AllInputs);
        assert!(jy.solution.residual < 1e-10);
        assert!(!jy.solution.pre_qwps.is_empty());

        let d = d_measurement_exact().unwrap();
        assert!(d.solution.residual < 1e-10);
    }

    #[test]
    fn generic_compile_of_random_rotations_verifies() {
        // Random real orthogonal targets, built from seeded Euler angles.
        let mut rng = ChaCha12Rng::seed_from_u64(0xde51);
        for trial in 0..20 {
            let (a, b, c) = (
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
            );
            let rot = |i: usize, j: usize, t: f64| {
                let mut m = CMatrix::identity(3);
                m.set(i, i, C64::new(t.cos(), 0.0));
                m.set(j, j, C64::new(t.cos(), 0.0));
                m.set(i, j, C64::new(-t.sin(), 0.0));
                m.set(j, i, C64::new(t.sin(), 0.0));
                m
            };
            let u = rot(0, 1, a)
                .matmul(&rot(1, 2, b))
                .unwrap()
                .matmul(&rot(0, 2, c))
                .unwrap();
            let ports = (0..3)
                .map(|i| PortProjector {
                    eigenvalue: i as f64,
                    bra: (0..3).map(|j| u.get(i, j)).collect(),
                })
                .collect();
            let setting = MeasurementSetting::from_ports(format!("random{trial}"), ports).unwrap();
            let compiled = compile_measurement(&setting, &CompileOptions::default()).unwrap();
            assert!(compiled.solution.residual < 1e-10, "trial {trial}");

            // Reconstruction property through the decomposition as well.
            let (u1, u2, u3) = decompose_three_stage(&u).unwrap();
            let rebuilt = u3.matmul(&u2).unwrap().matmul(&u1).unwrap();
            assert!(rebuilt.max_abs_diff(&u) < 1e-10);
        }
    }

    #[test]
    fn verify_circuit_flags_wrong_angles() {
        let jx = jx_measurement().unwrap();
        let bad = standard_template_circuit(&TemplateAngles {
            theta3: -17.0,
            theta4: 75.0,
            theta7: -62.63,
        });
        let residual = verify_circuit(&bad, &jx.setting, &canonical_family(3));
        assert!(residual > 1e-3);
    }

    #[test]
    fn identity_setting_with_empty_circuit_has_zero_residual() {
        let ports = (0..3)
            .map(|i| {
                let mut bra = vec![C64::new(0.0, 0.0); 3];
                bra[i] = C64::new(1.0, 0.0);
                PortProjector {
                    eigenvalue: i as f64,
                    bra,
                }
            })
            .collect();
        let setting = MeasurementSetting::from_ports("identity", ports).unwrap();
        let circuit = Circuit::new(vec![], Encoding::Qutrit);
        let inputs = canonical_family(3);
        assert!(verify_circuit(&circuit, &setting, &inputs) < 1e-15);
    }

    #[test]
    fn angle_tables_cover_every_published_row() {
        let tables = angle_tables().unwrap();
        assert_eq!(tables.preparation.len(), 12);
        assert!((tables.preparation[0].1 - 37.5).abs() < 1e-9);
        assert!((tables.preparation[5].1 - 0.0).abs() < 1e-9);
        assert!((tables.preparation[11].1 + 45.0).abs() < 1e-9);

        // 6 named rows + 36 C rows + D.
        assert_eq!(tables.qutrit.len(), 43);
        for row in &tables.qutrit {
            assert!(
                row.compiled.solution.residual < 1e-6,
                "row {}",
                row.observable
            );
        }
        // sigma rows + C row + 12 D rows.
        assert_eq!(tables.qubit.len(), 17);

        let flagged: Vec<_> = tables
            .qutrit
            .iter()
            .filter(|row| row.compiled.solution.note.is_some())
            .collect();
        assert_eq!(flagged.len(), 1);
        assert!(flagged[0].observable.contains("10pi/12"));
    }

    #[test]
    fn jz_circuit_measures_the_family_correctly() {
        let jz = jz_measurement().unwrap();
        let psi = family_state(FRAC_PI_2, 3).unwrap();
        let out = simulate(&jz.circuit, &encode_with(&psi, Encoding::Qutrit).unwrap());
        let det = detect(&out, Encoding::Qutrit);
        // |0> carries eigenvalue +1 on port 0 in the published ordering.
        assert!((det.probabilities[0] - 1.0).abs() < 1e-12);
        let mean: f64 = det
            .probabilities
            .iter()
            .zip(&jz.setting.ports)
            .map(|(p, port)| p * port.eigenvalue)
            .sum();
        assert!((mean - 1.0).abs() < 1e-12);
    }
}
