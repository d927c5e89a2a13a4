//! Product- and sum-form uncertainty bounds for an observable pair.
//!
//! For Hermitian `A`, `B` and a unit state `psi` this module evaluates
//!
//! * the product-form bound `Var A * Var B >= |<[A,B]>/2|^2`,
//! * the first sum-form bound
//!   `Var A + Var B >= +-i<[A,B]> + |<psi|A +- iB|psi_perp>|^2`,
//!   valid for every `psi_perp` orthogonal to `psi`, with the sign chosen so
//!   the commutator term is nonnegative,
//! * the second sum-form bound
//!   `Var A + Var B >= 1/2 |<psi_perp_{A+B}|A+B|psi>|^2` with
//!   `psi_perp_{A+B} ~ (A+B-<A+B>)|psi>`,
//!
//! together with the rank-one witness operators `C_+-` and `D` whose
//! expectation values equal the bound terms, so every quantity can be read
//! off a projective measurement.
//!
//! The canonical instances are the spin-1 pair `Jx, Jy` (angular-momentum
//! normalization, so `[Jx, Jy] = -i Jz` with `Jz = diag(1, 0, -1)`) on the
//! family `(sin phi, 0, cos phi)`, and the Pauli pair `sigma_x, sigma_y` on
//! `(sin phi, cos phi)`.

use std::f64::consts::{FRAC_PI_2, SQRT_2};

use num_complex::Complex64;
use thiserror::Error;

use crate::qmath::{
    commutator, expectation_variance, fix_phase, hermitian_eigensystem, inner, outer_product,
    vec_norm, CMatrix, EigenSystem, QState, QmathError, C64,
};

/// Orthogonality tolerance on supplied `psi_perp` states.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// Variance below which a state counts as an eigenstate of an observable.
const EIGENSTATE_TOL: f64 = 1e-12;

/// Commutator magnitude below which the sign choice is a tie.
const SIGN_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelationsError {
    #[error(transparent)]
    Math(#[from] QmathError),
    #[error("psi_perp is not orthogonal to psi (|<psi|psi_perp>| = {overlap:.3e})")]
    NotOrthogonal { overlap: f64 },
    #[error("psi is a joint eigenstate of A and B; the first sum-form bound has no optimal psi_perp")]
    JointEigenstate,
    #[error("psi is an eigenstate of A+B; the second sum-form bound is trivially zero")]
    SumEigenstate,
    #[error("orthogonal family index {0} is not in 1..=3")]
    BadIndex(u8),
    #[error("the closed-form orthogonal family is defined for dimension 3 only")]
    FamilyRequiresQutrit,
    #[error("family states are defined for dimensions 2 and 3, got {0}")]
    BadFamilyDimension(usize),
}

/// Hermitian observable with its eigensystem computed once up front.
#[derive(Debug, Clone)]
pub struct Observable {
    matrix: CMatrix,
    eigen: EigenSystem,
}

impl Observable {
    pub fn new(matrix: CMatrix) -> Result<Self, RelationsError> {
        let eigen = hermitian_eigensystem(&matrix)?;
        Ok(Self { matrix, eigen })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn eigen(&self) -> &EigenSystem {
        &self.eigen
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// A pair of same-dimension Hermitian observables.
#[derive(Debug, Clone)]
pub struct ObservablePair {
    a: CMatrix,
    b: CMatrix,
    label: String,
}

impl ObservablePair {
    pub fn new(a: CMatrix, b: CMatrix, label: impl Into<String>) -> Result<Self, RelationsError> {
        a.require_hermitian()?;
        b.require_hermitian()?;
        if a.dim() != b.dim() {
            return Err(QmathError::DimMismatch {
                left: a.dim(),
                right: b.dim(),
            }
            .into());
        }
        Ok(Self {
            a,
            b,
            label: label.into(),
        })
    }

    pub fn a(&self) -> &CMatrix {
        &self.a
    }

    pub fn b(&self) -> &CMatrix {
        &self.b
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// `A + sign*iB`.
    fn a_plus_sib(&self, sign: i8) -> CMatrix {
        let ib = self.b.scale(C64::new(0.0, sign as f64));
        self.a.add(&ib).expect("same dimension by construction")
    }

    /// `i<[A,B]>` in the given state; real for Hermitian inputs.
    pub fn i_commutator_expectation(&self, psi: &QState) -> Result<f64, RelationsError> {
        let comm = commutator(&self.a, &self.b)?;
        let cpsi = comm.mul_vec(psi.amplitudes())?;
        let exp = inner(psi.amplitudes(), &cpsi);
        Ok((Complex64::i() * exp).re)
    }
}

/// How an orthogonal state was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrthogonalOrigin {
    /// Saturating choice `psi_perp ~ (A -+ iB - <A -+ iB>)|psi>`.
    Optimal,
    /// One of the three published closed-form states, index 1..=3.
    RandomFamily(u8),
    /// `psi_perp ~ (A + B - <A+B>)|psi>`, the direction behind the second bound.
    SumDirection,
    /// Caller-supplied state.
    Custom,
}

impl OrthogonalOrigin {
    /// Short column label used in reports and exports.
    pub fn tag(&self) -> String {
        match self {
            OrthogonalOrigin::Optimal => "opt".to_string(),
            OrthogonalOrigin::RandomFamily(k) => format!("r{k}"),
            OrthogonalOrigin::SumDirection => "sum".to_string(),
            OrthogonalOrigin::Custom => "custom".to_string(),
        }
    }
}

/// A unit state orthogonal to some reference state, tagged with its origin.
#[derive(Debug, Clone)]
pub struct OrthogonalChoice {
    pub state: QState,
    pub origin: OrthogonalOrigin,
}

/// Selector for building the orthogonal states of a bound evaluation.
#[derive(Debug, Clone)]
pub enum OrthogonalSpec {
    Optimal,
    Family(u8),
    Custom(QState),
}

/// One evaluated first-bound entry.
#[derive(Debug, Clone)]
pub struct Mp1Entry {
    pub origin: OrthogonalOrigin,
    pub bound: f64,
    pub sign: i8,
}

/// Product-form bound evaluation.
#[derive(Debug, Clone, Copy)]
pub struct HrQuantities {
    /// `Var A * Var B`.
    pub product: f64,
    /// `|<[A,B]>/2|^2`.
    pub bound: f64,
}

/// Everything evaluated at one state: the left-hand side, the product-form
/// quantities and both sum-form bounds.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub phi: Option<f64>,
    pub lhs_sum: f64,
    pub hr_product: f64,
    pub hr_bound: f64,
    pub mp1: Vec<Mp1Entry>,
    pub mp2: f64,
}

/// The measured family `(sin phi, 0, cos phi)` for dimension 3, or
/// `(sin phi, cos phi)` for dimension 2.
pub fn family_state(phi: f64, dim: usize) -> Result<QState, RelationsError> {
    let (s, c) = phi.sin_cos();
    let amplitudes = match dim {
        3 => vec![s, 0.0, c],
        2 => vec![s, c],
        other => return Err(RelationsError::BadFamilyDimension(other)),
    };
    Ok(QState::from_real(&amplitudes)?)
}

/// Returns `(A, B, Z)`: the normalized spin-1 components `Jx, Jy` with
/// `Jz = diag(1, 0, -1)` for dimension 3, or the Pauli triple for
/// dimension 2. With this normalization `[A, B] = -iZ` (spin-1) and
/// `[A, B] = 2iZ` (Pauli), and the spin-1 family has
/// `Var Jx + Var Jy = 1` identically.
pub fn standard_observables(dim: usize) -> Result<(CMatrix, CMatrix, CMatrix), RelationsError> {
    match dim {
        3 => {
            let r = 1.0 / SQRT_2;
            let jx = CMatrix::from_real(3, &[0.0, r, 0.0, r, 0.0, r, 0.0, r, 0.0])?;
            let i = C64::new(0.0, 1.0);
            let z = C64::new(0.0, 0.0);
            let jy = CMatrix::new(
                3,
                vec![z, i * r, z, -i * r, z, i * r, z, -i * r, z],
            )?;
            let jz = CMatrix::diagonal(&[1.0, 0.0, -1.0]);
            Ok((jx, jy, jz))
        }
        2 => {
            let sx = CMatrix::from_real(2, &[0.0, 1.0, 1.0, 0.0])?;
            let i = C64::new(0.0, 1.0);
            let z = C64::new(0.0, 0.0);
            let sy = CMatrix::new(2, vec![z, -i, i, z])?;
            let sz = CMatrix::diagonal(&[1.0, -1.0]);
            Ok((sx, sy, sz))
        }
        other => Err(RelationsError::BadFamilyDimension(other)),
    }
}

/// The canonical pair for a dimension, labeled.
pub fn standard_pair(dim: usize) -> Result<ObservablePair, RelationsError> {
    let (a, b, _) = standard_observables(dim)?;
    let label = if dim == 3 { "Jx,Jy" } else { "sigma_x,sigma_y" };
    ObservablePair::new(a, b, label)
}

/// Product-form quantities `(Var A * Var B, |<[A,B]>/2|^2)`.
pub fn hr_quantities(pair: &ObservablePair, psi: &QState) -> Result<HrQuantities, RelationsError> {
    let (_, var_a) = expectation_variance(pair.a(), psi)?;
    let (_, var_b) = expectation_variance(pair.b(), psi)?;
    let comm = commutator(pair.a(), pair.b())?;
    let cpsi = comm.mul_vec(psi.amplitudes())?;
    let exp = inner(psi.amplitudes(), &cpsi);
    Ok(HrQuantities {
        product: var_a * var_b,
        bound: exp.norm_sqr() / 4.0,
    })
}

/// Sign for the first sum-form bound: `+1` when `i<[A,B]> >= 0`, else `-1`,
/// with `+1` on a tie below 1e-12.
pub fn mp1_sign(pair: &ObservablePair, psi: &QState) -> Result<i8, RelationsError> {
    let ic = pair.i_commutator_expectation(psi)?;
    if ic < -SIGN_TIE_TOL {
        Ok(-1)
    } else {
        Ok(1)
    }
}

/// Sign used for the canonical spin-1 family at angle `phi`: the generic
/// rule, with ties broken toward the published six/six grouping
/// (`phi < pi/2` joins the minus group, so `phi = pi/4` is measured with
/// `C_-` and `phi = 3pi/4` with `C_+`).
pub fn family_mp1_sign(pair: &ObservablePair, psi: &QState, phi: f64) -> Result<i8, RelationsError> {
    let ic = pair.i_commutator_expectation(psi)?;
    if ic.abs() <= SIGN_TIE_TOL {
        Ok(if phi < FRAC_PI_2 { -1 } else { 1 })
    } else if ic < 0.0 {
        Ok(-1)
    } else {
        Ok(1)
    }
}

fn check_orthogonal(psi: &QState, perp: &QState) -> Result<(), RelationsError> {
    let overlap = psi.overlap(perp);
    if overlap > ORTHOGONALITY_TOL {
        Err(RelationsError::NotOrthogonal { overlap })
    } else {
        Ok(())
    }
}

/// Subtracts `<op>` and applies `op - <op>` to `psi`, returning the raw
/// (unnormalized) image vector.
fn centered_image(op: &CMatrix, psi: &QState) -> Result<Vec<C64>, RelationsError> {
    let image = op.mul_vec(psi.amplitudes())?;
    let mean = inner(psi.amplitudes(), &image);
    Ok(image
        .iter()
        .zip(psi.amplitudes())
        .map(|(&im, &amp)| im - mean * amp)
        .collect())
}

/// The saturating orthogonal state for the first sum-form bound.
///
/// If `psi` is an eigenstate of `A` the construction falls back to
/// `(B - <B>)|psi> / (Delta B)`, and symmetrically for `B`; otherwise it is
/// `(A - s*iB - <A - s*iB>)|psi>` normalized, where `s` is the bound's sign.
/// When that vector vanishes (the bound already saturates without the
/// matrix-element term) the opposite sign is used.
pub fn optimal_orthogonal(
    pair: &ObservablePair,
    psi: &QState,
) -> Result<OrthogonalChoice, RelationsError> {
    let (_, var_a) = expectation_variance(pair.a(), psi)?;
    let (_, var_b) = expectation_variance(pair.b(), psi)?;
    if var_a < EIGENSTATE_TOL && var_b < EIGENSTATE_TOL {
        return Err(RelationsError::JointEigenstate);
    }

    let raw = if var_a < EIGENSTATE_TOL {
        centered_image(pair.b(), psi)?
    } else if var_b < EIGENSTATE_TOL {
        centered_image(pair.a(), psi)?
    } else {
        let sign = mp1_sign(pair, psi)?;
        let preferred = centered_image(&pair.a_plus_sib(-sign), psi)?;
        if vec_norm(&preferred) > 1e-9 {
            preferred
        } else {
            // The bound saturates with the commutator term alone; any
            // orthogonal direction works, so take the other quadrature.
            centered_image(&pair.a_plus_sib(sign), psi)?
        }
    };

    let mut amplitudes = QState::from_unnormalized(&raw)?.amplitudes().to_vec();
    fix_phase(&mut amplitudes);
    let state = QState::new(amplitudes)?;
    check_orthogonal(psi, &state)?;
    Ok(OrthogonalChoice {
        state,
        origin: OrthogonalOrigin::Optimal,
    })
}

/// The three published closed-form states orthogonal to the spin-1 family
/// state at angle `phi`:
///
/// * k=1: `(sqrt3/2) (cos phi, 1/sqrt3, -sin phi)`
/// * k=2: `(sqrt2/2) (cos phi, 1,       -sin phi)`
/// * k=3: `(1/2)     (cos phi, sqrt3,   -sin phi)`
pub fn orthogonal_family(phi: f64, k: u8) -> Result<OrthogonalChoice, RelationsError> {
    let (s, c) = phi.sin_cos();
    let (scale, mid) = match k {
        1 => (3f64.sqrt() / 2.0, 1.0 / 3f64.sqrt()),
        2 => (SQRT_2 / 2.0, 1.0),
        3 => (0.5, 3f64.sqrt()),
        other => return Err(RelationsError::BadIndex(other)),
    };
    let state = QState::from_real(&[scale * c, scale * mid, -scale * s])?;
    Ok(OrthogonalChoice {
        state,
        origin: OrthogonalOrigin::RandomFamily(k),
    })
}

/// First sum-form bound with the generic sign rule.
pub fn mp1_bound(
    pair: &ObservablePair,
    psi: &QState,
    perp: &OrthogonalChoice,
) -> Result<Mp1Entry, RelationsError> {
    let sign = mp1_sign(pair, psi)?;
    mp1_bound_with_sign(pair, psi, perp, sign)
}

/// First sum-form bound with an explicit sign:
/// `sign*i<[A,B]> + |<psi|A + sign*iB|psi_perp>|^2`.
pub fn mp1_bound_with_sign(
    pair: &ObservablePair,
    psi: &QState,
    perp: &OrthogonalChoice,
    sign: i8,
) -> Result<Mp1Entry, RelationsError> {
    check_orthogonal(psi, &perp.state)?;
    let ic = pair.i_commutator_expectation(psi)?;
    let op = pair.a_plus_sib(sign);
    let image = op.mul_vec(perp.state.amplitudes())?;
    let element = inner(psi.amplitudes(), &image);
    Ok(Mp1Entry {
        origin: perp.origin,
        bound: sign as f64 * ic + element.norm_sqr(),
        sign,
    })
}

/// Rank-one witness `C = (A + sign*iB)|psi_perp><psi_perp|(A - sign*iB)`;
/// its expectation in `psi` equals the matrix-element term of the first
/// sum-form bound.
pub fn c_operator(
    pair: &ObservablePair,
    perp: &QState,
    sign: i8,
) -> Result<Observable, RelationsError> {
    let op = pair.a_plus_sib(sign);
    let image = op.mul_vec(perp.amplitudes())?;
    Observable::new(outer_product(&image, &image)?)
}

/// Witness `D = 1/2 (A+B)|psi_perp><psi_perp|(A+B)` with
/// `psi_perp ~ (A+B-<A+B>)|psi>`; `<D>` equals the second sum-form bound.
pub fn d_operator(
    pair: &ObservablePair,
    psi: &QState,
) -> Result<(Observable, OrthogonalChoice), RelationsError> {
    let sum = pair.a().add(pair.b())?;
    let raw = centered_image(&sum, psi)?;
    if vec_norm(&raw) < 1e-10 {
        return Err(RelationsError::SumEigenstate);
    }
    let mut amplitudes = QState::from_unnormalized(&raw)?.amplitudes().to_vec();
    fix_phase(&mut amplitudes);
    let state = QState::new(amplitudes)?;
    check_orthogonal(psi, &state)?;
    let image = sum.mul_vec(state.amplitudes())?;
    let d = Observable::new(outer_product(&image, &image)?.scale(C64::new(0.5, 0.0)))?;
    Ok((
        d,
        OrthogonalChoice {
            state,
            origin: OrthogonalOrigin::SumDirection,
        },
    ))
}

/// Second sum-form bound `1/2 |<psi_perp_{A+B}|(A+B)|psi>|^2`.
pub fn mp2_bound(pair: &ObservablePair, psi: &QState) -> Result<f64, RelationsError> {
    let (_, perp) = d_operator(pair, psi)?;
    let sum = pair.a().add(pair.b())?;
    let image = sum.mul_vec(psi.amplitudes())?;
    let element = inner(perp.state.amplitudes(), &image);
    Ok(0.5 * element.norm_sqr())
}

/// Evaluates everything at the family state for `phi`. Sign ties use the
/// published grouping in dimension 3 and the generic rule otherwise.
pub fn evaluate_bounds(
    pair: &ObservablePair,
    phi: f64,
    orthogonals: &[OrthogonalSpec],
) -> Result<BoundReport, RelationsError> {
    let psi = family_state(phi, pair.dim())?;
    let (_, var_a) = expectation_variance(pair.a(), &psi)?;
    let (_, var_b) = expectation_variance(pair.b(), &psi)?;
    let hr = hr_quantities(pair, &psi)?;
    let sign = if pair.dim() == 3 {
        family_mp1_sign(pair, &psi, phi)?
    } else {
        mp1_sign(pair, &psi)?
    };

    let mut mp1 = Vec::with_capacity(orthogonals.len());
    for spec in orthogonals {
        let choice = match spec {
            OrthogonalSpec::Optimal => optimal_orthogonal(pair, &psi)?,
            OrthogonalSpec::Family(k) => {
                if pair.dim() != 3 {
                    return Err(RelationsError::FamilyRequiresQutrit);
                }
                orthogonal_family(phi, *k)?
            }
            OrthogonalSpec::Custom(state) => {
                check_orthogonal(&psi, state)?;
                OrthogonalChoice {
                    state: state.clone(),
                    origin: OrthogonalOrigin::Custom,
                }
            }
        };
        mp1.push(mp1_bound_with_sign(pair, &psi, &choice, sign)?);
    }

    Ok(BoundReport {
        phi: Some(phi),
        lhs_sum: var_a + var_b,
        hr_product: hr.product,
        hr_bound: hr.bound,
        mp1,
        mp2: mp2_bound(pair, &psi)?,
    })
}

/// The twelve published sweep angles `phi = j pi/12`, `j = 1..=12`.
pub fn canonical_phis() -> Vec<f64> {
    (1..=12).map(|j| j as f64 * std::f64::consts::PI / 12.0).collect()
}
