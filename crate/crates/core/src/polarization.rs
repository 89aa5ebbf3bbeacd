//! Two-photon polarization states of a signal-idler pair.
//!
//! Basis ordering is `{HH, HV, VH, VV}` with the signal photon first. Angles are
//! measured from the H axis, so an analyzer at `theta` passes
//! `cos(theta)|H> + sin(theta)|V>`.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::{Channel, Error, Result};

const NORM_TOL: f64 = 1e-12;

type C = Complex64;

fn c(re: f64) -> C {
    C::new(re, 0.0)
}

/// Angle of a polarization analyzer pass axis, in radians from H.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnalyzerSetting(pub f64);

impl AnalyzerSetting {
    pub fn from_degrees(deg: f64) -> Self {
        AnalyzerSetting(deg.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    /// Angle reduced to `[0, pi)`; analyzers at `theta` and `theta + pi` are identical.
    pub fn canonical(self) -> f64 {
        let r = self.0.rem_euclid(PI);
        if r >= PI {
            0.0
        } else {
            r
        }
    }

    fn pass_vector(self) -> Vector2<C> {
        Vector2::new(c(self.0.cos()), c(self.0.sin()))
    }

    fn fail_vector(self) -> Vector2<C> {
        Vector2::new(c(-self.0.sin()), c(self.0.cos()))
    }
}

impl From<f64> for AnalyzerSetting {
    fn from(rad: f64) -> Self {
        AnalyzerSetting(rad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaveplateKind {
    HalfWave,
    QuarterWave,
}

/// An ideal linear retarder with its fast axis at `axis_angle` radians from H.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waveplate {
    pub kind: WaveplateKind,
    pub axis_angle: f64,
}

impl Waveplate {
    pub fn half_wave(axis_angle: f64) -> Self {
        Waveplate {
            kind: WaveplateKind::HalfWave,
            axis_angle,
        }
    }

    pub fn quarter_wave(axis_angle: f64) -> Self {
        Waveplate {
            kind: WaveplateKind::QuarterWave,
            axis_angle,
        }
    }

    /// Jones matrix `R(a) diag(1, e^{i*retardance}) R(-a)`, global phase dropped.
    pub fn jones(&self) -> Matrix2<C> {
        let retardance = match self.kind {
            WaveplateKind::HalfWave => PI,
            WaveplateKind::QuarterWave => PI / 2.0,
        };
        let (s, co) = self.axis_angle.sin_cos();
        let rot = Matrix2::new(c(co), c(-s), c(s), c(co));
        let diag = Matrix2::new(c(1.0), c(0.0), c(0.0), C::from_polar(1.0, retardance));
        rot * diag * rot.transpose()
    }
}

/// The four Bell states. Naming here is `Psi = HH +/- VV`,
/// `Phi = HV +/- VH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BellState {
    PsiPlus,
    PsiMinus,
    PhiPlus,
    PhiMinus,
}

/// Probabilities of the four analyzer outcome combinations for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOutcome {
    pub pass_pass: f64,
    pub pass_fail: f64,
    pub fail_pass: f64,
    pub fail_fail: f64,
}

impl JointOutcome {
    pub fn total(&self) -> f64 {
        self.pass_pass + self.pass_fail + self.fail_pass + self.fail_fail
    }

    pub fn signal_pass(&self) -> f64 {
        self.pass_pass + self.pass_fail
    }

    pub fn idler_pass(&self) -> f64 {
        self.pass_pass + self.fail_pass
    }
}

/// Polarization state of one signal-idler pair, pure or mixed.
#[derive(Debug, Clone, PartialEq)]
pub enum TwoPhotonState {
    Pure(Vector4<C>),
    Mixed(Matrix4<C>),
}

impl TwoPhotonState {
    /// Pure state from amplitudes over `{HH, HV, VH, VV}` that are already normalized.
    pub fn pure(amplitudes: [C; 4]) -> Result<Self> {
        let v = Vector4::from(amplitudes);
        let norm2 = v.norm_squared();
        if (norm2 - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!(
                "amplitude norm squared is {norm2}, expected 1"
            )));
        }
        Ok(TwoPhotonState::Pure(v))
    }

    /// Pure state from arbitrary nonzero amplitudes, normalized on construction.
    pub fn normalized(amplitudes: [C; 4]) -> Result<Self> {
        let v = Vector4::from(amplitudes);
        let norm = v.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidState(
                "zero or non-finite amplitude vector".into(),
            ));
        }
        Ok(TwoPhotonState::Pure(v / c(norm)))
    }

    /// Mixed state from a density matrix, checked for hermiticity, unit trace and
    /// positivity.
    pub fn mixed(rho: Matrix4<C>) -> Result<Self> {
        let herm_err = max_abs(&(rho - rho.adjoint()));
        if herm_err > NORM_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix not Hermitian (max deviation {herm_err:e})"
            )));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("density matrix trace is {tr}")));
        }
        let min_eig = rho
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -NORM_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix has negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(TwoPhotonState::Mixed(rho))
    }

    pub fn bell(which: BellState) -> Self {
        let h = c(FRAC_1_SQRT_2);
        let z = c(0.0);
        let amps = match which {
            BellState::PsiPlus => [h, z, z, h],
            BellState::PsiMinus => [h, z, z, -h],
            BellState::PhiPlus => [z, h, h, z],
            BellState::PhiMinus => [z, h, -h, z],
        };
        TwoPhotonState::Pure(Vector4::from(amps))
    }

    /// Completely unpolarized pair, `I/4`.
    pub fn unpolarized() -> Self {
        TwoPhotonState::Mixed(Matrix4::identity() * c(0.25))
    }

    pub fn density_matrix(&self) -> Matrix4<C> {
        match self {
            TwoPhotonState::Pure(v) => v * v.adjoint(),
            TwoPhotonState::Mixed(rho) => *rho,
        }
    }

    /// Convex combination `p * self + (1 - p) * other`.
    pub fn mix(&self, other: &TwoPhotonState, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidState(format!(
                "mixing weight {p} outside [0, 1]"
            )));
        }
        let rho = self.density_matrix() * c(p) + other.density_matrix() * c(1.0 - p);
        TwoPhotonState::mixed(rho)
    }

    pub fn trace(&self) -> f64 {
        match self {
            TwoPhotonState::Pure(v) => v.norm_squared(),
            TwoPhotonState::Mixed(rho) => rho.trace().re,
        }
    }

    pub fn purity(&self) -> f64 {
        let rho = self.density_matrix();
        (rho * rho).trace().re
    }

    /// Equality up to global phase, compared through density matrices.
    pub fn approx_eq(&self, other: &TwoPhotonState, tol: f64) -> bool {
        max_abs(&(self.density_matrix() - other.density_matrix())) <= tol
    }

    fn expectation(&self, v: &Vector4<C>) -> f64 {
        match self {
            TwoPhotonState::Pure(psi) => v.dotc(psi).norm_sqr(),
            TwoPhotonState::Mixed(rho) => v.dotc(&(rho * v)).re.max(0.0),
        }
    }
}

fn max_abs(m: &Matrix4<C>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn kron(a: &Vector2<C>, b: &Vector2<C>) -> Vector4<C> {
    Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

fn idler_operator(j: &Matrix2<C>) -> Matrix4<C> {
    let mut op = Matrix4::zeros();
    for blk in 0..2 {
        for r in 0..2 {
            for col in 0..2 {
                op[(2 * blk + r, 2 * blk + col)] = j[(r, col)];
            }
        }
    }
    op
}

/// State emitted by the loop for given pump powers (mW) and pump relative phase.
///
/// Each pair consumes two pump photons, so the pair amplitude in each
/// polarization scales with that direction's pump power. The relative pair
/// phase is twice the pump phase.
pub fn make_source_state(power_h_mw: f64, power_v_mw: f64, phi_p: f64) -> Result<TwoPhotonState> {
    if !(power_h_mw >= 0.0 && power_v_mw >= 0.0)
        || !power_h_mw.is_finite()
        || !power_v_mw.is_finite()
    {
        return Err(Error::InvalidConfig(format!(
            "pump powers must be finite and nonnegative (H={power_h_mw}, V={power_v_mw})"
        )));
    }
    if power_h_mw == 0.0 && power_v_mw == 0.0 {
        return Err(Error::InvalidConfig("both pump powers are zero".into()));
    }
    let z = c(0.0);
    let vv = C::from_polar(power_v_mw, 2.0 * phi_p);
    TwoPhotonState::normalized([c(power_h_mw), z, z, vv])
}

/// Applies `I (x) J` for a waveplate `J` in the idler arm.
pub fn apply_idler_waveplate(state: &TwoPhotonState, plate: &Waveplate) -> TwoPhotonState {
    let op = idler_operator(&plate.jones());
    match state {
        TwoPhotonState::Pure(v) => TwoPhotonState::Pure(op * v),
        TwoPhotonState::Mixed(rho) => TwoPhotonState::Mixed(op * rho * op.adjoint()),
    }
}

/// Projective measurement of both photons on their analyzers.
pub fn joint_outcome_probabilities(
    state: &TwoPhotonState,
    theta_s: AnalyzerSetting,
    theta_i: AnalyzerSetting,
) -> JointOutcome {
    let (sp, sf) = (theta_s.pass_vector(), theta_s.fail_vector());
    let (ip, ifl) = (theta_i.pass_vector(), theta_i.fail_vector());
    JointOutcome {
        pass_pass: state.expectation(&kron(&sp, &ip)),
        pass_fail: state.expectation(&kron(&sp, &ifl)),
        fail_pass: state.expectation(&kron(&sf, &ip)),
        fail_fail: state.expectation(&kron(&sf, &ifl)),
    }
}

/// Analyzer pass probability for one photon with its partner traced out.
pub fn marginal_pass_probability(
    state: &TwoPhotonState,
    channel: Channel,
    theta: AnalyzerSetting,
) -> f64 {
    let rho = state.density_matrix();
    // reduced 2x2 density matrix
    let mut red = Matrix2::<C>::zeros();
    for a in 0..2 {
        for b in 0..2 {
            for k in 0..2 {
                let (ia, ib) = match channel {
                    Channel::Signal => (2 * a + k, 2 * b + k),
                    Channel::Idler => (2 * k + a, 2 * k + b),
                };
                red[(a, b)] += rho[(ia, ib)];
            }
        }
    }
    let v = theta.pass_vector();
    v.dotc(&(red * v)).re.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn deg(d: f64) -> AnalyzerSetting {
        AnalyzerSetting::from_degrees(d)
    }

    #[test]
    fn equal_powers_give_psi_states() {
        let plus = make_source_state(0.3, 0.3, 0.0).unwrap();
        assert!(plus.approx_eq(&TwoPhotonState::bell(BellState::PsiPlus), 1e-12));
        let minus = make_source_state(0.3, 0.3, FRAC_PI_2).unwrap();
        assert!(minus.approx_eq(&TwoPhotonState::bell(BellState::PsiMinus), 1e-12));
    }

    #[test]
    fn single_pump_gives_product_state() {
        let s = make_source_state(0.2, 0.0, 1.234).unwrap();
        let hh = TwoPhotonState::pure([c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert!(s.approx_eq(&hh, 1e-12));
    }

    #[test]
    fn zero_pump_is_rejected() {
        assert!(matches!(
            make_source_state(0.0, 0.0, 0.0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(make_source_state(-1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn hwp_at_45_maps_psi_to_phi() {
        let hwp = Waveplate::half_wave(PI / 4.0);
        let phi_p = apply_idler_waveplate(&TwoPhotonState::bell(BellState::PsiPlus), &hwp);
        assert!(phi_p.approx_eq(&TwoPhotonState::bell(BellState::PhiPlus), 1e-12));
        let phi_m = apply_idler_waveplate(&TwoPhotonState::bell(BellState::PsiMinus), &hwp);
        assert!(phi_m.approx_eq(&TwoPhotonState::bell(BellState::PhiMinus), 1e-12));
    }

    #[test]
    fn hwp_at_zero_flips_idler_v() {
        let amps = [
            C::new(0.1, 0.2),
            C::new(0.3, -0.1),
            C::new(-0.5, 0.4),
            C::new(0.2, 0.6),
        ];
        let s = TwoPhotonState::normalized(amps).unwrap();
        let out = apply_idler_waveplate(&s, &Waveplate::half_wave(0.0));
        let (TwoPhotonState::Pure(a), TwoPhotonState::Pure(b)) = (&s, &out) else {
            panic!("pure in, pure out");
        };
        assert_abs_diff_eq!((b[0] - a[0]).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((b[1] + a[1]).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((b[2] - a[2]).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((b[3] + a[3]).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.trace(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hwp_45_on_psi_minus_matches_explicit_matrix_product() {
        // I (x) [[0,1],[1,0]] written out element by element
        let mut op = Matrix4::<C>::zeros();
        op[(0, 1)] = c(1.0);
        op[(1, 0)] = c(1.0);
        op[(2, 3)] = c(1.0);
        op[(3, 2)] = c(1.0);
        let psi_m = TwoPhotonState::bell(BellState::PsiMinus);
        let TwoPhotonState::Pure(v) = &psi_m else {
            unreachable!()
        };
        let expected = TwoPhotonState::Pure(op * v);
        let got = apply_idler_waveplate(&psi_m, &Waveplate::half_wave(PI / 4.0));
        assert!(got.approx_eq(&expected, 1e-12));
        assert!(expected.approx_eq(&TwoPhotonState::bell(BellState::PhiMinus), 1e-12));
    }

    #[test]
    fn quarter_wave_plate_is_unitary() {
        for a in [0.0, 0.3, 1.1, -2.0] {
            let j = Waveplate::quarter_wave(a).jones();
            let err = (j.adjoint() * j - Matrix2::identity())
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn psi_plus_joint_outcomes() {
        let psi = TwoPhotonState::bell(BellState::PsiPlus);
        let o = joint_outcome_probabilities(&psi, deg(45.0), deg(45.0));
        assert_abs_diff_eq!(o.pass_pass, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(o.pass_fail, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.fail_pass, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.fail_fail, 0.5, epsilon = 1e-12);

        let o = joint_outcome_probabilities(&psi, deg(45.0), deg(135.0));
        assert_abs_diff_eq!(o.pass_pass, 0.0, epsilon = 1e-12);

        // the coincidence bracket at 30/60 degrees is 0.75; pass-pass carries the 1/2
        let (t1, t2): (f64, f64) = (30f64.to_radians(), 60f64.to_radians());
        let bracket = t1.cos().powi(2) * t2.cos().powi(2)
            + t1.sin().powi(2) * t2.sin().powi(2)
            + 2.0 * t1.sin() * t1.cos() * t2.sin() * t2.cos();
        assert_abs_diff_eq!(bracket, 0.75, epsilon = 1e-12);
        let o = joint_outcome_probabilities(&psi, deg(30.0), deg(60.0));
        assert_abs_diff_eq!(o.pass_pass, 0.5 * bracket, epsilon = 1e-12);
    }

    #[test]
    fn marginals() {
        let psi = TwoPhotonState::bell(BellState::PsiPlus);
        for d in [0.0, 17.0, 45.0, 100.0] {
            assert_abs_diff_eq!(
                marginal_pass_probability(&psi, Channel::Signal, deg(d)),
                0.5,
                epsilon = 1e-12
            );
        }
        let hh = TwoPhotonState::pure([c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert_abs_diff_eq!(
            marginal_pass_probability(&hh, Channel::Signal, deg(0.0)),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn non_maximal_marginal_matches_partial_trace() {
        // c_H^2 = 0.8 means power ratio P_H/P_V = 2
        let s = make_source_state(2.0, 1.0, 0.4).unwrap();
        let TwoPhotonState::Pure(v) = &s else {
            unreachable!()
        };
        assert_abs_diff_eq!(v[0].norm_sqr(), 0.8, epsilon = 1e-12);
        for d in [0.0, 20.0, 45.0, 71.0, 90.0] {
            let th: f64 = f64::to_radians(d);
            // partial trace by hand: signal sees H with weight |a_HH|^2 + |a_HV|^2
            let p_h = v[0].norm_sqr() + v[1].norm_sqr();
            let p_v = v[2].norm_sqr() + v[3].norm_sqr();
            let expected = p_h * th.cos().powi(2) + p_v * th.sin().powi(2);
            assert_abs_diff_eq!(
                expected,
                0.8 * th.cos().powi(2) + 0.2 * th.sin().powi(2),
                epsilon = 1e-12
            );
            for ch in [Channel::Signal, Channel::Idler] {
                assert_abs_diff_eq!(
                    marginal_pass_probability(&s, ch, AnalyzerSetting(th)),
                    expected,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn mixed_state_validation() {
        let mut rho = Matrix4::<C>::identity() * c(0.25);
        assert!(TwoPhotonState::mixed(rho).is_ok());
        rho[(0, 1)] = C::new(0.0, 0.1);
        assert!(TwoPhotonState::mixed(rho).is_err());
        let neg = Matrix4::from_diagonal(&Vector4::new(c(1.2), c(-0.2), c(0.0), c(0.0)));
        assert!(TwoPhotonState::mixed(neg).is_err());
        let bad_trace = Matrix4::<C>::identity() * c(0.3);
        assert!(TwoPhotonState::mixed(bad_trace).is_err());
    }

    #[test]
    fn canonical_angle() {
        assert_abs_diff_eq!(
            AnalyzerSetting(PI + 0.25).canonical(),
            0.25,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            AnalyzerSetting(-0.25).canonical(),
            PI - 0.25,
            epsilon = 1e-12
        );
    }

    fn arb_state() -> impl Strategy<Value = TwoPhotonState> {
        (proptest::collection::vec(-1.0f64..1.0, 8), 0.0f64..1.0).prop_map(|(x, p)| {
            let amps = [
                C::new(x[0], x[1]),
                C::new(x[2], x[3]),
                C::new(x[4], x[5]),
                C::new(x[6], x[7] + 1e-3),
            ];
            let pure = TwoPhotonState::normalized(amps).unwrap();
            pure.mix(&TwoPhotonState::unpolarized(), p).unwrap()
        })
    }

    proptest! {
        #[test]
        fn joint_probabilities_form_a_distribution(
            s in arb_state(), a in -7.0f64..7.0, b in -7.0f64..7.0
        ) {
            let o = joint_outcome_probabilities(&s, AnalyzerSetting(a), AnalyzerSetting(b));
            for p in [o.pass_pass, o.pass_fail, o.fail_pass, o.fail_fail] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
            }
            prop_assert!((o.total() - 1.0).abs() < 1e-12);
            let ms = marginal_pass_probability(&s, Channel::Signal, AnalyzerSetting(a));
            prop_assert!((o.signal_pass() - ms).abs() < 1e-12);
        }

        #[test]
        fn waveplates_preserve_trace(
            s in arb_state(), ang in -4.0f64..4.0, quarter in any::<bool>()
        ) {
            let plate = if quarter { Waveplate::quarter_wave(ang) } else { Waveplate::half_wave(ang) };
            let out = apply_idler_waveplate(&s, &plate);
            prop_assert!((out.trace() - 1.0).abs() < 1e-12);
            prop_assert!((out.purity() - s.purity()).abs() < 1e-12);
        }

        #[test]
        fn psi_marginals_are_flat(th in -10.0f64..10.0, phi_p in -4.0f64..4.0) {
            let s = make_source_state(1.0, 1.0, phi_p).unwrap();
            let m = marginal_pass_probability(&s, Channel::Idler, AnalyzerSetting(th));
            prop_assert!((m - 0.5).abs() < 1e-12);
        }

        #[test]
        fn psi_plus_pass_pass_depends_on_angle_difference(a in -4.0f64..4.0, b in -4.0f64..4.0) {
            let psi = TwoPhotonState::bell(BellState::PsiPlus);
            let o = joint_outcome_probabilities(&psi, AnalyzerSetting(a), AnalyzerSetting(b));
            prop_assert!((o.pass_pass - 0.5 * (a - b).cos().powi(2)).abs() < 1e-12);
            prop_assert!((o.pass_pass + o.fail_fail - (a - b).cos().powi(2)).abs() < 1e-12);
        }
    }
}
