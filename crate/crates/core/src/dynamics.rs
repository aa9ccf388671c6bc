//! Planar surface-vessel model.
//!
//! Three degrees of freedom, body-frame velocities, linear drag and a four
//! thruster allocation (two longitudinal, two lateral). Coriolis and
//! centripetal terms are neglected since canal vessels sail slowly:
//!
//! ```text
//! d/dt (x, y, psi) = R(psi) * (surge, sway, yaw_rate)
//! d/dt (surge, sway, yaw_rate) = M^-1 (B u - D v)
//! ```

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Pose and body-frame velocity of one vessel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VesselState {
    pub x: f64,
    pub y: f64,
    /// Radians, kept in `(-pi, pi]`.
    pub heading: f64,
    /// Body-frame forward velocity.
    pub surge: f64,
    /// Body-frame lateral velocity (positive to port).
    pub sway: f64,
    pub yaw_rate: f64,
}

impl VesselState {
    pub fn at_rest(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
            ..Self::default()
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Velocity of the vessel origin in the world frame.
    pub fn world_velocity(&self) -> Vector2<f64> {
        let (s, c) = self.heading.sin_cos();
        Vector2::new(c * self.surge - s * self.sway, s * self.surge + c * self.sway)
    }

    /// Planar speed, identical in body and world frame.
    pub fn speed(&self) -> f64 {
        (self.surge * self.surge + self.sway * self.sway).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.heading, self.surge, self.sway, self.yaw_rate]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Time derivative of a [`VesselState`], same layout.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub surge: f64,
    pub sway: f64,
    pub yaw_rate: f64,
}

/// Thruster forces in newtons: `f1`, `f2` longitudinal, `f3`, `f4` lateral.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlInput(pub [f64; 4]);

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput([0.0; 4]);

    pub fn new(f1: f64, f2: f64, f3: f64, f4: f64) -> Self {
        Self([f1, f2, f3, f4])
    }

    /// Saturates every channel into `[-f_max, f_max]`.
    pub fn clamped(self, f_max: f64) -> Self {
        Self(self.0.map(|f| f.clamp(-f_max, f_max)))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|f| f * f).sum::<f64>().sqrt()
    }
}

impl std::ops::Add for ControlInput {
    type Output = ControlInput;

    fn add(self, rhs: ControlInput) -> ControlInput {
        ControlInput(std::array::from_fn(|c| self.0[c] + rhs.0[c]))
    }
}

/// Physical parameters of one vessel.
///
/// The mass, drag and thrust defaults are engineering values, not
/// measurements of any particular hull. Full thrust gives a terminal surge of
/// 4 m/s, so the 1.7 m/s speed limit sits well inside the envelope, and the
/// magnitudes are small enough that the default exploration noise moves the
/// boat noticeably within one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VesselParams {
    /// `(m11, m22, m33)`: surge and sway mass in kg, yaw inertia in kg m^2.
    #[serde(rename = "mass_diag")]
    pub mass_diag: [f64; 3],
    /// `(Xu, Yv, Nr)` linear drag coefficients.
    #[serde(rename = "drag_diag")]
    pub drag_diag: [f64; 3],
    /// Lever arm of the longitudinal thruster pair.
    #[serde(rename = "lever_a_m")]
    pub lever_a: f64,
    /// Lever arm of the lateral thruster pair.
    #[serde(rename = "lever_b_m")]
    pub lever_b: f64,
    #[serde(rename = "length_m")]
    pub length: f64,
    #[serde(rename = "width_m")]
    pub width: f64,
    #[serde(rename = "f_max_n")]
    pub f_max: f64,
    /// Speed limit used by the overspeed cost.
    #[serde(rename = "v_max_mps")]
    pub v_max: f64,
}

impl Default for VesselParams {
    fn default() -> Self {
        Self {
            mass_diag: [7.5, 7.5, 7.5],
            drag_diag: [2.5, 5.0, 5.0],
            lever_a: 2.0,
            lever_b: 1.0,
            length: 4.0,
            width: 1.8,
            f_max: 5.0,
            v_max: 1.7,
        }
    }
}

impl VesselParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.mass_diag.iter().any(|m| !(*m > 0.0)) {
            return Err("mass_diag entries must be strictly positive".into());
        }
        if self.drag_diag.iter().any(|d| !(*d > 0.0)) {
            return Err("drag_diag entries must be strictly positive".into());
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err("length_m and width_m must be positive".into());
        }
        if !(self.f_max > 0.0) {
            return Err("f_max_n must be positive".into());
        }
        if !(self.v_max > 0.0) {
            return Err("v_max_mps must be positive".into());
        }
        Ok(())
    }

    /// Generalized body forces `B u` = (surge force, sway force, yaw moment).
    pub fn body_forces(&self, u: &ControlInput) -> [f64; 3] {
        let [f1, f2, f3, f4] = u.0;
        [
            f1 + f2,
            f3 + f4,
            0.5 * self.lever_a * (f1 - f2) + 0.5 * self.lever_b * (f3 - f4),
        ]
    }

    /// Thruster allocation matrix `B` (3 x 4).
    pub fn allocation(&self) -> nalgebra::Matrix3x4<f64> {
        let (a, b) = (0.5 * self.lever_a, 0.5 * self.lever_b);
        nalgebra::Matrix3x4::new(1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, a, -a, b, -b)
    }

    /// Steady-state surge speed for a constant total longitudinal force.
    pub fn terminal_surge(&self, longitudinal_force: f64) -> f64 {
        longitudinal_force / self.drag_diag[0]
    }
}

/// Rotation from body to world frame about the vertical axis.
pub fn rotation_matrix(heading: f64) -> Matrix3<f64> {
    let (s, c) = heading.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn state_derivative(state: &VesselState, input: &ControlInput, params: &VesselParams) -> StateDerivative {
    let (s, c) = state.heading.sin_cos();
    let [fx, fy, mz] = params.body_forces(input);
    let [m11, m22, m33] = params.mass_diag;
    let [xu, yv, nr] = params.drag_diag;
    StateDerivative {
        x: c * state.surge - s * state.sway,
        y: s * state.surge + c * state.sway,
        heading: state.yaw_rate,
        surge: (fx - xu * state.surge) / m11,
        sway: (fy - yv * state.sway) / m22,
        yaw_rate: (mz - nr * state.yaw_rate) / m33,
    }
}

/// Same as [`state_derivative`], expressed with explicit matrices. Kept as a
/// cross-check for the scalar fast path.
pub fn state_derivative_matrix(state: &VesselState, input: &ControlInput, params: &VesselParams) -> StateDerivative {
    let v = Vector3::new(state.surge, state.sway, state.yaw_rate);
    let pos_dot = rotation_matrix(state.heading) * v;
    let m = Matrix3::from_diagonal(&Vector3::from(params.mass_diag));
    let d = Matrix3::from_diagonal(&Vector3::from(params.drag_diag));
    let u = nalgebra::Vector4::from(input.0);
    let m_inv = m.try_inverse().expect("mass matrix is positive diagonal");
    let vel_dot = m_inv * (params.allocation() * u - d * v);
    StateDerivative {
        x: pos_dot[0],
        y: pos_dot[1],
        heading: pos_dot[2],
        surge: vel_dot[0],
        sway: vel_dot[1],
        yaw_rate: vel_dot[2],
    }
}

/// One explicit Euler step. The input is saturated to the thruster limits
/// before integration; noise, if any, must already be part of `input`.
pub fn step(state: &VesselState, input: &ControlInput, dt: f64, params: &VesselParams) -> VesselState {
    let u = input.clamped(params.f_max);
    let d = state_derivative(state, &u, params);
    VesselState {
        x: state.x + dt * d.x,
        y: state.y + dt * d.y,
        heading: wrap_angle(state.heading + dt * d.heading),
        surge: state.surge + dt * d.surge,
        sway: state.sway + dt * d.sway,
        yaw_rate: state.yaw_rate + dt * d.yaw_rate,
    }
}

/// Integrates `substeps` Euler steps of `dt / substeps` under a held input.
pub fn step_substeps(
    state: &VesselState,
    input: &ControlInput,
    dt: f64,
    substeps: usize,
    params: &VesselParams,
) -> VesselState {
    let h = dt / substeps as f64;
    (0..substeps).fold(*state, |s, _| step(&s, input, h, params))
}

/// Kinetic energy `1/2 v^T M v` of the body-frame velocity.
pub fn kinetic_energy(state: &VesselState, params: &VesselParams) -> f64 {
    let [m11, m22, m33] = params.mass_diag;
    0.5 * (m11 * state.surge.powi(2) + m22 * state.sway.powi(2) + m33 * state.yaw_rate.powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn rotation_cases() {
        assert_eq!(rotation_matrix(0.0), Matrix3::identity());
        let v = rotation_matrix(PI / 2.0) * Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(v, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        let r = rotation_matrix(0.7) * rotation_matrix(-0.7);
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(rotation_matrix(1.3).determinant(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn equilibrium_has_zero_derivative() {
        let p = VesselParams::default();
        let d = state_derivative(&VesselState::at_rest(3.0, -2.0, 1.0), &ControlInput::ZERO, &p);
        assert_eq!(d, StateDerivative::default());
    }

    #[test]
    fn drag_balances_thrust() {
        let p = VesselParams::default();
        let v_star = 1.2;
        let f = p.drag_diag[0] * v_star;
        let s = VesselState {
            surge: v_star,
            ..Default::default()
        };
        let d = state_derivative(&s, &ControlInput::new(f / 2.0, f / 2.0, 0.0, 0.0), &p);
        assert_relative_eq!(d.surge, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn lateral_pair_gives_pure_sway() {
        let p = VesselParams::default();
        let f = 30.0;
        let d = state_derivative(
            &VesselState::default(),
            &ControlInput::new(0.0, 0.0, f / 2.0, f / 2.0),
            &p,
        );
        assert_relative_eq!(d.sway, f / p.mass_diag[1]);
        assert_eq!(d.yaw_rate, 0.0);
        assert_eq!(d.surge, 0.0);
    }

    #[test]
    fn scalar_and_matrix_forms_agree() {
        let p = VesselParams::default();
        let s = VesselState {
            x: 1.0,
            y: 2.0,
            heading: 0.4,
            surge: 0.8,
            sway: -0.3,
            yaw_rate: 0.1,
        };
        let u = ControlInput::new(12.0, -5.0, 3.0, 7.0);
        let a = state_derivative(&s, &u, &p);
        let b = state_derivative_matrix(&s, &u, &p);
        for (x, y) in [
            (a.x, b.x),
            (a.y, b.y),
            (a.heading, b.heading),
            (a.surge, b.surge),
            (a.sway, b.sway),
            (a.yaw_rate, b.yaw_rate),
        ] {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn equilibrium_is_fixpoint() {
        let p = VesselParams::default();
        let s = VesselState::at_rest(5.0, 5.0, -2.0);
        assert_eq!(step(&s, &ControlInput::ZERO, 0.37, &p), s);
    }

    #[test]
    fn saturation_applies_before_integration() {
        let p = VesselParams::default();
        let a = step(&VesselState::default(), &ControlInput::new(1e6, 1e6, 0.0, 0.0), 0.1, &p);
        let b = step(
            &VesselState::default(),
            &ControlInput::new(p.f_max, p.f_max, 0.0, 0.0),
            0.1,
            &p,
        );
        assert_eq!(a, b);
    }
}
