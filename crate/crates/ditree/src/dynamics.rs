//! Single-track car model: state/action types, the continuous-time
//! derivative, and fixed-step RK4 integration with post-step clamping.
//!
//! The model:
//!   ẋ = v·cos(ψ + c1·δ)      ẏ = v·sin(ψ + c1·δ)      ψ̇ = v·c2·δ
//!   v̇ = F_x·cos(c1·δ)/m      Ḋ = dD                    δ̇ = dδ
//!   F_x = (c_m1 − c_m2·v)·D − c_r2·v² − c_r0·tanh(c_r3·v)
//!
//! Throttle D, steering δ and velocity v are clamped to their bounds after
//! every integration step; the heading ψ is left unbounded and only wrapped
//! for metric/reporting purposes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * std::f64::consts::PI);
    if r > std::f64::consts::PI {
        r - 2.0 * std::f64::consts::PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub d: f64,
    pub delta: f64,
}

impl CarState {
    pub fn new(x: f64, y: f64, psi: f64, v: f64, d: f64, delta: f64) -> Self {
        Self { x, y, psi, v, d, delta }
    }

    pub fn zeros() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn pose(&self) -> crate::grid::Pose {
        crate::grid::Pose::new(self.x, self.y, self.psi)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.psi.is_finite()
            && self.v.is_finite()
            && self.d.is_finite()
            && self.delta.is_finite()
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.psi, self.v, self.d, self.delta]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarAction {
    pub dd: f64,
    pub ddelta: f64,
}

impl CarAction {
    pub fn new(dd: f64, ddelta: f64) -> Self {
        Self { dd, ddelta }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.dd.is_finite() && self.ddelta.is_finite()
    }

    /// Clamp both components to the control bounds.
    pub fn clamped(self, p: &CarParams) -> Self {
        Self::new(self.dd.clamp(-p.dd_max, p.dd_max), self.ddelta.clamp(-p.ddelta_max, p.ddelta_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarParams {
    pub m: f64,
    pub c1: f64,
    pub c2: f64,
    pub c_m1: f64,
    pub c_m2: f64,
    pub c_r0: f64,
    pub c_r2: f64,
    pub c_r3: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub dd_max: f64,
    pub ddelta_max: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        Self {
            m: 0.2,
            c1: 0.5,
            c2: 15.0,
            c_m1: 10.0,
            c_m2: 1.0,
            c_r0: 0.5,
            c_r2: 0.05,
            c_r3: 5.0,
            v_min: -1.0,
            v_max: 3.0,
            d_min: -1.0,
            d_max: 1.0,
            delta_min: -0.4,
            delta_max: 0.4,
            dd_max: 4.0,
            ddelta_max: 2.0,
        }
    }
}

impl CarParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.m, self.c1, self.c2, self.c_m1, self.c_m2, self.c_r0, self.c_r2, self.c_r3,
            self.v_min, self.v_max, self.d_min, self.d_max, self.delta_min, self.delta_max,
            self.dd_max, self.ddelta_max,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("car parameters must be finite".into()));
        }
        if !(self.m > 0.0) {
            return Err(Error::Config("car mass must be positive".into()));
        }
        if !(self.c_r3 > 0.0) {
            return Err(Error::Config("c_r3 must be positive".into()));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::Config("v_max must be positive".into()));
        }
        if self.v_min >= self.v_max
            || self.d_min >= self.d_max
            || self.delta_min >= self.delta_max
        {
            return Err(Error::Config("state bound intervals must be non-degenerate".into()));
        }
        if !(self.dd_max > 0.0) || !(self.ddelta_max > 0.0) {
            return Err(Error::Config("control bounds must be positive".into()));
        }
        Ok(())
    }

    /// True iff D, δ, v lie within their closed bound intervals.
    pub fn state_in_bounds(&self, s: &CarState) -> bool {
        s.d >= self.d_min
            && s.d <= self.d_max
            && s.delta >= self.delta_min
            && s.delta <= self.delta_max
            && s.v >= self.v_min
            && s.v <= self.v_max
    }
}

/// Time derivative of the state; same layout as `CarState::to_array`.
pub type StateDeriv = [f64; 6];

fn deriv_raw(s: &CarState, a: &CarAction, p: &CarParams) -> StateDeriv {
    let fx = (p.c_m1 - p.c_m2 * s.v) * s.d - p.c_r2 * s.v * s.v - p.c_r0 * (p.c_r3 * s.v).tanh();
    let heading = s.psi + p.c1 * s.delta;
    [
        s.v * heading.cos(),
        s.v * heading.sin(),
        s.v * p.c2 * s.delta,
        fx * (p.c1 * s.delta).cos() / p.m,
        a.dd,
        a.ddelta,
    ]
}

/// Continuous-time derivative of the car model.
pub fn derivative(s: &CarState, a: &CarAction, p: &CarParams) -> Result<StateDeriv> {
    if !s.is_finite() {
        return Err(Error::NonFinite("derivative state input"));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("derivative action input"));
    }
    Ok(deriv_raw(s, a, p))
}

/// One classical RK4 step of `dt`, then clamp D, δ, v to their bounds.
pub fn integrate_step(s: &CarState, a: &CarAction, dt: f64, p: &CarParams) -> Result<CarState> {
    assert!(dt > 0.0, "dt must be positive");
    if !s.is_finite() {
        return Err(Error::NonFinite("integrate_step state input"));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("integrate_step action input"));
    }
    let y0 = s.to_array();
    let stage = |k: &StateDeriv, h: f64| {
        let mut y = y0;
        for i in 0..6 {
            y[i] += h * k[i];
        }
        CarState::from_array(y)
    };
    let k1 = deriv_raw(s, a, p);
    let k2 = deriv_raw(&stage(&k1, 0.5 * dt), a, p);
    let k3 = deriv_raw(&stage(&k2, 0.5 * dt), a, p);
    let k4 = deriv_raw(&stage(&k3, dt), a, p);
    let mut y = y0;
    for i in 0..6 {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let mut out = CarState::from_array(y);
    out.d = out.d.clamp(p.d_min, p.d_max);
    out.delta = out.delta.clamp(p.delta_min, p.delta_max);
    out.v = out.v.clamp(p.v_min, p.v_max);
    if !out.is_finite() {
        return Err(Error::NonFinite("integrate_step result"));
    }
    Ok(out)
}

/// Roll `actions` out from `s0`; returns len(actions)+1 states starting at s0.
pub fn propagate(s0: &CarState, actions: &[CarAction], dt: f64, p: &CarParams) -> Result<Vec<CarState>> {
    assert!(!actions.is_empty(), "propagate needs at least one action");
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(*s0);
    for a in actions {
        let next = integrate_step(states.last().unwrap(), a, dt, p)?;
        states.push(next);
    }
    Ok(states)
}
