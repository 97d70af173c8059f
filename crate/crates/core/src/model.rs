//! Averaged PV-battery-ECPL bus model.
//!
//! The battery converter runs a cascaded PI loop (outer voltage loop producing the
//! current reference, inner current loop producing the duty ratio). PV and the
//! constant power load are folded into a single equivalent constant power load
//! `P_e = P_cpl - P_pv` drawn from the bus.
//!
//! Two right-hand sides are provided:
//!
//! * the 6-state full-order model over `[S_v, S_i, i_bat, v_bat, i_line, v_bus]`;
//! * the 2-state reduced-order model over `[S_v, v_bus]`, where the fast current loop
//!   and filter states are frozen to their algebraic values and the line resistance
//!   is neglected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Passive components and source data of the bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams<T> {
    /// Line resistance (Ω). Only the full-order model uses it.
    pub r_line: T,
    /// Line inductance (H).
    pub l_line: T,
    /// Battery filter inductance (H).
    pub l_bat: T,
    /// Battery filter capacitance (F).
    pub c_bat: T,
    /// Bus capacitance (F).
    pub c_bus: T,
    /// Battery (converter input) voltage (V).
    pub u_s: T,
    /// Lower current limit (A).
    pub i_low: T,
    /// Upper current limit (A).
    pub i_up: T,
    /// Per-unit power base (W).
    pub p_base: T,
}

impl<T: Scalar> Default for CircuitParams<T> {
    fn default() -> Self {
        Self {
            r_line: T::lit(0.01),
            l_line: T::lit(50e-6),
            l_bat: T::lit(100e-6),
            c_bat: T::lit(1e-3),
            c_bus: T::lit(5e-3),
            u_s: T::lit(50.0),
            i_low: T::lit(-10.0),
            i_up: T::lit(12.0),
            p_base: T::lit(1000.0),
        }
    }
}

fn require_positive<T: Scalar>(field: &'static str, v: T) -> Result<()> {
    if v.is_finite() && v > T::zero() {
        Ok(())
    } else {
        Err(Error::InvalidParam { field, reason: format!("must be > 0, got {v}") })
    }
}

impl<T: Scalar> CircuitParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_line.is_finite() && self.r_line >= T::zero()) {
            return Err(Error::InvalidParam { field: "r_line", reason: format!("must be >= 0, got {}", self.r_line) });
        }
        require_positive("l_line", self.l_line)?;
        require_positive("l_bat", self.l_bat)?;
        require_positive("c_bat", self.c_bat)?;
        require_positive("c_bus", self.c_bus)?;
        require_positive("u_s", self.u_s)?;
        require_positive("p_base", self.p_base)?;
        if !(self.i_low < self.i_up) {
            return Err(Error::InvalidParam {
                field: "i_low",
                reason: format!("must be below i_up ({} >= {})", self.i_low, self.i_up),
            });
        }
        Ok(())
    }

    /// Converts a per-unit power to watts.
    pub fn pu(&self, p_pu: T) -> T {
        p_pu * self.p_base
    }
}

/// PI gains of the battery converter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams<T> {
    /// Outer voltage loop proportional gain (A/V).
    pub k_pv: T,
    /// Outer voltage loop integral gain (A/(V·s)).
    pub k_iv: T,
    /// Inner current loop proportional gain (1/A).
    pub k_pi: T,
    /// Inner current loop integral gain (1/(A·s)).
    pub k_ii: T,
    /// Clamp the inner-loop current reference to `[i_low, i_up]`. Off by default.
    #[serde(default)]
    pub clamp_i_ref: bool,
}

impl<T: Scalar> Default for ControlParams<T> {
    fn default() -> Self {
        Self { k_pv: T::lit(0.2), k_iv: T::lit(4.0), k_pi: T::lit(0.01), k_ii: T::lit(20.0), clamp_i_ref: false }
    }
}

impl<T: Scalar> ControlParams<T> {
    pub fn validate(&self) -> Result<()> {
        require_positive("k_pv", self.k_pv)?;
        require_positive("k_iv", self.k_iv)?;
        require_positive("k_pi", self.k_pi)?;
        require_positive("k_ii", self.k_ii)
    }

    /// Returns a copy with both outer-loop gains multiplied by `factor`.
    pub fn scale_outer(&self, factor: T) -> Self {
        Self { k_pv: self.k_pv * factor, k_iv: self.k_iv * factor, ..*self }
    }
}

/// Operational mode index σ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Mode {
    /// CV charging near the upper voltage limit.
    One = 1,
    /// Droop charging above the rated voltage.
    Two = 2,
    /// Droop discharging below the rated voltage.
    Three = 3,
    /// CV discharging near the lower voltage limit.
    Four = 4,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::One, Mode::Two, Mode::Three, Mode::Four];

    pub fn index(self) -> u8 {
        self as u8
    }

    /// CV modes have a zero droop coefficient.
    pub fn is_cv(self) -> bool {
        matches!(self, Mode::One | Mode::Four)
    }
}

impl From<Mode> for u8 {
    fn from(m: Mode) -> u8 {
        m.index()
    }
}

impl TryFrom<u8> for Mode {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            4 => Ok(Mode::Four),
            _ => Err(Error::InvalidMode(format!("mode index must be 1..=4, got {v}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mode-{}", self.index())
    }
}

/// Control configuration of one mode: voltage reference and droop coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDef<T> {
    pub sigma: Mode,
    /// Reference voltage (V).
    pub u_ref: T,
    /// Droop coefficient (Ω); zero in CV modes.
    pub r_d: T,
}

impl<T: Scalar> ModeDef<T> {
    pub fn new(sigma: Mode, u_ref: T, r_d: T) -> Self {
        Self { sigma, u_ref, r_d }
    }

    pub fn is_cv(&self) -> bool {
        self.r_d == T::zero()
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("u_ref", self.u_ref)?;
        let ok = if self.sigma.is_cv() { self.r_d == T::zero() } else { self.r_d > T::zero() };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam {
                field: "r_d",
                reason: format!(
                    "{} requires r_d {} 0, got {}",
                    self.sigma,
                    if self.sigma.is_cv() { "=" } else { ">" },
                    self.r_d
                ),
            })
        }
    }
}

/// Per-mode control table, indexed by σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTable<T> {
    pub modes: [ModeDef<T>; 4],
}

impl<T: Scalar> Default for ModeTable<T> {
    fn default() -> Self {
        Self {
            modes: [
                ModeDef::new(Mode::One, T::lit(120.0), T::zero()),
                ModeDef::new(Mode::Two, T::lit(110.0), T::lit(1.0)),
                ModeDef::new(Mode::Three, T::lit(110.0), T::lit(0.83)),
                ModeDef::new(Mode::Four, T::lit(100.0), T::zero()),
            ],
        }
    }
}

impl<T: Scalar> ModeTable<T> {
    pub fn get(&self, m: Mode) -> ModeDef<T> {
        self.modes[m.index() as usize - 1]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, m) in self.modes.iter().enumerate() {
            if m.sigma.index() as usize != i + 1 {
                return Err(Error::InvalidParam {
                    field: "modes",
                    reason: format!("entry {} carries sigma {}", i + 1, m.sigma.index()),
                });
            }
            m.validate()?;
        }
        Ok(())
    }
}

/// Reduced-order state `[S_v, v_bus]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RomState<T> {
    /// Outer-loop integrator output (A).
    pub s_v: T,
    /// Bus voltage (V).
    pub v_bus: T,
}

impl<T: Scalar> RomState<T> {
    pub fn new(s_v: T, v_bus: T) -> Self {
        Self { s_v, v_bus }
    }

    pub fn to_array(self) -> [T; 2] {
        [self.s_v, self.v_bus]
    }

    pub fn from_array(x: [T; 2]) -> Self {
        Self { s_v: x[0], v_bus: x[1] }
    }
}

/// Full-order state `[S_v, S_i, i_bat, v_bat, i_line, v_bus]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FullState<T> {
    pub s_v: T,
    /// Inner-loop integrator output (duty ratio, dimensionless).
    pub s_i: T,
    pub i_bat: T,
    pub v_bat: T,
    pub i_line: T,
    pub v_bus: T,
}

impl<T: Scalar> FullState<T> {
    pub fn to_array(self) -> [T; 6] {
        [self.s_v, self.s_i, self.i_bat, self.v_bat, self.i_line, self.v_bus]
    }

    pub fn from_array(x: [T; 6]) -> Self {
        Self { s_v: x[0], s_i: x[1], i_bat: x[2], v_bat: x[3], i_line: x[4], v_bus: x[5] }
    }

    /// Projection onto the reduced-order coordinates.
    pub fn project(&self) -> RomState<T> {
        RomState::new(self.s_v, self.v_bus)
    }
}

/// Piecewise-constant ECPL power schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcplProfile<T> {
    /// `(t_start, P_e)` pairs, strictly increasing in time, first at `t = 0`.
    segments: Vec<(T, T)>,
}

impl<T: Scalar> EcplProfile<T> {
    pub fn new(segments: Vec<(T, T)>) -> Result<Self> {
        match segments.first() {
            None => {
                return Err(Error::InvalidParam {
                    field: "segments",
                    reason: "profile needs at least one segment".into(),
                })
            }
            Some(&(t, _)) if t != T::zero() => {
                return Err(Error::InvalidParam {
                    field: "segments",
                    reason: format!("first segment must start at t = 0, got {t}"),
                })
            }
            _ => {}
        }
        if segments.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidParam {
                field: "segments",
                reason: "segment start times must be strictly increasing".into(),
            });
        }
        if segments.iter().any(|(t, p)| !t.is_finite() || !p.is_finite()) {
            return Err(Error::InvalidParam { field: "segments", reason: "segment values must be finite".into() });
        }
        Ok(Self { segments })
    }

    /// Constant power for all time.
    pub fn constant(p_e: T) -> Self {
        Self { segments: vec![(T::zero(), p_e)] }
    }

    /// `p_before` until `t_step`, `p_after` afterwards.
    pub fn step(p_before: T, p_after: T, t_step: T) -> Result<Self> {
        Self::new(vec![(T::zero(), p_before), (t_step, p_after)])
    }

    pub fn segments(&self) -> &[(T, T)] {
        &self.segments
    }

    pub fn power_at(&self, t: T) -> T {
        let idx = self.segments.partition_point(|&(ts, _)| ts <= t);
        self.segments[idx.saturating_sub(1)].1
    }

    pub fn initial_power(&self) -> T {
        self.segments[0].1
    }

    pub fn final_power(&self) -> T {
        self.segments[self.segments.len() - 1].1
    }

    /// Start time of the last segment.
    pub fn last_step_time(&self) -> T {
        self.segments[self.segments.len() - 1].0
    }
}

/// Net ECPL power: positive means net consumption from the bus.
pub fn ecpl_power<T: Scalar>(p_cpl: T, p_pv: T) -> T {
    p_cpl - p_pv
}

/// Circuit and control parameters bundled; evaluates the model equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plant<T> {
    pub circuit: CircuitParams<T>,
    pub control: ControlParams<T>,
}

impl<T: Scalar> Default for Plant<T> {
    fn default() -> Self {
        Self { circuit: CircuitParams::default(), control: ControlParams::default() }
    }
}

impl<T: Scalar> Plant<T> {
    pub fn new(circuit: CircuitParams<T>, control: ControlParams<T>) -> Self {
        Self { circuit, control }
    }

    pub fn validate(&self) -> Result<()> {
        self.circuit.validate()?;
        self.control.validate()
    }

    fn clamp_ref(&self, i_ref: T) -> T {
        if self.control.clamp_i_ref {
            i_ref.max(self.circuit.i_low).min(self.circuit.i_up)
        } else {
            i_ref
        }
    }

    /// Algebraic line current of the reduced-order model.
    pub fn rom_iline(&self, s: RomState<T>, m: &ModeDef<T>) -> Result<T> {
        let c = &self.circuit;
        let k = &self.control;
        if !(s.v_bus > T::zero()) {
            return Err(Error::Domain(format!("v_bus = {} <= 0", s.v_bus)));
        }
        let denom = s.v_bus + c.u_s * k.k_pv * m.r_d;
        if !(denom > T::zero()) {
            return Err(Error::Domain(format!("v_bus + U_s k_Pv R_d = {denom} <= 0")));
        }
        let i_line = c.u_s / denom * (s.s_v + k.k_pv * (m.u_ref - s.v_bus));
        if k.clamp_i_ref {
            // i_line = U_s I_ref / v_bus with the reference saturated.
            let i_ref = self.clamp_ref(i_line * s.v_bus / c.u_s);
            Ok(c.u_s * i_ref / s.v_bus)
        } else {
            Ok(i_line)
        }
    }

    /// Inner-loop current reference `S_v + k_Pv (U_ref - R_d i_line - v_bus)`.
    pub fn i_ref(&self, s: RomState<T>, m: &ModeDef<T>) -> Result<T> {
        let i_line = self.rom_iline(s, m)?;
        let raw = s.s_v + self.control.k_pv * (m.u_ref - m.r_d * i_line - s.v_bus);
        Ok(self.clamp_ref(raw))
    }

    /// Reduced-order right-hand side `d/dt [S_v, v_bus]`.
    pub fn rom_rhs(&self, s: RomState<T>, m: &ModeDef<T>, p_e: T) -> Result<RomState<T>> {
        let i_line = self.rom_iline(s, m)?;
        Ok(RomState {
            s_v: self.control.k_iv * (m.u_ref - m.r_d * i_line - s.v_bus),
            v_bus: (i_line - p_e / s.v_bus) / self.circuit.c_bus,
        })
    }

    /// Full-order inner-loop current reference, with the droop acting on the line current.
    pub fn full_i_ref(&self, s: &FullState<T>, m: &ModeDef<T>) -> T {
        let u_oref = m.u_ref - m.r_d * s.i_line;
        self.clamp_ref(s.s_v + self.control.k_pv * (u_oref - s.v_bat))
    }

    /// Duty ratio of the battery converter for a full-order state.
    pub fn duty(&self, s: &FullState<T>, m: &ModeDef<T>) -> T {
        s.s_i + self.control.k_pi * (self.full_i_ref(s, m) - s.i_bat)
    }

    /// Full-order right-hand side.
    pub fn full_rhs(&self, s: FullState<T>, m: &ModeDef<T>, p_e: T) -> Result<FullState<T>> {
        let c = &self.circuit;
        let k = &self.control;
        if !(s.v_bus > T::zero()) {
            return Err(Error::Domain(format!("v_bus = {} <= 0", s.v_bus)));
        }
        if !(s.v_bat > T::zero()) {
            return Err(Error::Domain(format!("v_bat = {} <= 0", s.v_bat)));
        }
        let u_oref = m.u_ref - m.r_d * s.i_line;
        let err_i = self.full_i_ref(&s, m) - s.i_bat;
        let d = s.s_i + k.k_pi * err_i;
        let one_minus_d = T::one() - d;
        Ok(FullState {
            s_v: k.k_iv * (u_oref - s.v_bat),
            s_i: k.k_ii * err_i,
            i_bat: (c.u_s - one_minus_d * s.v_bat) / c.l_bat,
            v_bat: (one_minus_d * s.i_bat - s.i_line) / c.c_bat,
            i_line: (s.v_bat - c.r_line * s.i_line - s.v_bus) / c.l_line,
            v_bus: (s.i_line - p_e / s.v_bus) / c.c_bus,
        })
    }

    /// Algebraic steady states of the full-order model for one mode, highest `v_bus` first.
    ///
    /// With `R = R_d + R_line` the bus voltage solves `v² - U_ref v + R P_e = 0`.
    pub fn full_steady_states(&self, m: &ModeDef<T>, p_e: T) -> Vec<FullState<T>> {
        let c = &self.circuit;
        let r = m.r_d + c.r_line;
        let two = T::lit(2.0);
        let roots: Vec<T> = if r == T::zero() {
            vec![m.u_ref]
        } else {
            let disc = m.u_ref * m.u_ref - T::lit(4.0) * p_e * r;
            if disc < T::zero() {
                return Vec::new();
            }
            let sq = disc.sqrt();
            if sq == T::zero() {
                vec![m.u_ref / two]
            } else {
                vec![(m.u_ref + sq) / two, (m.u_ref - sq) / two]
            }
        };
        roots
            .into_iter()
            .filter(|&v| v > T::zero())
            .filter_map(|v_bus| {
                let i_line = p_e / v_bus;
                let v_bat = v_bus + c.r_line * i_line;
                if !(v_bat > T::zero()) {
                    return None;
                }
                let d = T::one() - c.u_s / v_bat;
                let i_bat = i_line * v_bat / c.u_s;
                if self.control.clamp_i_ref && (i_bat < c.i_low || i_bat > c.i_up) {
                    return None;
                }
                Some(FullState { s_v: i_bat, s_i: d, i_bat, v_bat, i_line, v_bus })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant() -> Plant<f64> {
        Plant::default()
    }

    fn mode(u: f64, r: f64, s: Mode) -> ModeDef<f64> {
        ModeDef::new(s, u, r)
    }

    #[test]
    fn ecpl_examples() {
        assert_eq!(ecpl_power(1300.0, 100.0), 1200.0);
        assert_eq!(ecpl_power(0.0, 1200.0), -1200.0);
        assert_eq!(ecpl_power(500.0, 500.0), 0.0);
    }

    #[test]
    fn rom_iline_examples() {
        let p = plant();
        let m1 = mode(120.0, 0.0, Mode::One);
        let il = p.rom_iline(RomState::new(-24.0, 120.0), &m1).unwrap();
        assert!((il + 10.0).abs() < 1e-12);
        assert!((il * 120.0 + 1200.0).abs() < 1e-9);

        for m in ModeTable::<f64>::default().modes {
            let il = p.rom_iline(RomState::new(0.0, m.u_ref), &m).unwrap();
            assert_eq!(il, 0.0);
        }

        let m3 = mode(110.0, 0.83, Mode::Three);
        let il = p.rom_iline(RomState::new(2.0, 109.2402), &m3).unwrap();
        assert!((il - 0.9154).abs() < 1e-4, "{il}");
        assert!((il - 100.0 / 109.2402).abs() < 1e-4);
    }

    #[test]
    fn rom_iline_domain_errors() {
        let p = plant();
        let m3 = mode(110.0, 0.83, Mode::Three);
        assert!(matches!(p.rom_iline(RomState::new(0.0, 0.0), &m3), Err(Error::Domain(_))));
        assert!(matches!(p.rom_iline(RomState::new(0.0, -5.0), &m3), Err(Error::Domain(_))));
        assert!(p.rom_rhs(RomState::new(0.0, -1.0), &m3, 0.0).is_err());
    }

    #[test]
    fn rom_rhs_examples() {
        let p = plant();
        let d = p.rom_rhs(RomState::new(-24.0, 120.0), &mode(120.0, 0.0, Mode::One), -1200.0).unwrap();
        assert!(d.s_v.abs() < 1e-12 && d.v_bus.abs() < 1e-9, "{d:?}");

        let d = p.rom_rhs(RomState::new(0.0, 110.0), &mode(110.0, 1.0, Mode::Two), 0.0).unwrap();
        assert_eq!(d, RomState::new(0.0, 0.0));

        // High-voltage droop root for Mode-3 at 100 W, evaluated at full precision.
        let v = 0.5 * (110.0 + (110.0f64 * 110.0 - 4.0 * 100.0 * 0.83).sqrt());
        let d = p.rom_rhs(RomState::new(2.0, v), &mode(110.0, 0.83, Mode::Three), 100.0).unwrap();
        assert!(d.s_v.abs() < 1e-6 && d.v_bus.abs() < 1e-6, "{d:?}");
    }

    #[test]
    fn i_ref_examples() {
        let p = plant();
        let m1 = mode(120.0, 0.0, Mode::One);
        assert!((p.i_ref(RomState::new(-24.0, 120.0), &m1).unwrap() + 24.0).abs() < 1e-12);
        assert_eq!(p.i_ref(RomState::new(0.0, 120.0), &m1).unwrap(), 0.0);
        // At any mode's equilibrium I_ref = P_e / U_s.
        let v = 0.5 * (110.0 + (110.0f64 * 110.0 - 4.0 * 100.0 * 0.83).sqrt());
        let ir = p.i_ref(RomState::new(2.0, v), &mode(110.0, 0.83, Mode::Three)).unwrap();
        assert!((ir - 100.0 / 50.0).abs() < 1e-9);
    }

    fn zero_rline() -> Plant<f64> {
        let mut p = plant();
        p.circuit.r_line = 0.0;
        p
    }

    #[test]
    fn full_rhs_steady_state() {
        let p = zero_rline();
        let m1 = mode(120.0, 0.0, Mode::One);
        let s =
            FullState { s_v: -24.0, s_i: 1.0 - 50.0 / 120.0, i_bat: -24.0, v_bat: 120.0, i_line: -10.0, v_bus: 120.0 };
        let d = p.full_rhs(s, &m1, -1200.0).unwrap();
        for x in d.to_array() {
            assert!(x.abs() < 1e-6, "{d:?}");
        }
        assert!((p.duty(&s, &m1) - 0.5833).abs() < 1e-4);

        let bumped = FullState { v_bus: 121.0, ..s };
        assert!(p.full_rhs(bumped, &m1, -1200.0).unwrap().v_bus < 0.0);
    }

    #[test]
    fn full_rhs_zero_current_equilibrium() {
        let p = plant();
        for m in ModeTable::<f64>::default().modes {
            let s = FullState {
                s_v: 0.0,
                s_i: 1.0 - 50.0 / m.u_ref,
                i_bat: 0.0,
                v_bat: m.u_ref,
                i_line: 0.0,
                v_bus: m.u_ref,
            };
            let d = p.full_rhs(s, &m, 0.0).unwrap();
            for x in d.to_array() {
                assert!(x.abs() < 1e-9, "{m:?} {d:?}");
            }
        }
    }

    #[test]
    fn full_steady_states_are_rest_points() {
        let p = plant();
        for m in ModeTable::<f64>::default().modes {
            for p_e in [-1500.0, -400.0, 0.0, 100.0, 900.0, 1300.0] {
                // The low root of a CV mode sits at v_bus ~ R_line P_e / U_ref; only the
                // operating root is checked at absolute tolerance.
                if let Some(&s) = p.full_steady_states(&m, p_e).first() {
                    let d = p.full_rhs(s, &m, p_e).unwrap();
                    for x in d.to_array() {
                        assert!(x.abs() < 1e-6, "{m:?} {p_e} {d:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn full_rhs_rejects_nonpositive_voltages() {
        let p = plant();
        let m1 = mode(120.0, 0.0, Mode::One);
        let s = FullState { v_bus: 0.0, v_bat: 120.0, ..Default::default() };
        assert!(p.full_rhs(s, &m1, 0.0).is_err());
        let s = FullState { v_bus: 120.0, v_bat: -1.0, ..Default::default() };
        assert!(p.full_rhs(s, &m1, 0.0).is_err());
    }

    #[test]
    fn defaults_validate() {
        let p = plant();
        p.validate().unwrap();
        ModeTable::<f64>::default().validate().unwrap();
        let mut bad = p;
        bad.circuit.c_bus = 0.0;
        assert!(matches!(bad.validate(), Err(Error::InvalidParam { field: "c_bus", .. })));
        let mut bad = p;
        bad.circuit.i_low = 20.0;
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.control.k_ii = -1.0;
        assert!(bad.validate().is_err());
        assert!(mode(110.0, 0.0, Mode::Two).validate().is_err());
        assert!(mode(120.0, 0.5, Mode::One).validate().is_err());
    }

    #[test]
    fn profile_validation_and_lookup() {
        assert!(EcplProfile::<f64>::new(vec![]).is_err());
        assert!(EcplProfile::new(vec![(0.5, 1.0)]).is_err());
        assert!(EcplProfile::new(vec![(0.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).is_err());
        let p = EcplProfile::step(100.0, -1200.0, 2.0).unwrap();
        assert_eq!(p.power_at(0.0), 100.0);
        assert_eq!(p.power_at(1.999), 100.0);
        assert_eq!(p.power_at(2.0), -1200.0);
        assert_eq!(p.final_power(), -1200.0);
        assert_eq!(p.last_step_time(), 2.0);
    }

    #[test]
    fn clamp_limits_reference() {
        let mut p = plant();
        p.control.clamp_i_ref = true;
        let m1 = mode(120.0, 0.0, Mode::One);
        let ir = p.i_ref(RomState::new(40.0, 100.0), &m1).unwrap();
        assert_eq!(ir, 12.0);
        let il = p.rom_iline(RomState::new(40.0, 100.0), &m1).unwrap();
        assert!((il - 50.0 * 12.0 / 100.0).abs() < 1e-12);
    }

    #[test]
    fn generic_over_f32() {
        let p: Plant<f32> = Plant::default();
        let m = ModeTable::<f32>::default().get(Mode::One);
        let d = p.rom_rhs(RomState::new(-24.0, 120.0), &m, -1200.0).unwrap();
        assert!(d.v_bus.abs() < 1e-2);
    }
}
