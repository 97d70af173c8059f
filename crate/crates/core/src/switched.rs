//! Bus-voltage-driven mode switching, switched simulation and stability verdicts.

use serde::{Deserialize, Serialize};

use crate::equilibria::{sep_of, Equilibrium};
use crate::error::{Error, Result};
use crate::integrator::{
    integrate_with, Control, Direction, EventAction, EventSpec, IntegratorConfig, RunOptions, Termination,
};
use crate::model::{EcplProfile, FullState, Mode, ModeDef, ModeTable, Plant, RomState};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Four voltage bands, clamped at both ends.
    Baseline,
    /// Baseline plus a forced Mode-1 at or below `v_min`.
    Scheduled,
    /// A single mode regardless of voltage.
    Frozen(Mode),
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StrategyKind::Baseline => f.write_str("baseline"),
            StrategyKind::Scheduled => f.write_str("scheduled"),
            StrategyKind::Frozen(m) => write!(f, "frozen-{}", m.index()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds<T> {
    pub v1: T,
    pub v2: T,
    pub vn: T,
    pub v3: T,
    pub v4: T,
    /// Mode-scheduling trigger level.
    pub v_min: T,
}

impl<T: Scalar> Default for Thresholds<T> {
    fn default() -> Self {
        let vn = T::lit(110.0);
        Self { v1: T::lit(130.0), v2: T::lit(120.0), vn, v3: T::lit(100.0), v4: T::lit(90.0), v_min: T::lit(0.9) * vn }
    }
}

impl<T: Scalar> Thresholds<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.v4 > T::zero() && self.v4 < self.v3 && self.v3 < self.vn && self.vn < self.v2 && self.v2 < self.v1) {
            return Err(Error::InvalidParam {
                field: "thresholds",
                reason: format!(
                    "need 0 < V4 < V3 < VN < V2 < V1, got {} {} {} {} {}",
                    self.v4, self.v3, self.vn, self.v2, self.v1
                ),
            });
        }
        if !(self.v_min > T::zero() && self.v_min < self.v3) {
            return Err(Error::InvalidParam {
                field: "v_min",
                reason: format!("need 0 < V_min < V3, got {}", self.v_min),
            });
        }
        Ok(())
    }
}

/// A switching level. At `v == level` the mode on the `low_inclusive` side applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary<T> {
    pub level: T,
    pub low_inclusive: bool,
}

impl<T: Scalar> Boundary<T> {
    /// Guard that is non-negative exactly on the side owning the level itself.
    pub fn guard(&self, v: T) -> T {
        if self.low_inclusive {
            self.level - v
        } else {
            v - self.level
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchingStrategy<T> {
    pub kind: StrategyKind,
    pub thresholds: Thresholds<T>,
    pub modes: ModeTable<T>,
}

impl<T: Scalar> SwitchingStrategy<T> {
    pub fn new(kind: StrategyKind, thresholds: Thresholds<T>, modes: ModeTable<T>) -> Self {
        Self { kind, thresholds, modes }
    }

    pub fn baseline() -> Self {
        Self::new(StrategyKind::Baseline, Thresholds::default(), ModeTable::default())
    }

    pub fn scheduled() -> Self {
        Self::new(StrategyKind::Scheduled, Thresholds::default(), ModeTable::default())
    }

    pub fn frozen(m: Mode) -> Self {
        Self::new(StrategyKind::Frozen(m), Thresholds::default(), ModeTable::default())
    }

    pub fn with_kind(&self, kind: StrategyKind) -> Self {
        Self { kind, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.modes.validate()
    }

    /// Mode selected at bus voltage `v`. Band edges follow the printed inclusivity:
    /// Mode-1 owns `V_2`, Mode-2 owns `V_N`, Mode-4 owns `V_3`, and Mode-1 owns
    /// `V_min` under scheduling. Voltages beyond `V_1`/`V_4` stay in the end modes.
    pub fn mode_of(&self, v: T) -> Mode {
        let th = &self.thresholds;
        match self.kind {
            StrategyKind::Frozen(m) => m,
            StrategyKind::Baseline | StrategyKind::Scheduled => {
                if v >= th.v2 {
                    Mode::One
                } else if self.kind == StrategyKind::Scheduled && v <= th.v_min {
                    Mode::One
                } else if v >= th.vn {
                    Mode::Two
                } else if v > th.v3 {
                    Mode::Three
                } else {
                    Mode::Four
                }
            }
        }
    }

    pub fn mode_def(&self, v: T) -> ModeDef<T> {
        self.modes.get(self.mode_of(v))
    }

    pub fn boundaries(&self) -> Vec<Boundary<T>> {
        let th = &self.thresholds;
        match self.kind {
            StrategyKind::Frozen(_) => Vec::new(),
            StrategyKind::Baseline => vec![
                Boundary { level: th.v2, low_inclusive: false },
                Boundary { level: th.vn, low_inclusive: false },
                Boundary { level: th.v3, low_inclusive: true },
            ],
            StrategyKind::Scheduled => vec![
                Boundary { level: th.v2, low_inclusive: false },
                Boundary { level: th.vn, low_inclusive: false },
                Boundary { level: th.v3, low_inclusive: true },
                Boundary { level: th.v_min, low_inclusive: true },
            ],
        }
    }
}

/// Reduced-order or full-order vector field seen through a common interface.
pub trait SwitchedModel<T: Scalar, const N: usize>: Sync {
    fn plant(&self) -> &Plant<T>;
    fn rhs(&self, x: &[T; N], m: &ModeDef<T>, p_e: T) -> Result<[T; N]>;
    /// Position of `v_bus` in the state vector.
    const V_INDEX: usize;
    fn v_bus(x: &[T; N]) -> T {
        x[Self::V_INDEX]
    }
    fn project(x: &[T; N]) -> RomState<T>;
    /// This model's rest point corresponding to a reduced-order SEP.
    fn rest_point(&self, sep: &Equilibrium<T>) -> Option<RomState<T>>;
}

#[derive(Debug, Clone, Copy)]
pub struct RomModel<T> {
    pub plant: Plant<T>,
}

impl<T: Scalar> SwitchedModel<T, 2> for RomModel<T> {
    fn plant(&self) -> &Plant<T> {
        &self.plant
    }

    fn rhs(&self, x: &[T; 2], m: &ModeDef<T>, p_e: T) -> Result<[T; 2]> {
        Ok(self.plant.rom_rhs(RomState::from_array(*x), m, p_e)?.to_array())
    }

    const V_INDEX: usize = 1;

    fn project(x: &[T; 2]) -> RomState<T> {
        RomState::from_array(*x)
    }

    fn rest_point(&self, sep: &Equilibrium<T>) -> Option<RomState<T>> {
        Some(sep.point)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FullModel<T> {
    pub plant: Plant<T>,
}

impl<T: Scalar> SwitchedModel<T, 6> for FullModel<T> {
    fn plant(&self) -> &Plant<T> {
        &self.plant
    }

    fn rhs(&self, x: &[T; 6], m: &ModeDef<T>, p_e: T) -> Result<[T; 6]> {
        Ok(self.plant.full_rhs(FullState::from_array(*x), m, p_e)?.to_array())
    }

    const V_INDEX: usize = 5;

    fn project(x: &[T; 6]) -> RomState<T> {
        RomState::new(x[0], x[5])
    }

    fn rest_point(&self, sep: &Equilibrium<T>) -> Option<RomState<T>> {
        // Closest full-order steady state to the reduced-order SEP.
        self.plant
            .full_steady_states(&sep.mode, sep.p_e)
            .into_iter()
            .map(|s| s.project())
            .min_by(|a, b| (a.v_bus - sep.point.v_bus).abs().partial_cmp(&(b.v_bus - sep.point.v_bus).abs()).unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T> {
    pub integrator: IntegratorConfig<T>,
    /// Total simulated time (s).
    pub horizon: T,
    /// Bus collapse level (V).
    pub v_collapse: T,
    /// Over-voltage level (V).
    pub v_ceiling: T,
    /// Trailing window that must stay within the convergence band (s).
    pub window: T,
    /// Relative band on `v_bus`.
    pub v_band: T,
    /// Relative band on `S_v`, against `max(|S_ve|, sv_floor)`.
    pub sv_band: T,
    pub sv_floor: T,
    /// End the run as soon as the convergence window is satisfied.
    pub stop_when_settled: bool,
    /// Guard against Zeno chattering along a boundary.
    pub max_switches: usize,
    /// A settled state must also be at rest: each rate below this fraction of its typical
    /// scale (`k_Iv v_bus` for `S_v`, `P_base / (C_bus v_bus)` for `v_bus`).
    pub rest_tol: T,
}

impl<T: Scalar> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            horizon: T::lit(10.0),
            v_collapse: T::lit(20.0),
            v_ceiling: T::lit(300.0),
            window: T::lit(0.2),
            v_band: T::lit(0.005),
            sv_band: T::lit(0.01),
            sv_floor: T::one(),
            stop_when_settled: true,
            max_switches: 100_000,
            rest_tol: T::lit(1e-4),
        }
    }
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        let bad = |field, reason: String| Err(Error::InvalidParam { field, reason });
        if !(self.horizon > T::zero()) {
            return bad("horizon", format!("must be > 0, got {}", self.horizon));
        }
        if !(self.v_collapse >= T::zero() && self.v_collapse < self.v_ceiling) {
            return bad("v_collapse", format!("need 0 <= v_collapse < v_ceiling, got {}", self.v_collapse));
        }
        if !(self.window > T::zero()
            && self.v_band > T::zero()
            && self.sv_band > T::zero()
            && self.sv_floor > T::zero())
        {
            return bad("window", "window and bands must be > 0".into());
        }
        if !(self.rest_tol > T::zero()) {
            return bad("rest_tol", format!("must be > 0, got {}", self.rest_tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Stable,
    Unstable,
    Undecided,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Outcome::Stable => "Stable",
            Outcome::Unstable => "Unstable",
            Outcome::Undecided => "Undecided",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// `v_bus` fell to the collapse level.
    Collapse,
    /// `v_bus` rose to the ceiling.
    Ceiling,
    /// A state component became non-finite.
    Divergence,
    /// The vector field rejected the state.
    ValidityExit,
    /// Step-size underflow or step budget exhausted.
    Stalled,
    /// Too many switches (chattering).
    Chattering,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict<T> {
    pub outcome: Outcome,
    pub trigger: Option<Trigger>,
    pub final_mode: Mode,
    pub final_state: RomState<T>,
    pub final_time: T,
    /// Time from the last power step until the state entered the band for good.
    pub convergence_time: Option<T>,
    pub esep: Equilibrium<T>,
    /// ESEP in the simulated model's coordinates.
    pub target: RomState<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent<T> {
    pub t: T,
    pub from: Mode,
    pub to: Mode,
    pub v_bus: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajSample<T, const N: usize> {
    pub t: T,
    pub x: [T; N],
    pub mode: Mode,
    pub p_e: T,
}

/// An interval spent sliding along a threshold, where the modes on both sides push the state
/// onto it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlideSegment<T> {
    pub t_start: T,
    pub t_end: T,
    pub level: T,
    pub above: Mode,
    pub below: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T, const N: usize> {
    pub samples: Vec<TrajSample<T, N>>,
    pub switches: Vec<SwitchEvent<T>>,
    pub slides: Vec<SlideSegment<T>>,
}

/// True if a boundary-located SEP is approached from the neighbouring band.
fn boundary_attracting<T: Scalar>(plant: &Plant<T>, strat: &SwitchingStrategy<T>, sep: &Equilibrium<T>) -> bool {
    let v = sep.point.v_bus;
    for b in strat.boundaries() {
        if (v - b.level).abs() > T::lit(1e-9) * b.level {
            continue;
        }
        let delta = T::lit(1e-6) * b.level;
        let (other_v, from_above) = if strat.mode_of(b.level + delta) != sep.mode.sigma {
            (b.level + delta, true)
        } else {
            (b.level - delta, false)
        };
        let other = strat.mode_def(other_v);
        let Ok(d) = plant.rom_rhs(sep.point, &other, sep.p_e) else {
            return false;
        };
        if (from_above && d.v_bus > T::zero()) || (!from_above && d.v_bus < T::zero()) {
            return false;
        }
    }
    true
}

/// Modes whose SEP at `p_e` is an attracting rest point of the switched system.
pub fn esep_candidates<T: Scalar>(plant: &Plant<T>, strat: &SwitchingStrategy<T>, p_e: T) -> Vec<Equilibrium<T>> {
    let modes: Vec<Mode> = match strat.kind {
        StrategyKind::Frozen(m) => vec![m],
        _ => Mode::ALL.to_vec(),
    };
    let mut out: Vec<Equilibrium<T>> = Vec::new();
    for m in modes {
        let Some(sep) = sep_of(plant, p_e, &strat.modes.get(m)) else {
            continue;
        };
        if strat.mode_of(sep.point.v_bus) != m || !boundary_attracting(plant, strat, &sep) {
            continue;
        }
        let dup = out.iter().any(|e| {
            (e.point.v_bus - sep.point.v_bus).abs() <= T::lit(1e-9) * sep.point.v_bus
                && (e.point.s_v - sep.point.s_v).abs() <= T::lit(1e-9) * sep.point.s_v.abs().max(T::one())
        });
        if !dup {
            out.push(sep);
        }
    }
    out
}

/// Expected mode and expected SEP after the final power step.
pub fn esep_of<T: Scalar>(
    plant: &Plant<T>,
    strat: &SwitchingStrategy<T>,
    p_e: T,
    hint: Option<Mode>,
) -> Result<(Mode, Equilibrium<T>)> {
    let cands = esep_candidates(plant, strat, p_e);
    match cands.len() {
        0 => Err(Error::NoEsep { p_e: p_e.as_f64() }),
        1 => Ok((cands[0].mode.sigma, cands[0])),
        _ => match hint.and_then(|h| cands.iter().find(|e| e.mode.sigma == h)) {
            Some(e) => Ok((e.mode.sigma, *e)),
            None => Err(Error::AmbiguousEsep {
                p_e: p_e.as_f64(),
                candidates: cands.iter().map(|e| e.mode.sigma.index()).collect(),
            }),
        },
    }
}

/// Initial stable equilibrium of `mode` at `p_e` (reduced-order coordinates).
pub fn isep_of<T: Scalar>(plant: &Plant<T>, modes: &ModeTable<T>, mode: Mode, p_e: T) -> Result<RomState<T>> {
    sep_of(plant, p_e, &modes.get(mode)).map(|e| e.point).ok_or(Error::NoSep { mode: mode.index(), p_e: p_e.as_f64() })
}

/// Full-order steady state of `mode` at `p_e`, on the stable (high-voltage) branch.
pub fn isep_full_of<T: Scalar>(plant: &Plant<T>, modes: &ModeTable<T>, mode: Mode, p_e: T) -> Result<FullState<T>> {
    let m = modes.get(mode);
    sep_of(plant, p_e, &m).ok_or(Error::NoSep { mode: mode.index(), p_e: p_e.as_f64() })?;
    plant.full_steady_states(&m, p_e).into_iter().next().ok_or(Error::NoSep { mode: mode.index(), p_e: p_e.as_f64() })
}

struct SettleTracker<T> {
    target: RomState<T>,
    after: T,
    since: Option<T>,
    rest: bool,
}

impl<T: Scalar> SettleTracker<T> {
    fn in_band(&self, s: RomState<T>, cfg: &SimConfig<T>) -> bool {
        let tv = self.target.v_bus;
        let ts = self.target.s_v;
        (s.v_bus - tv).abs() <= cfg.v_band * tv.abs() && (s.s_v - ts).abs() <= cfg.sv_band * ts.abs().max(cfg.sv_floor)
    }

    /// Tracks the band; true once the window is complete and the state is at rest.
    fn update(&mut self, t: T, s: RomState<T>, at_rest: bool, cfg: &SimConfig<T>) -> bool {
        if t >= self.after && self.in_band(s, cfg) {
            let since = *self.since.get_or_insert(t);
            self.rest = at_rest;
            t - since >= cfg.window && at_rest
        } else {
            self.since = None;
            self.rest = false;
            false
        }
    }
}

/// Options for a single switched run beyond the simulation config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunSpec {
    /// Mode hint used only to break ESEP ties.
    pub expected_mode: Option<Mode>,
    /// Keep every accepted step in the trajectory.
    pub record: bool,
}

/// Integrates the switched system from `x0` under `strat` and `profile` and renders a verdict.
pub fn simulate_switched<T, M, const N: usize>(
    model: &M,
    x0: [T; N],
    strat: &SwitchingStrategy<T>,
    profile: &EcplProfile<T>,
    cfg: &SimConfig<T>,
    spec: RunSpec,
) -> Result<(Trajectory<T, N>, Verdict<T>)>
where
    T: Scalar,
    M: SwitchedModel<T, N>,
{
    let plant = model.plant();
    let (_, esep) = esep_of(plant, strat, profile.final_power(), spec.expected_mode)?;
    let target = model.rest_point(&esep).unwrap_or(esep.point);
    let mut tracker = SettleTracker { target, after: profile.last_step_time(), since: None, rest: false };

    let boundaries = strat.boundaries();
    let mut events: Vec<EventSpec<'_, T, N>> = boundaries
        .iter()
        .map(|b| {
            let b = *b;
            EventSpec::new(move |_, x: &[T; N]| b.guard(M::v_bus(x)), Direction::Either, EventAction::Stop)
        })
        .collect();
    let n_bound = events.len();
    let (v_collapse, v_ceiling) = (cfg.v_collapse, cfg.v_ceiling);
    events.push(EventSpec::new(move |_, x: &[T; N]| M::v_bus(x) - v_collapse, Direction::Falling, EventAction::Stop));
    events.push(EventSpec::new(move |_, x: &[T; N]| M::v_bus(x) - v_ceiling, Direction::Rising, EventAction::Stop));

    let mut t = T::zero();
    let mut x = x0;
    let mut mode = strat.mode_of(M::v_bus(&x));
    let mut traj = Trajectory { samples: Vec::new(), switches: Vec::new(), slides: Vec::new() };
    let push = |traj: &mut Trajectory<T, N>, t: T, x: [T; N], mode: Mode| {
        traj.samples.push(TrajSample { t, x, mode, p_e: profile.power_at(t) });
    };
    push(&mut traj, t, x, mode);

    let mut icfg = cfg.integrator;
    let seg_ends: Vec<T> = profile
        .segments()
        .iter()
        .skip(1)
        .map(|s| s.0)
        .filter(|&ts| ts < cfg.horizon)
        .chain(std::iter::once(cfg.horizon))
        .collect();

    let mut settled = false;
    let mut trigger: Option<Trigger> = None;
    let mut stalled = false;
    let mut slide: Option<SlideSegment<T>> = None;
    let v_ix = M::V_INDEX;

    'segments: for &seg_end in &seg_ends {
        let p_e = profile.power_at(t);
        if let Some(sl) = slide {
            // A power step can break the sliding condition.
            if let Some(side) = sliding_side(model, &x, strat, sl.above, sl.below, p_e)? {
                close_slide(&mut traj, &mut slide, t);
                if side != mode {
                    traj.switches.push(SwitchEvent { t, from: mode, to: side, v_bus: M::v_bus(&x) });
                    mode = side;
                }
            }
        }
        while t < seg_end {
            let sol = if let Some(sl) = slide {
                let (ma, mb) = (strat.modes.get(sl.above), strat.modes.get(sl.below));
                let rhs = |_: T, y: &[T; N]| filippov(model, y, &ma, &mb, p_e);
                let exits: [EventSpec<'_, T, N>; 2] = [
                    EventSpec::new(
                        move |_, y: &[T; N]| model.rhs(y, &ma, p_e).map(|d| d[v_ix]).unwrap_or(T::zero()),
                        Direction::Rising,
                        EventAction::Stop,
                    ),
                    EventSpec::new(
                        move |_, y: &[T; N]| model.rhs(y, &mb, p_e).map(|d| d[v_ix]).unwrap_or(T::zero()),
                        Direction::Falling,
                        EventAction::Stop,
                    ),
                ];
                integrate_with(
                    &rhs,
                    x,
                    t,
                    seg_end,
                    &icfg,
                    &exits,
                    RunOptions { record_samples: spec.record },
                    |tt, y| {
                        let rest = at_rest::<T, M, N>(plant, &rhs(tt, y), y, cfg);
                        if tracker.update(tt, M::project(y), rest, cfg) && cfg.stop_when_settled {
                            Control::Stop
                        } else {
                            Control::Continue
                        }
                    },
                )
            } else {
                let mdef = strat.modes.get(mode);
                let rhs = |_: T, y: &[T; N]| model.rhs(y, &mdef, p_e);
                integrate_with(
                    &rhs,
                    x,
                    t,
                    seg_end,
                    &icfg,
                    &events,
                    RunOptions { record_samples: spec.record },
                    |tt, y| {
                        let rest = at_rest::<T, M, N>(plant, &rhs(tt, y), y, cfg);
                        if tracker.update(tt, M::project(y), rest, cfg) && cfg.stop_when_settled {
                            Control::Stop
                        } else {
                            Control::Continue
                        }
                    },
                )
            };
            for s in sol.samples.iter().skip(1) {
                push(&mut traj, s.t, s.x, mode);
            }
            let last = *sol.last();
            if !spec.record && traj.samples.last().map(|p| p.t != last.t).unwrap_or(true) {
                // Keep only the endpoint of each integration piece.
                push(&mut traj, last.t, last.x, mode);
            }
            t = last.t;
            x = last.x;
            icfg.h_init = sol.last_h.max(cfg.integrator.h_min).min(cfg.integrator.h_max);
            match (sol.termination, slide) {
                (Termination::Completed, _) => {
                    t = seg_end;
                }
                (Termination::Monitor, _) => {
                    settled = true;
                    break 'segments;
                }
                (Termination::Event(i), Some(sl)) => {
                    let next = if i == 0 { sl.above } else { sl.below };
                    close_slide(&mut traj, &mut slide, t);
                    if next != mode {
                        traj.switches.push(SwitchEvent { t, from: mode, to: next, v_bus: M::v_bus(&x) });
                        mode = next;
                        if let Some(s) = traj.samples.last_mut() {
                            s.mode = mode;
                        }
                    }
                }
                (Termination::Event(i), None) if i < n_bound => {
                    let b = boundaries[i];
                    let delta = T::lit(1e-9) * b.level.abs().max(T::one());
                    let (above, below) = (strat.mode_of(b.level + delta), strat.mode_of(b.level - delta));
                    let next = strat.mode_of(M::v_bus(&x));
                    let attracting = sliding_side(model, &x, strat, above, below, p_e)?.is_none();
                    if attracting {
                        x[v_ix] = b.level;
                        slide = Some(SlideSegment { t_start: t, t_end: t, level: b.level, above, below });
                    }
                    let next = if attracting { strat.mode_of(b.level) } else { next };
                    if next != mode {
                        traj.switches.push(SwitchEvent { t, from: mode, to: next, v_bus: M::v_bus(&x) });
                        mode = next;
                        if let Some(s) = traj.samples.last_mut() {
                            s.mode = mode;
                            s.x = x;
                        }
                        if traj.switches.len() >= cfg.max_switches {
                            trigger = Some(Trigger::Chattering);
                            break 'segments;
                        }
                    }
                }
                (Termination::Event(i), None) if i == n_bound => {
                    trigger = Some(Trigger::Collapse);
                    break 'segments;
                }
                (Termination::Event(_), None) => {
                    trigger = Some(Trigger::Ceiling);
                    break 'segments;
                }
                (Termination::LeftValidity { reason, .. }, _) => {
                    trigger =
                        Some(if reason.contains("non-finite") { Trigger::Divergence } else { Trigger::ValidityExit });
                    break 'segments;
                }
                (Termination::StepUnderflow { .. } | Termination::MaxSteps, _) => {
                    stalled = true;
                    break 'segments;
                }
            }
        }
    }
    close_slide(&mut traj, &mut slide, t);

    let final_state = M::project(&x);
    let (outcome, trigger) = if let Some(tr) = trigger {
        match tr {
            Trigger::Chattering => (Outcome::Undecided, Some(tr)),
            _ => (Outcome::Unstable, Some(tr)),
        }
    } else if stalled && final_state.v_bus <= cfg.v_collapse {
        // Stalled on the v_bus -> 0 singularity after starting below the collapse level.
        (Outcome::Unstable, Some(Trigger::Collapse))
    } else if stalled {
        (Outcome::Undecided, Some(Trigger::Stalled))
    } else if settled || (tracker.rest && tracker.since.map(|s| t - s >= cfg.window).unwrap_or(false)) {
        (Outcome::Stable, None)
    } else {
        (Outcome::Undecided, None)
    };
    let convergence_time = if outcome == Outcome::Stable { tracker.since.map(|s| s - tracker.after) } else { None };
    let verdict =
        Verdict { outcome, trigger, final_mode: mode, final_state, final_time: t, convergence_time, esep, target };
    Ok((traj, verdict))
}

fn at_rest<T, M, const N: usize>(plant: &Plant<T>, f: &Result<[T; N]>, y: &[T; N], cfg: &SimConfig<T>) -> bool
where
    T: Scalar,
    M: SwitchedModel<T, N>,
{
    let Ok(f) = f else { return false };
    let v = M::v_bus(y).abs().max(T::one());
    let s_scale = plant.control.k_iv * v;
    let v_scale = plant.circuit.p_base / (plant.circuit.c_bus * v);
    f[0].abs() <= cfg.rest_tol * s_scale && f[M::V_INDEX].abs() <= cfg.rest_tol * v_scale
}

fn close_slide<T: Scalar, const N: usize>(traj: &mut Trajectory<T, N>, slide: &mut Option<SlideSegment<T>>, t: T) {
    if let Some(mut sl) = slide.take() {
        sl.t_end = t;
        traj.slides.push(sl);
    }
}

/// `None` when both modes push `v_bus` onto the threshold at `x`; otherwise the mode that
/// carries the state away from it.
fn sliding_side<T, M, const N: usize>(
    model: &M,
    x: &[T; N],
    strat: &SwitchingStrategy<T>,
    above: Mode,
    below: Mode,
    p_e: T,
) -> Result<Option<Mode>>
where
    T: Scalar,
    M: SwitchedModel<T, N>,
{
    let va = model.rhs(x, &strat.modes.get(above), p_e)?[M::V_INDEX];
    let vb = model.rhs(x, &strat.modes.get(below), p_e)?[M::V_INDEX];
    Ok(if va < T::zero() && vb > T::zero() {
        None
    } else if va >= T::zero() {
        Some(above)
    } else {
        Some(below)
    })
}

/// Convex combination of the two modes' fields with zero `v_bus` rate.
fn filippov<T, M, const N: usize>(model: &M, y: &[T; N], ma: &ModeDef<T>, mb: &ModeDef<T>, p_e: T) -> Result<[T; N]>
where
    T: Scalar,
    M: SwitchedModel<T, N>,
{
    let fa = model.rhs(y, ma, p_e)?;
    let fb = model.rhs(y, mb, p_e)?;
    let (va, vb) = (fa[M::V_INDEX], fb[M::V_INDEX]);
    let alpha = if vb != va { (vb / (vb - va)).max(T::zero()).min(T::one()) } else { T::lit(0.5) };
    let mut out = [T::zero(); N];
    for i in 0..N {
        out[i] = alpha * fa[i] + (T::one() - alpha) * fb[i];
    }
    out[M::V_INDEX] = T::zero();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rom() -> RomModel<f64> {
        RomModel { plant: Plant::default() }
    }

    #[test]
    fn mode_of_examples() {
        let b = SwitchingStrategy::<f64>::baseline();
        assert_eq!(b.mode_of(115.0), Mode::Two);
        assert_eq!(b.mode_of(120.0), Mode::One);
        assert_eq!(b.mode_of(110.0), Mode::Two);
        assert_eq!(b.mode_of(109.99), Mode::Three);
        assert_eq!(b.mode_of(100.0), Mode::Four);
        assert_eq!(b.mode_of(100.01), Mode::Three);
        assert_eq!(b.mode_of(300.0), Mode::One);
        assert_eq!(b.mode_of(5.0), Mode::Four);
        let s = SwitchingStrategy::<f64>::scheduled();
        assert_eq!(s.thresholds.v_min, 99.0);
        assert_eq!(s.mode_of(95.0), Mode::One);
        assert_eq!(s.mode_of(99.0), Mode::One);
        assert_eq!(s.mode_of(99.5), Mode::Four);
        assert_eq!(s.mode_of(100.0), Mode::Four);
        assert_eq!(SwitchingStrategy::<f64>::frozen(Mode::Three).mode_of(5.0), Mode::Three);
    }

    #[test]
    fn boundary_guards_agree_with_mode_map() {
        for strat in [SwitchingStrategy::<f64>::baseline(), SwitchingStrategy::scheduled()] {
            for b in strat.boundaries() {
                let at = strat.mode_of(b.level);
                let above = strat.mode_of(b.level + 1e-6);
                let below = strat.mode_of(b.level - 1e-6);
                assert_ne!(above, below);
                if b.low_inclusive {
                    assert_eq!(at, below);
                } else {
                    assert_eq!(at, above);
                }
                assert!(b.guard(b.level) >= 0.0);
            }
        }
    }

    #[test]
    fn thresholds_validate() {
        Thresholds::<f64>::default().validate().unwrap();
        let bad = Thresholds { v3: 115.0, ..Thresholds::<f64>::default() };
        assert!(bad.validate().is_err());
        let bad = Thresholds { v_min: 100.0, ..Thresholds::<f64>::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn isep_examples() {
        let p = Plant::<f64>::default();
        let t = ModeTable::default();
        let s = isep_of(&p, &t, Mode::One, -1200.0).unwrap();
        assert!((s.s_v + 24.0).abs() < 1e-12 && (s.v_bus - 120.0).abs() < 1e-12);
        let s = isep_of(&p, &t, Mode::Three, 100.0).unwrap();
        assert_eq!(s.s_v, 2.0);
        assert!((s.v_bus - 109.2402).abs() < 1e-4);
        assert_eq!(isep_of(&p, &t, Mode::Two, 0.0).unwrap(), RomState::new(0.0, 110.0));
        assert!(matches!(isep_of(&p, &t, Mode::Two, 3500.0), Err(Error::NoSep { .. })));
        let f = isep_full_of(&p, &t, Mode::One, 500.0).unwrap();
        assert!((f.v_bat - 120.0).abs() < 1e-9);
        assert!(f.v_bus < 120.0);
    }

    #[test]
    fn esep_examples() {
        let p = Plant::<f64>::default();
        let b = SwitchingStrategy::baseline();
        let (m, e) = esep_of(&p, &b, 100.0, None).unwrap();
        assert_eq!(m, Mode::Three);
        assert!((e.point.v_bus - 109.2402).abs() < 1e-4);
        let (m, e) = esep_of(&p, &b, -1500.0, None).unwrap();
        assert_eq!(m, Mode::One);
        assert_eq!(e.point, RomState::new(-30.0, 120.0));
        let (m, e) = esep_of(&p, &b, 1300.0, None).unwrap();
        assert_eq!(m, Mode::Four);
        assert_eq!(e.point, RomState::new(26.0, 100.0));
        // At exactly -1.2 pu the Mode-2 root lands on V_2 and coincides with Mode-1's SEP.
        let (m, e) = esep_of(&p, &b, -1200.0, None).unwrap();
        assert_eq!(m, Mode::One);
        assert_eq!(e.point, RomState::new(-24.0, 120.0));
        for p_e in [-1500.0, -1200.0, -400.0, -100.0, 0.0, 100.0, 900.0, 1200.0, 1300.0, 1500.0] {
            assert_eq!(esep_candidates(&p, &b, p_e).len(), 1, "{p_e}");
        }
    }

    #[test]
    fn mode1_small_offset_decays_at_cv_rate() {
        let m = rom();
        let strat = SwitchingStrategy::frozen(Mode::One);
        let profile = EcplProfile::constant(-1200.0);
        let cfg = SimConfig { stop_when_settled: false, horizon: 1.0, ..SimConfig::default() };
        let (traj, v) = simulate_switched(
            &m,
            [-23.0, 120.0],
            &strat,
            &profile,
            &cfg,
            RunSpec { record: true, ..Default::default() },
        )
        .unwrap();
        assert_eq!(v.outcome, Outcome::Stable);
        // Fit the envelope decay of |S_v - S_ve| between 0.1 s and 0.5 s.
        let peak = |a: f64, b: f64| {
            traj.samples
                .iter()
                .filter(|s| s.t >= a && s.t <= b)
                .map(|s| (s.x[0] + 24.0).abs().max((s.x[1] - 120.0).abs() / 5.0))
                .fold(0.0, f64::max)
        };
        let period = 2.0 * std::f64::consts::PI / 16.245;
        let rate = (peak(0.1, 0.1 + period) / peak(0.5, 0.5 + period)).ln() / 0.4;
        assert!((rate - 8.333).abs() < 0.5, "{rate}");
    }

    #[test]
    fn switches_sit_on_thresholds() {
        let m = rom();
        let strat = SwitchingStrategy::baseline();
        let profile = EcplProfile::step(100.0, -1200.0, 0.5).unwrap();
        let x0 = isep_of(&m.plant, &strat.modes, Mode::Three, 100.0).unwrap().to_array();
        let cfg = SimConfig::default();
        let (traj, v) = simulate_switched(&m, x0, &strat, &profile, &cfg, RunSpec::default()).unwrap();
        assert_eq!(v.outcome, Outcome::Stable);
        assert!(!traj.switches.is_empty());
        let levels: Vec<f64> = strat.boundaries().iter().map(|b| b.level).collect();
        for sw in &traj.switches {
            let near = levels.iter().map(|l| (sw.v_bus - l).abs()).fold(f64::INFINITY, f64::min);
            assert!(near < 1e-2, "{sw:?}");
            assert_eq!(strat.mode_of(sw.v_bus), sw.to);
        }
        assert!(traj.samples.windows(2).all(|w| w[1].t >= w[0].t));
    }

    #[test]
    fn slides_onto_a_threshold_equilibrium() {
        // The Mode-1 SEP at -1.5 pu sits on V_2; Mode-2 below pushes up, Mode-1 above pushes down.
        let m = rom();
        let strat = SwitchingStrategy::baseline();
        let profile = EcplProfile::step(-100.0, -1500.0, 0.5).unwrap();
        let x0 = isep_of(&m.plant, &strat.modes, Mode::Two, -100.0).unwrap().to_array();
        let (traj, v) = simulate_switched(&m, x0, &strat, &profile, &SimConfig::default(), RunSpec::default()).unwrap();
        assert_eq!(v.outcome, Outcome::Stable);
        assert_eq!(v.final_mode, Mode::One);
        assert!(!traj.slides.is_empty());
        for sl in &traj.slides {
            assert_eq!(sl.level, 120.0);
            assert_eq!((sl.above, sl.below), (Mode::One, Mode::Two));
            assert!(sl.t_end >= sl.t_start);
        }
        assert!(traj.switches.len() < 100);
    }
}
