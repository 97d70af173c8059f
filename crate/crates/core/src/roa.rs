//! Region-of-attraction estimation for an expected equilibrium under a switching strategy.
//!
//! The boundary is traced by integrating the time-reversed switched field from two seeds
//! placed on either side of the saddle along its stable eigenvector. Membership of an
//! arbitrary point is decided by forward simulation, which serves as the oracle the
//! traced boundary is checked against.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibria::{jacobian_numeric, saddle_of, Equilibrium};
use crate::error::{Error, Result};
use crate::integrator::{
    integrate_with, Control, Direction, EventAction, EventSpec, IntegratorConfig, RunOptions, Termination,
};
use crate::model::{EcplProfile, Mode, Plant, RomState};
use crate::scalar::Scalar;
use crate::switched::{esep_of, simulate_switched, Outcome, RomModel, RunSpec, SimConfig, SwitchingStrategy};

/// Axis-aligned rectangle in the `(S_v, v_bus)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoaBox<T> {
    pub s_v: [T; 2],
    pub v_bus: [T; 2],
}

impl<T: Scalar> RoaBox<T> {
    pub fn new(s_v: [T; 2], v_bus: [T; 2]) -> Result<Self> {
        let b = Self { s_v, v_bus };
        if !(s_v[0] < s_v[1]) || !(v_bus[0] < v_bus[1]) || !b.area().is_finite() {
            return Err(Error::InvalidParam {
                field: "box",
                reason: format!("empty or non-finite box {s_v:?} x {v_bus:?}"),
            });
        }
        Ok(b)
    }

    pub fn contains(&self, p: RomState<T>) -> bool {
        p.s_v >= self.s_v[0] && p.s_v <= self.s_v[1] && p.v_bus >= self.v_bus[0] && p.v_bus <= self.v_bus[1]
    }

    /// Signed distance-like margin, positive strictly inside.
    fn margin(&self, s_v: T, v: T) -> T {
        (s_v - self.s_v[0]).min(self.s_v[1] - s_v).min(v - self.v_bus[0]).min(self.v_bus[1] - v)
    }

    pub fn clamp(&self, p: RomState<T>) -> RomState<T> {
        RomState::new(p.s_v.max(self.s_v[0]).min(self.s_v[1]), p.v_bus.max(self.v_bus[0]).min(self.v_bus[1]))
    }

    pub fn width(&self) -> T {
        self.s_v[1] - self.s_v[0]
    }

    pub fn height(&self) -> T {
        self.v_bus[1] - self.v_bus[0]
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> T {
        self.width().hypot(self.height())
    }
}

/// The equilibrium whose region of attraction is studied: a strategy and the post-step load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsepContext<T> {
    pub strategy: SwitchingStrategy<T>,
    pub p_e: T,
}

impl<T: Scalar> EsepContext<T> {
    pub fn new(strategy: SwitchingStrategy<T>, p_e: T) -> Self {
        Self { strategy, p_e }
    }

    pub fn esep(&self, plant: &Plant<T>) -> Result<(Mode, Equilibrium<T>)> {
        esep_of(plant, &self.strategy, self.p_e, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchStop {
    LeftBox,
    TimeCap,
    StepCap,
    /// The reversed flow left the model's domain or stopped making progress.
    Stalled,
}

/// A guard crossing recorded between polyline points `index - 1` and `index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing<T> {
    pub index: usize,
    pub from: Mode,
    pub to: Mode,
    pub v_bus: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub points: Vec<RomState<T>>,
    pub crossings: Vec<Crossing<T>>,
    pub stop: BranchStop,
    /// Reversed time spent on the branch (s).
    pub duration: T,
}

/// Where the traced branches start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundarySeed<T> {
    /// Two branches from `uep ± eps·v_stable`.
    Saddle,
    /// The saddle is not an equilibrium of the switched system; one branch runs backward from
    /// the point where trajectories touch the collapse level with `dv_bus/dt = 0`.
    Grazing(RomState<T>),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoaBoundary<T> {
    pub branches: Vec<Branch<T>>,
    pub uep: Option<Equilibrium<T>>,
    pub seed: BoundarySeed<T>,
    pub bbox: RoaBox<T>,
    /// No saddle bounds the region inside the box.
    pub unbounded: bool,
    pub seed_eps: T,
}

impl<T: Scalar> RoaBoundary<T> {
    /// Both branches joined through the saddle into one curve.
    pub fn curve(&self) -> Vec<RomState<T>> {
        match self.branches.as_slice() {
            [a, b] => a
                .points
                .iter()
                .rev()
                .copied()
                .chain(self.uep.map(|u| u.point))
                .chain(b.points.iter().copied())
                .collect(),
            _ => self.branches.iter().flat_map(|b| b.points.iter().copied()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig<T> {
    /// Seed offset relative to the saddle's state scale.
    pub eps_rel: T,
    pub time_cap: T,
    pub max_steps: usize,
    /// Collapse level used by the forward oracle (V).
    pub v_collapse: T,
    pub integrator: IntegratorConfig<T>,
}

impl<T: Scalar> Default for TraceConfig<T> {
    fn default() -> Self {
        Self {
            eps_rel: T::lit(1e-3),
            time_cap: T::lit(50.0),
            max_steps: 1_000_000,
            v_collapse: T::lit(20.0),
            integrator: IntegratorConfig {
                rel_tol: T::lit(1e-9),
                abs_tol: T::lit(1e-10),
                ..IntegratorConfig::default()
            },
        }
    }
}

/// Traces the stable manifold of the expected mode's droop saddle backward in time under the
/// context's strategy.
///
/// The mode along a branch follows the strategy, switching at every threshold crossing.
/// When the strategy does not select the saddle's own mode at the saddle, the switched system
/// has no equilibrium there; the boundary is then the backward orbit through the grazing point
/// on the collapse level, which is where the forward oracle's region ends.
pub fn trace_stability_boundary<T: Scalar>(
    plant: &Plant<T>,
    ctx: &EsepContext<T>,
    bbox: RoaBox<T>,
    tcfg: &TraceConfig<T>,
) -> Result<RoaBoundary<T>> {
    let (em, esep) = ctx.esep(plant)?;
    let mdef = ctx.strategy.modes.get(em);
    let unbounded = |uep| {
        Ok(RoaBoundary {
            branches: Vec::new(),
            uep,
            seed: BoundarySeed::None,
            bbox,
            unbounded: true,
            seed_eps: T::zero(),
        })
    };
    if mdef.is_cv() {
        return unbounded(None);
    }
    let Some(uep) = saddle_of(plant, ctx.p_e, &mdef) else {
        let others: Vec<_> =
            crate::equilibria::equilibria_of(plant, ctx.p_e, &mdef)?.into_iter().filter(|e| !e.is_sep()).collect();
        return match others.first() {
            Some(e) => Err(Error::NoSaddle(format!(
                "{em} UEP at ({}, {}) has eigenvalues {} and {}",
                e.point.s_v, e.point.v_bus, e.eigenvalues[0], e.eigenvalues[1]
            ))),
            None => unbounded(None),
        };
    };
    let _ = esep;
    if ctx.strategy.mode_of(uep.point.v_bus) != em {
        let Some(g) = grazing_point(plant, ctx, tcfg.v_collapse).filter(|g| bbox.contains(*g)) else {
            return unbounded(Some(uep));
        };
        let start = ctx.strategy.mode_of(g.v_bus);
        let branch = trace_branch(plant, ctx, bbox, tcfg, g, start)?;
        return Ok(RoaBoundary {
            branches: vec![branch],
            uep: Some(uep),
            seed: BoundarySeed::Grazing(g),
            bbox,
            unbounded: false,
            seed_eps: T::zero(),
        });
    }
    if !bbox.contains(uep.point) {
        return unbounded(Some(uep));
    }
    let j = jacobian_numeric(plant, uep.point, &mdef, ctx.p_e)?;
    let lam_s = j.eigenvalues()[1].re;
    let dir = j.eigenvector(lam_s);
    let scale = uep.point.s_v.hypot(uep.point.v_bus).max(T::one());
    let eps = tcfg.eps_rel * scale;
    let mut branches = Vec::with_capacity(2);
    for sign in [T::one(), -T::one()] {
        let seed = RomState::new(uep.point.s_v + sign * eps * dir[0], uep.point.v_bus + sign * eps * dir[1]);
        branches.push(trace_branch(plant, ctx, bbox, tcfg, seed, em)?);
    }
    Ok(RoaBoundary { branches, uep: Some(uep), seed: BoundarySeed::Saddle, bbox, unbounded: false, seed_eps: eps })
}

/// The state on `v_bus = v_c` where `dv_bus/dt = 0` and `v_bus` has a local minimum under the
/// strategy's mode at `v_c`.
pub fn grazing_point<T: Scalar>(plant: &Plant<T>, ctx: &EsepContext<T>, v_c: T) -> Option<RomState<T>> {
    let m = ctx.strategy.mode_def(v_c);
    let (c, k) = (&plant.circuit, &plant.control);
    let s_v = ctx.p_e / v_c * (v_c + c.u_s * k.k_pv * m.r_d) / c.u_s - k.k_pv * (m.u_ref - v_c);
    let p = RomState::new(s_v, v_c);
    let d = plant.rom_rhs(p, &m, ctx.p_e).ok()?;
    // i_line grows with S_v, so v_bus turns upward iff S_v is rising.
    (d.s_v > T::zero()).then_some(p)
}

fn trace_branch<T: Scalar>(
    plant: &Plant<T>,
    ctx: &EsepContext<T>,
    bbox: RoaBox<T>,
    tcfg: &TraceConfig<T>,
    seed: RomState<T>,
    start_mode: Mode,
) -> Result<Branch<T>> {
    let strat = &ctx.strategy;
    let boundaries = strat.boundaries();
    let mut events: Vec<EventSpec<'_, T, 2>> = boundaries
        .iter()
        .map(|b| {
            let b = *b;
            EventSpec::new(move |_, x: &[T; 2]| b.guard(x[1]), Direction::Either, EventAction::Stop)
        })
        .collect();
    let n_bound = events.len();
    events.push(EventSpec::new(move |_, x: &[T; 2]| bbox.margin(x[0], x[1]), Direction::Falling, EventAction::Stop));

    let mut points = vec![seed];
    let mut crossings = Vec::new();
    let mut x = seed.to_array();
    let mut t = T::zero();
    let t_end = -tcfg.time_cap;
    let mut mode = start_mode;
    let mut icfg = tcfg.integrator;
    let mut steps = 0usize;
    let stop = loop {
        if t <= t_end {
            break BranchStop::TimeCap;
        }
        if steps >= tcfg.max_steps {
            break BranchStop::StepCap;
        }
        icfg.max_steps = tcfg.max_steps - steps;
        let mdef = strat.modes.get(mode);
        let rhs = |_: T, y: &[T; 2]| plant.rom_rhs(RomState::from_array(*y), &mdef, ctx.p_e).map(|d| d.to_array());
        let sol = integrate_with(rhs, x, t, t_end, &icfg, &events, RunOptions { record_samples: true }, |_, _| {
            Control::Continue
        });
        steps += sol.steps;
        points.extend(sol.samples.iter().skip(1).map(|s| RomState::from_array(s.x)));
        let last = *sol.last();
        t = last.t;
        x = last.x;
        icfg.h_init = sol.last_h.max(tcfg.integrator.h_min).min(tcfg.integrator.h_max);
        match sol.termination {
            Termination::Completed => break BranchStop::TimeCap,
            Termination::Event(i) if i < n_bound => {
                let next = strat.mode_of(x[1]);
                if next != mode {
                    crossings.push(Crossing { index: points.len() - 1, from: mode, to: next, v_bus: x[1] });
                    mode = next;
                }
            }
            Termination::Event(_) => {
                if let Some(p) = points.last_mut() {
                    *p = bbox.clamp(*p);
                }
                break BranchStop::LeftBox;
            }
            Termination::MaxSteps => break BranchStop::StepCap,
            Termination::Monitor | Termination::StepUnderflow { .. } | Termination::LeftValidity { .. } => {
                break BranchStop::Stalled
            }
        }
    };
    Ok(Branch { points, crossings, stop, duration: -t })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Inside,
    Outside,
    Undecided,
    /// The point lies outside the model's validity region.
    Invalid,
}

impl Membership {
    pub fn code(self) -> i8 {
        match self {
            Membership::Inside => 1,
            Membership::Outside => 0,
            Membership::Undecided => -1,
            Membership::Invalid => -2,
        }
    }
}

/// Forward-simulation oracle: is `point` attracted to the context's ESEP?
pub fn roa_contains<T: Scalar>(
    plant: &Plant<T>,
    point: RomState<T>,
    ctx: &EsepContext<T>,
    cfg: &SimConfig<T>,
) -> Membership {
    if !(point.v_bus > T::zero()) || !point.s_v.is_finite() {
        return Membership::Invalid;
    }
    let model = RomModel { plant: *plant };
    let profile = EcplProfile::constant(ctx.p_e);
    match simulate_switched(&model, point.to_array(), &ctx.strategy, &profile, cfg, RunSpec::default()) {
        Ok((_, v)) => match v.outcome {
            Outcome::Stable => Membership::Inside,
            Outcome::Unstable => Membership::Outside,
            Outcome::Undecided => Membership::Undecided,
        },
        Err(_) => Membership::Invalid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellLabel {
    Inside,
    Outside,
    BoundaryBand,
    Undecided,
    Invalid,
}

impl CellLabel {
    pub fn code(self) -> i8 {
        match self {
            CellLabel::Inside => 1,
            CellLabel::Outside => 0,
            CellLabel::BoundaryBand => 2,
            CellLabel::Undecided => -1,
            CellLabel::Invalid => -2,
        }
    }
}

impl From<Membership> for CellLabel {
    fn from(m: Membership) -> Self {
        match m {
            Membership::Inside => CellLabel::Inside,
            Membership::Outside => CellLabel::Outside,
            Membership::Undecided => CellLabel::Undecided,
            Membership::Invalid => CellLabel::Invalid,
        }
    }
}

/// Cell labels over a box; row `j` runs along `v_bus` from the bottom, column `i` along `S_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipGrid<T> {
    pub bbox: RoaBox<T>,
    pub nx: usize,
    pub ny: usize,
    pub labels: Vec<CellLabel>,
}

impl<T: Scalar> MembershipGrid<T> {
    pub fn cell_center(&self, i: usize, j: usize) -> RomState<T> {
        let fx = (T::lit(i as f64) + T::lit(0.5)) / T::lit(self.nx as f64);
        let fy = (T::lit(j as f64) + T::lit(0.5)) / T::lit(self.ny as f64);
        RomState::new(self.bbox.s_v[0] + fx * self.bbox.width(), self.bbox.v_bus[0] + fy * self.bbox.height())
    }

    pub fn label(&self, i: usize, j: usize) -> CellLabel {
        self.labels[j * self.nx + i]
    }

    pub fn cell_area(&self) -> T {
        self.bbox.area() / T::lit((self.nx * self.ny) as f64)
    }

    pub fn count(&self, l: CellLabel) -> usize {
        self.labels.iter().filter(|&&x| x == l).count()
    }
}

/// Labels every cell center with the oracle; cells within one cell diagonal of a traced
/// branch are marked as boundary band instead.
pub fn roa_grid<T: Scalar>(
    plant: &Plant<T>,
    ctx: &EsepContext<T>,
    bbox: RoaBox<T>,
    nx: usize,
    ny: usize,
    boundary: Option<&RoaBoundary<T>>,
    cfg: &SimConfig<T>,
) -> Result<MembershipGrid<T>> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidParam { field: "resolution", reason: format!("need at least 2x2, got {nx}x{ny}") });
    }
    let mut grid = MembershipGrid { bbox, nx, ny, labels: Vec::new() };
    let band = (bbox.width() / T::lit(nx as f64)).hypot(bbox.height() / T::lit(ny as f64));
    let curves: Vec<Vec<RomState<T>>> =
        boundary.map(|b| b.branches.iter().map(|br| br.points.clone()).collect()).unwrap_or_default();
    let g = &grid;
    grid.labels = (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let p = g.cell_center(k % nx, k / nx);
            if curves.iter().any(|c| polyline_distance(c, p) <= band) {
                CellLabel::BoundaryBand
            } else {
                roa_contains(plant, p, ctx, cfg).into()
            }
        })
        .collect();
    Ok(grid)
}

/// Inside-cell count times cell area, in A·V.
pub fn area_estimate<T: Scalar>(grid: &MembershipGrid<T>) -> T {
    T::lit(grid.count(CellLabel::Inside) as f64) * grid.cell_area()
}

fn segment_distance<T: Scalar>(a: RomState<T>, b: RomState<T>, p: RomState<T>) -> T {
    let (dx, dy) = (b.s_v - a.s_v, b.v_bus - a.v_bus);
    let len2 = dx * dx + dy * dy;
    let u = if len2 > T::zero() {
        (((p.s_v - a.s_v) * dx + (p.v_bus - a.v_bus) * dy) / len2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    (p.s_v - a.s_v - u * dx).hypot(p.v_bus - a.v_bus - u * dy)
}

/// Euclidean distance from `p` to a polyline.
pub fn polyline_distance<T: Scalar>(line: &[RomState<T>], p: RomState<T>) -> T {
    match line {
        [] => T::infinity(),
        [a] => (p.s_v - a.s_v).hypot(p.v_bus - a.v_bus),
        _ => line.windows(2).map(|w| segment_distance(w[0], w[1], p)).fold(T::infinity(), T::min),
    }
}

/// Which side of the oriented polyline `p` lies on: positive on the left of the nearest segment.
pub fn side_of<T: Scalar>(line: &[RomState<T>], p: RomState<T>) -> T {
    let mut best = (T::infinity(), T::zero());
    for w in line.windows(2) {
        let d = segment_distance(w[0], w[1], p);
        if d < best.0 {
            let cross = (w[1].s_v - w[0].s_v) * (p.v_bus - w[0].v_bus) - (w[1].v_bus - w[0].v_bus) * (p.s_v - w[0].s_v);
            best = (d, cross);
        }
    }
    best.1
}

/// Offset samples on both sides of a traced boundary, checked against the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementReport<T> {
    pub delta: T,
    /// Offset points on the ESEP side, with their oracle labels.
    pub inside: Vec<(RomState<T>, Membership)>,
    pub outside: Vec<(RomState<T>, Membership)>,
}

impl<T: Scalar> AgreementReport<T> {
    pub fn inside_agreement(&self) -> f64 {
        fraction(&self.inside, Membership::Inside)
    }

    pub fn outside_agreement(&self) -> f64 {
        fraction(&self.outside, Membership::Outside)
    }
}

fn fraction<T>(v: &[(RomState<T>, Membership)], want: Membership) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().filter(|(_, m)| *m == want).count() as f64 / v.len() as f64
}

/// Places `samples` points evenly by arc length along the joined boundary curve, offsets each
/// by `delta_rel` of the box diagonal along the local normal on both sides, and asks the oracle.
/// Offsets that leave the box or fall closer than `delta` to another part of the curve are
/// skipped.
pub fn oracle_agreement<T: Scalar>(
    plant: &Plant<T>,
    ctx: &EsepContext<T>,
    boundary: &RoaBoundary<T>,
    delta_rel: T,
    samples: usize,
    cfg: &SimConfig<T>,
) -> Result<AgreementReport<T>> {
    let curve = boundary.curve();
    if curve.len() < 2 {
        return Err(Error::NoSaddle("boundary has no traced branch".into()));
    }
    let delta = delta_rel * boundary.bbox.diagonal();
    let (_, esep) = ctx.esep(plant)?;
    let esep_left = side_of(&curve, esep.point) > T::zero();

    let mut cum = vec![T::zero()];
    for w in curve.windows(2) {
        let d = (w[1].s_v - w[0].s_v).hypot(w[1].v_bus - w[0].v_bus);
        cum.push(*cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let mut offsets = Vec::new();
    for k in 0..samples {
        let target = total * (T::lit(k as f64) + T::lit(0.5)) / T::lit(samples as f64);
        let seg = cum.partition_point(|&c| c <= target).clamp(1, curve.len() - 1);
        let (a, b) = (curve[seg - 1], curve[seg]);
        let len = cum[seg] - cum[seg - 1];
        if len <= T::zero() {
            continue;
        }
        let u = (target - cum[seg - 1]) / len;
        let p = RomState::new(a.s_v + u * (b.s_v - a.s_v), a.v_bus + u * (b.v_bus - a.v_bus));
        let n = [-(b.v_bus - a.v_bus) / len, (b.s_v - a.s_v) / len];
        for sgn in [T::one(), -T::one()] {
            let q = RomState::new(p.s_v + sgn * delta * n[0], p.v_bus + sgn * delta * n[1]);
            if !boundary.bbox.contains(q) || polyline_distance(&curve, q) < delta * T::lit(0.999) {
                continue;
            }
            let on_esep_side = (sgn > T::zero()) == esep_left;
            offsets.push((q, on_esep_side));
        }
    }
    let labelled: Vec<(RomState<T>, bool, Membership)> =
        offsets.into_par_iter().map(|(q, s)| (q, s, roa_contains(plant, q, ctx, cfg))).collect();
    let mut report = AgreementReport { delta, inside: Vec::new(), outside: Vec::new() };
    for (q, s, m) in labelled {
        if s {
            report.inside.push((q, m));
        } else {
            report.outside.push((q, m));
        }
    }
    Ok(report)
}
