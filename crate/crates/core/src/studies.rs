//! Case catalog and study harnesses: mode-switch cases, critical load step, feedback
//! diagnostic, settling time, parameter sweeps and the mode-scheduling premises.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EcplProfile, Mode, Plant, RomState};
use crate::roa::{roa_contains, EsepContext, Membership};
use crate::scalar::Scalar;
use crate::switched::{
    isep_full_of, isep_of, simulate_switched, FullModel, Outcome, RomModel, RunSpec, SimConfig, StrategyKind,
    SwitchedModel, SwitchingStrategy, Trajectory, Trigger, Verdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rom,
    Full,
}

/// One mode-switch scenario: a step of the equivalent load between two steady operating points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec<T> {
    pub id: String,
    pub from: Mode,
    pub to: Mode,
    pub p_before_pu: T,
    pub p_after_pu: T,
    pub t_step: T,
    pub strategy: StrategyKind,
    pub expected: Outcome,
}

impl<T: Scalar> CaseSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidParam { field: "id", reason: "empty case id".into() });
        }
        if !(self.t_step >= T::zero()) || !self.p_before_pu.is_finite() || !self.p_after_pu.is_finite() {
            return Err(Error::InvalidParam {
                field: "case",
                reason: format!("{}: non-finite power or negative step time", self.id),
            });
        }
        Ok(())
    }
}

/// The twelve surge/plunge cases between mode pairs, stepping at 2 s under the baseline strategy.
pub fn table2_cases<T: Scalar>() -> Vec<CaseSpec<T>> {
    use Mode::*;
    let rows: [(&str, Mode, Mode, f64, f64, Outcome); 12] = [
        ("1+", One, Two, -1.5, -0.1, Outcome::Unstable),
        ("1-", Two, One, -0.1, -1.5, Outcome::Stable),
        ("2+", One, Three, -1.2, 0.1, Outcome::Unstable),
        ("2-", Three, One, 0.1, -1.2, Outcome::Stable),
        ("3+", One, Four, -1.5, 1.2, Outcome::Unstable),
        ("3-", Four, One, 1.2, -1.5, Outcome::Stable),
        ("4+", Two, Three, -0.4, 0.9, Outcome::Unstable),
        ("4-", Three, Two, 0.9, -0.4, Outcome::Stable),
        ("5+", Two, Four, -0.1, 1.2, Outcome::Unstable),
        ("5-", Four, Two, 1.2, -0.1, Outcome::Stable),
        ("6+", Three, Four, 0.1, 1.3, Outcome::Unstable),
        ("6-", Four, Three, 1.3, 0.1, Outcome::Stable),
    ];
    rows.iter()
        .map(|&(id, from, to, a, b, expected)| CaseSpec {
            id: id.to_string(),
            from,
            to,
            p_before_pu: T::lit(a),
            p_after_pu: T::lit(b),
            t_step: T::lit(2.0),
            strategy: StrategyKind::Baseline,
            expected,
        })
        .collect()
}

pub fn find_case<T: Scalar>(cases: &[CaseSpec<T>], id: &str) -> Result<CaseSpec<T>> {
    cases.iter().find(|c| c.id == id).cloned().ok_or_else(|| Error::UnknownCase(id.to_string()))
}

/// Everything a study needs besides the case itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyEnv<T> {
    pub plant: Plant<T>,
    /// Thresholds and mode table; the kind is overridden per run.
    pub strategy: SwitchingStrategy<T>,
    pub sim: SimConfig<T>,
}

impl<T: Scalar> Default for StudyEnv<T> {
    fn default() -> Self {
        Self { plant: Plant::default(), strategy: SwitchingStrategy::baseline(), sim: SimConfig::default() }
    }
}

impl<T: Scalar> StudyEnv<T> {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.strategy.validate()?;
        self.sim.validate()
    }

    pub fn pu(&self, p: T) -> T {
        self.plant.circuit.pu(p)
    }
}

/// A switched model that can also produce its own steady state for a mode and load.
pub trait StudyModel<T: Scalar, const N: usize>: SwitchedModel<T, N> {
    fn steady_state(&self, strat: &SwitchingStrategy<T>, mode: Mode, p_e: T) -> Result<[T; N]>;
}

impl<T: Scalar> StudyModel<T, 2> for RomModel<T> {
    fn steady_state(&self, strat: &SwitchingStrategy<T>, mode: Mode, p_e: T) -> Result<[T; 2]> {
        Ok(isep_of(&self.plant, &strat.modes, mode, p_e)?.to_array())
    }
}

impl<T: Scalar> StudyModel<T, 6> for FullModel<T> {
    fn steady_state(&self, strat: &SwitchingStrategy<T>, mode: Mode, p_e: T) -> Result<[T; 6]> {
        Ok(isep_full_of(&self.plant, &strat.modes, mode, p_e)?.to_array())
    }
}

#[derive(Debug, Clone)]
pub struct CaseRun<T, const N: usize> {
    pub case: CaseSpec<T>,
    pub strategy: StrategyKind,
    pub trajectory: Trajectory<T, N>,
    pub verdict: Verdict<T>,
    /// Verdict equals the case's expected outcome.
    pub matches: bool,
}

/// Runs one case from the steady state of its initial mode. `kind` overrides the case's strategy.
pub fn run_case_with<T, M, const N: usize>(
    env: &StudyEnv<T>,
    model: &M,
    case: &CaseSpec<T>,
    kind: Option<StrategyKind>,
    record: bool,
) -> Result<CaseRun<T, N>>
where
    T: Scalar,
    M: StudyModel<T, N>,
{
    case.validate()?;
    let kind = kind.unwrap_or(case.strategy);
    let strat = env.strategy.with_kind(kind);
    let (p0, p1) = (env.pu(case.p_before_pu), env.pu(case.p_after_pu));
    let x0 = model.steady_state(&strat, case.from, p0)?;
    let profile = EcplProfile::step(p0, p1, case.t_step)?;
    let spec = RunSpec { expected_mode: Some(case.to), record };
    let (trajectory, verdict) = simulate_switched(model, x0, &strat, &profile, &env.sim, spec)?;
    let matches = verdict.outcome == case.expected;
    Ok(CaseRun { case: case.clone(), strategy: kind, trajectory, verdict, matches })
}

/// Reduced-order run of one case under its own strategy, keeping every step.
pub fn run_case<T: Scalar>(env: &StudyEnv<T>, case: &CaseSpec<T>) -> Result<CaseRun<T, 2>> {
    run_case_with(env, &RomModel { plant: env.plant }, case, None, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow<T> {
    pub id: String,
    pub from: Mode,
    pub to: Mode,
    pub p_before_pu: T,
    pub p_after_pu: T,
    pub expected: Outcome,
    pub outcome: Outcome,
    pub trigger: Option<Trigger>,
    pub final_mode: Mode,
    pub final_v_bus: T,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Report<T> {
    pub strategy: StrategyKind,
    pub rows: Vec<CaseRow<T>>,
    pub matched: usize,
    pub mismatches: Vec<String>,
}

/// Runs every case under `kind` on the reduced-order model. Rows keep the input order.
pub fn run_table2<T: Scalar>(env: &StudyEnv<T>, cases: &[CaseSpec<T>], kind: StrategyKind) -> Result<Table2Report<T>> {
    let model = RomModel { plant: env.plant };
    let runs: Vec<Result<CaseRun<T, 2>>> =
        cases.par_iter().map(|c| run_case_with(env, &model, c, Some(kind), false)).collect();
    let mut rows = Vec::with_capacity(cases.len());
    for r in runs {
        let r = r?;
        rows.push(CaseRow {
            id: r.case.id.clone(),
            from: r.case.from,
            to: r.case.to,
            p_before_pu: r.case.p_before_pu,
            p_after_pu: r.case.p_after_pu,
            expected: r.case.expected,
            outcome: r.verdict.outcome,
            trigger: r.verdict.trigger,
            final_mode: r.verdict.final_mode,
            final_v_bus: r.verdict.final_state.v_bus,
            matches: r.matches,
        });
    }
    let mismatches: Vec<String> = rows.iter().filter(|r| !r.matches).map(|r| r.id.clone()).collect();
    Ok(Table2Report { strategy: kind, matched: rows.len() - mismatches.len(), rows, mismatches })
}

/// Settings for the single-mode critical load step search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalSpec<T> {
    pub model: ModelKind,
    pub mode: Mode,
    pub p_start_pu: T,
    /// Post-step loads (pu) expected to be stable and unstable respectively.
    pub bracket_pu: [T; 2],
    pub tol_pu: T,
    pub t_step: T,
}

impl<T: Scalar> Default for CriticalSpec<T> {
    fn default() -> Self {
        Self {
            model: ModelKind::Rom,
            mode: Mode::One,
            p_start_pu: T::lit(0.5),
            bracket_pu: [T::lit(0.6), T::lit(4.0)],
            tol_pu: T::lit(0.01),
            t_step: T::lit(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalResult<T> {
    /// Midpoint of the final bracket (pu).
    pub critical_pu: T,
    pub stable_pu: T,
    pub unstable_pu: T,
    /// Every evaluated step with its outcome, in evaluation order.
    pub evaluations: Vec<(T, Outcome)>,
}

fn step_outcome<T, M, const N: usize>(env: &StudyEnv<T>, model: &M, spec: &CriticalSpec<T>, p_pu: T) -> Result<Outcome>
where
    T: Scalar,
    M: StudyModel<T, N>,
{
    let strat = env.strategy.with_kind(StrategyKind::Frozen(spec.mode));
    let p0 = env.pu(spec.p_start_pu);
    let x0 = model.steady_state(&strat, spec.mode, p0)?;
    let profile = EcplProfile::step(p0, env.pu(p_pu), spec.t_step)?;
    let (_, v) = simulate_switched(model, x0, &strat, &profile, &env.sim, RunSpec::default())?;
    Ok(v.outcome)
}

/// Bisects the post-step load between a stable and an unstable verdict with switching disabled.
pub fn critical_step_search<T: Scalar>(env: &StudyEnv<T>, spec: &CriticalSpec<T>) -> Result<CriticalResult<T>> {
    match spec.model {
        ModelKind::Rom => bisect(env, &RomModel { plant: env.plant }, spec),
        ModelKind::Full => bisect(env, &FullModel { plant: env.plant }, spec),
    }
}

fn bisect<T, M, const N: usize>(env: &StudyEnv<T>, model: &M, spec: &CriticalSpec<T>) -> Result<CriticalResult<T>>
where
    T: Scalar,
    M: StudyModel<T, N>,
{
    if !(spec.tol_pu > T::zero()) {
        return Err(Error::InvalidParam { field: "tol_pu", reason: format!("must be > 0, got {}", spec.tol_pu) });
    }
    let [mut lo, mut hi] = spec.bracket_pu;
    let mut evaluations = Vec::new();
    let mut eval = |p: T| -> Result<Outcome> {
        let o = step_outcome(env, model, spec, p)?;
        evaluations.push((p, o));
        Ok(o)
    };
    let (o_lo, o_hi) = (eval(lo)?, eval(hi)?);
    if o_lo != Outcome::Stable || o_hi != Outcome::Unstable {
        return Err(Error::InvalidBracket(format!(
            "need Stable at {lo} pu and Unstable at {hi} pu, got {o_lo} and {o_hi}"
        )));
    }
    while hi - lo > spec.tol_pu {
        let mid = (lo + hi) / T::lit(2.0);
        match eval(mid)? {
            Outcome::Stable => lo = mid,
            Outcome::Unstable => hi = mid,
            Outcome::Undecided => {
                return Err(Error::NotConverged(format!("undecided verdict at a {mid} pu step")));
            }
        }
    }
    Ok(CriticalResult { critical_pu: (lo + hi) / T::lit(2.0), stable_pu: lo, unstable_pu: hi, evaluations })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagSample<T> {
    pub t: T,
    pub mode: Mode,
    pub p_e: T,
    pub v_bus: T,
    /// `U_s I_ref - P_e`.
    pub surplus: T,
    /// `v_bus C_bus dv_bus/dt`.
    pub storage: T,
    pub dv_dt: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackDiagnostic<T> {
    pub samples: Vec<DiagSample<T>>,
    /// Largest `|surplus - storage|` relative to `max(|U_s I_ref|, |P_e|)`.
    pub max_rel_err: T,
    /// Maximal time intervals with a power deficit while the bus voltage falls.
    pub feedback_intervals: Vec<(T, T)>,
}

impl<T: Scalar> FeedbackDiagnostic<T> {
    /// Deficit with strictly falling `v_bus` at every sample in `[t0, t1]`.
    pub fn sustained_between(&self, t0: T, t1: T) -> bool {
        let win: Vec<&DiagSample<T>> = self.samples.iter().filter(|s| s.t > t0 && s.t <= t1).collect();
        !win.is_empty()
            && win.iter().all(|s| s.surplus < T::zero() && s.dv_dt < T::zero())
            && win.windows(2).all(|w| w[1].v_bus < w[0].v_bus)
    }
}

/// Evaluates both sides of the bus power balance along a reduced-order trajectory.
pub fn feedback_diagnostic<T: Scalar>(
    plant: &Plant<T>,
    strat: &SwitchingStrategy<T>,
    traj: &Trajectory<T, 2>,
) -> Result<FeedbackDiagnostic<T>> {
    let (u_s, c_bus) = (plant.circuit.u_s, plant.circuit.c_bus);
    let mut samples = Vec::with_capacity(traj.samples.len());
    let mut max_rel_err = T::zero();
    for s in &traj.samples {
        let st = RomState::from_array(s.x);
        let m = strat.modes.get(s.mode);
        let i_ref = plant.i_ref(st, &m)?;
        let d = plant.rom_rhs(st, &m, s.p_e)?;
        let surplus = u_s * i_ref - s.p_e;
        let storage = st.v_bus * c_bus * d.v_bus;
        let scale = (u_s * i_ref).abs().max(s.p_e.abs()).max(T::min_positive_value());
        max_rel_err = max_rel_err.max((surplus - storage).abs() / scale);
        samples.push(DiagSample {
            t: s.t,
            mode: s.mode,
            p_e: s.p_e,
            v_bus: st.v_bus,
            surplus,
            storage,
            dv_dt: d.v_bus,
        });
    }
    let mut feedback_intervals = Vec::new();
    let mut open: Option<(T, T)> = None;
    for s in &samples {
        if s.surplus < T::zero() && s.dv_dt < T::zero() {
            open = Some(match open {
                Some((a, _)) => (a, s.t),
                None => (s.t, s.t),
            });
        } else if let Some(iv) = open.take() {
            feedback_intervals.push(iv);
        }
    }
    feedback_intervals.extend(open);
    Ok(FeedbackDiagnostic { samples, max_rel_err, feedback_intervals })
}

/// Time after `t0` at which `y` last leaves the ±`band` envelope around its final value.
pub fn settling_time<T: Scalar>(t: &[T], y: &[T], t0: T, band: T) -> Result<T> {
    if t.len() != y.len() || t.len() < 2 {
        return Err(Error::InvalidParam {
            field: "response",
            reason: "need matching series of at least two samples".into(),
        });
    }
    let y_f = *y.last().unwrap();
    if !y_f.is_finite() || y_f == T::zero() {
        return Err(Error::NotConverged(format!("final value {y_f} admits no relative band")));
    }
    let tol = band * y_f.abs();
    let idx0 = t.iter().position(|tt| *tt >= t0).unwrap_or(t.len() - 1);
    match y[idx0..].iter().rposition(|yy| (*yy - y_f).abs() > tol) {
        None => Ok(T::zero()),
        Some(k) => {
            let k = idx0 + k;
            if k + 1 >= t.len() {
                return Err(Error::NotConverged("response never settles within the record".into()));
            }
            // The response re-enters the band between samples k and k + 1.
            let (ya, yb) = (y[k] - y_f, y[k + 1] - y_f);
            let edge = if ya > T::zero() { tol } else { -tol };
            let u = if yb != ya { ((edge - ya) / (yb - ya)).max(T::zero()).min(T::one()) } else { T::one() };
            Ok(t[k] + u * (t[k + 1] - t[k]) - t0)
        }
    }
}

/// Settling time of `I_ref` after a load step from zero to `p_step` in a single mode, starting
/// from steady state. Starting at zero load makes the set value equal to the step size.
pub fn reference_settling_time<T: Scalar>(
    plant: &Plant<T>,
    strat: &SwitchingStrategy<T>,
    mode: Mode,
    p_step: T,
) -> Result<T> {
    let p_before = T::zero();
    let p_after = p_step;
    let frozen = strat.with_kind(StrategyKind::Frozen(mode));
    let model = RomModel { plant: *plant };
    let x0 = isep_of(plant, &frozen.modes, mode, p_before)?.to_array();
    let t_step = T::lit(0.1);
    let profile = EcplProfile::step(p_before, p_after, t_step)?;
    let cfg = SimConfig { stop_when_settled: false, horizon: T::lit(5.0), ..SimConfig::default() };
    let (traj, _) =
        simulate_switched(&model, x0, &frozen, &profile, &cfg, RunSpec { record: true, ..Default::default() })?;
    let m = frozen.modes.get(mode);
    let mut ts = Vec::with_capacity(traj.samples.len());
    let mut ys = Vec::with_capacity(traj.samples.len());
    for s in &traj.samples {
        ts.push(s.t);
        ys.push(plant.i_ref(RomState::from_array(s.x), &m)?);
    }
    settling_time(&ts, &ys, t_step, T::lit(0.05))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Bus capacitance (F).
    CBus,
    /// Joint factor on the outer-loop gains `k_Pv`, `k_Iv`.
    GainScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec<T> {
    pub param: SweepParam,
    pub values: Vec<T>,
    pub case_id: String,
}

impl<T: Scalar> SweepSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidParam { field: "values", reason: "empty sweep".into() });
        }
        if self.values.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidParam { field: "values", reason: "sweep values must be positive".into() });
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParam {
                field: "values",
                reason: "sweep values must be strictly increasing".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<T> {
    pub value: T,
    pub outcome: Outcome,
    pub trigger: Option<Trigger>,
    /// Settling time of `I_ref` after a 0 to 0.1 pu load step in the case's final mode.
    pub settling_time: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport<T> {
    pub param: SweepParam,
    pub case_id: String,
    pub points: Vec<SweepPoint<T>>,
}

impl<T> SweepReport<T> {
    /// Number of Unstable-to-Stable flips along the sweep order.
    pub fn stabilizing_transitions(&self) -> usize {
        self.points.windows(2).filter(|w| w[0].outcome == Outcome::Unstable && w[1].outcome == Outcome::Stable).count()
    }

    pub fn destabilizing_transitions(&self) -> usize {
        self.points.windows(2).filter(|w| w[0].outcome == Outcome::Stable && w[1].outcome == Outcome::Unstable).count()
    }
}

/// Reruns a catalog case per sweep value on the reduced-order model.
pub fn sweep<T: Scalar>(env: &StudyEnv<T>, cases: &[CaseSpec<T>], spec: &SweepSpec<T>) -> Result<SweepReport<T>> {
    spec.validate()?;
    let case = find_case(cases, &spec.case_id)?;
    let points: Vec<Result<SweepPoint<T>>> = spec
        .values
        .par_iter()
        .map(|&value| {
            let mut e = *env;
            match spec.param {
                SweepParam::CBus => e.plant.circuit.c_bus = value,
                SweepParam::GainScale => e.plant.control = e.plant.control.scale_outer(value),
            }
            e.validate()?;
            let run = run_case_with(&e, &RomModel { plant: e.plant }, &case, None, false)?;
            let settling_time = reference_settling_time(&e.plant, &e.strategy, case.to, e.pu(T::lit(0.1))).ok();
            Ok(SweepPoint { value, outcome: run.verdict.outcome, trigger: run.verdict.trigger, settling_time })
        })
        .collect();
    Ok(SweepReport {
        param: spec.param,
        case_id: spec.case_id.clone(),
        points: points.into_iter().collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiseStatus {
    Ok,
    /// The pre-step operating point is not attracted by the transitional mode.
    Premise1Violated,
    /// The transitional mode's equilibrium is not attracted to the expected equilibrium.
    Premise2Violated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PremiseReport<T> {
    pub status: PremiseStatus,
    pub transitional: Mode,
    pub isep: RomState<T>,
    pub isep_in_transitional: Membership,
    pub transitional_sep: Option<RomState<T>>,
    pub sep_in_esep: Option<Membership>,
}

/// Checks the two conditions under which forcing the transitional mode rescues a case: the
/// pre-step point lies in the transitional mode's region of attraction, and that mode's
/// equilibrium lies in the region of attraction of the expected equilibrium under the expected
/// mode's own dynamics.
pub fn scheduling_premise_check<T: Scalar>(env: &StudyEnv<T>, case: &CaseSpec<T>) -> Result<PremiseReport<T>> {
    let transitional = Mode::One;
    let sched = env.strategy.with_kind(StrategyKind::Scheduled);
    let (p0, p1) = (env.pu(case.p_before_pu), env.pu(case.p_after_pu));
    let isep = isep_of(&env.plant, &sched.modes, case.from, p0)?;
    let esep_ctx = EsepContext::new(sched, p1);
    let (em, _) = esep_ctx.esep(&env.plant)?;
    let trans_ctx = EsepContext::new(sched.with_kind(StrategyKind::Frozen(transitional)), p1);
    let isep_in_transitional = roa_contains(&env.plant, isep, &trans_ctx, &env.sim);
    let mut report = PremiseReport {
        status: PremiseStatus::Ok,
        transitional,
        isep,
        isep_in_transitional,
        transitional_sep: None,
        sep_in_esep: None,
    };
    if isep_in_transitional != Membership::Inside {
        report.status = PremiseStatus::Premise1Violated;
        return Ok(report);
    }
    if em == transitional {
        return Ok(report);
    }
    let sep = isep_of(&env.plant, &sched.modes, transitional, p1)?;
    let em_ctx = EsepContext::new(sched.with_kind(StrategyKind::Frozen(em)), p1);
    let m = roa_contains(&env.plant, sep, &em_ctx, &env.sim);
    report.transitional_sep = Some(sep);
    report.sep_in_esep = Some(m);
    if m != Membership::Inside {
        report.status = PremiseStatus::Premise2Violated;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> StudyEnv<f64> {
        StudyEnv::default()
    }

    #[test]
    fn catalog_has_twelve_unique_rows() {
        let cases = table2_cases::<f64>();
        assert_eq!(cases.len(), 12);
        let mut ids: Vec<&str> = cases.iter().map(|c| c.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 12);
        for c in &cases {
            let surge = c.id.ends_with('+');
            assert_eq!(surge, c.p_after_pu > c.p_before_pu);
            assert_eq!(c.expected, if surge { Outcome::Unstable } else { Outcome::Stable });
        }
        assert!(matches!(find_case(&cases, "7+"), Err(Error::UnknownCase(_))));
    }

    #[test]
    fn case_examples() {
        let cases = table2_cases();
        let r = run_case(&env(), &find_case(&cases, "1-").unwrap()).unwrap();
        assert_eq!(r.verdict.outcome, Outcome::Stable);
        assert!(r.matches);
        let r = run_case(&env(), &find_case(&cases, "6+").unwrap()).unwrap();
        assert_eq!(r.verdict.outcome, Outcome::Unstable);
        assert_eq!(r.verdict.trigger, Some(Trigger::Collapse));
        let mut c = find_case(&cases, "5+").unwrap();
        c.strategy = StrategyKind::Scheduled;
        let r = run_case(&env(), &c).unwrap();
        assert_eq!(r.verdict.outcome, Outcome::Stable);
    }

    #[test]
    fn empty_case_list_gives_empty_summary() {
        let r = run_table2::<f64>(&env(), &[], StrategyKind::Baseline).unwrap();
        assert!(r.rows.is_empty() && r.mismatches.is_empty());
        assert_eq!(r.matched, 0);
    }

    #[test]
    fn first_order_settling_time() {
        let tau = 0.2;
        let t: Vec<f64> = (0..=20_000).map(|k| k as f64 * 1e-4).collect();
        let y: Vec<f64> = t.iter().map(|&t| 1.0 - (-t / tau).exp()).collect();
        let y_f = *y.last().unwrap();
        // Exact crossing of the band around the recorded final value.
        let expect = -tau * (0.05 * y_f / (1.0 - y_f + 0.05 * y_f) * (1.0 - y_f + 0.05 * y_f) / 1.0).ln();
        let ts = settling_time(&t, &y, 0.0, 0.05).unwrap();
        assert!((ts - expect).abs() < 1e-3, "{ts} vs {expect}");
        assert!((ts - 20.0_f64.ln() * tau).abs() < 2e-3);
        let flat = vec![1.0; t.len()];
        assert_eq!(settling_time(&t, &flat, 0.0, 0.05).unwrap(), 0.0);
        assert!(settling_time(&t, &vec![0.0; t.len()], 0.0, 0.05).is_err());
    }

    #[test]
    fn mode1_settling_matches_decay_rate() {
        let e = env();
        let ts = reference_settling_time(&e.plant, &e.strategy, Mode::One, 100.0).unwrap();
        let expect = 20.0_f64.ln() / 8.333;
        assert!((ts - expect).abs() < 0.3 * expect, "{ts} vs {expect}");
    }

    #[test]
    fn critical_bracket_must_straddle() {
        let spec = CriticalSpec { bracket_pu: [0.6, 0.7], ..CriticalSpec::default() };
        assert!(matches!(critical_step_search(&env(), &spec), Err(Error::InvalidBracket(_))));
    }

    #[test]
    fn diagnostic_identity_and_signature() {
        let e = env();
        let cases = table2_cases();
        let c = find_case(&cases, "5+").unwrap();
        let r = run_case(&e, &c).unwrap();
        let strat = e.strategy.with_kind(c.strategy);
        let d = feedback_diagnostic(&e.plant, &strat, &r.trajectory).unwrap();
        assert!(d.max_rel_err < 1e-6, "{}", d.max_rel_err);
        let first = d.samples[0];
        assert!(first.surplus.abs() < 1e-9 && first.storage.abs() < 1e-9);
        assert!(d.sustained_between(c.t_step, r.verdict.final_time));
        assert!(!d.feedback_intervals.is_empty());
    }

    #[test]
    fn single_value_sweep() {
        let spec = SweepSpec { param: SweepParam::CBus, values: vec![5e-3], case_id: "5+".into() };
        let r = sweep(&env(), &table2_cases(), &spec).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.stabilizing_transitions(), 0);
        let bad = SweepSpec { values: vec![2.0, 1.0], ..spec.clone() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn premise_examples() {
        let e = env();
        let cases = table2_cases();
        let r = scheduling_premise_check(&e, &find_case(&cases, "2+").unwrap()).unwrap();
        assert_eq!(r.status, PremiseStatus::Ok);
        let mut big = find_case(&cases, "5+").unwrap();
        big.p_after_pu = 3.0;
        let r = scheduling_premise_check(&e, &big).unwrap();
        assert_eq!(r.status, PremiseStatus::Premise1Violated);
        let r = scheduling_premise_check(&e, &find_case(&cases, "2-").unwrap()).unwrap();
        assert_eq!(r.status, PremiseStatus::Ok);
        assert!(r.transitional_sep.is_none());
    }
}
