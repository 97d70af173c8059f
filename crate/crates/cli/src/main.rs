//! `dcmg`: equilibria, switched simulations, ROA maps and the case studies from the command line.
//!
//! Exit status: 0 Stable, 2 Unstable, 3 Undecided, 1 usage or configuration error.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dcmg_core::equilibria::equilibria_of;
use dcmg_core::model::{FullState, Mode, RomState};
use dcmg_core::roa::{area_estimate, roa_grid, trace_stability_boundary, BoundarySeed, BranchStop, CellLabel};
use dcmg_core::studies::{
    critical_step_search, feedback_diagnostic, find_case, run_case_with, run_table2, sweep, SweepParam,
};
use dcmg_core::switched::{StrategyKind, Trajectory};
use dcmg_core::{
    CaseSpec, CriticalSpec, EsepContext, FullModel, ModelKind, Outcome, RoaBox, RomModel, StudyEnv, SweepSpec, Verdict,
};

use config::RunConfig;
use output::{num, Artifacts};

/// Like `println!`, but a closed stdout (e.g. piped into `head`) does not abort the run.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "dcmg", version, about = "Mode-switching stability analysis of a PV-battery-CPL DC microgrid")]
struct Cli {
    /// TOML file overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides DCMG_OUT_DIR and the config).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Equilibria of one or all modes with their classification.
    Equilibria {
        /// Mode index 1-4; all modes when omitted.
        #[arg(long)]
        mode: Option<u8>,
        /// ECPL power in W or pu (repeatable).
        #[arg(long = "pe", allow_hyphen_values = true)]
        pe: Vec<String>,
        /// Evenly spaced sweep `from:to:count`.
        #[arg(long, allow_hyphen_values = true)]
        sweep: Option<String>,
    },
    /// One switched run; writes the trajectory and prints the verdict.
    Simulate {
        /// Case id from the catalog.
        #[arg(long, conflicts_with_all = ["from", "before", "after"])]
        case: Option<String>,
        /// Initial mode of an ad-hoc step.
        #[arg(long, requires_all = ["before", "after"])]
        from: Option<u8>,
        #[arg(long, allow_hyphen_values = true)]
        before: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        after: Option<String>,
        #[arg(long, default_value_t = 2.0)]
        t_step: f64,
        /// baseline, scheduled or frozen-N; defaults to the case's own strategy.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<StrategyKind>,
        #[arg(long, value_enum, default_value_t = ModelArg::Rom)]
        model: ModelArg,
        /// Simulated horizon in seconds.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Stability boundary of an expected equilibrium and an optional membership grid.
    Roa {
        /// mode1..mode4 (single mode), baseline or scheduled.
        #[arg(long, default_value = "baseline", value_parser = parse_context)]
        context: StrategyKind,
        #[arg(long, allow_hyphen_values = true)]
        pe: String,
        /// Grid resolution `NXxNY`.
        #[arg(long)]
        grid: Option<String>,
        /// Box `s_min,s_max,v_min,v_max`.
        #[arg(long, allow_hyphen_values = true, default_value = "-60,60,0,200")]
        bbox: String,
        /// Label cells touching the traced boundary as a separate band.
        #[arg(long)]
        band: bool,
    },
    /// All catalog cases; exit 0 when every verdict matches its expectation, 2 otherwise.
    Table2 {
        #[arg(long, default_value = "baseline", value_parser = parse_strategy)]
        strategy: StrategyKind,
    },
    /// Bisection for the largest stable single-mode load step.
    Critical {
        #[arg(long, value_enum, default_value_t = ModelArg::Rom)]
        model: ModelArg,
        #[arg(long, default_value_t = 1)]
        mode: u8,
        #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
        start: f64,
        /// Stable and unstable ends `lo,hi` in pu.
        #[arg(long, default_value = "0.6,4.0")]
        bracket: String,
        #[arg(long, default_value_t = 0.01)]
        tol: f64,
        #[arg(long, default_value_t = 0.5)]
        t_step: f64,
    },
    /// Reruns a case across bus capacitance or outer-loop gain values.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepArg,
        #[arg(long, default_value = "5+")]
        case: String,
        /// Comma-separated values; C_bus in F.
        #[arg(long)]
        values: Option<String>,
    },
    /// Bus power balance along a run.
    Diagnose {
        #[arg(long)]
        case: String,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<StrategyKind>,
    },
    /// Writes the effective configuration.
    Config {
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Rom,
    Full,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Rom => ModelKind::Rom,
            ModelArg::Full => ModelKind::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Cbus,
    Gain,
}

fn parse_mode(n: u8) -> Result<Mode> {
    Mode::try_from(n).map_err(|e| anyhow!("{e}"))
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    match s {
        "baseline" => Ok(StrategyKind::Baseline),
        "scheduled" => Ok(StrategyKind::Scheduled),
        _ => s
            .strip_prefix("frozen-")
            .and_then(|n| n.parse::<u8>().ok())
            .and_then(|n| Mode::try_from(n).ok())
            .map(StrategyKind::Frozen)
            .ok_or_else(|| format!("unknown strategy `{s}` (baseline, scheduled, frozen-1..4)")),
    }
}

fn parse_context(s: &str) -> Result<StrategyKind, String> {
    match s.strip_prefix("mode").and_then(|n| n.parse::<u8>().ok()) {
        Some(n) => Mode::try_from(n).map(StrategyKind::Frozen).map_err(|e| e.to_string()),
        None => parse_strategy(s),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| anyhow!("invalid number `{x}` in `{s}`"))).collect()
}

fn outcome_code(o: Outcome) -> u8 {
    match o {
        Outcome::Stable => 0,
        Outcome::Unstable => 2,
        Outcome::Undecided => 3,
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    args: Vec<String>,
    hash: String,
}

impl Ctx {
    fn artifacts(&self, sub: &str) -> Artifacts {
        Artifacts::new(self.out.join(sub))
    }

    fn finish(&self, a: Artifacts, command: &str) -> Result<()> {
        let dir = a.dir().to_path_buf();
        a.finish(command, &self.args, &self.hash)?;
        out!("artifacts: {}", dir.display());
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx {
        out: cfg.out_dir(cli.out_dir.as_deref()),
        hash: cfg.hash()?,
        args: std::env::args().skip(1).collect(),
        cfg,
    };
    match cli.cmd {
        Cmd::Equilibria { mode, pe, sweep } => cmd_equilibria(&ctx, mode, &pe, sweep.as_deref()),
        Cmd::Simulate { case, from, before, after, t_step, strategy, model, horizon } => {
            let spec = match (case, from) {
                (Some(id), _) => find_case(&ctx.cfg.cases, &id)?,
                (None, Some(m)) => CaseSpec {
                    id: "adhoc".into(),
                    from: parse_mode(m)?,
                    to: parse_mode(m)?,
                    p_before_pu: ctx.cfg.power(before.as_deref().unwrap_or_default())? / ctx.cfg.circuit.p_base,
                    p_after_pu: ctx.cfg.power(after.as_deref().unwrap_or_default())? / ctx.cfg.circuit.p_base,
                    t_step,
                    strategy: StrategyKind::Baseline,
                    expected: Outcome::Stable,
                },
                (None, None) => bail!("simulate needs --case or --from/--before/--after"),
            };
            cmd_simulate(&ctx, spec, strategy, model, horizon)
        }
        Cmd::Roa { context, pe, grid, bbox, band } => cmd_roa(&ctx, context, &pe, grid.as_deref(), &bbox, band),
        Cmd::Table2 { strategy } => cmd_table2(&ctx, strategy),
        Cmd::Critical { model, mode, start, bracket, tol, t_step } => {
            let b = parse_list(&bracket)?;
            let [lo, hi] = b[..] else { bail!("--bracket needs two values, got {}", b.len()) };
            let spec = CriticalSpec {
                model: model.into(),
                mode: parse_mode(mode)?,
                p_start_pu: start,
                bracket_pu: [lo, hi],
                tol_pu: tol,
                t_step,
            };
            cmd_critical(&ctx, spec)
        }
        Cmd::Sweep { param, case, values } => cmd_sweep(&ctx, param, case, values.as_deref()),
        Cmd::Diagnose { case, strategy } => cmd_diagnose(&ctx, &case, strategy),
        Cmd::Config { out } => {
            let text = ctx.cfg.to_toml()?;
            match out {
                Some(p) => {
                    output::write_atomic(&p, text.as_bytes())?;
                    out!("config {} written to {}", ctx.hash, p.display());
                }
                None => print!("{text}"),
            }
            Ok(0)
        }
    }
}

fn cmd_equilibria(ctx: &Ctx, mode: Option<u8>, pe: &[String], sweep: Option<&str>) -> Result<u8> {
    let mut loads = pe.iter().map(|s| ctx.cfg.power(s)).collect::<Result<Vec<_>>>()?;
    if let Some(s) = sweep {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts[..] else { bail!("--sweep expects from:to:count, got `{s}`") };
        let (a, b) = (ctx.cfg.power(a)?, ctx.cfg.power(b)?);
        let n: usize = n.parse().map_err(|_| anyhow!("invalid sweep count `{n}`"))?;
        if n < 2 {
            bail!("--sweep count must be at least 2");
        }
        loads.extend((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64));
    }
    if loads.is_empty() {
        bail!("equilibria needs --pe or --sweep");
    }
    let modes = match mode {
        Some(m) => vec![parse_mode(m)?],
        None => Mode::ALL.to_vec(),
    };
    let strat = ctx.cfg.strategy(StrategyKind::Baseline);
    let plant = ctx.cfg.plant();
    let mut rows = Vec::new();
    for &p in &loads {
        for &m in &modes {
            let md = strat.modes.get(m);
            let eqs = equilibria_of(&plant, p, &md)?;
            if eqs.is_empty() {
                out!("{m} P_e = {p} W: no equilibria (discriminant < 0)");
            }
            for e in eqs {
                let [l1, l2] = e.eigenvalues;
                out!(
                    "{m} P_e = {p} W: {} ({:.4}, {:.4}) eigenvalues {:.4}{:+.4}j, {:.4}{:+.4}j",
                    e.kind,
                    e.point.s_v,
                    e.point.v_bus,
                    l1.re,
                    l1.im,
                    l2.re,
                    l2.im
                );
                rows.push(vec![
                    m.index().to_string(),
                    num(p),
                    e.kind.to_string(),
                    num(e.point.s_v),
                    num(e.point.v_bus),
                    num(l1.re),
                    num(l1.im),
                    num(l2.re),
                    num(l2.im),
                ]);
            }
        }
    }
    let mut a = ctx.artifacts("equilibria");
    a.csv("equilibria.csv", &["sigma", "p_e", "kind", "S_v", "v_bus", "re1", "im1", "re2", "im2"], &rows)?;
    ctx.finish(a, "equilibria")?;
    Ok(0)
}

#[derive(Serialize)]
struct VerdictRecord {
    case: String,
    strategy: String,
    model: String,
    outcome: Outcome,
    trigger: Option<dcmg_core::Trigger>,
    final_mode: u8,
    final_time: f64,
    final_s_v: f64,
    final_v_bus: f64,
    convergence_time: Option<f64>,
    esep_mode: u8,
    esep_s_v: f64,
    esep_v_bus: f64,
    switches: usize,
    slides: usize,
}

fn verdict_line(case: &str, kind: StrategyKind, model: &str, v: &Verdict) -> String {
    let why = v.trigger.map(|t| format!(" ({t:?})")).unwrap_or_default();
    format!(
        "{case} {kind} {model}: {}{why} at t = {:.4} s, {} v_bus = {:.4} V (ESEP {} at {:.4} V)",
        v.outcome, v.final_time, v.final_mode, v.final_state.v_bus, v.esep.mode.sigma, v.esep.point.v_bus
    )
}

fn record<const N: usize>(
    case: &str,
    kind: StrategyKind,
    model: &str,
    t: &Trajectory<f64, N>,
    v: &Verdict,
) -> VerdictRecord {
    VerdictRecord {
        case: case.into(),
        strategy: kind.to_string(),
        model: model.into(),
        outcome: v.outcome,
        trigger: v.trigger,
        final_mode: v.final_mode.index(),
        final_time: v.final_time,
        final_s_v: v.final_state.s_v,
        final_v_bus: v.final_state.v_bus,
        convergence_time: v.convergence_time,
        esep_mode: v.esep.mode.sigma.index(),
        esep_s_v: v.esep.point.s_v,
        esep_v_bus: v.esep.point.v_bus,
        switches: t.switches.len(),
        slides: t.slides.len(),
    }
}

fn cmd_simulate(
    ctx: &Ctx,
    case: CaseSpec,
    strategy: Option<StrategyKind>,
    model: ModelArg,
    horizon: Option<f64>,
) -> Result<u8> {
    let kind = strategy.unwrap_or(case.strategy);
    let mut env: StudyEnv = ctx.cfg.env(kind);
    if let Some(h) = horizon {
        env.sim.horizon = h;
        env.sim.validate()?;
    }
    let plant = env.plant;
    let strat = env.strategy;
    let mut a = ctx.artifacts("simulate");
    let (line, rec) = match model {
        ModelArg::Rom => {
            let run = run_case_with(&env, &RomModel { plant }, &case, Some(kind), true)?;
            let mut rows = Vec::with_capacity(run.trajectory.samples.len());
            for s in &run.trajectory.samples {
                let st = RomState::from_array(s.x);
                let md = strat.modes.get(s.mode);
                rows.push(vec![
                    num(s.t),
                    s.mode.index().to_string(),
                    num(st.s_v),
                    num(st.v_bus),
                    num(plant.rom_iline(st, &md).unwrap_or(f64::NAN)),
                    num(plant.i_ref(st, &md).unwrap_or(f64::NAN)),
                ]);
            }
            a.csv("trajectory.csv", &["t", "sigma", "S_v", "v_bus", "i_line", "I_ref"], &rows)?;
            (
                verdict_line(&case.id, kind, "rom", &run.verdict),
                record(&case.id, kind, "rom", &run.trajectory, &run.verdict),
            )
        }
        ModelArg::Full => {
            let run = run_case_with(&env, &FullModel { plant }, &case, Some(kind), true)?;
            let mut rows = Vec::with_capacity(run.trajectory.samples.len());
            for s in &run.trajectory.samples {
                let st = FullState::from_array(s.x);
                let md = strat.modes.get(s.mode);
                rows.push(vec![
                    num(s.t),
                    s.mode.index().to_string(),
                    num(st.s_v),
                    num(st.v_bus),
                    num(st.i_line),
                    num(plant.full_i_ref(&st, &md)),
                    num(st.s_i),
                    num(st.i_bat),
                    num(st.v_bat),
                ]);
            }
            a.csv(
                "trajectory.csv",
                &["t", "sigma", "S_v", "v_bus", "i_line", "I_ref", "S_i", "i_bat", "v_bat"],
                &rows,
            )?;
            (
                verdict_line(&case.id, kind, "full", &run.verdict),
                record(&case.id, kind, "full", &run.trajectory, &run.verdict),
            )
        }
    };
    a.toml("verdict.toml", &rec)?;
    out!("{line}");
    ctx.finish(a, "simulate")?;
    Ok(outcome_code(rec.outcome))
}

#[derive(Serialize)]
struct BranchRecord {
    file: String,
    points: usize,
    stop: BranchStop,
    duration: f64,
    crossings: usize,
}

#[derive(Serialize)]
struct BoundaryRecord {
    context: String,
    p_e: f64,
    esep_mode: u8,
    esep_s_v: f64,
    esep_v_bus: f64,
    seed: String,
    unbounded: bool,
    branches: Vec<BranchRecord>,
}

#[derive(Serialize)]
struct Extent {
    s_v_min: f64,
    s_v_max: f64,
    v_bus_min: f64,
    v_bus_max: f64,
    nx: usize,
    ny: usize,
    /// Row k of the matrix holds cells at the k-th v_bus level from the bottom.
    row_order: &'static str,
    codes: &'static str,
    inside_cells: usize,
    inside_area: f64,
}

fn cmd_roa(ctx: &Ctx, context: StrategyKind, pe: &str, grid: Option<&str>, bbox: &str, band: bool) -> Result<u8> {
    let p = ctx.cfg.power(pe)?;
    let b = parse_list(bbox)?;
    let [s0, s1, v0, v1] = b[..] else { bail!("--bbox needs four values, got {}", b.len()) };
    let bbox = RoaBox::new([s0, s1], [v0, v1])?;
    let plant = ctx.cfg.plant();
    let ectx = EsepContext::new(ctx.cfg.strategy(context), p);
    let (_, esep) = ectx.esep(&plant)?;
    let boundary = trace_stability_boundary(&plant, &ectx, bbox, &ctx.cfg.trace)?;
    let mut a = ctx.artifacts("roa");
    let mut branches = Vec::new();
    for (k, br) in boundary.branches.iter().enumerate() {
        let name = format!("branch_{k}.csv");
        let rows: Vec<Vec<String>> = br.points.iter().map(|q| vec![num(q.s_v), num(q.v_bus)]).collect();
        a.csv(&name, &["S_v", "v_bus"], &rows)?;
        branches.push(BranchRecord {
            file: name,
            points: br.points.len(),
            stop: br.stop,
            duration: br.duration,
            crossings: br.crossings.len(),
        });
    }
    let seed = match boundary.seed {
        BoundarySeed::Saddle => "saddle".to_string(),
        BoundarySeed::Grazing(q) => format!("grazing ({}, {})", q.s_v, q.v_bus),
        BoundarySeed::None => "none".to_string(),
    };
    out!(
        "{context} at {p} W: ESEP {} ({:.4}, {:.4}), seed {seed}, {} branch(es){}",
        esep.mode.sigma,
        esep.point.s_v,
        esep.point.v_bus,
        branches.len(),
        if boundary.unbounded { ", unbounded in the box" } else { "" }
    );
    a.toml(
        "boundary.toml",
        &BoundaryRecord {
            context: context.to_string(),
            p_e: p,
            esep_mode: esep.mode.sigma.index(),
            esep_s_v: esep.point.s_v,
            esep_v_bus: esep.point.v_bus,
            seed,
            unbounded: boundary.unbounded,
            branches,
        },
    )?;
    if let Some(g) = grid {
        let (nx, ny) = g
            .split_once('x')
            .and_then(|(x, y)| Some((x.parse::<usize>().ok()?, y.parse::<usize>().ok()?)))
            .ok_or_else(|| anyhow!("--grid expects NXxNY, got `{g}`"))?;
        let grid = roa_grid(&plant, &ectx, bbox, nx, ny, band.then_some(&boundary), &ctx.cfg.simulation)?;
        let rows: Vec<Vec<String>> =
            (0..ny).map(|j| (0..nx).map(|i| grid.label(i, j).code().to_string()).collect()).collect();
        let header: Vec<String> = (0..nx).map(|i| format!("c{i}")).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        a.csv("grid.csv", &header, &rows)?;
        let inside = grid.count(CellLabel::Inside);
        a.toml(
            "grid.extent.toml",
            &Extent {
                s_v_min: s0,
                s_v_max: s1,
                v_bus_min: v0,
                v_bus_max: v1,
                nx,
                ny,
                row_order: "v_bus ascending",
                codes: "1 inside, 0 outside, 2 boundary band, -1 undecided, -2 invalid",
                inside_cells: inside,
                inside_area: area_estimate(&grid),
            },
        )?;
        out!("grid {nx}x{ny}: {inside} inside cells, area {:.1} A*V", area_estimate(&grid));
    }
    ctx.finish(a, "roa")?;
    Ok(0)
}

fn cmd_table2(ctx: &Ctx, kind: StrategyKind) -> Result<u8> {
    let env = ctx.cfg.env(kind);
    let rep = run_table2(&env, &ctx.cfg.cases, kind)?;
    let mut rows = Vec::new();
    for r in &rep.rows {
        out!(
            "{:>3} {} -> {} {:+.2} -> {:+.2} pu: {:<9} expected {:<9} {}",
            r.id,
            r.from,
            r.to,
            r.p_before_pu,
            r.p_after_pu,
            r.outcome.to_string(),
            r.expected.to_string(),
            if r.matches { "ok" } else { "MISMATCH" }
        );
        rows.push(vec![
            r.id.clone(),
            r.from.index().to_string(),
            r.to.index().to_string(),
            num(r.p_before_pu),
            num(r.p_after_pu),
            r.expected.to_string(),
            r.outcome.to_string(),
            r.trigger.map(|t| format!("{t:?}")).unwrap_or_default(),
            r.final_mode.index().to_string(),
            num(r.final_v_bus),
            r.matches.to_string(),
        ]);
    }
    out!("{kind}: {}/{} verdicts match", rep.matched, rep.rows.len());
    let mut a = ctx.artifacts("table2");
    a.csv(
        "table2.csv",
        &[
            "id",
            "from",
            "to",
            "p_before_pu",
            "p_after_pu",
            "expected",
            "outcome",
            "trigger",
            "final_sigma",
            "final_v_bus",
            "matches",
        ],
        &rows,
    )?;
    ctx.finish(a, "table2")?;
    Ok(if rep.mismatches.is_empty() { 0 } else { 2 })
}

fn cmd_critical(ctx: &Ctx, spec: CriticalSpec) -> Result<u8> {
    let env = ctx.cfg.env(StrategyKind::Frozen(spec.mode));
    let res = critical_step_search(&env, &spec)?;
    let model = match spec.model {
        ModelKind::Rom => "rom",
        ModelKind::Full => "full",
    };
    out!(
        "critical step ({model}, {} from {} pu): {:.3} pu +- {} (stable {:.4}, unstable {:.4}, {} runs)",
        spec.mode,
        spec.p_start_pu,
        res.critical_pu,
        spec.tol_pu,
        res.stable_pu,
        res.unstable_pu,
        res.evaluations.len()
    );
    let mut a = ctx.artifacts("critical");
    let rows: Vec<Vec<String>> = res.evaluations.iter().map(|(p, o)| vec![num(*p), o.to_string()]).collect();
    a.csv("evaluations.csv", &["p_after_pu", "outcome"], &rows)?;
    #[derive(Serialize)]
    struct Rec {
        model: &'static str,
        mode: u8,
        p_start_pu: f64,
        tol_pu: f64,
        critical_pu: f64,
        stable_pu: f64,
        unstable_pu: f64,
    }
    a.toml(
        "critical.toml",
        &Rec {
            model,
            mode: spec.mode.index(),
            p_start_pu: spec.p_start_pu,
            tol_pu: spec.tol_pu,
            critical_pu: res.critical_pu,
            stable_pu: res.stable_pu,
            unstable_pu: res.unstable_pu,
        },
    )?;
    ctx.finish(a, "critical")?;
    Ok(0)
}

fn cmd_sweep(ctx: &Ctx, param: SweepArg, case: String, values: Option<&str>) -> Result<u8> {
    let (param, name, default) = match param {
        SweepArg::Cbus => (SweepParam::CBus, "c_bus", vec![2e-3, 5e-3, 10e-3, 20e-3, 50e-3]),
        SweepArg::Gain => (SweepParam::GainScale, "gain_scale", vec![0.5, 1.0, 2.0, 4.0]),
    };
    let values = match values {
        Some(v) => parse_list(v)?,
        None => default,
    };
    let env = ctx.cfg.env(StrategyKind::Baseline);
    let rep = sweep(&env, &ctx.cfg.cases, &SweepSpec { param, values, case_id: case })?;
    let mut rows = Vec::new();
    for p in &rep.points {
        let ts = p.settling_time.map(|t| format!("{t:.4} s")).unwrap_or_else(|| "-".into());
        out!("{name} = {}: {} (t_s {ts})", p.value, p.outcome);
        rows.push(vec![
            num(p.value),
            p.outcome.to_string(),
            p.trigger.map(|t| format!("{t:?}")).unwrap_or_default(),
            p.settling_time.map(num).unwrap_or_default(),
        ]);
    }
    out!(
        "case {}: {} Unstable->Stable, {} Stable->Unstable transitions",
        rep.case_id,
        rep.stabilizing_transitions(),
        rep.destabilizing_transitions()
    );
    let mut a = ctx.artifacts("sweep");
    a.csv("sweep.csv", &[name, "outcome", "trigger", "settling_time"], &rows)?;
    ctx.finish(a, "sweep")?;
    Ok(0)
}

fn cmd_diagnose(ctx: &Ctx, id: &str, strategy: Option<StrategyKind>) -> Result<u8> {
    let case = find_case(&ctx.cfg.cases, id)?;
    let kind = strategy.unwrap_or(case.strategy);
    let env = ctx.cfg.env(kind);
    let run = run_case_with(&env, &RomModel { plant: env.plant }, &case, Some(kind), true)?;
    let diag = feedback_diagnostic(&env.plant, &env.strategy, &run.trajectory)?;
    let rows: Vec<Vec<String>> = diag
        .samples
        .iter()
        .map(|s| {
            vec![
                num(s.t),
                s.mode.index().to_string(),
                num(s.p_e),
                num(s.v_bus),
                num(s.surplus),
                num(s.storage),
                num(s.dv_dt),
            ]
        })
        .collect();
    let mut a = ctx.artifacts("diagnose");
    a.csv("diagnostic.csv", &["t", "sigma", "p_e", "v_bus", "surplus", "storage", "dv_dt"], &rows)?;
    out!("{}", verdict_line(&case.id, kind, "rom", &run.verdict));
    out!("power balance identity: max relative error {:.3e}", diag.max_rel_err);
    for (t0, t1) in &diag.feedback_intervals {
        out!("deficit with falling v_bus: {t0:.4} s to {t1:.4} s");
    }
    ctx.finish(a, "diagnose")?;
    Ok(outcome_code(run.verdict.outcome))
}
