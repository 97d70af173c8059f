//! Explicit Runge–Kutta integration with guard-crossing events.
//!
//! Two methods are provided: classic fixed-step RK4 and the adaptive Dormand–Prince
//! 5(4) pair. Events are detected as sign changes of a scalar guard across an
//! accepted step and localized by bisection on that step, re-running the single-step
//! map from the step start with a shortened step. Integration with `t_end < t0`
//! runs forward in reversed time on the negated vector field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Classic fourth-order Runge–Kutta with step `h_init`.
    Rk4,
    /// Dormand–Prince 5(4) with embedded error control.
    DormandPrince45,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig<T> {
    pub method: Method,
    pub h_init: T,
    pub h_min: T,
    pub h_max: T,
    pub rel_tol: T,
    pub abs_tol: T,
    /// Width of the time bracket left by event bisection (s).
    pub event_time_tol: T,
    pub max_steps: usize,
}

impl<T: Scalar> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            method: Method::DormandPrince45,
            h_init: T::lit(1e-5),
            h_min: T::lit(1e-12),
            h_max: T::lit(1e-3),
            rel_tol: T::lit(1e-8),
            abs_tol: T::lit(1e-9),
            event_time_tol: T::lit(1e-7),
            max_steps: 1_000_000,
        }
    }
}

impl<T: Scalar> IntegratorConfig<T> {
    pub fn rk4(h: T) -> Self {
        Self { method: Method::Rk4, h_init: h, h_min: h, h_max: h, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: String| Err(Error::InvalidParam { field, reason });
        if !(self.h_min > T::zero() && self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return bad(
                "h_init",
                format!("need 0 < h_min <= h_init <= h_max, got {} / {} / {}", self.h_min, self.h_init, self.h_max),
            );
        }
        if !(self.rel_tol > T::zero()) {
            return bad("rel_tol", format!("must be > 0, got {}", self.rel_tol));
        }
        if !(self.abs_tol > T::zero()) {
            return bad("abs_tol", format!("must be > 0, got {}", self.abs_tol));
        }
        if !(self.event_time_tol > T::zero()) {
            return bad("event_time_tol", format!("must be > 0, got {}", self.event_time_tol));
        }
        if self.max_steps == 0 {
            return bad("max_steps", "must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Rising,
    Falling,
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventAction {
    Stop,
    Record,
}

/// Scalar guard; a crossing is a change of `guard >= 0` across a step.
pub struct EventSpec<'a, T, const N: usize> {
    pub guard: Box<dyn Fn(T, &[T; N]) -> T + Send + Sync + 'a>,
    pub direction: Direction,
    pub action: EventAction,
}

impl<'a, T: Scalar, const N: usize> EventSpec<'a, T, N> {
    pub fn new(guard: impl Fn(T, &[T; N]) -> T + Send + Sync + 'a, direction: Direction, action: EventAction) -> Self {
        Self { guard: Box::new(guard), direction, action }
    }

    fn crossed(&self, g0: T, g1: T) -> bool {
        let (p0, p1) = (g0 >= T::zero(), g1 >= T::zero());
        match self.direction {
            Direction::Rising => !p0 && p1,
            Direction::Falling => p0 && !p1,
            Direction::Either => p0 != p1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T, const N: usize> {
    pub t: T,
    pub x: [T; N],
}

/// A localized guard crossing. `t`/`x` lie on the far side of the crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventHit<T, const N: usize> {
    pub event: usize,
    pub t: T,
    pub x: [T; N],
    /// Time on the near side of the crossing; `|t - t_before| <= event_time_tol`.
    pub t_before: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination<T> {
    Completed,
    /// A stop event fired; carries the event index.
    Event(usize),
    StepUnderflow {
        t: T,
    },
    LeftValidity {
        t: T,
        reason: String,
    },
    MaxSteps,
    /// The monitor callback requested a stop.
    Monitor,
}

#[derive(Debug, Clone)]
pub struct Solution<T, const N: usize> {
    pub samples: Vec<Sample<T, N>>,
    pub events: Vec<EventHit<T, N>>,
    pub termination: Termination<T>,
    /// Magnitude of the last accepted step, useful to warm-start a continuation.
    pub last_h: T,
    pub steps: usize,
}

impl<T: Scalar, const N: usize> Solution<T, N> {
    pub fn last(&self) -> &Sample<T, N> {
        self.samples.last().expect("solution always holds the initial sample")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep every accepted step; otherwise only the first and last samples are kept.
    pub record_samples: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { record_samples: true }
    }
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

fn axpy<T: Scalar, const N: usize>(x: &[T; N], h: T, terms: &[(T, &[T; N])]) -> [T; N] {
    let mut out = *x;
    for (c, k) in terms {
        if *c == T::zero() {
            continue;
        }
        for i in 0..N {
            out[i] += h * *c * k[i];
        }
    }
    out
}

/// One step of the chosen method. Returns the new state and, for the adaptive
/// method, the embedded error vector.
fn single_step<T, F, const N: usize>(method: Method, f: &F, s: T, x: &[T; N], h: T) -> Result<([T; N], Option<[T; N]>)>
where
    T: Scalar,
    F: Fn(T, &[T; N]) -> Result<[T; N]>,
{
    match method {
        Method::Rk4 => {
            let half = T::lit(0.5);
            let k1 = f(s, x)?;
            let k2 = f(s + half * h, &axpy(x, h, &[(half, &k1)]))?;
            let k3 = f(s + half * h, &axpy(x, h, &[(half, &k2)]))?;
            let k4 = f(s + h, &axpy(x, h, &[(T::one(), &k3)]))?;
            let (sixth, third) = (T::lit(1.0 / 6.0), T::lit(1.0 / 3.0));
            Ok((axpy(x, h, &[(sixth, &k1), (third, &k2), (third, &k3), (sixth, &k4)]), None))
        }
        Method::DormandPrince45 => {
            let mut k = [[T::zero(); N]; 7];
            for stage in 0..7 {
                let mut xs = *x;
                for (j, kj) in k.iter().enumerate().take(stage) {
                    let a = T::lit(DP_A[stage][j]);
                    if a != T::zero() {
                        for i in 0..N {
                            xs[i] += h * a * kj[i];
                        }
                    }
                }
                k[stage] = f(s + T::lit(DP_C[stage]) * h, &xs)?;
            }
            let mut x5 = *x;
            let mut err = [T::zero(); N];
            for (stage, ks) in k.iter().enumerate() {
                let (b5, b4) = (T::lit(DP_B5[stage]), T::lit(DP_B4[stage]));
                for i in 0..N {
                    x5[i] += h * b5 * ks[i];
                    err[i] += h * (b5 - b4) * ks[i];
                }
            }
            Ok((x5, Some(err)))
        }
    }
}

fn error_norm<T: Scalar, const N: usize>(err: &[T; N], x0: &[T; N], x1: &[T; N], cfg: &IntegratorConfig<T>) -> T {
    let mut acc = T::zero();
    for i in 0..N {
        let scale = cfg.abs_tol + cfg.rel_tol * x0[i].abs().max(x1[i].abs());
        let r = err[i] / scale;
        acc += r * r;
    }
    (acc / T::lit(N as f64)).sqrt()
}

/// Integrates `rhs` from `(t0, x0)` to `t_end` with events, keeping every step.
pub fn integrate<T, F, const N: usize>(
    rhs: F,
    x0: [T; N],
    t0: T,
    t_end: T,
    cfg: &IntegratorConfig<T>,
    events: &[EventSpec<'_, T, N>],
) -> Solution<T, N>
where
    T: Scalar,
    F: Fn(T, &[T; N]) -> Result<[T; N]>,
{
    integrate_with(rhs, x0, t0, t_end, cfg, events, RunOptions::default(), |_, _| Control::Continue)
}

/// Full-control variant of [`integrate`] with sampling options and a monitor
/// called after every accepted step.
pub fn integrate_with<T, F, M, const N: usize>(
    rhs: F,
    x0: [T; N],
    t0: T,
    t_end: T,
    cfg: &IntegratorConfig<T>,
    events: &[EventSpec<'_, T, N>],
    opts: RunOptions,
    mut monitor: M,
) -> Solution<T, N>
where
    T: Scalar,
    F: Fn(T, &[T; N]) -> Result<[T; N]>,
    M: FnMut(T, &[T; N]) -> Control,
{
    // Internal time s runs forward from 0; physical time is t0 + dir * s.
    let dir = if t_end >= t0 { T::one() } else { -T::one() };
    let span = (t_end - t0).abs();
    let phys = |s: T| t0 + dir * s;
    let field = |s: T, x: &[T; N]| -> Result<[T; N]> {
        let mut d = rhs(phys(s), x)?;
        if dir < T::zero() {
            for v in d.iter_mut() {
                *v = -*v;
            }
        }
        Ok(d)
    };

    let mut samples = vec![Sample { t: t0, x: x0 }];
    let mut hits = Vec::new();
    let mut s = T::zero();
    let mut x = x0;
    let mut h = cfg.h_init.min(cfg.h_max);
    let mut last_h = h;
    let mut steps = 0usize;

    let finish = |mut samples: Vec<Sample<T, N>>, last: Sample<T, N>, hits, termination, last_h, steps| {
        if samples.last().map(|p: &Sample<T, N>| p.t != last.t || p.x != last.x).unwrap_or(true) {
            samples.push(last);
        }
        Solution { samples, events: hits, termination, last_h, steps }
    };

    if span == T::zero() {
        return finish(samples, Sample { t: t0, x }, hits, Termination::Completed, last_h, steps);
    }
    if let Err(e) = field(s, &x) {
        return finish(
            samples,
            Sample { t: t0, x },
            hits,
            Termination::LeftValidity { t: t0, reason: e.to_string() },
            last_h,
            steps,
        );
    }

    loop {
        if steps >= cfg.max_steps {
            return finish(samples, Sample { t: phys(s), x }, hits, Termination::MaxSteps, last_h, steps);
        }
        let remaining = span - s;
        let h_try = h.min(remaining);
        let last_piece = h_try >= remaining;
        let trial = single_step(cfg.method, &field, s, &x, h_try);

        let (x_new, h_next) = match (cfg.method, trial) {
            (_, Err(e)) => {
                // Leaving the validity region inside the step: retry smaller, give up at h_min.
                if cfg.method == Method::DormandPrince45 && h_try * T::lit(0.25) >= cfg.h_min {
                    h = h_try * T::lit(0.25);
                    continue;
                }
                return finish(
                    samples,
                    Sample { t: phys(s), x },
                    hits,
                    Termination::LeftValidity { t: phys(s), reason: e.to_string() },
                    last_h,
                    steps,
                );
            }
            (Method::Rk4, Ok((xn, _))) => (xn, cfg.h_init),
            (Method::DormandPrince45, Ok((xn, err))) => {
                let en = error_norm(&err.expect("embedded error"), &x, &xn, cfg);
                let factor = if en == T::zero() {
                    T::lit(5.0)
                } else {
                    (T::lit(0.9) * en.powf(T::lit(-0.2))).max(T::lit(0.2)).min(T::lit(5.0))
                };
                if !(en <= T::one()) {
                    let h_new = h_try * factor.min(T::lit(0.9));
                    if h_new < cfg.h_min {
                        return finish(
                            samples,
                            Sample { t: phys(s), x },
                            hits,
                            Termination::StepUnderflow { t: phys(s) },
                            last_h,
                            steps,
                        );
                    }
                    h = h_new;
                    continue;
                }
                (xn, (h_try * factor).min(cfg.h_max).max(cfg.h_min))
            }
        };
        if x_new.iter().any(|v| !v.is_finite()) {
            return finish(
                samples,
                Sample { t: phys(s), x },
                hits,
                Termination::LeftValidity { t: phys(s), reason: "non-finite state".into() },
                last_h,
                steps,
            );
        }

        // Event scan over the accepted step.
        let s_new = if last_piece { span } else { s + h_try };
        let mut earliest: Option<(usize, T, [T; N], T)> = None;
        let mut step_hits: Vec<(T, EventHit<T, N>)> = Vec::new();
        for (i, ev) in events.iter().enumerate() {
            let g0 = (ev.guard)(phys(s), &x);
            let g1 = (ev.guard)(phys(s_new), &x_new);
            if !ev.crossed(g0, g1) {
                continue;
            }
            // Bisection on the step fraction.
            let (mut lo, mut hi) = (T::zero(), T::one());
            let mut x_hi = x_new;
            let mut ok = true;
            while (hi - lo) * h_try > cfg.event_time_tol {
                let mid = T::lit(0.5) * (lo + hi);
                match single_step(cfg.method, &field, s, &x, mid * h_try) {
                    Ok((xm, _)) => {
                        if ev.crossed(g0, (ev.guard)(phys(s + mid * h_try), &xm)) {
                            hi = mid;
                            x_hi = xm;
                        } else {
                            lo = mid;
                        }
                    }
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let hit = EventHit { event: i, t: phys(s + hi * h_try), x: x_hi, t_before: phys(s + lo * h_try) };
            if ev.action == EventAction::Stop && earliest.map(|e| hi < e.1).unwrap_or(true) {
                earliest = Some((i, hi, x_hi, lo));
            }
            step_hits.push((hi, hit));
        }

        steps += 1;
        last_h = h_try;
        if let Some((idx, frac, x_hit, _)) = earliest {
            step_hits.retain(|(f, _)| *f <= frac);
            step_hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            hits.extend(step_hits.into_iter().map(|(_, h)| h));
            let t_hit = phys(s + frac * h_try);
            if opts.record_samples {
                samples.push(Sample { t: t_hit, x: x_hit });
            }
            return finish(samples, Sample { t: t_hit, x: x_hit }, hits, Termination::Event(idx), last_h, steps);
        }
        step_hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        hits.extend(step_hits.into_iter().map(|(_, h)| h));

        s = s_new;
        x = x_new;
        h = h_next;
        if opts.record_samples {
            samples.push(Sample { t: phys(s), x });
        }
        if monitor(phys(s), &x) == Control::Stop {
            return finish(samples, Sample { t: phys(s), x }, hits, Termination::Monitor, last_h, steps);
        }
        if last_piece {
            return finish(samples, Sample { t: phys(s), x }, hits, Termination::Completed, last_h, steps);
        }
    }
}

/// Global RK4 error ratio `e(h) / e(h/2)` at `t1` against a known solution.
/// A fourth-order method gives a ratio near 16.
pub fn order_check<T, F, E, const N: usize>(rhs: F, exact: E, x0: [T; N], t0: T, t1: T, h: T) -> T
where
    T: Scalar,
    F: Fn(T, &[T; N]) -> Result<[T; N]> + Copy,
    E: Fn(T) -> [T; N],
{
    let err = |step: T| {
        let sol = integrate(rhs, x0, t0, t1, &IntegratorConfig::rk4(step), &[]);
        let xe = exact(t1);
        let xn = sol.last().x;
        (0..N).map(|i| (xn[i] - xe[i]).abs()).fold(T::zero(), T::max)
    };
    err(h) / err(h / T::lit(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_: f64, x: &[f64; 1]) -> Result<[f64; 1]> {
        Ok([-x[0]])
    }

    #[test]
    fn rk4_polynomial_exactness() {
        let sol = integrate(|_, _: &[f64; 1]| Ok([1.0]), [0.0], 0.0, 1.0, &IntegratorConfig::rk4(0.1), &[]);
        assert_eq!(sol.termination, Termination::Completed);
        assert!((sol.last().x[0] - 1.0).abs() < 1e-14);
        assert!((sol.last().t - 1.0).abs() < 1e-14);
    }

    #[test]
    fn decay_event_at_ln2() {
        let ev = [EventSpec::new(|_, x: &[f64; 1]| x[0] - 0.5, Direction::Falling, EventAction::Stop)];
        for cfg in [IntegratorConfig::default(), IntegratorConfig::rk4(1e-3)] {
            let sol = integrate(decay, [1.0], 0.0, 2.0, &cfg, &ev);
            assert_eq!(sol.termination, Termination::Event(0));
            let hit = sol.events[0];
            assert!((hit.t - std::f64::consts::LN_2).abs() < 1e-6, "{}", hit.t);
            assert!((hit.t - hit.t_before).abs() <= cfg.event_time_tol);
        }
    }

    #[test]
    fn record_events_do_not_stop() {
        let ev = [EventSpec::new(|_, x: &[f64; 1]| x[0] - 0.5, Direction::Either, EventAction::Record)];
        let sol = integrate(decay, [1.0], 0.0, 2.0, &IntegratorConfig::default(), &ev);
        assert_eq!(sol.termination, Termination::Completed);
        assert_eq!(sol.events.len(), 1);
        let rising = [EventSpec::new(|_, x: &[f64; 1]| x[0] - 0.5, Direction::Rising, EventAction::Stop)];
        let sol = integrate(decay, [1.0], 0.0, 2.0, &IntegratorConfig::default(), &rising);
        assert!(sol.events.is_empty());
    }

    #[test]
    fn backward_integration() {
        let cfg = IntegratorConfig::default();
        let sol = integrate(decay, [1.0], 1.0, 0.0, &cfg, &[]);
        assert_eq!(sol.termination, Termination::Completed);
        assert_eq!(sol.last().t, 0.0);
        assert!((sol.last().x[0] - std::f64::consts::E).abs() < 1e-7);
        assert!(sol.samples.windows(2).all(|w| w[1].t < w[0].t));
    }

    #[test]
    fn order_ratios() {
        let r = order_check(decay, |t| [(-t).exp()], [1.0], 0.0, 1.0, 0.1);
        assert!((12.0..=20.0).contains(&r), "{r}");
        let r = order_check(|t, _: &[f64; 1]| Ok([t.cos()]), |t: f64| [t.sin()], [0.0], 0.0, 1.0, 0.1);
        assert!((12.0..=20.0).contains(&r), "{r}");
    }

    #[test]
    fn domain_error_reported() {
        let f = |_: f64, x: &[f64; 1]| {
            if x[0] <= 0.0 {
                Err(Error::Domain("x <= 0".into()))
            } else {
                Ok([-1.0])
            }
        };
        let sol = integrate(f, [0.5], 0.0, 2.0, &IntegratorConfig::default(), &[]);
        assert!(matches!(sol.termination, Termination::LeftValidity { .. }), "{:?}", sol.termination);
        assert!(sol.last().x[0] > 0.0);
    }

    #[test]
    fn step_underflow_reported() {
        // x' = x^2 blows up at t = 1.
        let f = |_: f64, x: &[f64; 1]| Ok([x[0] * x[0]]);
        let cfg = IntegratorConfig { h_min: 1e-6, ..IntegratorConfig::default() };
        let sol = integrate(f, [1.0], 0.0, 2.0, &cfg, &[]);
        assert!(
            matches!(sol.termination, Termination::StepUnderflow { .. } | Termination::LeftValidity { .. }),
            "{:?}",
            sol.termination
        );
        assert!(sol.last().t < 1.0);
    }

    #[test]
    fn monitor_stops() {
        let sol = integrate_with(
            decay,
            [1.0],
            0.0,
            5.0,
            &IntegratorConfig::default(),
            &[],
            RunOptions { record_samples: false },
            |t, _| {
                if t > 1.0 {
                    Control::Stop
                } else {
                    Control::Continue
                }
            },
        );
        assert_eq!(sol.termination, Termination::Monitor);
        assert_eq!(sol.samples.len(), 2);
    }

    #[test]
    fn config_validation() {
        IntegratorConfig::<f64>::default().validate().unwrap();
        let bad = IntegratorConfig { h_min: 1.0, ..IntegratorConfig::<f64>::default() };
        assert!(bad.validate().is_err());
        let bad = IntegratorConfig { rel_tol: 0.0, ..IntegratorConfig::<f64>::default() };
        assert!(bad.validate().is_err());
    }
}
