//! Equilibria of the reduced-order model, Jacobians and eigenvalue classification.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModeDef, Plant, RomState};
use crate::scalar::Scalar;

/// Real parts closer to zero than this are reported as marginal.
pub const MARGINAL_EPS: f64 = 1e-9;

/// Row-major 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2<T>(pub [[T; 2]; 2]);

impl<T: Scalar> Mat2<T> {
    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> T {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    /// Eigenvalues from the trace/determinant closed form, larger real part first.
    pub fn eigenvalues(&self) -> [Complex<T>; 2] {
        let two = T::lit(2.0);
        let half_tr = self.trace() / two;
        let disc = half_tr * half_tr - self.det();
        if disc >= T::zero() {
            let sq = disc.sqrt();
            [Complex::new(half_tr + sq, T::zero()), Complex::new(half_tr - sq, T::zero())]
        } else {
            let sq = (-disc).sqrt();
            [Complex::new(half_tr, sq), Complex::new(half_tr, -sq)]
        }
    }

    /// Unit eigenvector for a real eigenvalue.
    pub fn eigenvector(&self, lambda: T) -> [T; 2] {
        let [[a, b], [c, d]] = self.0;
        // Pick the better-conditioned row of (A - λI) v = 0.
        let r0 = (a - lambda).abs() + b.abs();
        let r1 = c.abs() + (d - lambda).abs();
        let v = if r0 >= r1 { [b, lambda - a] } else { [lambda - d, c] };
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if n == T::zero() {
            // A is already λI in this direction.
            [T::one(), T::zero()]
        } else {
            [v[0] / n, v[1] / n]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    #[serde(rename = "SEP")]
    Sep,
    #[serde(rename = "UEP")]
    Uep,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stability::Sep => "SEP",
            Stability::Uep => "UEP",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification<T> {
    pub kind: Stability,
    pub eigenvalues: [Complex<T>; 2],
    pub marginal: bool,
}

/// SEP iff both eigenvalues have strictly negative real part.
pub fn classify<T: Scalar>(j: &Mat2<T>) -> Classification<T> {
    let eigenvalues = j.eigenvalues();
    let eps = T::lit(MARGINAL_EPS);
    let marginal = eigenvalues.iter().any(|l| l.re.abs() < eps);
    let stable = !marginal && eigenvalues.iter().all(|l| l.re < T::zero());
    Classification { kind: if stable { Stability::Sep } else { Stability::Uep }, eigenvalues, marginal }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium<T> {
    pub point: RomState<T>,
    pub kind: Stability,
    pub eigenvalues: [Complex<T>; 2],
    /// Set for double roots and eigenvalues on the imaginary axis.
    pub marginal: bool,
    pub mode: ModeDef<T>,
    pub p_e: T,
}

impl<T: Scalar> Equilibrium<T> {
    pub fn is_sep(&self) -> bool {
        self.kind == Stability::Sep
    }
}

/// Closed-form Jacobian of the reduced-order model at a CV equilibrium.
pub fn jacobian_cv<T: Scalar>(plant: &Plant<T>, m: &ModeDef<T>) -> Result<Mat2<T>> {
    if !m.is_cv() {
        return Err(Error::InvalidMode(format!("{} has R_d = {} != 0", m.sigma, m.r_d)));
    }
    let c = &plant.circuit;
    let k = &plant.control;
    let g = c.u_s / (c.c_bus * m.u_ref);
    Ok(Mat2([[T::zero(), -k.k_iv], [g, -k.k_pv * g]]))
}

/// Central finite-difference Jacobian of the reduced-order right-hand side.
pub fn jacobian_numeric<T: Scalar>(plant: &Plant<T>, s: RomState<T>, m: &ModeDef<T>, p_e: T) -> Result<Mat2<T>> {
    jacobian_numeric_step(plant, s, m, p_e, T::lit(1e-6).max(T::epsilon().sqrt()))
}

/// As [`jacobian_numeric`] with an explicit relative step.
pub fn jacobian_numeric_step<T: Scalar>(
    plant: &Plant<T>,
    s: RomState<T>,
    m: &ModeDef<T>,
    p_e: T,
    rel_step: T,
) -> Result<Mat2<T>> {
    let x = s.to_array();
    let mut j = [[T::zero(); 2]; 2];
    for col in 0..2 {
        let h = rel_step * x[col].abs().max(T::one());
        let mut xp = x;
        let mut xm = x;
        xp[col] += h;
        xm[col] -= h;
        let fp = plant.rom_rhs(RomState::from_array(xp), m, p_e)?.to_array();
        let fm = plant.rom_rhs(RomState::from_array(xm), m, p_e)?.to_array();
        for row in 0..2 {
            j[row][col] = (fp[row] - fm[row]) / (xp[col] - xm[col]);
        }
    }
    Ok(Mat2(j))
}

/// The unique equilibrium `(P_e/U_s, U_ref)` of a CV mode.
pub fn cv_equilibrium<T: Scalar>(plant: &Plant<T>, p_e: T, m: &ModeDef<T>) -> Result<Equilibrium<T>> {
    let j = jacobian_cv(plant, m)?;
    let cls = classify(&j);
    Ok(Equilibrium {
        point: RomState::new(p_e / plant.circuit.u_s, m.u_ref),
        kind: cls.kind,
        eigenvalues: cls.eigenvalues,
        marginal: cls.marginal,
        mode: *m,
        p_e,
    })
}

/// Physical (`v_bus > 0`) roots of `v² - U_ref v + P_e R_d = 0` for a droop mode,
/// high-voltage root first.
pub fn droop_equilibria<T: Scalar>(plant: &Plant<T>, p_e: T, m: &ModeDef<T>) -> Result<Vec<Equilibrium<T>>> {
    if !(m.r_d > T::zero()) {
        return Err(Error::InvalidMode(format!("{} is not a droop mode (R_d = {})", m.sigma, m.r_d)));
    }
    let two = T::lit(2.0);
    let disc = m.u_ref * m.u_ref - T::lit(4.0) * p_e * m.r_d;
    if disc < T::zero() {
        return Ok(Vec::new());
    }
    let s_v = p_e / plant.circuit.u_s;
    let sq = disc.sqrt();
    let double = sq == T::zero();
    let roots = if double { vec![m.u_ref / two] } else { vec![(m.u_ref + sq) / two, (m.u_ref - sq) / two] };
    let mut out = Vec::with_capacity(2);
    for v in roots.into_iter().filter(|&v| v > T::zero()) {
        let point = RomState::new(s_v, v);
        let j = jacobian_numeric(plant, point, m, p_e)?;
        let cls = classify(&j);
        let marginal = double || cls.marginal;
        out.push(Equilibrium {
            point,
            kind: if marginal { Stability::Uep } else { cls.kind },
            eigenvalues: cls.eigenvalues,
            marginal,
            mode: *m,
            p_e,
        });
    }
    Ok(out)
}

/// All physical equilibria of one mode.
pub fn equilibria_of<T: Scalar>(plant: &Plant<T>, p_e: T, m: &ModeDef<T>) -> Result<Vec<Equilibrium<T>>> {
    if m.is_cv() {
        Ok(vec![cv_equilibrium(plant, p_e, m)?])
    } else {
        droop_equilibria(plant, p_e, m)
    }
}

/// The stable equilibrium of one mode, if any.
pub fn sep_of<T: Scalar>(plant: &Plant<T>, p_e: T, m: &ModeDef<T>) -> Option<Equilibrium<T>> {
    equilibria_of(plant, p_e, m).ok()?.into_iter().find(|e| e.is_sep())
}

/// The saddle (real eigenvalues of opposite sign) of one mode, if any.
pub fn saddle_of<T: Scalar>(plant: &Plant<T>, p_e: T, m: &ModeDef<T>) -> Option<Equilibrium<T>> {
    equilibria_of(plant, p_e, m).ok()?.into_iter().find(|e| {
        e.kind == Stability::Uep
            && !e.marginal
            && e.eigenvalues[0].im == T::zero()
            && e.eigenvalues[0].re > T::zero()
            && e.eigenvalues[1].re < T::zero()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mode, ModeTable};

    fn setup() -> (Plant<f64>, ModeTable<f64>) {
        (Plant::default(), ModeTable::default())
    }

    #[test]
    fn cv_examples() {
        let (p, t) = setup();
        let e = cv_equilibrium(&p, -1200.0, &t.get(Mode::One)).unwrap();
        assert_eq!(e.point, RomState::new(-24.0, 120.0));
        assert_eq!(e.kind, Stability::Sep);
        let e = cv_equilibrium(&p, 0.0, &t.get(Mode::Four)).unwrap();
        assert_eq!(e.point, RomState::new(0.0, 100.0));
        assert!(e.is_sep());
        let e = cv_equilibrium(&p, 1300.0, &t.get(Mode::Four)).unwrap();
        assert_eq!(e.point, RomState::new(26.0, 100.0));
        assert!(e.is_sep());
        assert!(matches!(cv_equilibrium(&p, 0.0, &t.get(Mode::Two)), Err(Error::InvalidMode(_))));
    }

    #[test]
    fn droop_examples() {
        let (p, t) = setup();
        let eqs = droop_equilibria(&p, 100.0, &t.get(Mode::Three)).unwrap();
        assert_eq!(eqs.len(), 2);
        assert!((110.0f64 * 110.0 - 4.0 * 100.0 * 0.83 - 11768.0).abs() < 1e-9);
        assert!(eqs[0].is_sep());
        assert!((eqs[0].point.v_bus - 109.2402).abs() < 1e-4);
        assert_eq!(eqs[0].point.s_v, 2.0);
        assert_eq!(eqs[1].kind, Stability::Uep);
        assert!((eqs[1].point.v_bus - 0.7598).abs() < 1e-4);

        let eqs = droop_equilibria(&p, -400.0, &t.get(Mode::Two)).unwrap();
        assert_eq!(eqs.len(), 1);
        assert!(eqs[0].is_sep());
        assert_eq!(eqs[0].point.s_v, -8.0);
        assert!((eqs[0].point.v_bus - 113.5235).abs() < 1e-4);

        assert!(droop_equilibria(&p, 3500.0, &t.get(Mode::Two)).unwrap().is_empty());
        assert!(droop_equilibria(&p, 0.0, &t.get(Mode::One)).is_err());
    }

    #[test]
    fn double_root_is_single_marginal() {
        let (p, _) = setup();
        let m = ModeDef::new(Mode::Two, 110.0, 1.0);
        let eqs = droop_equilibria(&p, 110.0 * 110.0 / 4.0, &m).unwrap();
        assert_eq!(eqs.len(), 1);
        assert!(eqs[0].marginal);
        assert_eq!(eqs[0].kind, Stability::Uep);
    }

    #[test]
    fn jacobian_cv_mode1_and_mode4() {
        let (p, t) = setup();
        let j = jacobian_cv(&p, &t.get(Mode::One)).unwrap();
        assert!((j.det() - 333.333_333).abs() < 1e-3);
        assert!((j.trace() + 16.666_667).abs() < 1e-5);
        let ev = j.eigenvalues();
        assert!((ev[0].re + 8.333_333).abs() < 1e-5);
        assert!((ev[0].im.abs() - 16.245).abs() < 1e-3);
        assert_eq!(classify(&j).kind, Stability::Sep);

        let j = jacobian_cv(&p, &t.get(Mode::Four)).unwrap();
        assert!((j.det() - 400.0).abs() < 1e-9);
        assert!((j.trace() + 20.0).abs() < 1e-12);
        assert!(jacobian_cv(&p, &t.get(Mode::Three)).is_err());
    }

    #[test]
    fn numeric_jacobian_matches_closed_form() {
        let (p, t) = setup();
        for (m, p_e) in [(t.get(Mode::One), -1200.0), (t.get(Mode::Four), 1300.0), (t.get(Mode::One), 500.0)] {
            let e = cv_equilibrium(&p, p_e, &m).unwrap();
            let jn = jacobian_numeric(&p, e.point, &m, p_e).unwrap();
            let jc = jacobian_cv(&p, &m).unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    let (a, b) = (jn.0[r][c], jc.0[r][c]);
                    assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-12) || (a - b).abs() < 1e-9, "{r}{c}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn mode3_uep_is_saddle_and_step_insensitive() {
        let (p, t) = setup();
        let m = t.get(Mode::Three);
        let uep = droop_equilibria(&p, 100.0, &m).unwrap()[1];
        let j1 = jacobian_numeric(&p, uep.point, &m, 100.0).unwrap();
        assert!(j1.det() < 0.0);
        let j2 = jacobian_numeric_step(&p, uep.point, &m, 100.0, 2e-6).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let (a, b) = (j1.0[r][c], j2.0[r][c]);
                assert!((a - b).abs() <= 1e-4 * a.abs().max(1e-9), "{a} {b}");
            }
        }
        assert!(saddle_of(&p, 100.0, &m).is_some());
        assert!(saddle_of(&p, 100.0, &t.get(Mode::One)).is_none());
    }

    #[test]
    fn classify_examples() {
        let c = classify(&Mat2([[1.0, 0.0], [0.0, -1.0]]));
        assert_eq!(c.kind, Stability::Uep);
        let c = classify(&Mat2([[-1.0, 0.0], [0.0, -2.0]]));
        assert_eq!(c.kind, Stability::Sep);
        let c = classify(&Mat2([[0.0, 1.0], [-1.0, 0.0]]));
        assert!(c.marginal);
        assert_eq!(c.kind, Stability::Uep);
    }

    #[test]
    fn eigenvector_satisfies_definition() {
        let a: Mat2<f64> = Mat2([[1.0, 2.0], [3.0, -4.0]]);
        for l in a.eigenvalues() {
            let v = a.eigenvector(l.re);
            let r0 = a.0[0][0] * v[0] + a.0[0][1] * v[1] - l.re * v[0];
            let r1 = a.0[1][0] * v[0] + a.0[1][1] * v[1] - l.re * v[1];
            assert!(r0.abs() < 1e-12 && r1.abs() < 1e-12);
        }
    }
}
