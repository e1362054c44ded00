//! Two-vehicle equilibrium and linearization analysis of the contested merge.
//!
//! One vehicle on the highway and one on the merge lane, both approaching the
//! merge point. With the pairwise barrier active, the closed loop has an
//! equilibrium on the boundary `h = 0` (mutual standstill). Around it the
//! linearization splits into a stable pair inherited from the barrier
//! dynamics, `{-λ1, -λ2}`, and a saddle pair governed by `κ` and `‖v0‖/D`.
//!
//! Lane coordinates `s = (s1, s2)` map to `z = T s` with
//! `T = [[1, -cos γ], [0, sin γ]]`, so that `‖z‖` is the planar distance and
//! the barrier gradient with respect to the commands is `(2/τf) Tᵀ z`.

use std::io::Write;

use nalgebra::{Complex, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{self, BarrierGains, PairInput};
use crate::geometry::{Lane, LanePosition, RoadNetwork};
use crate::qp::QpProblem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuningError {
    #[error("merge angle {0} rad must lie in (0, pi/2]")]
    SingularAngle(f64),
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error(transparent)]
    Csv(#[from] CsvError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct CsvError(String);

pub type Mat2 = [[f64; 2]; 2];

/// `T` and `T⁻¹` for merge angle `γ`.
///
/// `γ = π/2` is accepted: `T` is the identity there and the analysis is exact.
/// `T` is singular only as `γ → 0`.
pub fn transform(gamma: f64) -> Result<(Mat2, Mat2), TuningError> {
    if !(gamma > 0.0 && gamma <= std::f64::consts::FRAC_PI_2 + 1e-15) {
        return Err(TuningError::SingularAngle(gamma));
    }
    let (s, c) = gamma.sin_cos();
    let t = [[1.0, -c], [0.0, s]];
    let t_inv = [[1.0, c / s], [0.0, 1.0 / s]];
    Ok((t, t_inv))
}

pub fn mat_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn mat_t_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[1][0] * v[1], m[0][1] * v[0] + m[1][1] * v[1]]
}

/// `κ = 1 / (τf (1 + α m))`.
pub fn kappa(tau_f: f64, alpha: f64, mass: f64) -> f64 {
    1.0 / (tau_f * (1.0 + alpha * mass))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoVehicleTuning {
    pub gamma: f64,
    pub v0: [f64; 2],
    /// Contact distance `2 (1 + β) r`.
    pub d: f64,
    pub kappa: f64,
}

impl TwoVehicleTuning {
    pub fn new(gamma: f64, v0: [f64; 2], d: f64, kappa: f64) -> Result<Self, TuningError> {
        let t = Self { gamma, v0, d, kappa };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TuningError> {
        transform(self.gamma)?;
        if !(self.d > 0.0) {
            return Err(TuningError::NonPositive("D", self.d));
        }
        if !(self.kappa > 0.0) {
            return Err(TuningError::NonPositive("kappa", self.kappa));
        }
        Ok(())
    }

    pub fn v0_norm(&self) -> f64 {
        self.v0[0].hypot(self.v0[1])
    }
}

/// Roots of `λ² + κλ - κ‖v0‖/D`, returned as `(stable, unstable)`.
pub fn mu_eigenvalues(t: &TwoVehicleTuning) -> (f64, f64) {
    let k = t.kappa;
    let disc = (0.25 * k * k + k * t.v0_norm() / t.d).sqrt();
    (-0.5 * k - disc, -0.5 * k + disc)
}

/// Open interval swept by the unstable root as `κ` runs over `(0, ∞)`.
pub fn unstable_range(v0_norm: f64, d: f64) -> Result<(f64, f64), TuningError> {
    if !(v0_norm > 0.0) {
        return Err(TuningError::NonPositive("|v0|", v0_norm));
    }
    if !(d > 0.0) {
        return Err(TuningError::NonPositive("D", d));
    }
    Ok((0.0, v0_norm / d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub kappa: f64,
    pub stable: f64,
    pub unstable: f64,
}

pub fn kappa_table(
    gamma: f64,
    v0: [f64; 2],
    d: f64,
    kappas: &[f64],
) -> Result<Vec<KappaRow>, TuningError> {
    kappas
        .iter()
        .map(|&k| {
            let t = TwoVehicleTuning::new(gamma, v0, d, k)?;
            let (stable, unstable) = mu_eigenvalues(&t);
            Ok(KappaRow { kappa: k, stable, unstable })
        })
        .collect()
}

pub fn write_kappa_csv<W: Write>(rows: &[KappaRow], out: W) -> Result<(), TuningError> {
    let mut w = csv::Writer::from_writer(out);
    let res = (|| {
        w.write_record(["kappa_per_s", "stable_eig_per_s", "unstable_eig_per_s"])?;
        for r in rows {
            w.write_record([r.kappa.to_string(), r.stable.to_string(), r.unstable.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)
    })();
    res.map_err(|e| CsvError(e.to_string()).into())
}

/// Two equal vehicles negotiating the merge with their barrier active.
///
/// State is `[s1, s2, v1, v2]`: highway vehicle first, merge vehicle second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContestedPair {
    pub gamma: f64,
    pub v0: [f64; 2],
    pub radius: f64,
    pub barrier: BarrierGains,
    /// `α m`, the velocity-tracking attenuation.
    pub rho: f64,
}

impl ContestedPair {
    fn net(&self) -> RoadNetwork {
        RoadNetwork {
            merge_angle_rad: self.gamma,
            ..RoadNetwork::default()
        }
    }

    pub fn d(&self) -> f64 {
        2.0 * (1.0 + self.barrier.beta) * self.radius
    }

    pub fn kappa(&self) -> f64 {
        1.0 / (self.barrier.tau_f * (1.0 + self.rho))
    }

    pub fn tuning(&self) -> Result<TwoVehicleTuning, TuningError> {
        TwoVehicleTuning::new(self.gamma, self.v0, self.d(), self.kappa())
    }

    /// Barrier row `a + b·u ≥ 0` at state `x`.
    pub fn row(&self, x: [f64; 4]) -> (f64, [f64; 2]) {
        let agents = [
            PairInput {
                pos: LanePosition::new(Lane::Highway, x[0]),
                speed: x[2],
                radius: self.radius,
            },
            PairInput {
                pos: LanePosition::new(Lane::Merge, x[1]),
                speed: x[3],
                radius: self.radius,
            },
        ];
        let r = cbf::pair_rows(&agents, &self.barrier, &self.net())[0];
        (r.a, [r.coef_i, r.coef_j])
    }

    /// Unconstrained optimum of the per-agent tracking cost.
    pub fn v_bar(&self, x: [f64; 4]) -> [f64; 2] {
        let w = 1.0 + self.rho;
        [(self.v0[0] + self.rho * x[2]) / w, (self.v0[1] + self.rho * x[3]) / w]
    }

    /// Projection of `v̄` onto the active barrier row.
    pub fn control(&self, x: [f64; 4]) -> [f64; 2] {
        let (a, b) = self.row(x);
        let vb = self.v_bar(x);
        let k = (a + b[0] * vb[0] + b[1] * vb[1]) / (b[0] * b[0] + b[1] * b[1]);
        [vb[0] - k * b[0], vb[1] - k * b[1]]
    }

    /// The same problem as a QP over the two commands, without actuator bounds.
    pub fn qp(&self, x: [f64; 4]) -> QpProblem {
        let (a, b) = self.row(x);
        let h = 2.0 * (1.0 + self.rho);
        let c = [-2.0 * (self.v0[0] + self.rho * x[2]), -2.0 * (self.v0[1] + self.rho * x[3])];
        let mut qp = QpProblem::new(vec![h, h], c.to_vec());
        qp.push_row(&b, -a);
        qp
    }

    pub fn dynamics(&self, x: [f64; 4]) -> [f64; 4] {
        let u = self.control(x);
        let tf = self.barrier.tau_f;
        [x[2], x[3], (u[0] - x[2]) / tf, (u[1] - x[3]) / tf]
    }

    /// Standstill on the barrier boundary with `v0 ∥ Tᵀ z`.
    ///
    /// Both vehicles sit upstream of the merge point, so `z` points against
    /// `T⁻ᵀ v0`.
    pub fn equilibrium(&self) -> Result<[f64; 4], TuningError> {
        let (_, t_inv) = transform(self.gamma)?;
        let dir = mat_t_vec(&t_inv, self.v0);
        let n = dir[0].hypot(dir[1]);
        let z = [-self.d() * dir[0] / n, -self.d() * dir[1] / n];
        let s = mat_vec(&t_inv, z);
        Ok([s[0], s[1], 0.0, 0.0])
    }

    /// Central-difference Jacobian of the closed loop.
    pub fn jacobian(&self, x: [f64; 4], step: f64) -> Matrix4<f64> {
        let mut j = Matrix4::zeros();
        for c in 0..4 {
            let (mut xp, mut xm) = (x, x);
            xp[c] += step;
            xm[c] -= step;
            let (fp, fm) = (self.dynamics(xp), self.dynamics(xm));
            for r in 0..4 {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * step);
            }
        }
        j
    }

    /// Spectrum of the linearization at the equilibrium, sorted by real part.
    pub fn linearized_spectrum(&self, step: f64) -> Result<Vec<Complex<f64>>, TuningError> {
        let j = self.jacobian(self.equilibrium()?, step);
        let mut eig: Vec<_> = j.complex_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.re.total_cmp(&b.re));
        Ok(eig)
    }

    /// `{-λ2, -λ1}` with the two μ-mode roots, sorted ascending.
    pub fn predicted_spectrum(&self) -> Result<Vec<f64>, TuningError> {
        let (stable, unstable) = mu_eigenvalues(&self.tuning()?);
        let mut all = vec![-self.barrier.lambda1, -self.barrier.lambda2, stable, unstable];
        all.sort_by(f64::total_cmp);
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn pair(gamma: f64) -> ContestedPair {
        ContestedPair {
            gamma,
            v0: [22.5, 22.5],
            radius: 3.0,
            barrier: BarrierGains::default(),
            rho: 1.7,
        }
    }

    #[test]
    fn transform_examples() {
        let (t, _) = transform(FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(t[0][1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[1][1], 1.0, epsilon = 1e-15);
        let (t, _) = transform(30f64.to_radians()).unwrap();
        assert_abs_diff_eq!(t[0][1], -0.8660254037844386, epsilon = 1e-12);
        assert_abs_diff_eq!(t[1][1], 0.5, epsilon = 1e-12);
        assert!(transform(0.0).is_err());
        assert!(transform(-0.1).is_err());
        assert!(transform(2.0).is_err());
    }

    #[test]
    fn mu_eigenvalue_examples() {
        let t = TwoVehicleTuning::new(0.5, [22.5, 22.5], 6.6, 1e-12).unwrap();
        let (a, b) = mu_eigenvalues(&t);
        assert!(a.abs() < 1e-5 && b.abs() < 1e-5);
        let t = TwoVehicleTuning::new(0.5, [22.5, 22.5], 6.6, 0.926).unwrap();
        assert_abs_diff_eq!(mu_eigenvalues(&t).1, 1.70, epsilon = 0.01);
        assert!(TwoVehicleTuning::new(0.5, [22.5, 22.5], 0.0, 1.0).is_err());
        assert!(TwoVehicleTuning::new(0.5, [22.5, 22.5], 6.6, -1.0).is_err());
    }

    #[test]
    fn range_example() {
        let (lo, hi) = unstable_range(31.82, 6.6).unwrap();
        assert_eq!(lo, 0.0);
        assert_abs_diff_eq!(hi, 4.82, epsilon = 0.005);
        assert!(unstable_range(0.0, 6.6).is_err());
    }

    #[test]
    fn kappa_csv() {
        let rows = kappa_table(0.5, [22.5, 22.5], 6.6, &[0.1, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_kappa_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("kappa_per_s,stable_eig_per_s,unstable_eig_per_s\n0.1,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn equilibrium_is_stationary() {
        for deg in [30.0f64, 45.0, 60.0, 90.0] {
            let p = pair(deg.to_radians());
            let x = p.equilibrium().unwrap();
            assert!(x[0] < 0.0 && x[1] < 0.0);
            let f = p.dynamics(x);
            for v in f {
                assert!(v.abs() < 1e-9, "{deg}: {f:?}");
            }
            let (t, _) = transform(p.gamma).unwrap();
            let z = mat_vec(&t, [x[0], x[1]]);
            assert_abs_diff_eq!(z[0] * z[0] + z[1] * z[1], p.d() * p.d(), epsilon = 1e-9);
        }
    }

    #[test]
    fn orthogonal_lanes_match_predicted_spectrum() {
        let p = pair(FRAC_PI_2);
        let got = p.linearized_spectrum(1e-5).unwrap();
        let want = p.predicted_spectrum().unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!(g.im.abs() < 1e-6);
            assert_abs_diff_eq!(g.re, *w, epsilon = 1e-4);
        }
    }

    proptest! {
        #[test]
        fn transform_inverse(gamma in 0.05f64..FRAC_PI_2) {
            let (t, ti) = transform(gamma).unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    let v: f64 = (0..2).map(|k| t[r][k] * ti[k][c]).sum();
                    prop_assert!((v - f64::from(u8::from(r == c))).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn trace_and_determinant(k in 1e-3f64..100.0, vn in 1.0f64..60.0, d in 1.0f64..20.0) {
            let t = TwoVehicleTuning::new(0.5, [vn, 0.0], d, k).unwrap();
            let (a, b) = mu_eigenvalues(&t);
            prop_assert!((a + b + k).abs() < 1e-9 * (1.0 + k));
            prop_assert!((a * b + k * vn / d).abs() < 1e-9 * (1.0 + k * vn / d));
            prop_assert!(a < 0.0 && b > 0.0);
            prop_assert!(b < vn / d);
        }

        #[test]
        fn unstable_root_increases_with_kappa(k in 1e-3f64..100.0, f in 1.01f64..10.0) {
            let lo = TwoVehicleTuning::new(0.5, [20.0, 25.0], 6.6, k).unwrap();
            let hi = TwoVehicleTuning::new(0.5, [20.0, 25.0], 6.6, k * f).unwrap();
            prop_assert!(mu_eigenvalues(&hi).1 > mu_eigenvalues(&lo).1);
        }
    }
}
