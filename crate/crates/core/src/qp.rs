//! Dense convex QP with a strictly positive diagonal Hessian.
//!
//! ```text
//! minimize    ½ uᵀ diag(h) u + cᵀ u  (+ M Σ σ_k²  when relaxed)
//! subject to  a_kᵀ u (+ σ_k) ≥ b_k,   lo ≤ u ≤ hi,   σ ≥ 0
//! ```
//!
//! The solver is a dual active-set method in the style of Goldfarb and
//! Idnani. With a diagonal Hessian the change of variables `y = diag(√h) u`
//! turns the objective into `½‖y‖² + c̃ᵀy`, so the active-set algebra reduces
//! to a thin QR factorisation of the scaled active normals. The iteration
//! starts at the unconstrained minimiser and only ever adds violated
//! constraints, so infeasibility is detected without a phase-one problem.

use thiserror::Error;

pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_MAX_VARS: usize = 64;
pub const FEAS_TOL: f64 = 1e-9;
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("hessian entry {index} is {value}; strictly positive entries are required")]
    NotStrictlyConvex { index: usize, value: f64 },
    #[error("slack weight must be positive, got {0}")]
    InvalidSlackWeight(f64),
    #[error("bounds of variable {0} are inverted")]
    InvertedBounds(usize),
    #[error("{n} variables exceed the configured cap of {cap}")]
    TooManyVariables { n: usize, cap: usize },
}

/// Identifies a constraint of a [`QpProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintId {
    /// General inequality row `k`.
    Row(usize),
    Lower(usize),
    Upper(usize),
    /// Nonnegativity of the slack attached to row `k`.
    SlackFloor(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian_diag: Vec<f64>,
    pub linear_cost: Vec<f64>,
    /// Row-major `m × n` coefficients of `row · u ≥ rhs`.
    pub rows: Vec<f64>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub slack_weight: Option<f64>,
}

impl QpProblem {
    /// Unconstrained problem with infinite bounds.
    pub fn new(hessian_diag: Vec<f64>, linear_cost: Vec<f64>) -> Self {
        let n = hessian_diag.len();
        Self {
            hessian_diag,
            linear_cost,
            rows: Vec::new(),
            rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            slack_weight: None,
        }
    }

    pub fn n(&self) -> usize {
        self.hessian_diag.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn push_row(&mut self, coeffs: &[f64], rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.n());
        self.rows.extend_from_slice(coeffs);
        self.rhs.push(rhs);
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.n();
        &self.rows[k * n..(k + 1) * n]
    }

    pub fn set_bounds(&mut self, i: usize, lo: f64, hi: f64) {
        self.lower[i] = lo;
        self.upper[i] = hi;
    }

    pub fn with_slack(mut self, weight: f64) -> Self {
        self.slack_weight = Some(weight);
        self
    }

    pub fn objective(&self, u: &[f64], slack: &[f64]) -> f64 {
        let quad: f64 = self
            .hessian_diag
            .iter()
            .zip(&self.linear_cost)
            .zip(u)
            .map(|((h, c), x)| 0.5 * h * x * x + c * x)
            .sum();
        let m = self.slack_weight.unwrap_or(0.0);
        quad + m * slack.iter().map(|s| s * s).sum::<f64>()
    }

    fn validate(&self, cap: usize) -> Result<(), QpError> {
        let n = self.n();
        if n > cap {
            return Err(QpError::TooManyVariables { n, cap });
        }
        if self.linear_cost.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::DimensionMismatch(format!(
                "n = {n}, cost {}, lower {}, upper {}",
                self.linear_cost.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.rows.len() != self.rhs.len() * n {
            return Err(QpError::DimensionMismatch(format!(
                "{} row coefficients for {} rows of width {n}",
                self.rows.len(),
                self.rhs.len()
            )));
        }
        for (index, &value) in self.hessian_diag.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(QpError::NotStrictlyConvex { index, value });
            }
        }
        if let Some(w) = self.slack_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(QpError::InvalidSlackWeight(w));
            }
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] {
                return Err(QpError::InvertedBounds(i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u_star: Vec<f64>,
    /// Binding constraints, in the order they entered the working set.
    pub active_set: Vec<ConstraintId>,
    /// Lagrange multipliers aligned with `active_set`.
    pub multipliers: Vec<f64>,
    /// One entry per row when the problem is relaxed, empty otherwise.
    pub slack_values: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    pub fn multiplier(&self, id: ConstraintId) -> f64 {
        self.active_set
            .iter()
            .position(|&a| a == id)
            .map_or(0.0, |k| self.multipliers[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    pub max_vars: usize,
    pub feas_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            max_vars: DEFAULT_MAX_VARS,
            feas_tol: FEAS_TOL,
        }
    }
}

/// Solves with default settings.
pub fn solve(p: &QpProblem, warm_start: Option<&[ConstraintId]>) -> Result<QpSolution, QpError> {
    ActiveSetSolver::default().solve(p, warm_start)
}

/// Reusable solver; holds scratch buffers, so one instance per thread.
#[derive(Debug, Default)]
pub struct ActiveSetSolver {
    settings: QpSettings,
    ws: Workspace,
}

#[derive(Debug, Default)]
struct Workspace {
    nv: usize,
    sqrt_h: Vec<f64>,
    c_scaled: Vec<f64>,
    /// Scaled constraint normals, row-major `ncons × nv`.
    normals: Vec<f64>,
    bounds: Vec<f64>,
    ids: Vec<ConstraintId>,
    /// Thin Q, column-major `nv × q`.
    q: Vec<f64>,
    /// Upper-triangular R, column-major `q × q` with stride `nv`.
    r: Vec<f64>,
    active: Vec<usize>,
    lambda: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    d: Vec<f64>,
    dir: Vec<f64>,
    in_active: Vec<bool>,
}

enum Outcome {
    Optimal,
    Infeasible,
    IterationLimit,
}

impl ActiveSetSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self {
            settings,
            ws: Workspace::default(),
        }
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    /// Warm starting changes only the iteration count; the minimiser of a
    /// strictly convex QP is unique.
    pub fn solve(
        &mut self,
        p: &QpProblem,
        warm_start: Option<&[ConstraintId]>,
    ) -> Result<QpSolution, QpError> {
        p.validate(self.settings.max_vars)?;
        let n = p.n();
        let m = p.num_rows();
        let relaxed = p.slack_weight.is_some();

        if !self.ws.load(p) {
            // A row with zero coefficients and positive rhs can never hold.
            return Ok(QpSolution {
                u_star: p
                    .hessian_diag
                    .iter()
                    .zip(&p.linear_cost)
                    .map(|(h, c)| -c / h)
                    .collect(),
                active_set: Vec::new(),
                multipliers: Vec::new(),
                slack_values: Vec::new(),
                status: QpStatus::Infeasible,
                iterations: 0,
            });
        }

        if let Some(warm) = warm_start {
            self.ws.warm_start(warm, self.settings.feas_tol);
        }

        let (outcome, iterations) = self.ws.iterate(&self.settings);
        if matches!(outcome, Outcome::Optimal) {
            self.ws.polish();
        }

        let ws = &self.ws;
        let u_star: Vec<f64> = (0..n).map(|i| ws.y[i] / ws.sqrt_h[i]).collect();
        let slack_values = if relaxed {
            (0..m).map(|k| (ws.y[n + k] / ws.sqrt_h[n + k]).max(0.0)).collect()
        } else {
            Vec::new()
        };
        let status = match outcome {
            Outcome::Optimal => QpStatus::Optimal,
            Outcome::Infeasible => QpStatus::Infeasible,
            Outcome::IterationLimit => QpStatus::IterationLimit,
        };
        Ok(QpSolution {
            u_star,
            active_set: ws.active.iter().map(|&k| ws.ids[k]).collect(),
            multipliers: ws.lambda.clone(),
            slack_values,
            status,
            iterations,
        })
    }
}

impl Workspace {
    /// Builds the scaled problem. Returns false on a structurally infeasible row.
    fn load(&mut self, p: &QpProblem) -> bool {
        let n = p.n();
        let m = p.num_rows();
        let relaxed = p.slack_weight.is_some();
        let nv = if relaxed { n + m } else { n };
        self.nv = nv;

        self.sqrt_h.clear();
        self.sqrt_h.extend(p.hessian_diag.iter().map(|h| h.sqrt()));
        if let Some(w) = p.slack_weight {
            let s = (2.0 * w).sqrt();
            self.sqrt_h.extend(std::iter::repeat_n(s, m));
        }
        self.c_scaled.clear();
        self.c_scaled
            .extend(p.linear_cost.iter().zip(&self.sqrt_h).map(|(c, s)| c / s));
        self.c_scaled.resize(nv, 0.0);

        self.normals.clear();
        self.bounds.clear();
        self.ids.clear();

        for k in 0..m {
            let row = p.row(k);
            let zero = row.iter().all(|&a| a == 0.0);
            if zero && !relaxed {
                if p.rhs[k] <= 0.0 {
                    continue;
                }
                return false;
            }
            let start = self.normals.len();
            self.normals.resize(start + nv, 0.0);
            let dst = &mut self.normals[start..start + nv];
            for i in 0..n {
                dst[i] = row[i] / self.sqrt_h[i];
            }
            if relaxed {
                dst[n + k] = 1.0 / self.sqrt_h[n + k];
            }
            self.bounds.push(p.rhs[k]);
            self.ids.push(ConstraintId::Row(k));
        }
        for i in 0..n {
            if p.lower[i].is_finite() {
                self.push_unit(i, 1.0, p.lower[i], ConstraintId::Lower(i));
            }
            if p.upper[i].is_finite() {
                self.push_unit(i, -1.0, -p.upper[i], ConstraintId::Upper(i));
            }
        }
        if relaxed {
            for k in 0..m {
                self.push_unit(n + k, 1.0, 0.0, ConstraintId::SlackFloor(k));
            }
        }

        self.y.clear();
        self.y.extend(self.c_scaled.iter().map(|c| -c));
        self.active.clear();
        self.lambda.clear();
        self.q.clear();
        self.r.clear();
        self.in_active.clear();
        self.in_active.resize(self.ids.len(), false);
        true
    }

    fn push_unit(&mut self, i: usize, sign: f64, b: f64, id: ConstraintId) {
        let start = self.normals.len();
        self.normals.resize(start + self.nv, 0.0);
        self.normals[start + i] = sign / self.sqrt_h[i];
        self.bounds.push(b);
        self.ids.push(id);
    }

    #[inline]
    fn normal(&self, k: usize) -> &[f64] {
        &self.normals[k * self.nv..(k + 1) * self.nv]
    }

    #[inline]
    fn slack_of(&self, k: usize) -> f64 {
        dot(self.normal(k), &self.y) - self.bounds[k]
    }

    /// `d = Qᵀ a`, `z = a - Q d`, twice for numerical orthogonality.
    fn project(&mut self, k: usize) {
        let nv = self.nv;
        let q = self.active.len();
        self.z.clear();
        self.z.extend_from_slice(&self.normals[k * nv..(k + 1) * nv]);
        self.d.clear();
        self.d.resize(q, 0.0);
        for _ in 0..2 {
            for j in 0..q {
                let col = &self.q[j * nv..(j + 1) * nv];
                let c = dot(col, &self.z);
                self.d[j] += c;
                for (zi, qi) in self.z.iter_mut().zip(col) {
                    *zi -= c * qi;
                }
            }
        }
    }

    /// Solves `R x = d` in place of `dir`.
    fn back_substitute(&mut self) {
        let q = self.active.len();
        let nv = self.nv;
        self.dir.clear();
        self.dir.extend_from_slice(&self.d[..q]);
        for i in (0..q).rev() {
            let mut acc = self.dir[i];
            for j in i + 1..q {
                acc -= self.r[j * nv + i] * self.dir[j];
            }
            self.dir[i] = acc / self.r[i * nv + i];
        }
    }

    /// Appends constraint `k` using the current projection (`z`, `d`).
    fn append(&mut self, k: usize, multiplier: f64) {
        let nv = self.nv;
        let q = self.active.len();
        let zn = norm(&self.z);
        self.q.extend(self.z.iter().map(|v| v / zn));
        self.r.resize((q + 1) * nv, 0.0);
        for i in 0..q {
            self.r[q * nv + i] = self.d[i];
        }
        self.r[q * nv + q] = zn;
        self.active.push(k);
        self.lambda.push(multiplier);
        self.in_active[k] = true;
    }

    /// Removes working-set entry `pos` and refactors the remaining normals.
    fn drop_at(&mut self, pos: usize) {
        let k = self.active.remove(pos);
        self.lambda.remove(pos);
        self.in_active[k] = false;
        self.refactor();
    }

    fn refactor(&mut self) {
        let members = std::mem::take(&mut self.active);
        let lambdas = std::mem::take(&mut self.lambda);
        self.q.clear();
        self.r.clear();
        for (&k, &l) in members.iter().zip(&lambdas) {
            self.in_active[k] = false;
            self.project(k);
            self.append(k, l);
        }
    }

    fn independent(&self, k: usize) -> bool {
        norm(&self.z) > 1e-10 * norm(self.normal(k)).max(1e-300)
    }

    /// Equality-constrained minimiser for the current working set:
    /// `RᵀR λ = b_A + Ñ_Aᵀ c̃`, then `y = -c̃ + Ñ_A λ`.
    fn equality_solution(&mut self) {
        let q = self.active.len();
        let nv = self.nv;
        let mut rhs: Vec<f64> = self
            .active
            .iter()
            .map(|&k| self.bounds[k] + dot(self.normal(k), &self.c_scaled))
            .collect();
        // forward: Rᵀ w = rhs
        for i in 0..q {
            let mut acc = rhs[i];
            for j in 0..i {
                acc -= self.r[i * nv + j] * rhs[j];
            }
            rhs[i] = acc / self.r[i * nv + i];
        }
        // backward: R λ = w
        for i in (0..q).rev() {
            let mut acc = rhs[i];
            for j in i + 1..q {
                acc -= self.r[j * nv + i] * rhs[j];
            }
            rhs[i] = acc / self.r[i * nv + i];
        }
        self.y.clear();
        self.y.extend(self.c_scaled.iter().map(|c| -c));
        for (pos, &k) in self.active.iter().enumerate() {
            let l = rhs[pos];
            let a = &self.normals[k * nv..(k + 1) * nv];
            for (yi, ai) in self.y.iter_mut().zip(a) {
                *yi += l * ai;
            }
        }
        self.lambda = rhs;
    }

    fn warm_start(&mut self, warm: &[ConstraintId], tol: f64) {
        for id in warm {
            let Some(k) = self.ids.iter().position(|x| x == id) else {
                continue;
            };
            if self.in_active[k] {
                continue;
            }
            self.project(k);
            if self.independent(k) {
                self.append(k, 0.0);
            }
        }
        loop {
            if self.active.is_empty() {
                self.y.clear();
                self.y.extend(self.c_scaled.iter().map(|c| -c));
                return;
            }
            self.equality_solution();
            // drop the lowest-index constraint with a negative multiplier
            let worst = self
                .active
                .iter()
                .zip(&self.lambda)
                .enumerate()
                .filter(|(_, (_, &l))| l < -tol)
                .min_by_key(|(_, (&k, _))| k)
                .map(|(pos, _)| pos);
            match worst {
                Some(pos) => self.drop_at(pos),
                None => {
                    for l in &mut self.lambda {
                        *l = l.max(0.0);
                    }
                    return;
                }
            }
        }
    }

    fn most_violated(&self, tol: f64) -> Option<usize> {
        let mut best = None;
        let mut best_score = 0.0;
        for k in 0..self.ids.len() {
            if self.in_active[k] {
                continue;
            }
            let s = self.slack_of(k);
            if s < -tol {
                let score = s / norm(self.normal(k));
                if best.is_none() || score < best_score {
                    best = Some(k);
                    best_score = score;
                }
            }
        }
        best
    }

    fn iterate(&mut self, settings: &QpSettings) -> (Outcome, usize) {
        let mut iterations = 0;
        loop {
            let Some(p) = self.most_violated(settings.feas_tol) else {
                return (Outcome::Optimal, iterations);
            };
            let mut u_p = 0.0;
            loop {
                iterations += 1;
                if iterations > settings.max_iter {
                    return (Outcome::IterationLimit, iterations);
                }
                self.project(p);
                self.back_substitute();
                let primal_dir = self.independent(p);

                // partial (dual) step length
                let mut t1 = f64::INFINITY;
                let mut drop_pos = None;
                for (pos, (&l, &rj)) in self.lambda.iter().zip(&self.dir).enumerate() {
                    if rj > 1e-14 {
                        let t = l / rj;
                        if t < t1 {
                            t1 = t;
                            drop_pos = Some(pos);
                        }
                    }
                }
                // full (primal) step length
                let t2 = if primal_dir {
                    (-self.slack_of(p) / dot(&self.z, &self.z)).max(0.0)
                } else {
                    f64::INFINITY
                };

                if t1.is_infinite() && t2.is_infinite() {
                    return (Outcome::Infeasible, iterations);
                }
                if t2.is_infinite() {
                    for (l, rj) in self.lambda.iter_mut().zip(&self.dir) {
                        *l -= t1 * rj;
                    }
                    u_p += t1;
                    self.drop_at(drop_pos.expect("finite dual step has a blocking constraint"));
                    continue;
                }
                let t = t1.min(t2);
                for (yi, zi) in self.y.iter_mut().zip(&self.z) {
                    *yi += t * zi;
                }
                for (l, rj) in self.lambda.iter_mut().zip(&self.dir) {
                    *l -= t * rj;
                }
                u_p += t;
                if t2 <= t1 {
                    self.append(p, u_p);
                    break;
                }
                self.drop_at(drop_pos.expect("partial step has a blocking constraint"));
            }
        }
    }

    /// Recomputes the working-set solution, then applies two rounds of
    /// iterative refinement on the active residuals `b_A - Ñ_Aᵀ y`.
    fn polish(&mut self) {
        if self.active.is_empty() {
            return;
        }
        self.equality_solution();
        let nv = self.nv;
        let q = self.active.len();
        for _ in 0..2 {
            let mut w: Vec<f64> = self.active.iter().map(|&k| -self.slack_of(k)).collect();
            for i in 0..q {
                let mut acc = w[i];
                for j in 0..i {
                    acc -= self.r[i * nv + j] * w[j];
                }
                w[i] = acc / self.r[i * nv + i];
            }
            for i in (0..q).rev() {
                let mut acc = w[i];
                for j in i + 1..q {
                    acc -= self.r[j * nv + i] * w[j];
                }
                w[i] = acc / self.r[i * nv + i];
            }
            for (pos, &k) in self.active.iter().enumerate() {
                self.lambda[pos] += w[pos];
                let a = &self.normals[k * nv..(k + 1) * nv];
                for (yi, ai) in self.y.iter_mut().zip(a) {
                    *yi += w[pos] * ai;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Max-norm KKT residuals of a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    /// Largest negative multiplier magnitude.
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(p: &QpProblem, sol: &QpSolution) -> Result<KktResiduals, QpError> {
    let n = p.n();
    let m = p.num_rows();
    let relaxed = p.slack_weight.is_some();
    if sol.u_star.len() != n {
        return Err(QpError::DimensionMismatch(format!(
            "solution has {} entries, problem has {n}",
            sol.u_star.len()
        )));
    }
    if relaxed && sol.slack_values.len() != m {
        return Err(QpError::DimensionMismatch(format!(
            "solution has {} slacks, problem has {m} rows",
            sol.slack_values.len()
        )));
    }
    if sol.multipliers.len() != sol.active_set.len() {
        return Err(QpError::DimensionMismatch(
            "multipliers and active set differ in length".into(),
        ));
    }
    let u = &sol.u_star;
    let slack = |k: usize| if relaxed { sol.slack_values[k] } else { 0.0 };

    let mut grad: Vec<f64> = (0..n)
        .map(|i| p.hessian_diag[i] * u[i] + p.linear_cost[i])
        .collect();
    let mut grad_slack: Vec<f64> = match p.slack_weight {
        Some(w) => (0..m).map(|k| 2.0 * w * slack(k)).collect(),
        None => Vec::new(),
    };

    let mut dual: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for (&id, &l) in sol.active_set.iter().zip(&sol.multipliers) {
        dual = dual.max(-l);
        let gap = match id {
            ConstraintId::Row(k) => {
                let row = p.row(k);
                for i in 0..n {
                    grad[i] -= l * row[i];
                }
                if relaxed {
                    grad_slack[k] -= l;
                }
                dot(row, u) + slack(k) - p.rhs[k]
            }
            ConstraintId::Lower(i) => {
                grad[i] -= l;
                u[i] - p.lower[i]
            }
            ConstraintId::Upper(i) => {
                grad[i] += l;
                p.upper[i] - u[i]
            }
            ConstraintId::SlackFloor(k) => {
                grad_slack[k] -= l;
                slack(k)
            }
        };
        complementarity = complementarity.max((l * gap).abs());
    }

    let mut primal: f64 = 0.0;
    for k in 0..m {
        primal = primal.max(p.rhs[k] - dot(p.row(k), u) - slack(k));
    }
    for i in 0..n {
        primal = primal.max(p.lower[i] - u[i]).max(u[i] - p.upper[i]);
    }
    for k in 0..if relaxed { m } else { 0 } {
        primal = primal.max(-slack(k));
    }

    let stationarity = grad
        .iter()
        .chain(&grad_slack)
        .fold(0.0f64, |acc, g| acc.max(g.abs()));
    Ok(KktResiduals {
        stationarity,
        primal: primal.max(0.0),
        dual,
        complementarity,
    })
}
