//! A small dense solver for smooth constrained problems
//!
//! ```text
//! minimize f(z)  subject to  c(z) = 0,  g(z) ≥ 0,  lo ≤ z ≤ hi
//! ```
//!
//! using an augmented Lagrangian outer loop (squared-hinge or log-barrier
//! treatment of inequalities) around a projected damped-Newton inner solve.
//! Box bounds are enforced exactly by projection.

use alloc::vec::Vec;

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::error::NlpError;

/// Central-difference step used by every default derivative.
pub const FD_STEP: f64 = 1e-6;

/// Values (and optionally derivatives) of a problem at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: DVector<f64>,
    /// Positive semidefinite curvature model of the objective, if available.
    pub hessian: Option<DMatrix<f64>>,
    pub equalities: DVector<f64>,
    pub equality_jacobian: DMatrix<f64>,
    pub inequalities: DVector<f64>,
    pub inequality_jacobian: DMatrix<f64>,
}

impl Evaluation {
    pub fn new(n: usize, n_eq: usize, n_ineq: usize) -> Self {
        Self {
            objective: 0.0,
            gradient: DVector::zeros(n),
            hessian: None,
            equalities: DVector::zeros(n_eq),
            equality_jacobian: DMatrix::zeros(n_eq, n),
            inequalities: DVector::zeros(n_ineq),
            inequality_jacobian: DMatrix::zeros(n_ineq, n),
        }
    }

    fn is_finite(&self, derivatives: bool) -> bool {
        let values = self.objective.is_finite() && self.equalities.iter().all(|x| x.is_finite()) && self.inequalities.iter().all(|x| x.is_finite());
        if !derivatives {
            return values;
        }
        values
            && self.gradient.iter().all(|x| x.is_finite())
            && self.equality_jacobian.iter().all(|x| x.is_finite())
            && self.inequality_jacobian.iter().all(|x| x.is_finite())
            && self.hessian.as_ref().is_none_or(|h| h.iter().all(|x| x.is_finite()))
    }
}

/// A smooth problem. Inequalities follow the `g(z) ≥ 0` convention.
///
/// Only `dimension`, `initial_guess` and `objective` are required; every
/// derivative defaults to central finite differences. Problems whose
/// functions share work should override [`NlpProblem::evaluate`].
pub trait NlpProblem {
    fn dimension(&self) -> usize;
    fn initial_guess(&self) -> DVector<f64>;
    fn objective(&self, z: &DVector<f64>) -> f64;

    fn num_equalities(&self) -> usize {
        0
    }

    fn num_inequalities(&self) -> usize {
        0
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.dimension();
        (DVector::from_element(n, f64::NEG_INFINITY), DVector::from_element(n, f64::INFINITY))
    }

    fn gradient(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        let mut f = |x: &DVector<f64>, o: &mut DVector<f64>| o[0] = self.objective(x);
        let mut jac = DMatrix::zeros(1, z.len());
        finite_difference_jacobian(&mut f, 1, z, &mut jac);
        out.copy_from(&jac.row(0).transpose());
    }

    fn hessian(&self, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// `Σ wᵢ ∇²cᵢ + Σ vⱼ ∇²gⱼ`. Without it the constraints are treated as
    /// locally linear (Gauss-Newton).
    fn constraint_curvature(&self, _z: &DVector<f64>, _eq_weights: &DVector<f64>, _ineq_weights: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    fn equalities(&self, _z: &DVector<f64>, _out: &mut DVector<f64>) {}

    fn equality_jacobian(&self, z: &DVector<f64>, out: &mut DMatrix<f64>) {
        let mut f = |x: &DVector<f64>, o: &mut DVector<f64>| self.equalities(x, o);
        finite_difference_jacobian(&mut f, self.num_equalities(), z, out);
    }

    fn inequalities(&self, _z: &DVector<f64>, _out: &mut DVector<f64>) {}

    fn inequality_jacobian(&self, z: &DVector<f64>, out: &mut DMatrix<f64>) {
        let mut f = |x: &DVector<f64>, o: &mut DVector<f64>| self.inequalities(x, o);
        finite_difference_jacobian(&mut f, self.num_inequalities(), z, out);
    }

    fn evaluate(&self, z: &DVector<f64>, derivatives: bool, out: &mut Evaluation) {
        out.objective = self.objective(z);
        self.equalities(z, &mut out.equalities);
        self.inequalities(z, &mut out.inequalities);
        if derivatives {
            self.gradient(z, &mut out.gradient);
            out.hessian = self.hessian(z);
            self.equality_jacobian(z, &mut out.equality_jacobian);
            self.inequality_jacobian(z, &mut out.inequality_jacobian);
        }
    }
}

/// Central-difference Jacobian of an `m`-valued function.
pub fn finite_difference_jacobian<F>(f: &mut F, m: usize, z: &DVector<f64>, out: &mut DMatrix<f64>)
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>),
{
    let mut x = z.clone();
    let mut plus = DVector::zeros(m);
    let mut minus = DVector::zeros(m);
    for j in 0..z.len() {
        let h = FD_STEP * (1.0 + z[j].abs());
        x[j] = z[j] + h;
        f(&x, &mut plus);
        x[j] = z[j] - h;
        f(&x, &mut minus);
        x[j] = z[j];
        for i in 0..m {
            out[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
}

/// A derivative that disagrees with its finite-difference estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeMismatch {
    pub function: &'static str,
    pub row: usize,
    pub column: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the problem's derivatives at `z` with central differences.
pub fn check_derivatives<P: NlpProblem + ?Sized>(problem: &P, z: &DVector<f64>, rel_tol: f64) -> Result<(), DerivativeMismatch> {
    let n = problem.dimension();
    let (me, mi) = (problem.num_equalities(), problem.num_inequalities());
    let mut analytic = Evaluation::new(n, me, mi);
    problem.evaluate(z, true, &mut analytic);
    let mut values = |x: &DVector<f64>, o: &mut DVector<f64>| {
        let mut e = Evaluation::new(n, me, mi);
        problem.evaluate(x, false, &mut e);
        o[0] = e.objective;
        o.rows_mut(1, me).copy_from(&e.equalities);
        o.rows_mut(1 + me, mi).copy_from(&e.inequalities);
    };
    let mut numeric = DMatrix::zeros(1 + me + mi, n);
    finite_difference_jacobian(&mut values, 1 + me + mi, z, &mut numeric);
    let compare = |name: &'static str, row: usize, a: &DMatrix<f64>, offset: usize| -> Result<(), DerivativeMismatch> {
        for i in 0..a.nrows() {
            for j in 0..n {
                let (x, y) = (a[(i, j)], numeric[(offset + i, j)]);
                if (x - y).abs() > rel_tol * (1.0 + x.abs().max(y.abs())) {
                    return Err(DerivativeMismatch { function: name, row: row + i, column: j, analytic: x, numeric: y });
                }
            }
        }
        Ok(())
    };
    compare("objective", 0, &DMatrix::from_row_slice(1, n, analytic.gradient.as_slice()), 0)?;
    compare("equalities", 0, &analytic.equality_jacobian, 1)?;
    compare("inequalities", 0, &analytic.inequality_jacobian, 1 + me)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InequalityMode {
    /// PHR augmented-Lagrangian squared hinge; tolerates infeasible starts.
    SquaredHinge,
    /// Interior log-barrier; falls back to the hinge when the start is not
    /// strictly feasible.
    LogBarrier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol_eq: f64,
    pub tol_ineq: f64,
    /// Projected-gradient stationarity tolerance.
    pub tol_opt: f64,
    /// Cap on inner (Newton) iterations summed over the solve.
    pub max_iter: usize,
    pub max_outer: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    pub inequality_mode: InequalityMode,
    /// Validate derivatives against finite differences at the start.
    pub check_derivatives: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_eq: 1e-5,
            tol_ineq: 1e-6,
            tol_opt: 1e-6,
            max_iter: 500,
            max_outer: 40,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e8,
            inequality_mode: InequalityMode::SquaredHinge,
            check_derivatives: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
    NumericalFailure,
}

/// Primal-dual state that can seed a later solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub max_eq_violation: f64,
    /// Smallest inequality value (`+∞` without inequalities).
    pub min_ineq_value: f64,
    /// Inner iterations summed over all outer iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub status: SolveStatus,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub penalty: f64,
    /// Stationarity measure at `z` with the returned multipliers.
    pub stationarity: f64,
}

impl NlpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            z: self.z.clone(),
            eq_multipliers: self.eq_multipliers.clone(),
            ineq_multipliers: self.ineq_multipliers.clone(),
            penalty: self.penalty,
        }
    }
}

struct Merit<'a> {
    lambda: &'a DVector<f64>,
    mu: &'a DVector<f64>,
    rho: f64,
    /// Barrier weight; zero in hinge mode.
    tau: f64,
}

impl Merit<'_> {
    fn value(&self, e: &Evaluation) -> f64 {
        let mut v = e.objective + self.lambda.dot(&e.equalities) + 0.5 * self.rho * e.equalities.norm_squared();
        if self.tau > 0.0 {
            for &g in e.inequalities.iter() {
                if g <= 0.0 {
                    return f64::INFINITY;
                }
                v -= self.tau * g.ln();
            }
        } else {
            for (g, m) in e.inequalities.iter().zip(self.mu.iter()) {
                let s = (m - self.rho * g).max(0.0);
                v += (s * s - m * m) / (2.0 * self.rho);
            }
        }
        v
    }

    /// Gradient, Hessian model, and the multiplier estimates weighting the
    /// constraint curvature.
    fn derivatives(&self, e: &Evaluation, hessian_f: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let n = e.gradient.len();
        let eq_weights = self.lambda + &e.equalities * self.rho;
        let mut grad = &e.gradient + e.equality_jacobian.tr_mul(&eq_weights);
        let mut h = hessian_f.clone();
        if !e.equalities.is_empty() {
            h += e.equality_jacobian.tr_mul(&e.equality_jacobian) * self.rho;
        }
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        let mut curv = Vec::new();
        let mut ineq_weights = DVector::zeros(e.inequalities.len());
        for (i, (&g, &m)) in e.inequalities.iter().zip(self.mu.iter()).enumerate() {
            if self.tau > 0.0 {
                rows.push(i);
                weights.push(self.tau / g);
                curv.push((self.tau / (g * g)).sqrt());
                ineq_weights[i] = -self.tau / g;
            } else {
                let s = m - self.rho * g;
                if s > 0.0 {
                    rows.push(i);
                    weights.push(s);
                    curv.push(self.rho.sqrt());
                    ineq_weights[i] = -s;
                }
            }
        }
        if !rows.is_empty() {
            let mut ja = DMatrix::zeros(rows.len(), n);
            let mut w = DVector::zeros(rows.len());
            for (k, &i) in rows.iter().enumerate() {
                ja.row_mut(k).copy_from(&(e.inequality_jacobian.row(i) * curv[k]));
                w[k] = weights[k] / curv[k];
            }
            grad -= ja.tr_mul(&w);
            h += ja.tr_mul(&ja);
        }
        (grad, h, eq_weights, ineq_weights)
    }
}

fn project(z: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for i in 0..z.len() {
        z[i] = z[i].clamp(lo[i], hi[i]);
    }
}

fn projected_gradient_norm(z: &DVector<f64>, grad: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..z.len() {
        let step = (z[i] - grad[i]).clamp(lo[i], hi[i]) - z[i];
        worst = worst.max(step.abs());
    }
    worst
}

/// Solves `H_FF d_F = −g_F` on the free variables with adaptive damping.
fn newton_direction(h: &DMatrix<f64>, grad: &DVector<f64>, free: &[usize], damping_memory: &mut f64) -> Option<DVector<f64>> {
    let nf = free.len();
    let n = grad.len();
    let mut d = DVector::zeros(n);
    if nf == 0 {
        return Some(d);
    }
    let mut hf = DMatrix::zeros(nf, nf);
    let mut gf = DVector::zeros(nf);
    for (a, &i) in free.iter().enumerate() {
        gf[a] = -grad[i];
        for (b, &j) in free.iter().enumerate() {
            hf[(a, b)] = h[(i, j)];
        }
    }
    let scale = (0..nf).map(|i| hf[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    // relative damping; start a little below the last level that worked
    let mut relative = if *damping_memory > 0.0 { *damping_memory * 0.25 } else { 0.0 };
    for _ in 0..24 {
        let mut m = hf.clone();
        for i in 0..nf {
            m[(i, i)] += relative * scale;
        }
        if let Some(ch) = m.cholesky() {
            let df = ch.solve(&gf);
            if df.iter().all(|x| x.is_finite()) {
                *damping_memory = if relative < 1e-9 { 0.0 } else { relative };
                for (a, &i) in free.iter().enumerate() {
                    d[i] = df[a];
                }
                return Some(d);
            }
        }
        relative = if relative == 0.0 { 1e-10 } else { relative * 10.0 };
    }
    None
}

/// Minimizes the quadratic model with linearized hinge terms
///
/// ```text
/// m(d) = g₀ᵀd + ½dᵀH₀d + (1/2ρ) Σ max(0, μᵢ − ρ(gᵢ + Jᵢd))²
/// ```
///
/// by semismooth Newton on the active set, so constraints that switch on
/// along the step shape it.
fn hinge_model_step(
    h0: &DMatrix<f64>,
    g0: &DVector<f64>,
    e: &Evaluation,
    merit: &Merit,
    free: &[usize],
    guess: Option<&DVector<f64>>,
    damping: &mut f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let rho = merit.rho;
    let jac = &e.inequality_jacobian;
    let model = |d: &DVector<f64>, lin: &DVector<f64>| -> f64 {
        let mut v = g0.dot(d) + 0.5 * d.dot(&(h0 * d));
        for i in 0..lin.len() {
            let s = (merit.mu[i] - rho * lin[i]).max(0.0);
            v += s * s / (2.0 * rho);
        }
        v
    };
    let mut d = DVector::zeros(g0.len());
    let mut lin = e.inequalities.clone();
    let mut value = model(&d, &lin);
    let mut active: Vec<bool> = match guess {
        Some(w) => w.iter().map(|w| *w > 0.0).collect(),
        None => (0..lin.len()).map(|i| merit.mu[i] - rho * lin[i] > 0.0).collect(),
    };
    let mut best = None;
    for _ in 0..20 {
        let mut h = h0.clone();
        let mut rhs = -g0;
        for (i, _) in active.iter().enumerate().filter(|(_, a)| **a) {
            let row = jac.row(i);
            h += row.transpose() * row * rho;
            rhs += row.transpose() * (merit.mu[i] - rho * e.inequalities[i]);
        }
        let target = newton_direction(&h, &(-rhs), free, damping)?;
        // safeguard: never increase the (convex) model
        let mut step = 1.0;
        let mut next = target.clone();
        let mut next_lin = &e.inequalities + jac * &next;
        let mut next_value = model(&next, &next_lin);
        while next_value > value + 1e-14 * value.abs().max(1.0) && step > 1e-6 {
            step *= 0.5;
            next = &d + (&target - &d) * step;
            next_lin = &e.inequalities + jac * &next;
            next_value = model(&next, &next_lin);
        }
        let next_active: Vec<bool> = (0..lin.len()).map(|i| merit.mu[i] - rho * next_lin[i] > 0.0).collect();
        let settled = next_active == active && step == 1.0;
        d = next;
        lin = next_lin;
        value = next_value;
        active = next_active;
        best = Some((d.clone(), lin.map(|_| 0.0)));
        if settled {
            break;
        }
    }
    best.map(|(d, _)| {
        let weights = DVector::from_fn(lin.len(), |i, _| (merit.mu[i] - rho * lin[i]).max(0.0));
        (d, weights)
    })
}

struct Workspace<'a, P: NlpProblem + ?Sized> {
    problem: &'a P,
    lo: DVector<f64>,
    hi: DVector<f64>,
    n: usize,
    me: usize,
    mi: usize,
    inner_iterations: usize,
}

enum InnerOutcome {
    Converged,
    Stalled,
    Budget,
    NonFinite,
}

impl<P: NlpProblem + ?Sized> Workspace<'_, P> {
    fn eval(&self, z: &DVector<f64>, derivatives: bool) -> Evaluation {
        let mut e = Evaluation::new(self.n, self.me, self.mi);
        self.problem.evaluate(z, derivatives, &mut e);
        e
    }

    fn inner(&mut self, z: &mut DVector<f64>, eval: &mut Evaluation, merit: &Merit, tol: f64, budget: usize) -> (InnerOutcome, f64) {
        let mut hess_f = DMatrix::zeros(self.n, self.n);
        let mut bfgs: Option<DMatrix<f64>> = None;
        let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
        let mut predicted: Option<DVector<f64>> = None;
        let mut damping = 0.0;
        loop {
            if !eval.is_finite(true) {
                return (InnerOutcome::NonFinite, f64::INFINITY);
            }
            match &eval.hessian {
                Some(h) => hess_f.copy_from(h),
                None => {
                    // damped BFGS on the objective alone
                    let b = bfgs.get_or_insert_with(|| DMatrix::identity(self.n, self.n));
                    if let Some((z0, g0)) = &prev {
                        let s = &*z - z0;
                        let y = &eval.gradient - g0;
                        let bs = &*b * &s;
                        let sbs = s.dot(&bs);
                        let sy = s.dot(&y);
                        if sbs > 1e-16 {
                            let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
                            let r = &y * theta + &bs * (1.0 - theta);
                            let sr = s.dot(&r);
                            if sr > 1e-16 {
                                *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
                            }
                        }
                    }
                    hess_f.copy_from(b);
                }
            }
            let (grad, mut h, eq_w, mut ineq_w) = merit.derivatives(eval, &hess_f);
            if let Some(p) = &predicted {
                // multipliers the last model step expects at this point
                ineq_w = -p;
            }
            if let Some(c) = self.problem.constraint_curvature(z, &eq_w, &ineq_w) {
                h += c;
            }
            let pg = projected_gradient_norm(z, &grad, &self.lo, &self.hi);
            if pg <= tol {
                return (InnerOutcome::Converged, pg);
            }
            if budget <= self.inner_iterations {
                return (InnerOutcome::Budget, pg);
            }
            self.inner_iterations += 1;

            let free: Vec<usize> = (0..self.n)
                .filter(|&i| {
                    let at_lo = z[i] <= self.lo[i] + 1e-12 * (1.0 + self.lo[i].abs()) && grad[i] > 0.0;
                    let at_hi = z[i] >= self.hi[i] - 1e-12 * (1.0 + self.hi[i].abs()) && grad[i] < 0.0;
                    !(at_lo || at_hi)
                })
                .collect();
            let current = merit.value(eval);
            let mut accepted = None;
            let newton = if merit.tau == 0.0 && self.mi > 0 {
                let mut smooth = h.clone();
                let mut smooth_grad = grad.clone();
                // strip the hinge rows that are active at d = 0; the model re-adds them
                for i in 0..self.mi {
                    let s = merit.mu[i] - merit.rho * eval.inequalities[i];
                    if s > 0.0 {
                        let row = eval.inequality_jacobian.row(i);
                        smooth_grad += row.transpose() * s;
                        smooth -= row.transpose() * row * merit.rho;
                    }
                }
                hinge_model_step(&smooth, &smooth_grad, eval, merit, &free, predicted.as_ref(), &mut damping).map(|(d, w)| {
                    predicted = Some(w);
                    d
                })
            } else {
                newton_direction(&h, &grad, &free, &mut damping)
            };
            for direction in [newton, Some(-&grad)].into_iter().flatten() {
                let mut alpha = 1.0;
                for _ in 0..40 {
                    let mut trial = &*z + &direction * alpha;
                    project(&mut trial, &self.lo, &self.hi);
                    let e = self.eval(&trial, false);
                    let value = merit.value(&e);
                    let decrease = grad.dot(&(&trial - &*z));
                    if value.is_finite() && value <= current + 1e-4 * decrease && decrease < 0.0 {
                        accepted = Some(trial);
                        break;
                    }
                    alpha *= 0.5;
                }
                if accepted.is_some() {
                    break;
                }
            }
            match accepted {
                Some(next) => {
                    let moved = (&next - &*z).amax();
                    if moved <= 1e-13 * (1.0 + z.amax()) {
                        return (InnerOutcome::Stalled, pg);
                    }
                    prev = Some((z.clone(), eval.gradient.clone()));
                    *z = next;
                    *eval = self.eval(z, true);
                }
                None => return (InnerOutcome::Stalled, pg),
            }
        }
    }
}

fn violations(e: &Evaluation) -> (f64, f64) {
    let eq = e.equalities.amax();
    let ineq = e.inequalities.iter().fold(0.0f64, |m, g| m.max(-g));
    (if e.equalities.is_empty() { 0.0 } else { eq }, ineq)
}

/// Solves the problem, optionally continuing from a previous primal-dual state.
pub fn solve<P: NlpProblem + ?Sized>(problem: &P, opts: &SolverOptions, warm: Option<&WarmStart>) -> Result<NlpSolution, NlpError> {
    let n = problem.dimension();
    let (me, mi) = (problem.num_equalities(), problem.num_inequalities());
    let (lo, hi) = problem.bounds();
    if lo.len() != n || hi.len() != n {
        return Err(NlpError::Dimension("bounds"));
    }
    let mut z = match warm {
        Some(w) if w.z.len() == n => w.z.clone(),
        Some(_) => return Err(NlpError::Dimension("warm start")),
        None => problem.initial_guess(),
    };
    if z.len() != n {
        return Err(NlpError::Dimension("initial guess"));
    }
    if !z.iter().all(|x| x.is_finite()) {
        return Err(NlpError::NonFiniteInitialGuess);
    }
    project(&mut z, &lo, &hi);

    let mut lambda = warm.filter(|w| w.eq_multipliers.len() == me).map_or_else(|| DVector::zeros(me), |w| w.eq_multipliers.clone());
    let mut mu = warm.filter(|w| w.ineq_multipliers.len() == mi).map_or_else(|| DVector::zeros(mi), |w| w.ineq_multipliers.clone());
    let mut rho = warm.map_or(opts.initial_penalty, |w| w.penalty.clamp(opts.initial_penalty, opts.max_penalty));

    let mut ws = Workspace { problem, lo, hi, n, me, mi, inner_iterations: 0 };
    let mut eval = ws.eval(&z, true);
    if opts.check_derivatives {
        if let Err(m) = check_derivatives(problem, &z, 1e-4) {
            debug_assert!(false, "derivative mismatch: {m:?}");
        }
    }
    let mut tau = 0.0;
    if opts.inequality_mode == InequalityMode::LogBarrier && mi > 0 && eval.inequalities.iter().all(|g| *g > 0.0) {
        tau = 0.1;
    }

    let mut inner_tol = if warm.is_some() { opts.tol_opt } else { opts.tol_opt.max(1e-2) };
    let mut last_violation = f64::INFINITY;
    let mut status = SolveStatus::MaxIter;
    let mut stationarity = f64::INFINITY;
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        let merit = Merit { lambda: &lambda, mu: &mu, rho, tau };
        let (outcome, pg) = ws.inner(&mut z, &mut eval, &merit, inner_tol, opts.max_iter);
        stationarity = pg;
        if let InnerOutcome::NonFinite = outcome {
            status = SolveStatus::NumericalFailure;
            break;
        }
        let (v_eq, v_ineq) = violations(&eval);
        // complementarity-aware progress measure
        let mut progress = v_eq;
        for (g, m) in eval.inequalities.iter().zip(mu.iter()) {
            let c = if tau > 0.0 { 0.0 } else { g.min(m / rho) };
            progress = progress.max(c.abs());
        }
        lambda += &eval.equalities * rho;
        if tau > 0.0 {
            for (m, g) in mu.iter_mut().zip(eval.inequalities.iter()) {
                *m = tau / g;
            }
        } else {
            for (m, g) in mu.iter_mut().zip(eval.inequalities.iter()) {
                *m = (*m - rho * g).max(0.0);
            }
        }
        let feasible = v_eq <= opts.tol_eq && v_ineq <= opts.tol_ineq;
        let stationary = match outcome {
            InnerOutcome::Converged => pg <= opts.tol_opt,
            // converged as far as floating point allows
            InnerOutcome::Stalled => pg <= 1e3 * opts.tol_opt,
            _ => false,
        };
        let barrier_done = tau <= opts.tol_ineq * 1e-3;
        if feasible && stationary && (tau == 0.0 || barrier_done) {
            status = SolveStatus::Converged;
            break;
        }
        if ws.inner_iterations >= opts.max_iter {
            status = SolveStatus::MaxIter;
            break;
        }
        if tau > 0.0 {
            tau = (tau * 0.1).max(opts.tol_ineq * 1e-4);
        }
        if !feasible && progress > 0.25 * last_violation {
            if rho >= opts.max_penalty {
                status = SolveStatus::Infeasible;
                break;
            }
            rho = (rho * opts.penalty_growth).min(opts.max_penalty);
        }
        last_violation = progress;
        inner_tol = (inner_tol * 0.1).max(opts.tol_opt);
    }

    let (v_eq, _) = violations(&eval);
    let min_ineq = eval.inequalities.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(NlpSolution {
        objective: eval.objective,
        z,
        max_eq_violation: v_eq,
        min_ineq_value: min_ineq,
        iterations: ws.inner_iterations,
        outer_iterations: outer,
        status,
        eq_multipliers: lambda,
        ineq_multipliers: mu,
        penalty: rho,
        stationarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    struct Bound;
    impl NlpProblem for Bound {
        fn dimension(&self) -> usize {
            1
        }
        fn initial_guess(&self) -> DVector<f64> {
            DVector::from_element(1, 0.0)
        }
        fn objective(&self, z: &DVector<f64>) -> f64 {
            (z[0] - 1.0).powi(2)
        }
        fn num_inequalities(&self) -> usize {
            1
        }
        fn inequalities(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
            out[0] = z[0] - 2.0;
        }
    }

    #[test]
    fn active_inequality() {
        let s = solve(&Bound, &SolverOptions::default(), None).unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        assert_relative_eq!(s.z[0], 2.0, epsilon = 1e-5);
        assert_relative_eq!(s.objective, 1.0, epsilon = 1e-5);
        assert!(s.min_ineq_value >= -1e-6);
    }

    struct BarrierBound;
    impl NlpProblem for BarrierBound {
        fn dimension(&self) -> usize {
            1
        }
        fn initial_guess(&self) -> DVector<f64> {
            DVector::from_element(1, 3.0)
        }
        fn objective(&self, z: &DVector<f64>) -> f64 {
            (z[0] - 1.0).powi(2)
        }
        fn num_inequalities(&self) -> usize {
            1
        }
        fn inequalities(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
            out[0] = z[0] - 2.0;
        }
    }

    #[test]
    fn log_barrier_from_interior() {
        let opts = SolverOptions { inequality_mode: InequalityMode::LogBarrier, ..Default::default() };
        let s = solve(&BarrierBound, &opts, None).unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        assert!(s.z[0] > 2.0);
        assert_relative_eq!(s.z[0], 2.0, epsilon = 1e-5);
        assert_relative_eq!(s.ineq_multipliers[0], 2.0, epsilon = 1e-3);
    }

    struct Plane;
    impl NlpProblem for Plane {
        fn dimension(&self) -> usize {
            2
        }
        fn initial_guess(&self) -> DVector<f64> {
            DVector::from_vec(alloc::vec![3.0, -1.0])
        }
        fn objective(&self, z: &DVector<f64>) -> f64 {
            0.5 * z.norm_squared()
        }
        fn gradient(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
            out.copy_from(z);
        }
        fn hessian(&self, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(DMatrix::identity(2, 2))
        }
        fn num_equalities(&self) -> usize {
            1
        }
        fn equalities(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
            out[0] = z[0] + z[1] - 1.0;
        }
    }

    #[test]
    fn equality_constrained_minimum_norm() {
        let s = solve(&Plane, &SolverOptions { tol_eq: 1e-9, ..Default::default() }, None).unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        assert_relative_eq!(s.z[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(s.z[1], 0.5, epsilon = 1e-6);
    }

    struct Empty;
    impl NlpProblem for Empty {
        fn dimension(&self) -> usize {
            1
        }
        fn initial_guess(&self) -> DVector<f64> {
            DVector::from_element(1, 0.3)
        }
        fn objective(&self, _z: &DVector<f64>) -> f64 {
            0.0
        }
        fn num_inequalities(&self) -> usize {
            2
        }
        fn inequalities(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
            out[0] = z[0] - 1.0;
            out[1] = -z[0];
        }
    }

    #[test]
    fn contradictory_constraints_are_infeasible() {
        let s = solve(&Empty, &SolverOptions::default(), None).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    struct Rosenbrock;
    impl NlpProblem for Rosenbrock {
        fn dimension(&self) -> usize {
            2
        }
        fn initial_guess(&self) -> DVector<f64> {
            DVector::from_vec(alloc::vec![-1.2, 1.0])
        }
        fn objective(&self, z: &DVector<f64>) -> f64 {
            (1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2)
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (DVector::from_element(2, -2.0), DVector::from_vec(alloc::vec![0.8, 2.0]))
        }
    }

    #[test]
    fn bounded_rosenbrock_with_fd_and_bfgs() {
        let s = solve(&Rosenbrock, &SolverOptions { max_iter: 2000, ..Default::default() }, None).unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        assert_relative_eq!(s.z[0], 0.8, epsilon = 1e-9);
        assert_relative_eq!(s.z[1], 0.64, epsilon = 1e-4);
    }

    #[test]
    fn non_finite_guess_is_rejected() {
        struct Bad;
        impl NlpProblem for Bad {
            fn dimension(&self) -> usize {
                1
            }
            fn initial_guess(&self) -> DVector<f64> {
                DVector::from_element(1, f64::NAN)
            }
            fn objective(&self, _z: &DVector<f64>) -> f64 {
                0.0
            }
        }
        assert_eq!(solve(&Bad, &SolverOptions::default(), None), Err(NlpError::NonFiniteInitialGuess));
    }

    #[test]
    fn non_finite_objective_is_numerical_failure() {
        struct Nan;
        impl NlpProblem for Nan {
            fn dimension(&self) -> usize {
                1
            }
            fn initial_guess(&self) -> DVector<f64> {
                DVector::from_element(1, 1.0)
            }
            fn objective(&self, z: &DVector<f64>) -> f64 {
                z[0].ln() * f64::NAN
            }
        }
        let s = solve(&Nan, &SolverOptions::default(), None).unwrap();
        assert_eq!(s.status, SolveStatus::NumericalFailure);
    }

    /// Convex QP: ½zᵀHz + qᵀz, Az = b, Gz ≥ h.
    struct Qp {
        h: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        g: DMatrix<f64>,
        hv: DVector<f64>,
    }

    impl NlpProblem for Qp {
        fn dimension(&self) -> usize {
            self.q.len()
        }
        fn initial_guess(&self) -> DVector<f64> {
            DVector::zeros(self.q.len())
        }
        fn objective(&self, z: &DVector<f64>) -> f64 {
            0.5 * z.dot(&(&self.h * z)) + self.q.dot(z)
        }
        fn gradient(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
            out.copy_from(&(&self.h * z + &self.q));
        }
        fn hessian(&self, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(self.h.clone())
        }
        fn num_equalities(&self) -> usize {
            self.b.len()
        }
        fn equalities(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
            out.copy_from(&(&self.a * z - &self.b));
        }
        fn equality_jacobian(&self, _z: &DVector<f64>, out: &mut DMatrix<f64>) {
            out.copy_from(&self.a);
        }
        fn num_inequalities(&self) -> usize {
            self.hv.len()
        }
        fn inequalities(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
            out.copy_from(&(&self.g * z - &self.hv));
        }
        fn inequality_jacobian(&self, _z: &DVector<f64>, out: &mut DMatrix<f64>) {
            out.copy_from(&self.g);
        }
    }

    /// KKT oracle by enumerating active sets (tiny problems only).
    fn kkt_oracle(qp: &Qp) -> DVector<f64> {
        let n = qp.q.len();
        let mi = qp.hv.len();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0..(1usize << mi) {
            let active: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
            let m = qp.b.len() + active.len();
            let mut k = DMatrix::zeros(n + m, n + m);
            let mut rhs = DVector::zeros(n + m);
            k.view_mut((0, 0), (n, n)).copy_from(&qp.h);
            for j in 0..n {
                rhs[j] = -qp.q[j];
            }
            let mut rows = Vec::new();
            for r in 0..qp.b.len() {
                rows.push((qp.a.row(r).clone_owned(), qp.b[r]));
            }
            for &i in &active {
                rows.push((qp.g.row(i).clone_owned(), qp.hv[i]));
            }
            for (r, (row, val)) in rows.iter().enumerate() {
                for j in 0..n {
                    k[(n + r, j)] = row[j];
                    k[(j, n + r)] = row[j];
                }
                rhs[n + r] = *val;
            }
            let Some(sol) = k.lu().solve(&rhs) else { continue };
            let z = sol.rows(0, n).clone_owned();
            let feasible = (0..mi).all(|i| (qp.g.row(i) * &z)[0] - qp.hv[i] >= -1e-9);
            // multipliers of active inequalities must be ≤ 0 in this sign convention
            let dual_ok = active.iter().enumerate().all(|(k, _)| sol[n + qp.b.len() + k] <= 1e-9);
            if feasible && dual_ok {
                let f = qp.objective(&z);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, z));
                }
            }
        }
        best.unwrap().1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn convex_qp_matches_kkt(seed in 0u64..10_000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &l * l.transpose() + DMatrix::identity(n, n);
            let q = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let a = DMatrix::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0));
            let g = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
            let hv = DVector::from_fn(3, |_, _| rng.random_range(-1.0..0.5));
            let qp = Qp { h, q, a, b, g, hv };
            let s = solve(&qp, &SolverOptions { tol_opt: 1e-9, tol_eq: 1e-9, tol_ineq: 1e-9, ..Default::default() }, None).unwrap();
            prop_assert_eq!(s.status, SolveStatus::Converged);
            let oracle = kkt_oracle(&qp);
            prop_assert!((s.z.clone() - oracle).amax() < 1e-6, "{} vs {}", s.z, kkt_oracle(&qp));
        }
    }

    #[test]
    fn warm_restart_is_cheap() {
        let qp = Qp {
            h: DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![1.0, 2.0, 3.0])),
            q: DVector::from_vec(alloc::vec![1.0, -1.0, 0.5]),
            a: DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
            b: DVector::from_element(1, 1.0),
            g: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            hv: DVector::from_element(1, 0.2),
        };
        let first = solve(&qp, &SolverOptions::default(), None).unwrap();
        assert_eq!(first.status, SolveStatus::Converged);
        let again = solve(&qp, &SolverOptions::default(), Some(&first.warm_start())).unwrap();
        assert_eq!(again.status, SolveStatus::Converged);
        assert!(again.iterations <= 3, "{}", again.iterations);
    }

    #[test]
    fn derivative_check_flags_wrong_gradient() {
        struct Wrong;
        impl NlpProblem for Wrong {
            fn dimension(&self) -> usize {
                2
            }
            fn initial_guess(&self) -> DVector<f64> {
                DVector::zeros(2)
            }
            fn objective(&self, z: &DVector<f64>) -> f64 {
                z[0] * z[0] + z[1]
            }
            fn gradient(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
                out[0] = 2.0 * z[0];
                out[1] = 2.0;
            }
        }
        let z = DVector::from_vec(alloc::vec![0.5, 0.1]);
        let err = check_derivatives(&Wrong, &z, 1e-4).unwrap_err();
        assert_eq!((err.function, err.column), ("objective", 1));
        assert!(check_derivatives(&Plane, &z, 1e-4).is_ok());
    }
}
