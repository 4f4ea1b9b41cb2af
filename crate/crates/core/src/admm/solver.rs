use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{SolverConfig, TerminationMode};
use super::constants::{proximal_weight, ConvergenceConstants};
use super::diagnostics::DiagnosticsRecord;
use super::rescale::{rescale_element, RescaleSchedule};
use super::wstep::{effective_pins, ConstraintUpdate, PinnedSystem};
use crate::energies::{evaluate_jacobians, gradient, value, EnergyKind};
use crate::error::{invalid, Error, Result};
use crate::jacobian::GradientOperator;
use crate::local_steps::{p_step, polar_init, u_step};
use crate::mesh::{HandleConstraints, Mesh};
use crate::smallmat::{symm, Mat, Rotation, Spd, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitStatus {
    Converged,
    MaxIter,
    Stalled,
}

impl ExitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIter => "max-iter",
            Self::Stalled => "stalled",
        }
    }
}

impl std::fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// ADMM iterates. `lambda` holds the scaled multipliers.
#[derive(Clone, Debug)]
pub struct AdmmState<const D: usize> {
    pub w: Vec<Vector<D>>,
    pub u: Vec<Rotation<D>>,
    pub p: Vec<Spd<D>>,
    pub lambda: Vec<Mat<D>>,
    pub mu: Vec<f64>,
    pub h: Vec<f64>,
    pub k: usize,
    pub rescale_events: usize,
}

/// Hands new constraint targets to a running solver; consumed at the start
/// of the next iteration.
#[derive(Clone, Debug, Default)]
pub struct ConstraintMailbox(Arc<Mutex<Option<HandleConstraints>>>);

impl ConstraintMailbox {
    /// Replaces any edit that has not been consumed yet.
    pub fn post(&self, handles: HandleConstraints) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = Some(handles);
    }

    pub fn take(&self) -> Option<HandleConstraints> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}

/// Primal and dual errors, per element and in total.
#[derive(Clone, Debug, PartialEq)]
pub struct Errors {
    pub prim: Vec<f64>,
    pub dual: Vec<f64>,
    pub prim_total: f64,
    pub dual_total: f64,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `e_prim_i = ‖J_i − U_i P_i‖`, `e_dual_i = μ_i ‖J_i − J_i^prev‖`.
pub fn compute_errors<const D: usize>(
    jac: &[Mat<D>],
    jac_prev: &[Mat<D>],
    u: &[Rotation<D>],
    p: &[Spd<D>],
    mu: &[f64],
) -> Errors {
    let (prim, dual): (Vec<f64>, Vec<f64>) = (0..jac.len())
        .into_par_iter()
        .map(|i| {
            let ep = (jac[i] - u[i].matrix() * p[i].matrix()).norm();
            let ed = mu[i] * (jac[i] - jac_prev[i]).norm();
            (ep, ed)
        })
        .unzip();
    Errors {
        prim_total: l2(&prim),
        dual_total: l2(&dual),
        prim,
        dual,
    }
}

/// `Σ w_i f(P_i) + μ_i/2 (‖J_i − U_iP_i + Λ_i‖² − ‖Λ_i‖²)`
pub fn augmented_lagrangian<const D: usize>(
    kind: EnergyKind,
    weights: &[f64],
    jac: &[Mat<D>],
    u: &[Rotation<D>],
    p: &[Spd<D>],
    lambda: &[Mat<D>],
    mu: &[f64],
) -> f64 {
    let terms: Vec<f64> = (0..jac.len())
        .into_par_iter()
        .map(|i| {
            let f = value(kind, p[i].matrix()).unwrap_or(f64::INFINITY);
            let c = jac[i] - u[i].matrix() * p[i].matrix() + lambda[i];
            weights[i] * f + 0.5 * mu[i] * (c.norm_squared() - lambda[i].norm_squared())
        })
        .collect();
    terms.iter().sum()
}

/// Result of a full solve.
#[derive(Clone, Debug)]
pub struct SolveOutput<const D: usize> {
    pub w: Vec<Vector<D>>,
    pub status: ExitStatus,
    pub history: Vec<DiagnosticsRecord>,
}

#[derive(Clone, Debug)]
struct StallTracker {
    best_prim: f64,
    best_dual: f64,
    since: usize,
}

impl StallTracker {
    fn new() -> Self {
        Self {
            best_prim: f64::INFINITY,
            best_dual: f64::INFINITY,
            since: 0,
        }
    }

    fn observe(&mut self, prim: f64, dual: f64) -> usize {
        const REL: f64 = 1e-12;
        let mut improved = false;
        if prim < self.best_prim * (1.0 - REL) {
            self.best_prim = prim;
            improved = true;
        }
        if dual < self.best_dual * (1.0 - REL) {
            self.best_dual = dual;
            improved = true;
        }
        self.since = if improved { 0 } else { self.since + 1 };
        self.since
    }
}

struct ElementUpdate<const D: usize> {
    u: Rotation<D>,
    p: Spd<D>,
    lambda: Mat<D>,
    e_prim: f64,
    e_dual: f64,
    grad_norm: f64,
    lambda_ratio: f64,
}

/// Three-block ADMM solver for one mesh.
pub struct Solver<const D: usize> {
    config: SolverConfig,
    op: GradientOperator<D>,
    weights: Vec<f64>,
    components: Vec<usize>,
    referenced: Vec<bool>,
    handles: HandleConstraints,
    system: PinnedSystem<D>,
    state: AdmmState<D>,
    jac: Vec<Mat<D>>,
    last_rhs: Vec<Mat<D>>,
    errors: Errors,
    constants: ConvergenceConstants,
    schedule: RescaleSchedule,
    history: Vec<DiagnosticsRecord>,
    stall: StallTracker,
    mailbox: ConstraintMailbox,
    last_update: Option<ConstraintUpdate>,
    status: Option<ExitStatus>,
    start: Instant,
}

impl<const D: usize> std::fmt::Debug for Solver<D> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver")
            .field("elements", &self.op.num_elements())
            .field("vertices", &self.op.num_vertices())
            .field("k", &self.state.k)
            .field("status", &self.status)
            .finish()
    }
}

impl<const D: usize> Solver<D> {
    /// Sets up the iterates from the initial map `w0` (flips allowed).
    pub fn new(
        mesh: &Mesh,
        w0: Vec<Vector<D>>,
        handles: HandleConstraints,
        config: SolverConfig,
    ) -> Result<Self> {
        config.validate()?;
        let op = GradientOperator::<D>::new(mesh)?;
        let n = mesh.num_vertices();
        if w0.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                actual: w0.len(),
            });
        }
        if let Some(v) = w0.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(invalid(format!("initial position of vertex {v} is not finite")));
        }
        check_handles(&handles, n)?;
        let weights = mesh.measures().to_vec();
        let kind = config.energy;

        let jac = op.apply(&w0)?;
        let (u, p) = polar_init(&jac, kind);
        let lambda = vec![Mat::<D>::zeros(); jac.len()];
        let constants =
            ConvergenceConstants::compute(kind, &weights, &p, config.gamma, config.epsilon);
        let mu: Vec<f64> = constants
            .mu_min
            .iter()
            .zip(&weights)
            .map(|(&m, &w)| m.max(w))
            .collect();
        let h = proximal_weights(&config, &weights, &constants, &mu);

        let components = mesh.vertex_components();
        let mut referenced = vec![false; n];
        for elem in mesh.elements() {
            for &v in elem {
                referenced[v] = true;
            }
        }
        let pins = effective_pins(&handles, &w0, &components, &referenced)?;
        let system = PinnedSystem::new(&op, &mu, pins)?;

        let state = AdmmState {
            w: w0,
            u,
            p,
            lambda,
            mu,
            h,
            k: 0,
            rescale_events: 0,
        };
        let errors = compute_errors(&jac, &jac, &state.u, &state.p, &state.mu);
        let mut solver = Self {
            config,
            op,
            weights,
            components,
            referenced,
            handles,
            system,
            state,
            last_rhs: Vec::new(),
            jac,
            errors,
            constants,
            schedule: RescaleSchedule::default(),
            history: Vec::new(),
            stall: StallTracker::new(),
            mailbox: ConstraintMailbox::default(),
            last_update: None,
            status: None,
            start: Instant::now(),
        };
        let lambda_ratios = vec![0.0; solver.jac.len()];
        let grads = solver.gradient_norms();
        let record = solver.make_record(&grads, &lambda_ratios);
        solver.history.push(record);
        Ok(solver)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn state(&self) -> &AdmmState<D> {
        &self.state
    }

    pub fn positions(&self) -> &[Vector<D>] {
        &self.state.w
    }

    /// Current Jacobians `GW`.
    pub fn jacobians(&self) -> &[Mat<D>] {
        &self.jac
    }

    pub fn operator(&self) -> &GradientOperator<D> {
        &self.op
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn constants(&self) -> &ConvergenceConstants {
        &self.constants
    }

    pub fn errors(&self) -> &Errors {
        &self.errors
    }

    pub fn history(&self) -> &[DiagnosticsRecord] {
        &self.history
    }

    pub fn last_record(&self) -> &DiagnosticsRecord {
        self.history.last().expect("history starts with the initial record")
    }

    pub fn handles(&self) -> &HandleConstraints {
        &self.handles
    }

    /// Pins actually eliminated in the global step (handles plus automatic ones).
    pub fn pins(&self) -> &[(usize, Vector<D>)] {
        self.system.pins()
    }

    /// Termination decision of the latest iteration, if any.
    pub fn status(&self) -> Option<ExitStatus> {
        self.status
    }

    pub fn mailbox(&self) -> ConstraintMailbox {
        self.mailbox.clone()
    }

    /// Path taken by the most recent constraint edit, cleared on read.
    pub fn take_constraint_update(&mut self) -> Option<ConstraintUpdate> {
        self.last_update.take()
    }

    /// Replaces the handle constraints; takes effect in the next W-step.
    pub fn set_constraints(&mut self, handles: HandleConstraints) -> Result<ConstraintUpdate> {
        check_handles(&handles, self.op.num_vertices())?;
        let pins = effective_pins(&handles, &self.state.w, &self.components, &self.referenced)?;
        let update = self.system.set_pins(pins)?;
        self.handles = handles;
        self.status = None;
        self.stall = StallTracker::new();
        self.last_update = Some(update);
        Ok(update)
    }

    /// Relative residual of the latest global solve on the free rows.
    pub fn global_step_residual(&self) -> Result<f64> {
        if self.last_rhs.is_empty() {
            return Ok(0.0);
        }
        self.system.relative_residual(&self.op, &self.last_rhs, &self.state.w)
    }

    /// Whether the initial map already satisfies a flip-free-only or target
    /// energy stopping rule and sits exactly on its pins.
    fn initial_goal_met(&self) -> bool {
        let mode = self.config.termination;
        mode != TerminationMode::Default
            && check_termination(self.last_record(), mode)
            && self.system.pins().iter().all(|(v, x)| self.state.w[*v] == *x)
    }

    /// Runs until termination or `max_iter`.
    pub fn run(&mut self) -> Result<ExitStatus> {
        self.run_with(|_| {})
    }

    /// Like [`Solver::run`], calling `observe` after every iteration.
    pub fn run_with(&mut self, mut observe: impl FnMut(&DiagnosticsRecord)) -> Result<ExitStatus> {
        if self.state.k == 0 && self.initial_goal_met() {
            self.status = Some(ExitStatus::Converged);
            return Ok(ExitStatus::Converged);
        }
        loop {
            if self.state.k >= self.config.max_iter {
                self.status = Some(ExitStatus::MaxIter);
                return Ok(ExitStatus::MaxIter);
            }
            self.step()?;
            observe(self.last_record());
            if let Some(s) = self.status {
                return Ok(s);
            }
        }
    }

    /// Consumes the solver into its final map and history.
    pub fn into_output(self) -> SolveOutput<D> {
        SolveOutput {
            w: self.state.w,
            status: self.status.unwrap_or(ExitStatus::MaxIter),
            history: self.history,
        }
    }

    /// One sweep followed by termination check and penalty rescaling.
    pub fn step(&mut self) -> Result<&DiagnosticsRecord> {
        self.sweep()?;
        self.finish_iteration()?;
        Ok(self.last_record())
    }

    /// W, U, P and Λ updates with diagnostics; no rescaling.
    pub fn sweep(&mut self) -> Result<()> {
        if let Some(h) = self.mailbox.take() {
            self.set_constraints(h)?;
        }
        let kind = self.config.energy;
        let st = &mut self.state;
        st.k += 1;

        let r: Vec<Mat<D>> = (0..st.u.len())
            .into_par_iter()
            .map(|i| (st.u[i].matrix() * st.p[i].matrix() - st.lambda[i]) * st.mu[i])
            .collect();
        st.w = self.system.solve(&self.op, &r)?;
        self.last_rhs = r;
        let jac_prev = std::mem::take(&mut self.jac);
        self.jac = self.op.apply(&st.w)?;

        let jac = &self.jac;
        let weights = &self.weights;
        let updates: Vec<Result<ElementUpdate<D>>> = (0..jac.len())
            .into_par_iter()
            .map(|i| {
                let (j, lam, mu) = (&jac[i], &st.lambda[i], st.mu[i]);
                let u = u_step(j, lam, &st.p[i], &st.u[i], mu, st.h[i]);
                let q = symm(&(u.matrix().transpose() * (j + lam)));
                let p = p_step(kind, &q, weights[i], mu)?;
                let resid = j - u.matrix() * p.matrix();
                let lambda = lam + resid;
                let y_old = lam * mu;
                let y_new = lambda * mu;
                let a = y_new + u.matrix() * y_new.transpose() * u.matrix()
                    - y_old
                    - st.u[i].matrix() * y_old.transpose() * st.u[i].matrix();
                let an = a.norm();
                let lambda_ratio = if an > 0.0 {
                    2.0 * (y_new - y_old).norm() / an
                } else {
                    0.0
                };
                let grad_norm = gradient(kind, p.matrix()).map_or(f64::INFINITY, |g| g.norm());
                Ok(ElementUpdate {
                    e_prim: resid.norm(),
                    e_dual: mu * (j - jac_prev[i]).norm(),
                    u,
                    p,
                    lambda,
                    grad_norm,
                    lambda_ratio,
                })
            })
            .collect();
        let m = updates.len();
        let mut prim = Vec::with_capacity(m);
        let mut dual = Vec::with_capacity(m);
        let mut grads = Vec::with_capacity(m);
        let mut ratios = Vec::with_capacity(m);
        for (i, up) in updates.into_iter().enumerate() {
            let up = up?;
            st.u[i] = up.u;
            st.p[i] = up.p;
            st.lambda[i] = up.lambda;
            prim.push(up.e_prim);
            dual.push(up.e_dual);
            grads.push(up.grad_norm);
            ratios.push(up.lambda_ratio);
        }
        self.errors = Errors {
            prim_total: l2(&prim),
            dual_total: l2(&dual),
            prim,
            dual,
        };
        let record = self.make_record(&grads, &ratios);
        self.history.push(record);
        Ok(())
    }

    /// Termination check on the latest sweep, then rescaling if scheduled.
    pub fn finish_iteration(&mut self) -> Result<()> {
        let r = self.last_record().clone();
        let done = check_termination(&r, self.config.termination);
        let since = self.stall.observe(r.e_prim, r.e_dual);
        if done {
            self.status = Some(ExitStatus::Converged);
            return Ok(());
        }
        self.status = None;
        if r.flips > 0 && since >= self.config.stall_window {
            self.status = Some(ExitStatus::Stalled);
            return Ok(());
        }
        let k = self.state.k;
        if self.schedule.due(&self.config.rescale, k) {
            self.rescale()?;
            self.schedule.record(k);
            self.state.rescale_events = self.schedule.events;
            if let Some(last) = self.history.last_mut() {
                last.rescaled = true;
            }
        }
        Ok(())
    }

    fn rescale(&mut self) -> Result<()> {
        let cfg = &self.config;
        self.constants = ConvergenceConstants::compute(
            cfg.energy,
            &self.weights,
            &self.state.p,
            cfg.gamma,
            cfg.epsilon,
        );
        let mut changed = false;
        for i in 0..self.state.mu.len() {
            let old = self.state.mu[i];
            let new = rescale_element(
                old,
                &mut self.state.lambda[i],
                self.errors.prim[i],
                self.errors.dual[i],
                cfg.rho,
                0.5 * self.constants.mu_min[i],
            );
            self.state.mu[i] = new;
            changed |= new != old;
        }
        self.state.h = proximal_weights(cfg, &self.weights, &self.constants, &self.state.mu);
        if changed {
            self.system.set_mu(&self.op, &self.state.mu)?;
        }
        Ok(())
    }

    fn gradient_norms(&self) -> Vec<f64> {
        let kind = self.config.energy;
        self.state
            .p
            .par_iter()
            .map(|p| gradient(kind, p.matrix()).map_or(f64::INFINITY, |g| g.norm()))
            .collect()
    }

    fn make_record(&self, grads: &[f64], lambda_ratios: &[f64]) -> DiagnosticsRecord {
        let st = &self.state;
        let cfg = &self.config;
        let report = evaluate_jacobians(cfg.energy, &self.weights, &self.jac, false);
        let phi = augmented_lagrangian(
            cfg.energy,
            &self.weights,
            &self.jac,
            &st.u,
            &st.p,
            &st.lambda,
            &st.mu,
        );
        let m = self.jac.len();
        let sqrt_dm = ((D * m) as f64).sqrt();
        let gw_norm = self.jac.iter().map(|j| j.norm_squared()).sum::<f64>().sqrt();
        let p_norm = st.p.iter().map(|p| p.norm_squared()).sum::<f64>().sqrt();
        let gt_lambda = self
            .op
            .apply_adjoint(&st.lambda)
            .map(|v| v.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt())
            .unwrap_or(f64::NAN);
        let fmax = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        let grad_ratio = grads
            .iter()
            .zip(&self.constants.b)
            .map(|(g, b)| g / b)
            .fold(0.0, f64::max);
        DiagnosticsRecord {
            iter: st.k,
            e_prim: self.errors.prim_total,
            e_dual: self.errors.dual_total,
            e_prim_max: fmax(&self.errors.prim),
            e_dual_max: fmax(&self.errors.dual),
            prim_threshold: cfg.eps_abs * sqrt_dm + cfg.eps_rel * gw_norm.max(p_norm),
            dual_threshold: cfg.eps_abs * sqrt_dm + cfg.eps_rel * gt_lambda,
            energy: report.total,
            flips: report.flips,
            phi,
            max_grad_norm: fmax(grads),
            max_grad_ratio: grad_ratio,
            lambda_ratio: fmax(lambda_ratios),
            mu_min: st.mu.iter().copied().fold(f64::INFINITY, f64::min),
            mu_max: fmax(&st.mu),
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            rescaled: false,
        }
    }
}

/// Whether an iteration with diagnostics `r` ends the run under `mode`.
pub fn check_termination(r: &DiagnosticsRecord, mode: TerminationMode) -> bool {
    match mode {
        TerminationMode::Default => {
            r.flips == 0 && r.e_prim < r.prim_threshold && r.e_dual < r.dual_threshold
        }
        TerminationMode::FlipFreeOnly => r.flips == 0,
        TerminationMode::TargetEnergy { value } => r.flips == 0 && r.energy <= value,
    }
}

fn proximal_weights(
    cfg: &SolverConfig,
    weights: &[f64],
    constants: &ConvergenceConstants,
    mu: &[f64],
) -> Vec<f64> {
    if !cfg.proximal {
        return vec![0.0; mu.len()];
    }
    (0..mu.len())
        .map(|i| proximal_weight(weights[i], constants.b[i], mu[i], cfg.gamma, cfg.epsilon))
        .collect()
}

fn check_handles(handles: &HandleConstraints, n: usize) -> Result<()> {
    if let Some((v, _)) = handles.iter().find(|h| h.0 >= n) {
        return Err(invalid(format!(
            "handle references vertex {v}, but the mesh has {n} vertices"
        )));
    }
    Ok(())
}

/// Convenience wrapper: build a solver and run it to completion.
pub fn solve<const D: usize>(
    mesh: &Mesh,
    w0: Vec<Vector<D>>,
    handles: HandleConstraints,
    config: SolverConfig,
) -> Result<SolveOutput<D>> {
    let mut s = Solver::new(mesh, w0, handles, config)?;
    s.run()?;
    Ok(s.into_output())
}
