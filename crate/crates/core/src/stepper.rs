//! Time integration of the coupled system with the theta method.
//!
//! Each step solves the nonlinear problem at the new time level by damped
//! fixed-point iteration: the kinetics of `c` and `p` are updated from the
//! previous iterate, the stiffness matrix is assembled from `(u_{k-1}, c_k)`,
//! and one linear system is solved for `u_k`. The iteration stops when the
//! largest Euclidean increment of `u`, `c`, `p` drops below `tol`; otherwise
//! all three iterates are relaxed with the damping factor and the loop goes on.
//!
//! Three schemes share the loop:
//!
//! * `Galerkin`: `(M + theta tau A_{k-1}) u_k = (M - (1-theta) tau A^n) u^n`
//! * `LowOrder`: `(M_L + theta tau L_{k-1}) u_k = (M_L - (1-theta) tau L^n) u^n`
//! * `Fct`: the low-order system plus limited antidiffusive fluxes,
//!   `(M_L + theta tau L_{k-1}) u_k = M_L ubar + sum_j alpha_ij f_ij`.

use serde::Serialize;
use thiserror::Error;

use crate::assembly::{
    artificial_diffusion_into, low_order_operator_into, Assembler, AssemblyError, LumpedMass,
    StiffnessParams, StiffnessVariant,
};
use crate::fct::{
    compute_fluxes_into, limited_flux_sum, prelimit, zalesak_into, FluxSet, LimiterSet,
    LocalBounds, ZalesakScratch,
};
use crate::kinetics::{update_c_nodes, update_p_nodes, KineticsParams};
use crate::linsolve::{AutoSolver, LinearSolver, SolveError};
use crate::mesh::{shape_constant_kappa, Mesh, MeshError};
use crate::sparse::SparseMatrix;

/// Vertices per quadrilateral cell.
const CELL_VERTICES: f64 = 4.0;

/// Fraction of the a-priori bound used when the time step is clipped.
const ENFORCE_SAFETY: f64 = 0.999;

/// Slack for rounding when checking the positivity of accepted states.
pub const POSITIVITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Galerkin,
    LowOrder,
    #[default]
    Fct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TauPolicy {
    /// Shrink the step below the sufficient positivity bounds.
    #[default]
    Enforce,
    /// Use the requested step and log violated bounds.
    Warn,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NonConvergence {
    #[default]
    Abort,
    /// Keep the last iterate and flag the step.
    Accept,
}

/// How the FCT correction factors are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LimiterMode {
    #[default]
    Zalesak,
    /// All factors 1: the unlimited high-order correction.
    ForceOne,
    /// All factors 0: the low-order scheme written through the predictor.
    ForceZero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeConfig {
    pub mu: f64,
    pub chi: f64,
    pub epsilon: f64,
    /// Cell diffusion coefficient; `None` for the pure haptotaxis model.
    pub alpha_inv: Option<f64>,
    pub theta: f64,
    pub scheme: Scheme,
    pub tol: f64,
    pub damping: f64,
    pub max_iterations: usize,
    /// Requested time step.
    pub tau: f64,
    pub tau_policy: TauPolicy,
    pub final_time: f64,
    pub on_nonconvergence: NonConvergence,
    /// Stiffness used by the Galerkin scheme (`Raw` is the plain method).
    pub galerkin_stiffness: StiffnessVariant,
    pub limiter: LimiterMode,
    pub prelimiting: bool,
    /// A step whose `max |u|` exceeds this value is reported as a blow-up.
    pub blowup_threshold: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            chi: 1.0,
            epsilon: 0.2,
            alpha_inv: None,
            theta: 0.5,
            scheme: Scheme::Fct,
            tol: 1e-8,
            damping: 0.5,
            max_iterations: 500,
            tau: 0.1,
            tau_policy: TauPolicy::Enforce,
            final_time: 50.0,
            on_nonconvergence: NonConvergence::Abort,
            galerkin_stiffness: StiffnessVariant::Raw,
            limiter: LimiterMode::Zalesak,
            prelimiting: true,
            blowup_threshold: 1e3,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field} = {value}: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub value: f64,
    pub reason: &'static str,
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |field, value: f64, ok: bool, reason| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ConfigError {
                    field,
                    value,
                    reason,
                })
            }
        };
        check("mu", self.mu, self.mu >= 0.0, "must be non-negative")?;
        check("chi", self.chi, self.chi >= 0.0, "must be non-negative")?;
        check(
            "epsilon",
            self.epsilon,
            self.epsilon > 0.0,
            "must be positive",
        )?;
        if let Some(a) = self.alpha_inv {
            check("alpha_inv", a, a >= 0.0, "must be non-negative")?;
        }
        check(
            "theta",
            self.theta,
            (0.0..=1.0).contains(&self.theta),
            "must lie in [0, 1]",
        )?;
        check("tol", self.tol, self.tol > 0.0, "must be positive")?;
        check(
            "damping",
            self.damping,
            self.damping > 0.0 && self.damping <= 1.0,
            "must lie in (0, 1]",
        )?;
        check(
            "max_iterations",
            self.max_iterations as f64,
            self.max_iterations > 0,
            "must be at least 1",
        )?;
        check("tau", self.tau, self.tau > 0.0, "must be positive")?;
        check(
            "final_time",
            self.final_time,
            self.final_time >= 0.0,
            "must be non-negative",
        )?;
        check(
            "blowup_threshold",
            self.blowup_threshold,
            self.blowup_threshold > 0.0,
            "must be positive",
        )?;
        Ok(())
    }

    pub fn stiffness_params(&self) -> StiffnessParams {
        StiffnessParams {
            mu: self.mu,
            chi: self.chi,
            alpha_inv: self.alpha_inv,
        }
    }
}

/// Nodal coefficients of the three unknowns at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct State {
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn of(v: &[f64]) -> Self {
        v.iter().fold(
            Range {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, &x| Range {
                min: r.min.min(x),
                max: r.max.max(x),
            },
        )
    }

    fn merge(self, other: Range) -> Self {
        Range {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    /// Time at the end of the step.
    pub t: f64,
    pub tau: f64,
    pub iterations: usize,
    pub converged: bool,
    pub increment_u: f64,
    pub increment_c: f64,
    pub increment_p: f64,
    pub u: Range,
    pub c: Range,
    pub p: Range,
    /// `(1 - theta) tau l_ii <= m_i` at the old level (low-order and FCT only).
    pub explicit_ok: Option<bool>,
    /// Strict a-priori implicit bound.
    pub implicit_ok: bool,
    /// `theta tau (mu m_i + chi (grad c, grad phi_i)) < m_i` with the new `c`.
    pub aposteriori_ok: bool,
    /// Sign pattern and strictly positive row sums of the system matrix that
    /// produced the accepted iterate (low-order and FCT only).
    pub m_matrix_ok: Option<bool>,
    /// Largest `||Bx - b||_inf` of the linear solves.
    pub residual: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("linear solve failed in fixed-point iteration {iteration}: {source}")]
    Solve {
        iteration: usize,
        source: SolveError,
    },
    #[error("fixed-point iteration did not converge in {iterations} iterations (increment {increment:e})")]
    NotConverged { iterations: usize, increment: f64 },
    #[error("non-finite values in the solution")]
    NonFinite,
    #[error("solution blew up: max |u| = {max_abs_u:e}")]
    BlowUp { max_abs_u: f64 },
    #[error("time step {tau} violates the explicit bound {bound}")]
    ExplicitBound { tau: f64, bound: f64 },
    #[error("state has {got} nodes, mesh has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Kinetics(#[from] crate::kinetics::KineticsError),
}

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("step {step} failed at t = {time}: {source}")]
pub struct RunError {
    pub step: usize,
    pub time: f64,
    pub source: StepError,
}

/// Admissible step sizes for positivity of the low-order and FCT schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauBounds {
    /// `min_i m_i / ((1 - theta) l_ii)`; non-strict.
    pub explicit: f64,
    /// `min_i m_i / (theta (mu m_i + chi n_v kappa^2 #cells(i)))`; strict.
    pub implicit: f64,
}

/// Sufficient time-step bounds at the state whose low-order operator is `l`.
pub fn max_admissible_tau(
    mesh: &Mesh,
    lumped: &LumpedMass,
    l: &SparseMatrix,
    config: &SchemeConfig,
) -> Result<TauBounds, MeshError> {
    Ok(TauBounds {
        explicit: explicit_bound(lumped, l, config.theta),
        implicit: implicit_bound(mesh, lumped, config)?,
    })
}

fn explicit_bound(lumped: &LumpedMass, l: &SparseMatrix, theta: f64) -> f64 {
    let mut bound = f64::INFINITY;
    if theta < 1.0 {
        for i in 0..lumped.len() {
            let lii = l.diag(i);
            if lii > 0.0 {
                bound = bound.min(lumped[i] / ((1.0 - theta) * lii));
            }
        }
    }
    bound
}

fn implicit_bound(
    mesh: &Mesh,
    lumped: &LumpedMass,
    config: &SchemeConfig,
) -> Result<f64, MeshError> {
    let kappa = shape_constant_kappa(mesh)?;
    let mut bound = f64::INFINITY;
    if config.theta > 0.0 {
        for i in 0..lumped.len() {
            // h_K^(d-2) = 1 in two dimensions
            let cells = mesh.node_cells(i).len() as f64;
            let denom = config.theta
                * (config.mu * lumped[i] + config.chi * CELL_VERTICES * kappa * kappa * cells);
            if denom > 0.0 {
                bound = bound.min(lumped[i] / denom);
            }
        }
    }
    Ok(bound)
}

/// Explicit low-order predictor `ubar = u - ((1 - theta) tau / m_i) (L u)_i`.
pub fn low_order_predictor(
    lumped: &LumpedMass,
    l: &SparseMatrix,
    u: &[f64],
    tau: f64,
    theta: f64,
) -> Vec<f64> {
    let mut lu = vec![0.0; u.len()];
    l.mul_vec_into(u, &mut lu);
    (0..u.len())
        .map(|i| u[i] - (1.0 - theta) * tau * lu[i] / lumped[i])
        .collect()
}

fn euclid_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn relax(current: &mut [f64], previous: &[f64], beta: f64) {
    for (x, &y) in current.iter_mut().zip(previous) {
        *x = beta * *x + (1.0 - beta) * y;
    }
}

/// `Z`-sign pattern, positive diagonal and strictly positive row sums.
fn is_m_matrix_certified(b: &SparseMatrix) -> bool {
    (0..b.dim()).all(|i| {
        let mut sum = 0.0;
        let mut ok = true;
        for (j, v) in b.row(i) {
            sum += v;
            if j == i {
                ok &= v > 0.0;
            } else {
                ok &= v <= 0.0;
            }
        }
        ok && sum > 0.0
    })
}

/// Work arrays of one step, allocated once per simulation.
#[derive(Debug, Clone)]
struct Workspace {
    a_old: SparseMatrix,
    d_old: SparseMatrix,
    l_old: SparseMatrix,
    a: SparseMatrix,
    d: SparseMatrix,
    l: SparseMatrix,
    system: SparseMatrix,
    flux: FluxSet,
    alpha: LimiterSet,
    zalesak: ZalesakScratch,
    bounds: LocalBounds,
    ubar: Vec<f64>,
    rhs_base: Vec<f64>,
    rhs: Vec<f64>,
    corr: Vec<f64>,
    tmp: Vec<f64>,
    u_prev: Vec<f64>,
    c_prev: Vec<f64>,
    p_prev: Vec<f64>,
}

/// A configured solver on a fixed mesh.
#[derive(Debug, Clone)]
pub struct Simulation {
    mesh: Mesh,
    assembler: Assembler,
    mass: SparseMatrix,
    lumped: LumpedMass,
    laplacian: SparseMatrix,
    config: SchemeConfig,
    implicit_bound: f64,
    solver: AutoSolver,
    ws: Workspace,
}

/// Notifications emitted by [`Simulation::run`].
#[derive(Debug)]
pub enum RunEvent<'a> {
    Step {
        step: usize,
        state: &'a State,
        diagnostics: &'a StepDiagnostics,
    },
    Snapshot {
        requested: f64,
        state: &'a State,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    /// Time step actually used (after clipping).
    pub tau: f64,
    pub final_state: State,
    pub last: Option<StepDiagnostics>,
    /// Extremes over all accepted states, the initial one included.
    pub u: Range,
    pub c: Range,
    pub p: Range,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub nonconverged_steps: usize,
    pub explicit_violations: usize,
    pub implicit_violations: usize,
    pub aposteriori_violations: usize,
    pub m_matrix_failures: usize,
    /// Steps that were split to satisfy the explicit bound.
    pub split_steps: usize,
}

impl Simulation {
    pub fn new(mesh: Mesh, config: SchemeConfig) -> Result<Self, SetupError> {
        config.validate()?;
        let assembler = Assembler::new(&mesh);
        let mass = assembler.mass();
        let lumped = crate::assembly::lump_mass(&mass);
        let laplacian = assembler.laplacian();
        let implicit_bound = implicit_bound(&mesh, &lumped, &config)?;
        let n = mesh.num_nodes();
        let z = assembler.zeros();
        let ws = Workspace {
            a_old: z.clone(),
            d_old: z.clone(),
            l_old: z.clone(),
            a: z.clone(),
            d: z.clone(),
            l: z.clone(),
            system: z,
            flux: FluxSet::zeros(assembler.pattern()),
            alpha: LimiterSet::constant(assembler.pattern(), 1.0),
            zalesak: ZalesakScratch::default(),
            bounds: LocalBounds {
                min: vec![0.0; n],
                max: vec![0.0; n],
            },
            ubar: vec![0.0; n],
            rhs_base: vec![0.0; n],
            rhs: vec![0.0; n],
            corr: vec![0.0; n],
            tmp: vec![0.0; n],
            u_prev: vec![0.0; n],
            c_prev: vec![0.0; n],
            p_prev: vec![0.0; n],
        };
        Ok(Self {
            mesh,
            assembler,
            mass,
            lumped,
            laplacian,
            config,
            implicit_bound,
            solver: AutoSolver::default(),
            ws,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    pub fn lumped_mass(&self) -> &LumpedMass {
        &self.lumped
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    /// The strict a-priori bound of the implicit part.
    pub fn implicit_bound(&self) -> f64 {
        self.implicit_bound
    }

    /// Nodal interpolation of the initial functions at `t = 0`.
    pub fn initialize(
        &self,
        u0: impl Fn(f64, f64) -> f64,
        c0: impl Fn(f64, f64) -> f64,
        p0: impl Fn(f64, f64) -> f64,
    ) -> State {
        let nodes = self.mesh.nodes();
        State {
            u: nodes.iter().map(|&[x, y]| u0(x, y)).collect(),
            c: nodes.iter().map(|&[x, y]| c0(x, y)).collect(),
            p: nodes.iter().map(|&[x, y]| p0(x, y)).collect(),
            t: 0.0,
        }
    }

    /// Both time-step bounds at `state`.
    pub fn tau_bounds(&mut self, state: &State) -> Result<TauBounds, StepError> {
        self.assemble_old_level(state)?;
        Ok(TauBounds {
            explicit: explicit_bound(&self.lumped, &self.ws.l_old, self.config.theta),
            implicit: self.implicit_bound,
        })
    }

    /// Assemble `A^n`, `D^n`, `L^n` at the old level (the `1 - |u|` variant).
    fn assemble_old_level(&mut self, state: &State) -> Result<(), StepError> {
        let ws = &mut self.ws;
        let params = self.config.stiffness_params();
        let variant = match self.config.scheme {
            Scheme::Galerkin => self.config.galerkin_stiffness,
            _ => StiffnessVariant::Abs,
        };
        self.assembler
            .stiffness_into(&state.u, &state.c, params, variant, &mut ws.a_old)?;
        artificial_diffusion_into(&ws.a_old, &mut ws.d_old)?;
        low_order_operator_into(&ws.a_old, &ws.d_old, &mut ws.l_old)?;
        Ok(())
    }

    fn check_state(&self, state: &State) -> Result<(), StepError> {
        let n = self.mesh.num_nodes();
        for v in [&state.u, &state.c, &state.p] {
            if v.len() != n {
                return Err(StepError::SizeMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    /// Advance `state` by one step of size `tau` with a
    /// damped fixed-point iteration.
    pub fn fixed_point_step(
        &mut self,
        state: &State,
        tau: f64,
    ) -> Result<(State, StepDiagnostics), StepError> {
        self.check_state(state)?;
        let cfg = self.config.clone();
        let theta = cfg.theta;
        let n = self.mesh.num_nodes();
        let kinetics = KineticsParams::new(cfg.epsilon, tau)?;
        let weights = kinetics.weights();
        let params = cfg.stiffness_params();
        let galerkin = cfg.scheme == Scheme::Galerkin;

        self.assemble_old_level(state)?;
        let ws = &mut self.ws;

        // Old-level right-hand side and predictor.
        let mut explicit_ok = None;
        if galerkin {
            ws.a_old.mul_vec_into(&state.u, &mut ws.tmp);
            self.mass.mul_vec_into(&state.u, &mut ws.rhs_base);
            for i in 0..n {
                ws.rhs_base[i] -= (1.0 - theta) * tau * ws.tmp[i];
            }
        } else {
            let bound = explicit_bound(&self.lumped, &ws.l_old, theta);
            let ok = tau <= bound;
            if !ok && cfg.tau_policy == TauPolicy::Enforce {
                return Err(StepError::ExplicitBound { tau, bound });
            }
            explicit_ok = Some(ok);
            ws.l_old.mul_vec_into(&state.u, &mut ws.tmp);
            for i in 0..n {
                let m = self.lumped[i];
                ws.ubar[i] = state.u[i] - (1.0 - theta) * tau * ws.tmp[i] / m;
                ws.rhs_base[i] = m * state.u[i] - (1.0 - theta) * tau * ws.tmp[i];
            }
            if cfg.scheme == Scheme::Fct {
                for i in 0..n {
                    ws.rhs_base[i] = self.lumped[i] * ws.ubar[i];
                }
                ws.bounds = LocalBounds::new(self.assembler.pattern(), &ws.ubar);
            }
        }

        ws.u_prev.copy_from_slice(&state.u);
        ws.c_prev.copy_from_slice(&state.c);
        ws.p_prev.copy_from_slice(&state.p);
        let mut u_new = state.u.clone();
        let mut c_new = state.c.clone();
        let mut p_new = state.p.clone();
        let mut m_matrix_ok = if galerkin { None } else { Some(true) };
        let mut residual: f64 = 0.0;
        let mut converged = false;
        let mut iterations = 0;
        let mut increments = [f64::INFINITY; 3];

        for k in 1..=cfg.max_iterations {
            iterations = k;
            update_c_nodes(&state.c, &state.p, &ws.p_prev, tau, &mut c_new);
            update_p_nodes(
                &weights, &state.u, &ws.u_prev, &state.c, &c_new, &state.p, &mut p_new,
            );

            if galerkin {
                self.assembler.stiffness_into(
                    &ws.u_prev,
                    &c_new,
                    params,
                    cfg.galerkin_stiffness,
                    &mut ws.a,
                )?;
                let (sv, mv, av) = (ws.system.values_mut(), self.mass.values(), ws.a.values());
                for s in 0..sv.len() {
                    sv[s] = mv[s] + theta * tau * av[s];
                }
                ws.rhs.copy_from_slice(&ws.rhs_base);
            } else {
                self.assembler.stiffness_into(
                    &ws.u_prev,
                    &c_new,
                    params,
                    StiffnessVariant::Abs,
                    &mut ws.a,
                )?;
                artificial_diffusion_into(&ws.a, &mut ws.d)?;
                low_order_operator_into(&ws.a, &ws.d, &mut ws.l)?;
                let pattern = self.assembler.pattern().clone();
                {
                    let (sv, lv) = (ws.system.values_mut(), ws.l.values());
                    for s in 0..sv.len() {
                        sv[s] = theta * tau * lv[s];
                    }
                    for i in 0..n {
                        sv[pattern.diag_slot(i)] += self.lumped[i];
                    }
                }
                ws.rhs.copy_from_slice(&ws.rhs_base);
                if cfg.scheme == Scheme::Fct {
                    compute_fluxes_into(
                        &self.mass,
                        &ws.d,
                        &ws.d_old,
                        &ws.u_prev,
                        &state.u,
                        tau,
                        theta,
                        &mut ws.flux,
                    )
                    .map_err(AssemblyError::from)?;
                    if cfg.prelimiting {
                        prelimit(&mut ws.flux, &pattern, &ws.ubar);
                    }
                    match cfg.limiter {
                        LimiterMode::Zalesak => zalesak_into(
                            &ws.flux,
                            &ws.ubar,
                            &ws.bounds,
                            &self.lumped,
                            &pattern,
                            &mut ws.zalesak,
                            &mut ws.alpha,
                        ),
                        LimiterMode::ForceOne => ws.alpha = LimiterSet::constant(&pattern, 1.0),
                        LimiterMode::ForceZero => ws.alpha = LimiterSet::constant(&pattern, 0.0),
                    }
                    limited_flux_sum(&ws.alpha, &ws.flux, &pattern, &mut ws.corr);
                    for i in 0..n {
                        ws.rhs[i] += ws.corr[i];
                    }
                }
            }

            u_new.copy_from_slice(&ws.u_prev);
            let report = self
                .solver
                .solve(&ws.system, &ws.rhs, &mut u_new)
                .map_err(|source| StepError::Solve {
                    iteration: k,
                    source,
                })?;
            residual = residual.max(report.residual);
            log::trace!("linear solve: {report:?}");

            increments = [
                euclid_diff(&u_new, &ws.u_prev),
                euclid_diff(&c_new, &ws.c_prev),
                euclid_diff(&p_new, &ws.p_prev),
            ];
            let increment = increments.iter().fold(0.0f64, |a, &b| a.max(b));
            log::trace!(
                "iteration {k}: increments u {:e} c {:e} p {:e}",
                increments[0],
                increments[1],
                increments[2]
            );
            if !increment.is_finite() {
                return Err(StepError::NonFinite);
            }
            if increment < cfg.tol || k == cfg.max_iterations {
                if let Some(ok) = m_matrix_ok.as_mut() {
                    *ok = is_m_matrix_certified(&ws.system);
                }
            }
            if increment < cfg.tol {
                converged = true;
                break;
            }
            relax(&mut u_new, &ws.u_prev, cfg.damping);
            relax(&mut c_new, &ws.c_prev, cfg.damping);
            relax(&mut p_new, &ws.p_prev, cfg.damping);
            ws.u_prev.copy_from_slice(&u_new);
            ws.c_prev.copy_from_slice(&c_new);
            ws.p_prev.copy_from_slice(&p_new);
        }

        if !converged && cfg.on_nonconvergence == NonConvergence::Abort {
            return Err(StepError::NotConverged {
                iterations,
                increment: increments.iter().fold(0.0f64, |a, &b| a.max(b)),
            });
        }

        let new_state = State {
            u: u_new,
            c: c_new,
            p: p_new,
            t: state.t + tau,
        };
        let u_range = Range::of(&new_state.u);
        if new_state
            .u
            .iter()
            .chain(&new_state.c)
            .chain(&new_state.p)
            .any(|v| !v.is_finite())
        {
            return Err(StepError::NonFinite);
        }
        let max_abs_u = u_range.max.abs().max(u_range.min.abs());
        if max_abs_u > cfg.blowup_threshold {
            return Err(StepError::BlowUp { max_abs_u });
        }

        // a-posteriori implicit condition with the new c
        self.laplacian.mul_vec_into(&new_state.c, &mut self.ws.tmp);
        let aposteriori_ok = (0..n).all(|i| {
            let m = self.lumped[i];
            theta * tau * (cfg.mu * m + cfg.chi * self.ws.tmp[i]) < m
        });

        let diagnostics = StepDiagnostics {
            t: new_state.t,
            tau,
            iterations,
            converged,
            increment_u: increments[0],
            increment_c: increments[1],
            increment_p: increments[2],
            u: u_range,
            c: Range::of(&new_state.c),
            p: Range::of(&new_state.p),
            explicit_ok,
            implicit_ok: tau < self.implicit_bound,
            aposteriori_ok,
            m_matrix_ok,
            residual,
        };
        Ok((new_state, diagnostics))
    }

    /// Number of uniform steps and their size for the configured policy.
    pub fn time_grid(&self) -> (usize, f64) {
        let cfg = &self.config;
        if cfg.final_time == 0.0 {
            return (0, cfg.tau);
        }
        let target = match cfg.tau_policy {
            TauPolicy::Enforce => cfg.tau.min(ENFORCE_SAFETY * self.implicit_bound),
            _ => cfg.tau,
        };
        let steps = ((cfg.final_time / target) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        (steps, cfg.final_time / steps as f64)
    }

    /// Run from `initial` to the final time. Snapshots are reported for every
    /// requested time at the first accepted state at or after it.
    pub fn run(
        &mut self,
        initial: State,
        snapshot_times: &[f64],
        mut observer: impl FnMut(RunEvent<'_>),
    ) -> Result<RunSummary, RunError> {
        self.check_state(&initial).map_err(|source| RunError {
            step: 0,
            time: initial.t,
            source,
        })?;
        let (steps, tau) = self.time_grid();
        let mut pending: Vec<f64> = snapshot_times.to_vec();
        pending.sort_by(f64::total_cmp);
        pending.reverse();
        let eps_t = 1e-9 * tau.max(1e-300);

        let emit =
            |state: &State, pending: &mut Vec<f64>, observer: &mut dyn FnMut(RunEvent<'_>)| {
                while let Some(&t) = pending.last() {
                    if state.t + eps_t >= t {
                        observer(RunEvent::Snapshot {
                            requested: t,
                            state,
                        });
                        pending.pop();
                    } else {
                        break;
                    }
                }
            };

        let mut summary = RunSummary {
            steps,
            tau,
            u: Range::of(&initial.u),
            c: Range::of(&initial.c),
            p: Range::of(&initial.p),
            final_state: initial,
            last: None,
            total_iterations: 0,
            max_iterations: 0,
            nonconverged_steps: 0,
            explicit_violations: 0,
            implicit_violations: 0,
            aposteriori_violations: 0,
            m_matrix_failures: 0,
            split_steps: 0,
        };
        emit(&summary.final_state, &mut pending, &mut observer);
        let mut warned = false;

        for step in 1..=steps {
            let fail = |source, time| RunError { step, time, source };
            let start = summary.final_state.t;
            let t_end = if step == steps {
                self.config.final_time
            } else {
                step as f64 * tau
            };
            let mut state = summary.final_state.clone();
            let mut pieces = 1usize;
            let mut done = 0usize;
            let mut diag = None;
            while done < pieces {
                let h = (t_end - start) / pieces as f64;
                match self.fixed_point_step(&state, h) {
                    Ok((mut next, d)) => {
                        done += 1;
                        if done == pieces {
                            next.t = t_end;
                        }
                        self.record(&mut summary, &next, &d, &mut warned);
                        state = next;
                        diag = Some(d);
                    }
                    Err(StepError::ExplicitBound { bound, .. }) if done == 0 => {
                        pieces = ((h * pieces as f64) / (ENFORCE_SAFETY * bound))
                            .ceil()
                            .max(pieces as f64 + 1.0) as usize;
                        summary.split_steps += 1;
                    }
                    Err(source) => return Err(fail(source, state.t)),
                }
            }
            let mut diag = diag.expect("at least one sub-step");
            diag.t = t_end;
            summary.final_state = state;
            observer(RunEvent::Step {
                step,
                state: &summary.final_state,
                diagnostics: &diag,
            });
            emit(&summary.final_state, &mut pending, &mut observer);
            summary.last = Some(diag);
        }
        if warned {
            log::warn!(
                "time-step bounds violated: explicit {} / implicit {} / a-posteriori {} step(s)",
                summary.explicit_violations,
                summary.implicit_violations,
                summary.aposteriori_violations
            );
        }
        Ok(summary)
    }

    fn record(
        &self,
        summary: &mut RunSummary,
        state: &State,
        d: &StepDiagnostics,
        warned: &mut bool,
    ) {
        summary.u = summary.u.merge(d.u);
        summary.c = summary.c.merge(d.c);
        summary.p = summary.p.merge(d.p);
        summary.total_iterations += d.iterations;
        summary.max_iterations = summary.max_iterations.max(d.iterations);
        summary.nonconverged_steps += usize::from(!d.converged);
        let galerkin = self.config.scheme == Scheme::Galerkin;
        let explicit_bad = d.explicit_ok == Some(false);
        summary.explicit_violations += usize::from(explicit_bad);
        summary.implicit_violations += usize::from(!galerkin && !d.implicit_ok);
        summary.aposteriori_violations += usize::from(!galerkin && !d.aposteriori_ok);
        summary.m_matrix_failures += usize::from(d.m_matrix_ok == Some(false));
        let violated = !galerkin && (explicit_bad || !d.implicit_ok || !d.aposteriori_ok);
        if violated && self.config.tau_policy == TauPolicy::Warn && !*warned {
            log::warn!(
                "time step {} violates the positivity bounds at t = {}",
                d.tau,
                state.t
            );
            *warned = true;
        }
    }
}
