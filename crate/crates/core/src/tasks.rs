//! Physics tasks: Hamiltonians, equations of motion and the residual losses
//! that train a network `t ↦ state(t)` to satisfy Hamilton's equations.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{self, Mask, ParamState};
use crate::{Error, Result};

/// Collocation times at which the residual loss is evaluated.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("time grid needs at least one point"));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("time grid points must be finite"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "time grid points must be strictly increasing",
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `count` equispaced points on `[t0, t_max]`, both endpoints included.
pub fn make_time_grid(t0: f64, t_max: f64, count: usize) -> Result<TimeGrid> {
    if count < 2 {
        return Err(Error::InvalidArgument(
            "time grid needs at least two points",
        ));
    }
    if !(t_max > t0) {
        return Err(Error::InvalidArgument("t_max must exceed t0"));
    }
    let step = (t_max - t0) / (count - 1) as f64;
    let mut points: Vec<f64> = (0..count).map(|i| t0 + step * i as f64).collect();
    points[count - 1] = t_max;
    TimeGrid::new(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TaskKind {
    NlOscillator,
    HenonHeiles,
}

impl TaskKind {
    /// Number of phase-space coordinates, which is also the network output width.
    pub const fn arity(self) -> usize {
        match self {
            TaskKind::NlOscillator => 2,
            TaskKind::HenonHeiles => 4,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            TaskKind::NlOscillator => "nl_oscillator",
            TaskKind::HenonHeiles => "henon_heiles",
        }
    }
}

// ---------------------------------------------------------------------------
// Nonlinear oscillator: H = p²/2 + x²/2 + x⁴/4, whose flow is
// ẋ = p, ṗ = −(x + x³)

pub fn nl_hamiltonian(x: f64, p: f64) -> f64 {
    0.5 * p * p + 0.5 * x * x + 0.25 * x * x * x * x
}

pub fn nl_equations_of_motion(x: f64, p: f64) -> (f64, f64) {
    (p, -(x + x * x * x))
}

/// Residual MSE over samples `(x̂, p̂, dx̂/dt, dp̂/dt)`.
pub fn nl_loss(samples: &[[f64; 4]]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|&[x, p, dx, dp]| {
            let r1 = dx - p;
            let r2 = dp + x + x * x * x;
            r1 * r1 + r2 * r2
        })
        .sum();
    total / samples.len() as f64
}

// ---------------------------------------------------------------------------
// Hénon-Heiles: H = (px² + py²)/2 + (x² + y²)/2 + x²y − y³/3

pub fn hh_hamiltonian(x: f64, y: f64, px: f64, py: f64) -> f64 {
    0.5 * (px * px + py * py) + 0.5 * (x * x + y * y) + (x * x * y - y * y * y / 3.0)
}

pub fn hh_equations_of_motion(x: f64, y: f64, px: f64, py: f64) -> (f64, f64, f64, f64) {
    (px, py, -(x + 2.0 * x * y), -(y + x * x - y * y))
}

/// Residual MSE over samples `(x̂, ŷ, p̂x, p̂y, dx̂/dt, dŷ/dt, dp̂x/dt, dp̂y/dt)`.
pub fn hh_loss(samples: &[[f64; 8]]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|&[x, y, px, py, dx, dy, dpx, dpy]| {
            let r1 = dx - px;
            let r2 = dy - py;
            let r3 = dpx + x + 2.0 * x * y;
            let r4 = dpy + y + x * x - y * y;
            r1 * r1 + r2 * r2 + r3 * r3 + r4 * r4
        })
        .sum();
    total / samples.len() as f64
}

/// A physics task bound to its time domain and initial conditions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskBinding {
    pub kind: TaskKind,
    pub initial_state: Vec<f64>,
    pub t0: f64,
    pub t_max: f64,
    /// Reparametrize outputs as `state(t) = state0 + (1 − e^{−(t−t0)}) · net(t)`
    /// so the initial condition holds exactly. Off by default.
    pub constrain_initial: bool,
}

impl TaskBinding {
    pub fn new(kind: TaskKind, initial_state: Vec<f64>, t0: f64, t_max: f64) -> Result<Self> {
        if initial_state.len() != kind.arity() {
            return Err(Error::ShapeMismatch {
                what: "initial state",
                expected: kind.arity(),
                found: initial_state.len(),
            });
        }
        if !(t_max > t0) {
            return Err(Error::InvalidArgument("t_max must exceed t0"));
        }
        Ok(Self {
            kind,
            initial_state,
            t0,
            t_max,
            constrain_initial: false,
        })
    }

    /// `x(0) = 1, p(0) = 0` on `[0, 4π]`.
    pub fn nl_oscillator() -> Self {
        Self::new(
            TaskKind::NlOscillator,
            vec![1.0, 0.0],
            0.0,
            4.0 * core::f64::consts::PI,
        )
        .expect("valid default task")
    }

    /// `(x, y, px, py)(0) = (0.3, −0.3, 0.3, 0.15)` on `[0, 6]`.
    pub fn henon_heiles() -> Self {
        Self::new(TaskKind::HenonHeiles, vec![0.3, -0.3, 0.3, 0.15], 0.0, 6.0)
            .expect("valid default task")
    }

    pub fn for_kind(kind: TaskKind) -> Self {
        match kind {
            TaskKind::NlOscillator => Self::nl_oscillator(),
            TaskKind::HenonHeiles => Self::henon_heiles(),
        }
    }

    pub fn with_constraint(mut self, on: bool) -> Self {
        self.constrain_initial = on;
        self
    }

    pub fn arity(&self) -> usize {
        self.kind.arity()
    }

    pub fn grid(&self, count: usize) -> Result<TimeGrid> {
        make_time_grid(self.t0, self.t_max, count)
    }

    pub fn hamiltonian(&self, state: &[f64]) -> f64 {
        match self.kind {
            TaskKind::NlOscillator => nl_hamiltonian(state[0], state[1]),
            TaskKind::HenonHeiles => hh_hamiltonian(state[0], state[1], state[2], state[3]),
        }
    }

    pub fn equations_of_motion(&self, state: &[f64], out: &mut [f64]) {
        match self.kind {
            TaskKind::NlOscillator => {
                let (dx, dp) = nl_equations_of_motion(state[0], state[1]);
                out[0] = dx;
                out[1] = dp;
            }
            TaskKind::HenonHeiles => {
                let (dx, dy, dpx, dpy) =
                    hh_equations_of_motion(state[0], state[1], state[2], state[3]);
                out[..4].copy_from_slice(&[dx, dy, dpx, dpy]);
            }
        }
    }

    /// Maps raw network output and its time derivative to the physical state
    /// and its time derivative, in place.
    pub fn transform_outputs(&self, t: f64, values: &mut [f64], derivs: &mut [f64]) {
        if !self.constrain_initial {
            return;
        }
        let (f, df) = self.envelope(t);
        for ((v, d), s0) in values
            .iter_mut()
            .zip(derivs.iter_mut())
            .zip(&self.initial_state)
        {
            let y = *v;
            *v = s0 + f * y;
            *d = df * y + f * *d;
        }
    }

    /// Pulls gradients with respect to the physical state back to the raw
    /// network output, in place.
    pub(crate) fn transform_gradients(&self, t: f64, g_values: &mut [f64], g_derivs: &mut [f64]) {
        if !self.constrain_initial {
            return;
        }
        let (f, df) = self.envelope(t);
        for (gv, gd) in g_values.iter_mut().zip(g_derivs.iter_mut()) {
            *gv = f * *gv + df * *gd;
            *gd *= f;
        }
    }

    fn envelope(&self, t: f64) -> (f64, f64) {
        let e = libm::exp(-(t - self.t0));
        (1.0 - e, e)
    }

    /// Sum of squared residuals `Σᵢ (ṡᵢ − fᵢ(s))²` at one point, without the
    /// `1/K` factor.
    pub fn point_residual(&self, state: &[f64], derivs: &[f64]) -> f64 {
        let mut rhs = [0.0; 4];
        self.equations_of_motion(state, &mut rhs);
        derivs
            .iter()
            .zip(&rhs)
            .map(|(d, f)| (d - f) * (d - f))
            .sum()
    }

    /// Per-point residual and its gradient with respect to state and
    /// derivatives.
    pub(crate) fn point_residual_grad(
        &self,
        state: &[f64],
        derivs: &[f64],
        g_state: &mut [f64],
        g_derivs: &mut [f64],
    ) -> f64 {
        let mut rhs = [0.0; 4];
        self.equations_of_motion(state, &mut rhs);
        let n = self.arity();
        let mut r = [0.0; 4];
        let mut total = 0.0;
        for i in 0..n {
            r[i] = derivs[i] - rhs[i];
            total += r[i] * r[i];
            g_derivs[i] = 2.0 * r[i];
        }
        // g_state_j = −2 Σᵢ rᵢ ∂fᵢ/∂s_j
        match self.kind {
            TaskKind::NlOscillator => {
                let x = state[0];
                g_state[0] = 2.0 * r[1] * (1.0 + 3.0 * x * x);
                g_state[1] = -2.0 * r[0];
            }
            TaskKind::HenonHeiles => {
                let (x, y) = (state[0], state[1]);
                g_state[0] = 2.0 * (r[2] * (1.0 + 2.0 * y) + r[3] * 2.0 * x);
                g_state[1] = 2.0 * (r[2] * 2.0 * x + r[3] * (1.0 - 2.0 * y));
                g_state[2] = -2.0 * r[0];
                g_state[3] = -2.0 * r[1];
            }
        }
        total
    }
}

/// Largest deviation `|H(s(t)) − H(s(t0))|` over the grid for the masked
/// network's predicted trajectory.
pub fn energy_drift(
    params: &ParamState,
    mask: &Mask,
    task: &TaskBinding,
    grid: &TimeGrid,
) -> Result<f64> {
    let energy_at = |t: f64| -> Result<f64> {
        let (mut v, mut d) = nn::forward_with_time_derivative(params, mask, t)?;
        task.transform_outputs(t, &mut v, &mut d);
        Ok(task.hamiltonian(&v))
    };
    if params.spec().output_dim != task.arity() {
        return Err(Error::ArityMismatch {
            task: task.arity(),
            network: params.spec().output_dim,
        });
    }
    let reference = energy_at(task.t0)?;
    let mut drift: f64 = 0.0;
    for &t in grid.points() {
        drift = drift.max(libm::fabs(energy_at(t)? - reference));
    }
    Ok(drift)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nl_hamiltonian_values() {
        assert_eq!(nl_hamiltonian(0.0, 0.0), 0.0);
        assert_eq!(nl_hamiltonian(1.0, 1.0), 1.25);
        assert_eq!(nl_hamiltonian(-0.7, 0.2), nl_hamiltonian(0.7, 0.2));
    }

    #[test]
    fn nl_equations_values() {
        assert_eq!(nl_equations_of_motion(0.0, 0.0), (0.0, 0.0));
        assert_eq!(nl_equations_of_motion(1.0, 0.0), (0.0, -2.0));
        assert_eq!(nl_equations_of_motion(0.0, 2.0), (2.0, 0.0));
    }

    #[test]
    fn nl_loss_values() {
        assert_eq!(nl_loss(&[[1.0, 0.0, 0.0, 0.0]]), 4.0);
        let pts = [[0.3, 0.1, 0.2, -0.5], [1.0, 0.0, 0.0, 0.0]];
        let doubled = [pts[0], pts[1], pts[0], pts[1]];
        assert!((nl_loss(&pts) - nl_loss(&doubled)).abs() < 1e-15);
        // exact state/derivative pairs have zero residual
        let (dx, dp) = nl_equations_of_motion(0.4, -0.2);
        assert!(nl_loss(&[[0.4, -0.2, dx, dp]]) < 1e-30);
        assert_eq!(nl_loss(&[[0.0, 0.0, 0.0, 0.0]]), 0.0);
    }

    #[test]
    fn hh_hamiltonian_values() {
        assert_eq!(hh_hamiltonian(0.0, 0.0, 0.0, 0.0), 0.0);
        assert!((hh_hamiltonian(0.0, 1.0, 0.0, 0.0) - (0.5 - 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(
            hh_hamiltonian(0.2, 0.3, -0.1, 0.4),
            hh_hamiltonian(-0.2, 0.3, 0.1, 0.4)
        );
    }

    #[test]
    fn hh_equations_values() {
        assert_eq!(
            hh_equations_of_motion(0.0, 0.0, 0.0, 0.0),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(
            hh_equations_of_motion(1.0, 1.0, 0.0, 0.0),
            (0.0, 0.0, -3.0, -1.0)
        );
        assert_eq!(
            hh_equations_of_motion(0.0, 1.0, 0.0, 0.0),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn hh_loss_values() {
        assert_eq!(hh_loss(&[[0.0; 8]]), 0.0);
        assert_eq!(hh_loss(&[[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]), 2.0);
    }

    #[test]
    fn time_grid_construction() {
        assert_eq!(make_time_grid(0.0, 1.0, 2).unwrap().points(), &[0.0, 1.0]);
        let g = make_time_grid(0.0, 4.0 * core::f64::consts::PI, 100).unwrap();
        assert_eq!(g.len(), 100);
        let step = 4.0 * core::f64::consts::PI / 99.0;
        for w in g.points().windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-12);
        }
        assert!(make_time_grid(0.0, 1.0, 1).is_err());
        assert!(make_time_grid(1.0, 1.0, 5).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn point_residual_matches_reference_losses() {
        let nl = TaskBinding::nl_oscillator();
        let s = [0.3, -0.4];
        let d = [0.1, 0.9];
        assert!((nl.point_residual(&s, &d) - nl_loss(&[[0.3, -0.4, 0.1, 0.9]])).abs() < 1e-15);
        let hh = TaskBinding::henon_heiles();
        let s = [0.3, -0.4, 0.2, 0.1];
        let d = [0.1, 0.9, -0.3, 0.5];
        let sample = [0.3, -0.4, 0.2, 0.1, 0.1, 0.9, -0.3, 0.5];
        assert!((hh.point_residual(&s, &d) - hh_loss(&[sample])).abs() < 1e-15);
    }

    #[test]
    fn residual_gradient_matches_finite_difference() {
        for task in [TaskBinding::nl_oscillator(), TaskBinding::henon_heiles()] {
            let n = task.arity();
            let state = [0.31, -0.22, 0.13, 0.44];
            let derivs = [-0.5, 0.25, 0.6, -0.1];
            let mut gs = [0.0; 4];
            let mut gd = [0.0; 4];
            task.point_residual_grad(&state[..n], &derivs[..n], &mut gs, &mut gd);
            let h = 1e-6;
            for j in 0..n {
                let mut sp = state;
                let mut sm = state;
                sp[j] += h;
                sm[j] -= h;
                let fd = (task.point_residual(&sp[..n], &derivs[..n])
                    - task.point_residual(&sm[..n], &derivs[..n]))
                    / (2.0 * h);
                assert!((fd - gs[j]).abs() < 1e-7, "state {j}: {fd} vs {}", gs[j]);
                let mut dp = derivs;
                let mut dm = derivs;
                dp[j] += h;
                dm[j] -= h;
                let fd = (task.point_residual(&state[..n], &dp[..n])
                    - task.point_residual(&state[..n], &dm[..n]))
                    / (2.0 * h);
                assert!((fd - gd[j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn constraint_pins_initial_state() {
        let task = TaskBinding::henon_heiles().with_constraint(true);
        let mut v = [5.0, -3.0, 2.0, 1.0];
        let mut d = [0.0; 4];
        task.transform_outputs(task.t0, &mut v, &mut d);
        assert_eq!(v.to_vec(), task.initial_state);
        // dŝ/dt at t0 equals the raw output (envelope derivative is 1)
        assert_eq!(d, [5.0, -3.0, 2.0, 1.0]);
    }

    #[test]
    fn binding_rejects_wrong_initial_arity() {
        assert!(TaskBinding::new(TaskKind::HenonHeiles, vec![0.0; 2], 0.0, 1.0).is_err());
    }
}
