//! Closed-loop simulation: the discrete linear model used for training, a
//! continuous linearized twin, and the full nonlinear model used for testing.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::mask::Policy;
use crate::dynamics::linearize::{ContinuousDynamics, DiscreteDynamics, StateLayout};
use crate::dynamics::network::{pf_injections, ReducedNetwork};
use crate::dynamics::operating_point::OperatingPoint;
use crate::dynamics::params::{GfmParams, SgParams};
use crate::error::{Error, Result};
use crate::risk::NoiseModel;
use crate::scalar::{c, Scalar};

/// State-norm ceiling beyond which a rollout is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Step load change applied at the GFM buses.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadDisturbance<T: Scalar> {
    /// Active-power step per GFM bus (pu).
    pub dp: DVector<T>,
    /// Reactive-power step per GFM bus (pu).
    pub dq: DVector<T>,
    /// Onset time (s).
    pub onset: T,
}

impl<T: Scalar> LoadDisturbance<T> {
    pub fn none(n_gfm: usize) -> Self {
        LoadDisturbance { dp: DVector::zeros(n_gfm), dq: DVector::zeros(n_gfm), onset: T::zero() }
    }

    /// Constant forcing term the step injects into the continuous linear
    /// model: a load increase raises the drawn network power, entering the
    /// Δω̇ rows through −m^p/τ and the ΔV̇^e rows through −m^q/τ (with the
    /// PI composition on the ΔV̇ rows).
    pub fn continuous_forcing(&self, gfm: &[GfmParams<T>], layout: &StateLayout) -> DVector<T> {
        let mut f = DVector::zeros(layout.state_dim());
        for (j, g) in gfm.iter().enumerate() {
            let wdot = -g.p_droop / g.tau * self.dp[j];
            let vedot = -g.q_droop / g.tau * self.dq[j];
            f[layout.omega_gfm(j)] = wdot;
            f[layout.verr_gfm(j)] = vedot;
            f[layout.v_gfm(j)] = g.pi_proportional * vedot;
        }
        f
    }
}

/// Discrete-time rollout: `states` holds x_0..x_T, `inputs` holds u_0..u_{T−1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTrajectory<T: Scalar> {
    pub states: Vec<DVector<T>>,
    pub inputs: Vec<DVector<T>>,
    pub diverged: bool,
}

/// Roll the discrete model `x⁺ = A x + B u + ξ` forward under `u = −Kx`.
/// Divergent runs are truncated and flagged rather than erroring, so Monte
/// Carlo callers can clamp them.
pub fn simulate_linear<T: Scalar>(
    dynamics: &DiscreteDynamics<T>,
    policy: &Policy<T>,
    noise: Option<&NoiseModel<T>>,
    x0: &DVector<T>,
    steps: usize,
    seed: u64,
) -> Result<LinearTrajectory<T>> {
    if steps == 0 {
        return Err(Error::DimensionMismatch("need at least one simulation step".into()));
    }
    let n = dynamics.state_dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch("initial state has wrong length".into()));
    }
    if policy.gain().ncols() != n || policy.gain().nrows() != dynamics.input_dim() {
        return Err(Error::DimensionMismatch("gain does not match dynamics".into()));
    }
    if let Some(nm) = noise {
        if nm.dim() != n {
            return Err(Error::DimensionMismatch("noise dimension does not match state".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ceiling = c::<T>(DIVERGENCE_NORM);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    let mut x = x0.clone();
    states.push(x.clone());
    for _ in 0..steps {
        let u = -(policy.gain() * &x);
        let mut next = &dynamics.a * &x + &dynamics.b * &u;
        if let Some(nm) = noise {
            next += nm.sample(&mut rng);
        }
        inputs.push(u);
        x = next;
        states.push(x.clone());
        if x.norm() > ceiling || x.iter().any(|v| !v.is_finite()) {
            return Ok(LinearTrajectory { states, inputs, diverged: true });
        }
    }
    Ok(LinearTrajectory { states, inputs, diverged: false })
}

/// Everything the nonlinear simulator needs: the reduced network, the
/// equilibrium it deviates from, and the device parameters. SG mechanical
/// powers are taken from the operating-point injections so the equilibrium is
/// exact even for the slack machine.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearCase<T: Scalar> {
    pub net: ReducedNetwork<T>,
    pub op: OperatingPoint<T>,
    pub sg: Vec<SgParams<T>>,
    pub gfm: Vec<GfmParams<T>>,
}

impl<T: Scalar> NonlinearCase<T> {
    pub fn layout(&self) -> StateLayout {
        StateLayout { n_sg: self.sg.len(), n_gfm: self.gfm.len() }
    }

    /// Absolute state at the operating point:
    /// [δ_g, ω₀, δ_f, ω₀, 0, V_f].
    pub fn equilibrium_state(&self) -> DVector<T> {
        let layout = self.layout();
        let mut x = DVector::zeros(layout.state_dim());
        for (i, s) in self.sg.iter().enumerate() {
            x[layout.delta_sg(i)] = self.op.delta[i];
            x[layout.omega_sg(i)] = s.nominal_speed;
        }
        let n_sg = self.sg.len();
        for (j, g) in self.gfm.iter().enumerate() {
            x[layout.delta_gfm(j)] = self.op.delta[n_sg + j];
            x[layout.omega_gfm(j)] = g.nominal_speed;
            x[layout.v_gfm(j)] = self.op.v[n_sg + j];
        }
        x
    }

    /// Time derivative of the absolute state under set-point offsets `u` and
    /// an active load step.
    fn rhs(&self, x: &DVector<T>, u: &DVector<T>, dist: Option<&LoadDisturbance<T>>) -> Result<DVector<T>> {
        let layout = self.layout();
        let n_sg = self.sg.len();
        let n = self.net.node_count();
        let mut delta = DVector::zeros(n);
        let mut v = DVector::zeros(n);
        for i in 0..n_sg {
            delta[i] = x[layout.delta_sg(i)];
            v[i] = self.sg[i].voltage;
        }
        for j in 0..self.gfm.len() {
            delta[n_sg + j] = x[layout.delta_gfm(j)];
            v[n_sg + j] = x[layout.v_gfm(j)];
        }
        let (mut p, mut q) = pf_injections(&delta, &v, &self.net)?;
        if let Some(d) = dist {
            for j in 0..self.gfm.len() {
                p[n_sg + j] += d.dp[j];
                q[n_sg + j] += d.dq[j];
            }
        }
        let mut dx = DVector::zeros(layout.state_dim());
        for (i, s) in self.sg.iter().enumerate() {
            let omega = x[layout.omega_sg(i)];
            dx[layout.delta_sg(i)] = omega - s.nominal_speed;
            dx[layout.omega_sg(i)] =
                (s.damping * (s.nominal_speed - omega) + self.op.p[i] - p[i]) / s.inertia;
        }
        for (j, g) in self.gfm.iter().enumerate() {
            let node = n_sg + j;
            let omega = x[layout.omega_gfm(j)];
            let verr = x[layout.verr_gfm(j)];
            let vj = x[layout.v_gfm(j)];
            let vs = g.v_set + u[layout.u_vset(j)];
            let ps = g.p_set + u[layout.u_pset(j)];
            let qs = g.q_set + u[layout.u_qset(j)];
            dx[layout.delta_gfm(j)] = omega - g.nominal_speed;
            dx[layout.omega_gfm(j)] = (g.nominal_speed - omega + g.p_droop * (ps - p[node])) / g.tau;
            let vedot = (vs - verr - vj + g.q_droop * (qs - q[node])) / g.tau;
            dx[layout.verr_gfm(j)] = vedot;
            dx[layout.v_gfm(j)] = g.pi_proportional * vedot + g.pi_integral * verr;
        }
        Ok(dx)
    }
}

/// Nonlinear closed-loop run sampled at the control rate. States are stored
/// as deviations from the operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearTrajectory<T: Scalar> {
    pub times: Vec<T>,
    /// Deviation states at each control instant, Eq.-(4) ordering.
    pub states: Vec<DVector<T>>,
    /// Set-point offsets applied over each control interval.
    pub inputs: Vec<DVector<T>>,
    pub layout: StateLayout,
}

impl<T: Scalar> NonlinearTrajectory<T> {
    /// Frequency deviations (rad/s) of one node across the run.
    pub fn frequency_deviation(&self, node: usize) -> Vec<T> {
        let idx = if node < self.layout.n_sg {
            self.layout.omega_sg(node)
        } else {
            self.layout.omega_gfm(node - self.layout.n_sg)
        };
        self.states.iter().map(|x| x[idx]).collect()
    }
}

/// Integrate the nonlinear model with fixed-step RK4 (`substeps` per control
/// interval), the feedback `u = −K·(x − x⁰)` zero-order-held within each
/// control step.
pub fn simulate_nonlinear<T: Scalar>(
    case: &NonlinearCase<T>,
    policy: &Policy<T>,
    dist: &LoadDisturbance<T>,
    horizon: T,
    control_dt: T,
    substeps: usize,
) -> Result<NonlinearTrajectory<T>> {
    let layout = case.layout();
    if policy.gain().ncols() != layout.state_dim() || policy.gain().nrows() != layout.input_dim() {
        return Err(Error::DimensionMismatch("gain does not match the case dimensions".into()));
    }
    if dist.dp.len() != layout.n_gfm || dist.dq.len() != layout.n_gfm {
        return Err(Error::DimensionMismatch("disturbance must have one entry per GFM bus".into()));
    }
    let x_eq = case.equilibrium_state();
    let n_steps = (horizon / control_dt).to_f64().unwrap_or(0.0).round() as usize;
    let h = control_dt / c::<T>(substeps as f64);
    let ceiling = c::<T>(DIVERGENCE_NORM);

    let mut x = x_eq.clone();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut inputs = Vec::with_capacity(n_steps);
    times.push(T::zero());
    states.push(DVector::zeros(layout.state_dim()));

    for step in 0..n_steps {
        let t0 = control_dt * c::<T>(step as f64);
        let dev = &x - &x_eq;
        let u = -(policy.gain() * &dev);
        for sub in 0..substeps {
            let t = t0 + h * c::<T>(sub as f64);
            // Disturbance active from its onset; evaluated per substep so the
            // step lands mid-interval if the onset does.
            let active = |tt: T| if tt >= dist.onset { Some(dist) } else { None };
            let k1 = case.rhs(&x, &u, active(t))?;
            let k2 = case.rhs(&(&x + &k1 * (h * c::<T>(0.5))), &u, active(t + h * c::<T>(0.5)))?;
            let k3 = case.rhs(&(&x + &k2 * (h * c::<T>(0.5))), &u, active(t + h * c::<T>(0.5)))?;
            let k4 = case.rhs(&(&x + &k3 * h), &u, active(t + h))?;
            x += (k1 + k2 * c::<T>(2.0) + k3 * c::<T>(2.0) + k4) * (h / c::<T>(6.0));
        }
        let dev = &x - &x_eq;
        if dev.norm() > ceiling || dev.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationDiverged {
                time: (control_dt * c::<T>((step + 1) as f64)).to_f64().unwrap_or(f64::NAN),
                norm: dev.norm().to_f64().unwrap_or(f64::NAN),
            });
        }
        inputs.push(u);
        times.push(control_dt * c::<T>((step + 1) as f64));
        states.push(dev);
    }
    Ok(NonlinearTrajectory { times, states, inputs, layout })
}

/// RK4 integration of the *linearized* continuous model under the same
/// control scheme and step-load forcing as [`simulate_nonlinear`]. Used to
/// check that the nonlinear-vs-linear discrepancy shrinks quadratically with
/// the disturbance size.
pub fn simulate_linear_continuous<T: Scalar>(
    cont: &ContinuousDynamics<T>,
    gfm: &[GfmParams<T>],
    policy: &Policy<T>,
    dist: &LoadDisturbance<T>,
    horizon: T,
    control_dt: T,
    substeps: usize,
) -> Result<NonlinearTrajectory<T>> {
    let layout = cont.layout;
    let forcing = dist.continuous_forcing(gfm, &layout);
    let n_steps = (horizon / control_dt).to_f64().unwrap_or(0.0).round() as usize;
    let h = control_dt / c::<T>(substeps as f64);
    let mut x: DVector<T> = DVector::zeros(layout.state_dim());
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut inputs = Vec::with_capacity(n_steps);
    times.push(T::zero());
    states.push(x.clone());
    for step in 0..n_steps {
        let t0 = control_dt * c::<T>(step as f64);
        let u = -(policy.gain() * &x);
        let rhs = |x: &DVector<T>, t: T| {
            let mut dx = &cont.a * x + &cont.b * &u;
            if t >= dist.onset {
                dx += &forcing;
            }
            dx
        };
        for sub in 0..substeps {
            let t = t0 + h * c::<T>(sub as f64);
            let k1 = rhs(&x, t);
            let k2 = rhs(&(&x + &k1 * (h * c::<T>(0.5))), t + h * c::<T>(0.5));
            let k3 = rhs(&(&x + &k2 * (h * c::<T>(0.5))), t + h * c::<T>(0.5));
            let k4 = rhs(&(&x + &k3 * h), t + h);
            x += (k1 + k2 * c::<T>(2.0) + k3 * c::<T>(2.0) + k4) * (h / c::<T>(6.0));
        }
        inputs.push(u);
        times.push(control_dt * c::<T>((step + 1) as f64));
        states.push(x.clone());
    }
    Ok(NonlinearTrajectory { times, states, inputs, layout })
}
