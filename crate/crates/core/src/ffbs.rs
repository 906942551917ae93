//! Forward filtering and backward sampling of one individual's ability path.
//!
//! The path is handled in the shifted coordinate λ = θ − 1/ρ, in which the
//! system equation is the linear recursion λ_t = g_t λ_{t−1} + w_t with
//! g_t = 1 − cρΔ⁺_t and w_t ~ N(0, Δ_t/φ). Each day contributes pseudo
//! observations Z = λ + ξ with precisions ψ; only their precision total and
//! precision-weighted sum enter the filter.

use rand::Rng;

use crate::distributions::sample_std_normal;
use crate::error::{Block, Error, Result};
use crate::model::GroupPrior;

/// Smallest variance accepted before inversion.
pub const VARIANCE_FLOOR: f64 = 1e-300;

/// Sufficient statistics of one day's pseudo observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayObservation {
    /// Days since the previous test day, Δ_t.
    pub lapse: f64,
    /// Transition coefficient g_t.
    pub transition: f64,
    /// Σ ψ over the day's items.
    pub precision: f64,
    /// Σ ψ·Z over the day's items, Z on the λ scale.
    pub weighted_sum: f64,
}

/// Inputs for filtering one individual.
#[derive(Debug, Clone)]
pub struct FilterInput {
    /// Prior for θ_0 (on the θ scale).
    pub initial: GroupPrior,
    pub inv_rho: f64,
    pub drift_precision: f64,
    pub days: Vec<DayObservation>,
    /// Reported in errors.
    pub individual: usize,
}

/// Forward-filter moments; index 0 is the initial ability, index t the t-th day.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// d_t = g_t μ_{t−1} (index 0 holds the initial prior mean).
    pub prior_mean: Vec<f64>,
    /// R_t = g_t² V_{t−1} + Δ_t/φ (index 0 holds the initial prior variance).
    pub prior_var: Vec<f64>,
    /// μ_t on the λ scale.
    pub post_mean: Vec<f64>,
    /// V_t.
    pub post_var: Vec<f64>,
    pub transition: Vec<f64>,
    pub lapse: Vec<f64>,
    pub drift_precision: f64,
    pub inv_rho: f64,
    pub individual: usize,
}

impl FilterState {
    pub fn n_days(&self) -> usize {
        self.post_mean.len() - 1
    }
}

fn numeric(individual: usize, day: Option<usize>, detail: String) -> Error {
    Error::Numeric { block: Block::Ability, individual, day, detail }
}

fn checked_var(v: f64, individual: usize, day: usize, what: &str) -> Result<f64> {
    if !v.is_finite() {
        return Err(numeric(individual, Some(day), format!("{what} is not finite ({v})")));
    }
    if v < VARIANCE_FLOOR {
        return Err(numeric(individual, Some(day), format!("{what} {v} fell below the variance floor")));
    }
    Ok(v)
}

pub fn forward_filter(input: &FilterInput) -> Result<FilterState> {
    let n = input.days.len();
    let phi = input.drift_precision;
    let who = input.individual;
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(numeric(who, None, format!("drift precision must be positive and finite, got {phi}")));
    }
    let mut out = FilterState {
        prior_mean: Vec::with_capacity(n + 1),
        prior_var: Vec::with_capacity(n + 1),
        post_mean: Vec::with_capacity(n + 1),
        post_var: Vec::with_capacity(n + 1),
        transition: Vec::with_capacity(n + 1),
        lapse: Vec::with_capacity(n + 1),
        drift_precision: phi,
        inv_rho: input.inv_rho,
        individual: who,
    };
    let m0 = input.initial.mean - input.inv_rho;
    let v0 = checked_var(input.initial.var, who, 0, "initial variance")?;
    out.prior_mean.push(m0);
    out.prior_var.push(v0);
    out.post_mean.push(m0);
    out.post_var.push(v0);
    out.transition.push(f64::NAN);
    out.lapse.push(f64::NAN);

    let (mut mu, mut v) = (m0, v0);
    for (t, day) in input.days.iter().enumerate() {
        let g = day.transition;
        let d = g * mu;
        let r = checked_var(g * g * v + day.lapse / phi, who, t + 1, "prior variance R")?;
        let v_new = checked_var(1.0 / (day.precision + 1.0 / r), who, t + 1, "posterior variance V")?;
        let mu_new = v_new * (d / r + day.weighted_sum);
        if !mu_new.is_finite() {
            return Err(numeric(who, Some(t + 1), format!("posterior mean is not finite ({mu_new})")));
        }
        out.prior_mean.push(d);
        out.prior_var.push(r);
        out.post_mean.push(mu_new);
        out.post_var.push(v_new);
        out.transition.push(g);
        out.lapse.push(day.lapse);
        mu = mu_new;
        v = v_new;
    }
    Ok(out)
}

/// Draw an ability path θ_0..θ_T given a completed forward pass.
pub fn backward_sample<R: Rng + ?Sized>(rng: &mut R, filt: &FilterState) -> Result<Vec<f64>> {
    let n = filt.n_days();
    let phi = filt.drift_precision;
    let who = filt.individual;
    let mut lambda = vec![0.0; n + 1];
    lambda[n] = filt.post_mean[n] + filt.post_var[n].sqrt() * sample_std_normal(rng);
    for t in (0..n).rev() {
        let g = filt.transition[t + 1];
        let w = phi / filt.lapse[t + 1];
        let inv_v = 1.0 / filt.post_var[t];
        let h_var = checked_var(1.0 / (w * g * g + inv_v), who, t, "backward variance H")?;
        let h_mean = h_var * (inv_v * filt.post_mean[t] + w * g * lambda[t + 1]);
        let draw = h_mean + h_var.sqrt() * sample_std_normal(rng);
        if !draw.is_finite() {
            return Err(numeric(who, Some(t), format!("backward draw is not finite ({draw})")));
        }
        lambda[t] = draw;
    }
    Ok(lambda.into_iter().map(|l| l + filt.inv_rho).collect())
}
