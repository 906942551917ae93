//! Full-conditional updates and the sweep that applies them in order:
//! latent utilities, abilities, growth, test effects, test-effect precision,
//! day effects, day-effect precision, drift precision, K–S scales.
//!
//! Every update except the drift precision touches one individual only, so a
//! sweep runs individuals in parallel, each with its own stream derived from
//! `(seed, sweep, individual)`. The drift precision is a global reduction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::distributions::{
    sample_gamma, sample_ks, sample_open01, sample_std_normal, sample_truncated_normal, stream_rng, ChainRng, Side,
    GLOBAL_STREAM,
};
use crate::error::{Block, Error, Result};
use crate::ffbs::{backward_sample, forward_filter, DayObservation, FilterInput};
use crate::model::{GammaPrior, GrowthPrior, LatentState, Mode, Model, SubjectState, SubjectView};

/// Stream ids at and above this value are used for guard re-draws.
const RETRY_STREAM_BASE: u64 = 1 << 62;

fn numeric(block: Block, individual: usize, day: Option<usize>, detail: impl Into<String>) -> Error {
    Error::Numeric { block, individual, day, detail: detail.into() }
}

/// Mean θ_t − a + φ_t + η of one test's latent utilities.
#[inline]
fn test_location(v: &SubjectView<'_>, s: &SubjectState, day: usize, test: usize) -> f64 {
    s.theta[day + 1] - v.data.difficulty(test) + s.day_effect[day] + s.test_effect[test]
}

// ---------------------------------------------------------------------------
// Latent utilities
// ---------------------------------------------------------------------------

pub fn sample_latent_utilities<R: Rng + ?Sized>(rng: &mut R, v: &SubjectView<'_>, s: &mut SubjectState) -> Result<()> {
    let data = v.data;
    for d in 0..data.n_days() {
        for test in data.tests_of_day(d) {
            let mean = test_location(v, s, d, test);
            for l in data.items_of_test(test) {
                let side = if data.response(l) { Side::Positive } else { Side::Negative };
                s.latent_utility[l] = sample_truncated_normal(rng, mean, 1.0 / v.psi(s.ks_scale[l]), side)
                    .map_err(|e| numeric(Block::LatentUtility, v.index, Some(d + 1), e.to_string()))?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Abilities
// ---------------------------------------------------------------------------

/// Filter inputs with pseudo observations Z = Y + a − φ_t − η − 1/ρ.
pub fn ability_filter_input(v: &SubjectView<'_>, s: &SubjectState, drift_precision: f64) -> FilterInput {
    let data = v.data;
    let rho = v.constants.rho;
    let days = (0..data.n_days())
        .map(|d| {
            let mut precision = 0.0;
            let mut weighted_sum = 0.0;
            for test in data.tests_of_day(d) {
                let shift = data.difficulty(test) - s.day_effect[d] - s.test_effect[test] - v.inv_rho;
                for l in data.items_of_test(test) {
                    let psi = v.psi(s.ks_scale[l]);
                    precision += psi;
                    weighted_sum += psi * (s.latent_utility[l] + shift);
                }
            }
            DayObservation {
                lapse: data.lapse(d),
                transition: 1.0 - s.growth * rho * v.terms.lapse_plus[d],
                precision,
                weighted_sum,
            }
        })
        .collect();
    FilterInput { initial: v.terms.initial, inv_rho: v.inv_rho, drift_precision, days, individual: v.index }
}

pub fn sample_abilities<R: Rng + ?Sized>(
    rng: &mut R,
    v: &SubjectView<'_>,
    s: &mut SubjectState,
    drift_precision: f64,
) -> Result<()> {
    let filt = forward_filter(&ability_filter_input(v, s, drift_precision))?;
    s.theta = backward_sample(rng, &filt)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Growth rate
// ---------------------------------------------------------------------------

/// Mean and variance of the (untruncated) normal whose positive part is the
/// growth-rate full conditional.
pub fn growth_conditional(v: &SubjectView<'_>, s: &SubjectState, drift_precision: f64) -> Result<(f64, f64)> {
    let rho = v.constants.rho;
    let mut num = 0.0;
    let mut den = 0.0;
    for d in 0..v.data.n_days() {
        let prev = s.theta[d];
        let b = v.terms.lapse_plus[d] * (1.0 - rho * prev);
        let inv_lapse = 1.0 / v.data.lapse(d);
        num += b * (s.theta[d + 1] - prev) * inv_lapse;
        den += b * b * inv_lapse;
    }
    if !(den > 0.0) || !den.is_finite() {
        return Err(numeric(Block::Growth, v.index, None, format!("growth design sum is {den}")));
    }
    let (mean, var) = match v.constants.priors.growth {
        GrowthPrior::Flat => (num / den, 1.0 / (drift_precision * den)),
        GrowthPrior::TruncatedNormal { mean: m0, var: v0 } => {
            let precision = drift_precision * den + 1.0 / v0;
            ((drift_precision * num + m0 / v0) / precision, 1.0 / precision)
        }
    };
    if !(mean.is_finite() && var > 0.0 && var.is_finite()) {
        return Err(numeric(Block::Growth, v.index, None, format!("conditional N({mean}, {var})")));
    }
    Ok((mean, var))
}

pub fn sample_growth<R: Rng + ?Sized>(
    rng: &mut R,
    v: &SubjectView<'_>,
    s: &mut SubjectState,
    drift_precision: f64,
) -> Result<()> {
    let (mean, var) = growth_conditional(v, s, drift_precision)?;
    s.growth = sample_truncated_normal(rng, mean, var, Side::Positive)
        .map_err(|e| numeric(Block::Growth, v.index, None, e.to_string()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Test effects
// ---------------------------------------------------------------------------

/// Full conditional of the first S−1 test effects of `day`: mean vector and
/// precision matrix (AᵀΣ_ψ⁻¹A + τΣ⁻¹), assembled from per-test ψ sums.
/// `None` when the day has a single test.
pub fn test_effect_conditional(
    v: &SubjectView<'_>,
    s: &SubjectState,
    day: usize,
) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
    let data = v.data;
    let tests = data.tests_of_day(day);
    let k = tests.len() - 1;
    if k == 0 {
        return Ok(None);
    }
    let tau = s.test_effect_precision;
    let base = s.theta[day + 1] + s.day_effect[day];
    let mut p = Vec::with_capacity(k + 1);
    let mut q = Vec::with_capacity(k + 1);
    for test in tests {
        let shift = data.difficulty(test) - base;
        let (mut ps, mut qs) = (0.0, 0.0);
        for l in data.items_of_test(test) {
            let psi = v.psi(s.ks_scale[l]);
            ps += psi;
            qs += psi * (s.latent_utility[l] + shift);
        }
        p.push(ps);
        q.push(qs);
    }
    let (p_last, q_last) = (p[k], q[k]);
    let precision = DMatrix::from_fn(k, k, |r, c| {
        if r == c {
            p[r] + p_last + 2.0 * tau
        } else {
            p_last + tau
        }
    });
    let rhs = DVector::from_fn(k, |r, _| q[r] - q_last);
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| numeric(Block::TestEffect, v.index, Some(day + 1), "precision matrix is not positive definite"))?;
    let mean = chol.solve(&rhs);
    Ok(Some((mean, precision)))
}

pub fn sample_test_effects<R: Rng + ?Sized>(rng: &mut R, v: &SubjectView<'_>, s: &mut SubjectState) -> Result<()> {
    for d in 0..v.data.n_days() {
        let tests = v.data.tests_of_day(d);
        let Some((mean, precision)) = test_effect_conditional(v, s, d)? else {
            s.test_effect[tests.start] = 0.0;
            continue;
        };
        let k = mean.len();
        let chol = precision
            .cholesky()
            .ok_or_else(|| numeric(Block::TestEffect, v.index, Some(d + 1), "precision matrix is not positive definite"))?;
        let z = DVector::from_fn(k, |_, _| sample_std_normal(rng));
        // x = mean + L⁻ᵀ z has covariance (L Lᵀ)⁻¹.
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| numeric(Block::TestEffect, v.index, Some(d + 1), "triangular solve failed"))?;
        let mut sum = 0.0;
        for (j, test) in tests.clone().take(k).enumerate() {
            let x = mean[j] + noise[j];
            if !x.is_finite() {
                return Err(numeric(Block::TestEffect, v.index, Some(d + 1), "non-finite draw"));
            }
            s.test_effect[test] = x;
            sum += x;
        }
        s.test_effect[tests.end - 1] = -sum;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Precisions
// ---------------------------------------------------------------------------

/// Gamma parameters, or the errors that make a gamma draw impossible.
fn gamma_params(prior: GammaPrior, count: f64, sum_sq: f64, block: Block, individual: Option<usize>) -> Result<(f64, f64)> {
    let shape = prior.shape + 0.5 * count;
    let rate = prior.rate + 0.5 * sum_sq;
    if !(shape > 0.0) {
        return Err(Error::Config(format!(
            "{block} full conditional has shape {shape} ≤ 0{}; the dataset does not satisfy the validation gate",
            individual.map(|i| format!(" for individual {}", i + 1)).unwrap_or_default()
        )));
    }
    if !rate.is_finite() {
        return Err(Error::Numeric {
            block,
            individual: individual.unwrap_or(usize::MAX),
            day: None,
            detail: format!("gamma rate is {rate}"),
        });
    }
    if rate <= 0.0 {
        return Err(Error::DegenerateRate { block, individual });
    }
    Ok((shape, rate))
}

/// Shape and rate of the test-effect precision full conditional.
pub fn test_effect_precision_params(v: &SubjectView<'_>, s: &SubjectState) -> Result<(f64, f64)> {
    let data = v.data;
    // η*ᵀΣ⁻¹η* = Σ_{s<S} η_s² + (Σ_{s<S} η_s)² = Σ_s η_s² under the sum-zero constraint.
    let count: f64 = (0..data.n_days()).map(|d| (data.tests_on_day(d) - 1) as f64).sum();
    let sum_sq: f64 = s.test_effect.iter().map(|x| x * x).sum();
    gamma_params(v.constants.priors.test_effect_precision, count, sum_sq, Block::TestEffectPrecision, Some(v.index))
}

pub fn sample_test_effect_precision<R: Rng + ?Sized>(
    rng: &mut R,
    v: &SubjectView<'_>,
    s: &mut SubjectState,
) -> Result<()> {
    let (shape, rate) = test_effect_precision_params(v, s)?;
    s.test_effect_precision = sample_gamma(rng, shape, rate)?;
    Ok(())
}

/// Mean and variance of the day-effect full conditional for `day`.
pub fn day_effect_conditional(v: &SubjectView<'_>, s: &SubjectState, day: usize) -> (f64, f64) {
    let data = v.data;
    let theta = s.theta[day + 1];
    let (mut precision, mut weighted) = (0.0, 0.0);
    for test in data.tests_of_day(day) {
        let shift = data.difficulty(test) - theta - s.test_effect[test];
        for l in data.items_of_test(test) {
            let psi = v.psi(s.ks_scale[l]);
            precision += psi;
            weighted += psi * (s.latent_utility[l] + shift);
        }
    }
    let total = precision + s.day_effect_precision;
    (weighted / total, 1.0 / total)
}

pub fn sample_day_effects<R: Rng + ?Sized>(rng: &mut R, v: &SubjectView<'_>, s: &mut SubjectState) -> Result<()> {
    for d in 0..v.data.n_days() {
        let (mean, var) = day_effect_conditional(v, s, d);
        let x = mean + var.sqrt() * sample_std_normal(rng);
        if !x.is_finite() {
            return Err(numeric(Block::DayEffect, v.index, Some(d + 1), format!("N({mean}, {var}) draw")));
        }
        s.day_effect[d] = x;
    }
    Ok(())
}

pub fn day_effect_precision_params(v: &SubjectView<'_>, s: &SubjectState) -> Result<(f64, f64)> {
    let sum_sq: f64 = s.day_effect.iter().map(|x| x * x).sum();
    gamma_params(
        v.constants.priors.day_effect_precision,
        v.data.n_days() as f64,
        sum_sq,
        Block::DayEffectPrecision,
        Some(v.index),
    )
}

pub fn sample_day_effect_precision<R: Rng + ?Sized>(
    rng: &mut R,
    v: &SubjectView<'_>,
    s: &mut SubjectState,
) -> Result<()> {
    let (shape, rate) = day_effect_precision_params(v, s)?;
    s.day_effect_precision = sample_gamma(rng, shape, rate)?;
    Ok(())
}

/// Squared system-equation residuals of one individual, each divided by its lapse.
fn drift_sum_sq(v: &SubjectView<'_>, s: &SubjectState) -> f64 {
    let rho = v.constants.rho;
    (0..v.data.n_days())
        .map(|d| {
            let prev = s.theta[d];
            let r = s.theta[d + 1] - prev - s.growth * (1.0 - rho * prev) * v.terms.lapse_plus[d];
            r * r / v.data.lapse(d)
        })
        .sum()
}

pub fn drift_precision_params(model: &Model, state: &LatentState) -> Result<(f64, f64)> {
    let count: usize = model.data().subjects().iter().map(|s| s.n_days()).sum();
    let sum_sq: f64 = state.subjects.iter().enumerate().map(|(i, s)| drift_sum_sq(&model.subject(i), s)).sum();
    gamma_params(model.constants().priors.drift_precision, count as f64, sum_sq, Block::DriftPrecision, None)
}

// ---------------------------------------------------------------------------
// K–S scales
// ---------------------------------------------------------------------------

/// log of the Metropolis–Hastings ratio for replacing `current` by `proposed`
/// under a K–S independence proposal.
pub fn ks_log_acceptance(residual: f64, sigma: f64, current: f64, proposed: f64) -> f64 {
    let s2 = sigma * sigma;
    let var_cur = s2 + 4.0 * current * current;
    let var_new = s2 + 4.0 * proposed * proposed;
    0.5 * (var_cur / var_new).ln() - 0.5 * residual * residual * (1.0 / var_new - 1.0 / var_cur)
}

/// One independence-proposal Metropolis–Hastings step for ν.
pub fn ks_scale_step<R: Rng + ?Sized>(rng: &mut R, residual: f64, sigma: f64, current: f64) -> f64 {
    let proposed = sample_ks(rng);
    let log_ratio = ks_log_acceptance(residual, sigma, current, proposed);
    if log_ratio >= 0.0 || sample_open01(rng).ln() < log_ratio {
        proposed
    } else {
        current
    }
}

pub fn sample_ks_scales<R: Rng + ?Sized>(rng: &mut R, v: &SubjectView<'_>, s: &mut SubjectState) {
    let data = v.data;
    let sigma = v.constants.sigma;
    for d in 0..data.n_days() {
        for test in data.tests_of_day(d) {
            let location = test_location(v, s, d, test);
            for l in data.items_of_test(test) {
                s.ks_scale[l] = ks_scale_step(rng, s.latent_utility[l] - location, sigma, s.ks_scale[l]);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Whole-state updates
// ---------------------------------------------------------------------------

pub fn update_latent_utilities<R: Rng + ?Sized>(rng: &mut R, state: &mut LatentState, model: &Model) -> Result<()> {
    for (i, s) in state.subjects.iter_mut().enumerate() {
        sample_latent_utilities(rng, &model.subject(i), s)?;
    }
    Ok(())
}

pub fn update_abilities<R: Rng + ?Sized>(rng: &mut R, state: &mut LatentState, model: &Model) -> Result<()> {
    let phi = state.drift_precision;
    for (i, s) in state.subjects.iter_mut().enumerate() {
        sample_abilities(rng, &model.subject(i), s, phi)?;
    }
    Ok(())
}

pub fn update_growth<R: Rng + ?Sized>(rng: &mut R, state: &mut LatentState, model: &Model) -> Result<()> {
    let phi = state.drift_precision;
    for (i, s) in state.subjects.iter_mut().enumerate() {
        sample_growth(rng, &model.subject(i), s, phi)?;
    }
    Ok(())
}

pub fn update_test_effects<R: Rng + ?Sized>(rng: &mut R, state: &mut LatentState, model: &Model) -> Result<()> {
    for (i, s) in state.subjects.iter_mut().enumerate() {
        sample_test_effects(rng, &model.subject(i), s)?;
    }
    Ok(())
}

pub fn update_test_effect_precision<R: Rng + ?Sized>(rng: &mut R, state: &mut LatentState, model: &Model) -> Result<()> {
    for (i, s) in state.subjects.iter_mut().enumerate() {
        sample_test_effect_precision(rng, &model.subject(i), s)?;
    }
    Ok(())
}

pub fn update_day_effects<R: Rng + ?Sized>(rng: &mut R, state: &mut LatentState, model: &Model) -> Result<()> {
    for (i, s) in state.subjects.iter_mut().enumerate() {
        sample_day_effects(rng, &model.subject(i), s)?;
    }
    Ok(())
}

pub fn update_day_effect_precision<R: Rng + ?Sized>(rng: &mut R, state: &mut LatentState, model: &Model) -> Result<()> {
    for (i, s) in state.subjects.iter_mut().enumerate() {
        sample_day_effect_precision(rng, &model.subject(i), s)?;
    }
    Ok(())
}

/// Draw φ from its gamma full conditional; a no-op in online mode.
pub fn update_drift_precision<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut LatentState,
    model: &Model,
    mode: Mode,
) -> Result<()> {
    if mode == Mode::Online {
        return Ok(());
    }
    let (shape, rate) = drift_precision_params(model, state)?;
    state.drift_precision = sample_gamma(rng, shape, rate)?;
    Ok(())
}

pub fn update_ks_scales<R: Rng + ?Sized>(rng: &mut R, state: &mut LatentState, model: &Model) {
    for (i, s) in state.subjects.iter_mut().enumerate() {
        sample_ks_scales(rng, &model.subject(i), s);
    }
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

/// Which of the optional blocks a sweep updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPlan {
    pub update_drift_precision: bool,
    /// When false, τ_i and δ_i keep their current values.
    pub update_effect_precisions: bool,
}

impl SweepPlan {
    pub fn for_mode(mode: Mode) -> Self {
        SweepPlan { update_drift_precision: mode == Mode::Retrospective, update_effect_precisions: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    /// Blocks re-drawn because a gamma rate came out exactly zero.
    pub guard_redraws: usize,
}

/// Updates that precede the drift-precision barrier.
fn subject_first_pass(
    rng: &mut ChainRng,
    v: &SubjectView<'_>,
    s: &mut SubjectState,
    phi: f64,
    plan: SweepPlan,
) -> Result<usize> {
    let mut redraws = 0;
    sample_latent_utilities(rng, v, s)?;
    sample_abilities(rng, v, s, phi)?;
    sample_growth(rng, v, s, phi)?;
    sample_test_effects(rng, v, s)?;
    if plan.update_effect_precisions {
        // A zero rate re-draws the block once before giving up.
        let (shape, rate) = match test_effect_precision_params(v, s) {
            Err(Error::DegenerateRate { .. }) => {
                redraws += 1;
                sample_test_effects(rng, v, s)?;
                test_effect_precision_params(v, s)
            }
            other => other,
        }?;
        s.test_effect_precision = sample_gamma(rng, shape, rate)?;
    }
    sample_day_effects(rng, v, s)?;
    if plan.update_effect_precisions {
        let (shape, rate) = match day_effect_precision_params(v, s) {
            Err(Error::DegenerateRate { .. }) => {
                redraws += 1;
                sample_day_effects(rng, v, s)?;
                day_effect_precision_params(v, s)
            }
            other => other,
        }?;
        s.day_effect_precision = sample_gamma(rng, shape, rate)?;
    }
    Ok(redraws)
}

/// One full Gibbs sweep in place. Draws depend only on `(seed, sweep)`.
pub fn gibbs_sweep(model: &Model, state: &mut LatentState, seed: u64, sweep: u64, plan: SweepPlan) -> Result<SweepStats> {
    let phi = state.drift_precision;
    let first: Vec<(ChainRng, usize)> = state
        .subjects
        .par_iter_mut()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream_rng(seed, sweep, i as u64);
            let redraws = subject_first_pass(&mut rng, &model.subject(i), s, phi, plan)?;
            Ok((rng, redraws))
        })
        .collect::<Result<_>>()?;
    let mut stats = SweepStats { guard_redraws: first.iter().map(|(_, r)| r).sum() };

    if plan.update_drift_precision {
        let params = match drift_precision_params(model, state) {
            Err(Error::DegenerateRate { .. }) => {
                stats.guard_redraws += 1;
                let phi = state.drift_precision;
                state.subjects.par_iter_mut().enumerate().try_for_each(|(i, s)| {
                    let mut rng = stream_rng(seed, sweep, RETRY_STREAM_BASE + i as u64);
                    sample_abilities(&mut rng, &model.subject(i), s, phi)
                })?;
                drift_precision_params(model, state)
            }
            other => other,
        }?;
        let mut rng = stream_rng(seed, sweep, GLOBAL_STREAM);
        state.drift_precision = sample_gamma(&mut rng, params.0, params.1)?;
    }

    state
        .subjects
        .par_iter_mut()
        .zip(first.into_par_iter())
        .enumerate()
        .for_each(|(i, (s, (mut rng, _)))| sample_ks_scales(&mut rng, &model.subject(i), s));
    Ok(stats)
}
