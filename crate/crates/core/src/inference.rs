//! Chain orchestration, posterior summaries, coverage scoring, on-line
//! (prefix) estimation and the raw-score ability estimator.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{gibbs_sweep, SweepPlan};
use crate::model::{
    subject_violations, validate_dataset, Dataset, LatentState, Mode, Model, ModelConstants, SamplerConfig,
    SubjectState,
};

/// Probabilities reported for every quantity.
pub const SUMMARY_PROBS: [f64; 3] = [0.025, 0.5, 0.975];

/// Fraction of the retrospective burn-in used when warm-starting a prefix refit.
const WARM_BURN_IN_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    Theta,
    Growth,
    /// φ^(−1/2)
    DriftSd,
    /// δ_i^(−1/2)
    DayEffectSd,
    /// τ_i^(−1/2)
    TestEffectSd,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Theta => "theta",
            Quantity::Growth => "growth",
            Quantity::DriftSd => "drift_sd",
            Quantity::DayEffectSd => "day_effect_sd",
            Quantity::TestEffectSd => "test_effect_sd",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "theta" => Quantity::Theta,
            "growth" => Quantity::Growth,
            "drift_sd" => Quantity::DriftSd,
            "day_effect_sd" => Quantity::DayEffectSd,
            "test_effect_sd" => Quantity::TestEffectSd,
            other => return Err(Error::InvalidArgument(format!("unknown quantity '{other}'"))),
        })
    }
}

/// Identifies one scalar unknown. Individuals are 0-based; `day` is the
/// ability index (0 = initial ability).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuantityKey {
    pub quantity: Quantity,
    pub individual: Option<usize>,
    pub day: Option<usize>,
}

impl QuantityKey {
    pub fn theta(individual: usize, day: usize) -> Self {
        QuantityKey { quantity: Quantity::Theta, individual: Some(individual), day: Some(day) }
    }

    pub fn individual(quantity: Quantity, individual: usize) -> Self {
        QuantityKey { quantity, individual: Some(individual), day: None }
    }

    pub fn global(quantity: Quantity) -> Self {
        QuantityKey { quantity, individual: None, day: None }
    }
}

pub type TruthTable = BTreeMap<QuantityKey, f64>;

/// Stored draws, one series per quantity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DrawSet {
    pub keys: Vec<QuantityKey>,
    pub series: Vec<Vec<f64>>,
    /// Sweep number of every stored draw.
    pub iterations: Vec<usize>,
}

impl DrawSet {
    pub fn for_data(data: &Dataset) -> Self {
        let mut keys = Vec::new();
        for (i, s) in data.subjects().iter().enumerate() {
            keys.extend((0..=s.n_days()).map(|t| QuantityKey::theta(i, t)));
            keys.push(QuantityKey::individual(Quantity::Growth, i));
            keys.push(QuantityKey::individual(Quantity::DayEffectSd, i));
            keys.push(QuantityKey::individual(Quantity::TestEffectSd, i));
        }
        keys.push(QuantityKey::global(Quantity::DriftSd));
        let series = vec![Vec::new(); keys.len()];
        DrawSet { keys, series, iterations: Vec::new() }
    }

    /// Append the current state; must follow the key layout of [`DrawSet::for_data`].
    pub fn record(&mut self, state: &LatentState, iteration: usize) {
        let mut k = 0;
        let mut push = |v: f64| {
            self.series[k].push(v);
            k += 1;
        };
        for s in &state.subjects {
            s.theta.iter().for_each(|&v| push(v));
            push(s.growth);
            push(s.day_effect_precision.powf(-0.5));
            push(s.test_effect_precision.powf(-0.5));
        }
        push(state.drift_precision.powf(-0.5));
        self.iterations.push(iteration);
    }

    pub fn n_draws(&self) -> usize {
        self.iterations.len()
    }

    pub fn get(&self, key: &QuantityKey) -> Option<&[f64]> {
        self.keys.iter().position(|k| k == key).map(|p| self.series[p].as_slice())
    }

    /// Concatenate the draws of several chains over the same keys.
    pub fn pool(sets: &[DrawSet]) -> Result<DrawSet> {
        let first = sets.first().ok_or_else(|| Error::InvalidArgument("no chains to pool".into()))?;
        let mut out = DrawSet { keys: first.keys.clone(), series: vec![Vec::new(); first.keys.len()], iterations: Vec::new() };
        for set in sets {
            if set.keys != out.keys {
                return Err(Error::InvalidArgument("chains disagree on their quantities".into()));
            }
            for (dst, src) in out.series.iter_mut().zip(&set.series) {
                dst.extend_from_slice(src);
            }
            out.iterations.extend_from_slice(&set.iterations);
        }
        Ok(out)
    }

    pub fn summarize(&self) -> Result<Vec<SummaryRow>> {
        self.keys.iter().zip(&self.series).map(|(&key, draws)| SummaryRow::from_draws(key, draws)).collect()
    }
}

/// Empirical quantiles with linear interpolation between order statistics
/// (the "type 7" rule: h = (n − 1)p).
pub fn summarize(draws: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty set of draws".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("quantile probability {p} outside [0, 1]")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(probs
        .iter()
        .map(|&p| {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub key: QuantityKey,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

impl SummaryRow {
    pub fn from_draws(key: QuantityKey, draws: &[f64]) -> Result<Self> {
        let q = summarize(draws, &SUMMARY_PROBS)?;
        Ok(SummaryRow { key, q025: q[0], median: q[1], q975: q[2] })
    }

    pub fn contains(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainMeta {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub mode: Mode,
    pub wall_time_secs: f64,
    pub guard_redraws: usize,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: DrawSet,
    pub summary: Vec<SummaryRow>,
    pub meta: ChainMeta,
    pub final_state: LatentState,
}

impl ChainOutput {
    pub fn summary_for(&self, key: &QuantityKey) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.key == *key)
    }
}

/// Sweep `n_iterations` times from `state`, storing every `thin`-th
/// post-burn-in draw.
pub fn run_chain(
    model: &Model,
    state: &mut LatentState,
    n_iterations: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    plan: SweepPlan,
) -> Result<(DrawSet, usize)> {
    let mut draws = DrawSet::for_data(model.data());
    let mut redraws = 0;
    for k in 1..=n_iterations {
        redraws += gibbs_sweep(model, state, seed, k as u64, plan)?.guard_redraws;
        if k > burn_in && (k - burn_in) % thin == 0 {
            draws.record(state, k);
        }
    }
    Ok((draws, redraws))
}

/// Fit the model to the full data.
///
/// Online mode holds φ at `fixed_drift_sd^(−2)` and skips its update.
pub fn fit(data: &Dataset, constants: &ModelConstants, config: &SamplerConfig) -> Result<ChainOutput> {
    config.validate()?;
    let report = validate_dataset(data);
    if !report.passed() {
        return Err(Error::Validation(report));
    }
    let model = Model::new(data.clone(), constants.clone())?;
    let mut state = LatentState::initial(data);
    if config.mode == Mode::Online {
        let sd = config.fixed_drift_sd.expect("validated above");
        state.drift_precision = 1.0 / (sd * sd);
    }
    let started = Instant::now();
    let plan = SweepPlan::for_mode(config.mode);
    let (draws, guard_redraws) =
        run_chain(&model, &mut state, config.n_iterations, config.burn_in, config.thin, config.seed, plan)?;
    let summary = draws.summarize()?;
    Ok(ChainOutput {
        draws,
        summary,
        meta: ChainMeta {
            n_iterations: config.n_iterations,
            burn_in: config.burn_in,
            thin: config.thin,
            seed: config.seed,
            mode: config.mode,
            wall_time_secs: started.elapsed().as_secs_f64(),
            guard_redraws,
        },
        final_state: state,
    })
}

/// θ coverage of 95% intervals over days 1..T.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    /// Fraction per individual (0-based, in order).
    pub per_individual: Vec<f64>,
    /// (covered, total) per individual.
    pub per_individual_counts: Vec<(usize, usize)>,
    pub overall: f64,
    pub covered: usize,
    pub total: usize,
}

pub fn coverage(summary: &[SummaryRow], truth: &TruthTable) -> Result<Coverage> {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for row in summary {
        let (Quantity::Theta, Some(i), Some(t)) = (row.key.quantity, row.key.individual, row.key.day) else {
            continue;
        };
        if t == 0 {
            continue;
        }
        let value = truth
            .get(&row.key)
            .ok_or_else(|| Error::InvalidArgument(format!("no truth for theta of individual {} day {t}", i + 1)))?;
        let entry = counts.entry(i).or_default();
        entry.0 += row.contains(*value) as usize;
        entry.1 += 1;
    }
    let expected = truth.keys().filter(|k| k.quantity == Quantity::Theta && k.day != Some(0)).count();
    let total: usize = counts.values().map(|c| c.1).sum();
    if total == 0 || total != expected {
        return Err(Error::InvalidArgument(format!(
            "summary covers {total} ability points but the truth has {expected}"
        )));
    }
    if counts.keys().copied().ne(0..counts.len()) {
        return Err(Error::InvalidArgument("individuals in the summary are not contiguous from 1".into()));
    }
    let covered = counts.values().map(|c| c.0).sum();
    Ok(Coverage {
        per_individual: counts.values().map(|&(c, n)| c as f64 / n as f64).collect(),
        per_individual_counts: counts.values().copied().collect(),
        overall: covered as f64 / total as f64,
        covered,
        total,
    })
}

/// Coverage of growth rates, effect standard deviations and φ^(−1/2).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterCoverage {
    pub covered: usize,
    pub total: usize,
    pub missed: Vec<QuantityKey>,
}

impl ParameterCoverage {
    pub fn fraction(&self) -> f64 {
        self.covered as f64 / self.total as f64
    }
}

pub fn parameter_coverage(summary: &[SummaryRow], truth: &TruthTable) -> Result<ParameterCoverage> {
    let mut out = ParameterCoverage { covered: 0, total: 0, missed: Vec::new() };
    for row in summary.iter().filter(|r| r.key.quantity != Quantity::Theta) {
        let value = truth
            .get(&row.key)
            .ok_or_else(|| Error::InvalidArgument(format!("no truth for {:?}", row.key)))?;
        out.total += 1;
        if row.contains(*value) {
            out.covered += 1;
        } else {
            out.missed.push(row.key);
        }
    }
    if out.total == 0 {
        return Err(Error::InvalidArgument("summary has no parameter rows".into()));
    }
    Ok(out)
}

/// Posterior of θ_{i,t} using data up to and including day t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlinePoint {
    /// 1-based day.
    pub day: usize,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    /// The prefix failed the per-individual validity clauses; τ and δ were held at 1.
    pub relaxed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineTrajectory {
    pub individual: usize,
    pub points: Vec<OnlinePoint>,
}

fn prefix_seed(seed: u64, individual: usize, day: usize) -> u64 {
    let mut z = seed ^ (individual as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add((day as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z ^= z >> 29;
    z.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// On-line estimation: for every individual and day t, refit on days 1..t
/// with φ fixed and report the posterior of θ_t.
///
/// With φ fixed the posterior factorizes over individuals, so each one is
/// refitted on its own. Each refit starts from the previous prefix's final
/// state with a fifth of the burn-in.
pub fn fit_online(data: &Dataset, constants: &ModelConstants, config: &SamplerConfig) -> Result<Vec<OnlineTrajectory>> {
    let config = SamplerConfig { mode: Mode::Online, ..config.clone() };
    config.validate()?;
    constants.validate()?;
    let sd = config.fixed_drift_sd.expect("validated above");
    let phi = 1.0 / (sd * sd);
    let kept = config.n_iterations - config.burn_in;
    let warm_burn_in = (config.burn_in as f64 * WARM_BURN_IN_FRACTION).round() as usize;

    (0..data.n_individuals())
        .into_par_iter()
        .map(|i| {
            let subject = data.subject(i);
            let mut state: Option<SubjectState> = None;
            let mut points = Vec::with_capacity(subject.n_days());
            for t in 1..=subject.n_days() {
                let prefix = subject.prefix(t);
                let relaxed = !subject_violations(&prefix).is_empty();
                let mut s = match state.take() {
                    Some(mut s) => {
                        s.extend_to(&prefix);
                        s
                    }
                    None => SubjectState::initial(&prefix),
                };
                if relaxed {
                    s.test_effect_precision = 1.0;
                    s.day_effect_precision = 1.0;
                }
                let burn_in = if t == 1 { config.burn_in } else { warm_burn_in };
                let model = Model::new(Dataset::new(vec![prefix])?, constants.clone())?;
                let mut latent = LatentState { subjects: vec![s], drift_precision: phi };
                let plan = SweepPlan { update_drift_precision: false, update_effect_precisions: !relaxed };
                let (draws, _) =
                    run_chain(&model, &mut latent, burn_in + kept, burn_in, config.thin, prefix_seed(config.seed, i, t), plan)?;
                let series = draws.get(&QuantityKey::theta(0, t)).expect("theta of the last day is recorded");
                let q = summarize(series, &SUMMARY_PROBS)?;
                points.push(OnlinePoint { day: t, q025: q[0], median: q[1], q975: q[2], relaxed });
                state = latent.subjects.pop();
            }
            Ok(OnlineTrajectory { individual: i, points })
        })
        .collect()
}

/// Why a raw-score estimate sits at a clamp boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Saturation {
    AllCorrect,
    AllIncorrect,
}

/// One test's contribution to a raw-score estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredTest {
    pub difficulty: f64,
    pub items: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawScore {
    pub theta: f64,
    pub saturation: Option<Saturation>,
}

/// Logits beyond the extreme difficulties used for saturated days.
pub const RAW_SCORE_CLAMP: f64 = 6.0;

/// Ability at which the expected number correct equals the observed number.
///
/// Uses the plain logistic in the test difficulty (item deviations ignored).
pub fn raw_score_estimate(tests: &[ScoredTest]) -> Result<RawScore> {
    let items: usize = tests.iter().map(|t| t.items).sum();
    if items == 0 {
        return Err(Error::InvalidArgument("raw-score estimate needs at least one item".into()));
    }
    if let Some(t) = tests.iter().find(|t| t.correct > t.items || !t.difficulty.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid scored test {t:?}")));
    }
    let correct: usize = tests.iter().map(|t| t.correct).sum();
    let a_min = tests.iter().map(|t| t.difficulty).fold(f64::INFINITY, f64::min);
    let a_max = tests.iter().map(|t| t.difficulty).fold(f64::NEG_INFINITY, f64::max);
    if correct == items {
        return Ok(RawScore { theta: a_max + RAW_SCORE_CLAMP, saturation: Some(Saturation::AllCorrect) });
    }
    if correct == 0 {
        return Ok(RawScore { theta: a_min - RAW_SCORE_CLAMP, saturation: Some(Saturation::AllIncorrect) });
    }
    let excess = |theta: f64| -> f64 {
        tests.iter().map(|t| t.items as f64 / (1.0 + (t.difficulty - theta).exp())).sum::<f64>() - correct as f64
    };
    let (mut lo, mut hi) = (a_min - RAW_SCORE_CLAMP, a_max + RAW_SCORE_CLAMP);
    while excess(lo) > 0.0 {
        lo -= RAW_SCORE_CLAMP;
    }
    while excess(hi) < 0.0 {
        hi += RAW_SCORE_CLAMP;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RawScore { theta: 0.5 * (lo + hi), saturation: None })
}

/// Raw-score estimates for every day of one individual.
pub fn raw_scores(subject: &crate::model::SubjectData) -> Vec<RawScore> {
    (0..subject.n_days())
        .map(|d| {
            let tests: Vec<ScoredTest> = subject
                .tests_of_day(d)
                .map(|s| {
                    let items = subject.items_of_test(s);
                    ScoredTest {
                        difficulty: subject.difficulty(s),
                        items: items.len(),
                        correct: items.filter(|&l| subject.response(l)).count(),
                    }
                })
                .collect();
            raw_score_estimate(&tests).expect("dataset days always hold at least one item")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_type7() {
        let draws: Vec<f64> = (1..=100).map(f64::from).collect();
        let q = summarize(&draws, &[0.5, 0.0, 1.0, 0.025]).unwrap();
        assert_eq!(q[0], 50.5);
        assert_eq!(q[1], 1.0);
        assert_eq!(q[2], 100.0);
        assert!((q[3] - (1.0 + 99.0 * 0.025)).abs() < 1e-12);
        assert_eq!(summarize(&[3.0; 7], &SUMMARY_PROBS).unwrap(), vec![3.0; 3]);
        assert!(summarize(&[], &[0.5]).is_err());
        assert!(summarize(&[1.0], &[1.5]).is_err());
    }

    fn theta_summary(bounds: (f64, f64)) -> (Vec<SummaryRow>, TruthTable) {
        let mut rows = Vec::new();
        let mut truth = TruthTable::new();
        for i in 0..2 {
            for t in 0..=3 {
                let key = QuantityKey::theta(i, t);
                rows.push(SummaryRow { key, q025: bounds.0, median: 0.0, q975: bounds.1 });
                truth.insert(key, 0.5 * t as f64);
            }
        }
        (rows, truth)
    }

    #[test]
    fn coverage_extremes() {
        let (rows, truth) = theta_summary((-1e300, 1e300));
        let c = coverage(&rows, &truth).unwrap();
        assert_eq!(c.overall, 1.0);
        assert_eq!(c.per_individual, vec![1.0, 1.0]);
        let (rows, truth) = theta_summary((10.0, 11.0));
        assert_eq!(coverage(&rows, &truth).unwrap().overall, 0.0);
        let (rows, truth) = theta_summary((-0.1, 0.6));
        let c = coverage(&rows, &truth).unwrap();
        assert_eq!((c.covered, c.total), (2, 6));
    }

    #[test]
    fn coverage_rejects_misalignment() {
        let (rows, mut truth) = theta_summary((0.0, 1.0));
        truth.remove(&QuantityKey::theta(1, 2));
        assert!(coverage(&rows, &truth).is_err());
        let (mut rows, truth) = theta_summary((0.0, 1.0));
        rows.retain(|r| r.key != QuantityKey::theta(0, 3));
        assert!(coverage(&rows, &truth).is_err());
    }

    #[test]
    fn reference_per_individual_coverages_average() {
        let per = [100.0, 100.0, 99.0, 99.0, 100.0, 100.0, 94.0, 100.0, 100.0, 91.0];
        let overall = per.iter().sum::<f64>() / per.len() as f64;
        assert!((overall - 98.3).abs() < 1e-9);
    }

    #[test]
    fn raw_score_symmetric_case() {
        let r = raw_score_estimate(&[ScoredTest { difficulty: 0.0, items: 10, correct: 5 }]).unwrap();
        assert!(r.theta.abs() < 1e-9 && r.saturation.is_none());
    }

    #[test]
    fn raw_score_saturation() {
        let tests = [ScoredTest { difficulty: -0.5, items: 4, correct: 4 }, ScoredTest { difficulty: 1.0, items: 3, correct: 3 }];
        let r = raw_score_estimate(&tests).unwrap();
        assert_eq!(r.saturation, Some(Saturation::AllCorrect));
        assert_eq!(r.theta, 7.0);
        let tests = [ScoredTest { difficulty: -0.5, items: 4, correct: 0 }];
        let r = raw_score_estimate(&tests).unwrap();
        assert_eq!((r.theta, r.saturation), (-6.5, Some(Saturation::AllIncorrect)));
    }

    #[test]
    fn raw_score_matches_grid_scan() {
        let tests = [
            ScoredTest { difficulty: -1.0, items: 10, correct: 8 },
            ScoredTest { difficulty: 1.0, items: 10, correct: 6 },
        ];
        let f = |x: f64| 10.0 / (1.0 + (-(x + 1.0)).exp()) + 10.0 / (1.0 + (-(x - 1.0)).exp()) - 14.0;
        // Fine grid scan for the sign change, then a finer scan inside it.
        let mut lo = -10.0;
        while f(lo + 1e-3) < 0.0 {
            lo += 1e-3;
        }
        let mut root = lo;
        while f(root + 1e-9) < 0.0 {
            root += 1e-9;
        }
        let r = raw_score_estimate(&tests).unwrap();
        assert!((r.theta - root).abs() < 1e-8, "{} vs {root}", r.theta);
    }

    #[test]
    fn raw_score_beyond_initial_bracket() {
        let tests = [ScoredTest { difficulty: 0.0, items: 10_000, correct: 9_999 }];
        let r = raw_score_estimate(&tests).unwrap();
        let expected = (9_999.0_f64).ln();
        assert!((r.theta - expected).abs() < 1e-8);
    }
}
