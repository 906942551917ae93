//! Data, constants, priors and latent state of the dynamic item response model.
//!
//! Indexing convention: days are 0-based internally (`d = 0..T`) and day `d`
//! carries ability `theta[d + 1]`; `theta[0]` is the initial ability.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One test as supplied to [`SubjectData::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct TestRecord {
    pub difficulty: f64,
    pub responses: Vec<bool>,
}

/// One test day as supplied to [`SubjectData::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    /// Days elapsed since the previous test day (or since the initial ability for the first day).
    pub lapse: f64,
    pub tests: Vec<TestRecord>,
}

/// All responses of one individual, flattened with offset tables.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    group: String,
    lapse: Vec<f64>,
    day_tests: Vec<usize>,
    difficulty: Vec<f64>,
    test_items: Vec<usize>,
    response: Vec<bool>,
}

impl SubjectData {
    pub fn new(group: impl Into<String>, days: Vec<DayRecord>) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::Malformed("an individual needs at least one test day".into()));
        }
        let mut out = SubjectData {
            group: group.into(),
            lapse: Vec::with_capacity(days.len()),
            day_tests: vec![0],
            difficulty: Vec::new(),
            test_items: vec![0],
            response: Vec::new(),
        };
        for (d, day) in days.into_iter().enumerate() {
            if !(day.lapse > 0.0 && day.lapse.is_finite()) {
                return Err(Error::Malformed(format!("day {}: time lapse must be positive, got {}", d + 1, day.lapse)));
            }
            if day.tests.is_empty() {
                return Err(Error::Malformed(format!("day {}: no tests", d + 1)));
            }
            out.lapse.push(day.lapse);
            for (s, test) in day.tests.into_iter().enumerate() {
                if !test.difficulty.is_finite() {
                    return Err(Error::Malformed(format!("day {}, test {}: difficulty not finite", d + 1, s + 1)));
                }
                if test.responses.is_empty() {
                    return Err(Error::Malformed(format!("day {}, test {}: no items", d + 1, s + 1)));
                }
                out.difficulty.push(test.difficulty);
                out.response.extend(test.responses);
                out.test_items.push(out.response.len());
            }
            out.day_tests.push(out.difficulty.len());
        }
        Ok(out)
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    /// Number of test days, T_i.
    pub fn n_days(&self) -> usize {
        self.lapse.len()
    }

    pub fn n_tests(&self) -> usize {
        self.difficulty.len()
    }

    pub fn n_items(&self) -> usize {
        self.response.len()
    }

    #[inline]
    pub fn lapse(&self, day: usize) -> f64 {
        self.lapse[day]
    }

    pub fn lapses(&self) -> &[f64] {
        &self.lapse
    }

    /// Test indices (subject-local) taken on `day`.
    #[inline]
    pub fn tests_of_day(&self, day: usize) -> Range<usize> {
        self.day_tests[day]..self.day_tests[day + 1]
    }

    /// Item indices (subject-local) belonging to `test`.
    #[inline]
    pub fn items_of_test(&self, test: usize) -> Range<usize> {
        self.test_items[test]..self.test_items[test + 1]
    }

    /// Item indices of every test on `day`.
    #[inline]
    pub fn items_of_day(&self, day: usize) -> Range<usize> {
        self.test_items[self.day_tests[day]]..self.test_items[self.day_tests[day + 1]]
    }

    #[inline]
    pub fn difficulty(&self, test: usize) -> f64 {
        self.difficulty[test]
    }

    #[inline]
    pub fn response(&self, item: usize) -> bool {
        self.response[item]
    }

    /// Number of tests on `day`, S_{i,t}.
    pub fn tests_on_day(&self, day: usize) -> usize {
        self.day_tests[day + 1] - self.day_tests[day]
    }

    /// The same individual restricted to the first `days` days.
    pub fn prefix(&self, days: usize) -> SubjectData {
        let days = days.clamp(1, self.n_days());
        let n_tests = self.day_tests[days];
        let n_items = self.test_items[n_tests];
        SubjectData {
            group: self.group.clone(),
            lapse: self.lapse[..days].to_vec(),
            day_tests: self.day_tests[..=days].to_vec(),
            difficulty: self.difficulty[..n_tests].to_vec(),
            test_items: self.test_items[..=n_tests].to_vec(),
            response: self.response[..n_items].to_vec(),
        }
    }

    /// Nested view, mainly for I/O and tests.
    pub fn to_records(&self) -> Vec<DayRecord> {
        (0..self.n_days())
            .map(|d| DayRecord {
                lapse: self.lapse[d],
                tests: self
                    .tests_of_day(d)
                    .map(|s| TestRecord {
                        difficulty: self.difficulty[s],
                        responses: self.response[self.items_of_test(s)].to_vec(),
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Observed responses for every individual.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<SubjectData>,
}

impl Dataset {
    pub fn new(subjects: Vec<SubjectData>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Malformed("dataset has no individuals".into()));
        }
        Ok(Dataset { subjects })
    }

    pub fn n_individuals(&self) -> usize {
        self.subjects.len()
    }

    pub fn subjects(&self) -> &[SubjectData] {
        &self.subjects
    }

    pub fn subject(&self, i: usize) -> &SubjectData {
        &self.subjects[i]
    }

    pub fn n_items(&self) -> usize {
        self.subjects.iter().map(SubjectData::n_items).sum()
    }

    /// Every individual restricted to its first `days` days.
    pub fn prefix(&self, days: usize) -> Dataset {
        Dataset { subjects: self.subjects.iter().map(|s| s.prefix(days)).collect() }
    }
}

/// Prior for an initial ability, N(mean, var) on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupPrior {
    pub mean: f64,
    pub var: f64,
}

impl Default for GroupPrior {
    fn default() -> Self {
        GroupPrior { mean: 0.0, var: 1.0 }
    }
}

/// Density proportional to x^(shape − 1) e^(−rate·x) on x > 0.
///
/// The default, shape −1/2 and rate 0, is the improper x^(−3/2) prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub const OBJECTIVE: GammaPrior = GammaPrior { shape: -0.5, rate: 0.0 };

    pub fn is_proper(&self) -> bool {
        self.shape > 0.0 && self.rate > 0.0
    }
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self::OBJECTIVE
    }
}

/// Prior on a growth rate, always restricted to c > 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum GrowthPrior {
    /// Flat on (0, ∞).
    #[default]
    Flat,
    /// N(mean, var) truncated to (0, ∞).
    TruncatedNormal { mean: f64, var: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Priors {
    pub growth: GrowthPrior,
    pub drift_precision: GammaPrior,
    pub day_effect_precision: GammaPrior,
    pub test_effect_precision: GammaPrior,
}

impl Priors {
    fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("drift_precision", self.drift_precision),
            ("day_effect_precision", self.day_effect_precision),
            ("test_effect_precision", self.test_effect_precision),
        ] {
            if !(p.shape.is_finite() && p.rate.is_finite() && p.rate >= 0.0) {
                return Err(Error::Config(format!("{name} prior: shape and rate must be finite, rate ≥ 0")));
            }
        }
        if let GrowthPrior::TruncatedNormal { mean, var } = self.growth {
            if !(mean.is_finite() && var > 0.0 && var.is_finite()) {
                return Err(Error::Config("growth prior needs finite mean and positive variance".into()));
            }
        }
        Ok(())
    }
}

/// Known quantities of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConstants {
    /// Standard deviation of item-difficulty deviations around the test's ensemble mean.
    pub sigma: f64,
    /// Growth-deceleration rate.
    pub rho: f64,
    /// Lapses longer than this contribute no deterministic growth.
    pub delta_tmax: f64,
    /// Initial-ability prior by group label.
    pub group_priors: BTreeMap<String, GroupPrior>,
    /// Used for groups missing from `group_priors`.
    pub default_group_prior: GroupPrior,
    pub priors: Priors,
}

impl Default for ModelConstants {
    fn default() -> Self {
        ModelConstants {
            sigma: 0.7333,
            rho: 0.1180,
            delta_tmax: 14.0,
            group_priors: BTreeMap::new(),
            default_group_prior: GroupPrior::default(),
            priors: Priors::default(),
        }
    }
}

impl ModelConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.delta_tmax > 0.0) {
            return Err(Error::Config(format!("delta_tmax must be positive, got {}", self.delta_tmax)));
        }
        let priors = self.group_priors.iter().map(|(k, v)| (k.as_str(), v));
        for (label, p) in priors.chain(std::iter::once(("<default>", &self.default_group_prior))) {
            if !(p.mean.is_finite() && p.var > 0.0 && p.var.is_finite()) {
                return Err(Error::Config(format!("group {label}: prior needs finite mean and positive variance")));
            }
        }
        self.priors.validate()
    }

    pub fn group_prior(&self, group: &str) -> GroupPrior {
        self.group_priors.get(group).copied().unwrap_or(self.default_group_prior)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Retrospective,
    Online,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Retrospective => "retrospective",
            Mode::Online => "online",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub mode: Mode,
    /// φ^(−1/2), held fixed in online mode.
    pub fixed_drift_sd: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iterations: 50_000,
            burn_in: 30_000,
            thin: 10,
            seed: 0,
            mode: Mode::Retrospective,
            fixed_drift_sd: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.mode == Mode::Online && self.fixed_drift_sd.is_none() {
            return Err(Error::Config("online mode requires a fixed drift sd".into()));
        }
        if let Some(sd) = self.fixed_drift_sd {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::Config(format!("drift sd must be positive, got {sd}")));
            }
        }
        Ok(())
    }

    /// Number of stored draws.
    pub fn n_draws(&self) -> usize {
        (self.n_iterations - self.burn_in) / self.thin
    }
}

/// Dataset and constants with per-individual derived terms precomputed.
#[derive(Debug, Clone)]
pub struct Model {
    data: Dataset,
    constants: ModelConstants,
    terms: Vec<SubjectTerms>,
    inv_rho: f64,
}

#[derive(Debug, Clone)]
pub struct SubjectTerms {
    /// min(lapse, delta_tmax) per day.
    pub lapse_plus: Vec<f64>,
    pub initial: GroupPrior,
}

impl Model {
    pub fn new(data: Dataset, constants: ModelConstants) -> Result<Self> {
        constants.validate()?;
        let terms = data
            .subjects()
            .iter()
            .map(|s| SubjectTerms {
                lapse_plus: s.lapses().iter().map(|&l| l.min(constants.delta_tmax)).collect(),
                initial: constants.group_prior(s.group()),
            })
            .collect();
        let inv_rho = 1.0 / constants.rho;
        Ok(Model { data, constants, terms, inv_rho })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn constants(&self) -> &ModelConstants {
        &self.constants
    }

    pub fn n_individuals(&self) -> usize {
        self.data.n_individuals()
    }

    pub fn inv_rho(&self) -> f64 {
        self.inv_rho
    }

    pub fn subject(&self, i: usize) -> SubjectView<'_> {
        SubjectView {
            index: i,
            data: self.data.subject(i),
            terms: &self.terms[i],
            constants: &self.constants,
            inv_rho: self.inv_rho,
        }
    }
}

/// Everything the per-individual updates read.
#[derive(Debug, Clone, Copy)]
pub struct SubjectView<'a> {
    pub index: usize,
    pub data: &'a SubjectData,
    pub terms: &'a SubjectTerms,
    pub constants: &'a ModelConstants,
    pub inv_rho: f64,
}

impl SubjectView<'_> {
    /// ψ = 1 / (4ν² + σ²).
    #[inline]
    pub fn psi(&self, ks_scale: f64) -> f64 {
        psi(ks_scale, self.constants.sigma)
    }
}

/// ψ = 1 / (4ν² + σ²): precision of a latent utility around its mean.
#[inline]
pub fn psi(ks_scale: f64, sigma: f64) -> f64 {
    1.0 / (4.0 * ks_scale * ks_scale + sigma * sigma)
}

/// Unknowns belonging to one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectState {
    /// Abilities θ_0..θ_T.
    pub theta: Vec<f64>,
    pub growth: f64,
    pub day_effect: Vec<f64>,
    pub day_effect_precision: f64,
    pub test_effect: Vec<f64>,
    pub test_effect_precision: f64,
    pub latent_utility: Vec<f64>,
    pub ks_scale: Vec<f64>,
}

impl SubjectState {
    /// Starting values: θ = 0, c = 0, effects 0, precisions 1, ν = 1.
    pub fn initial(data: &SubjectData) -> Self {
        SubjectState {
            theta: vec![0.0; data.n_days() + 1],
            growth: 0.0,
            day_effect: vec![0.0; data.n_days()],
            day_effect_precision: 1.0,
            test_effect: vec![0.0; data.n_tests()],
            test_effect_precision: 1.0,
            latent_utility: (0..data.n_items()).map(|l| if data.response(l) { 1.0 } else { -1.0 }).collect(),
            ks_scale: vec![1.0; data.n_items()],
        }
    }

    /// Grow the state to cover a longer prefix of the same individual.
    ///
    /// New days start from the last ability with zero effects and ν = 1.
    pub fn extend_to(&mut self, data: &SubjectData) {
        let last = *self.theta.last().expect("theta is never empty");
        self.theta.resize(data.n_days() + 1, last);
        self.day_effect.resize(data.n_days(), 0.0);
        self.test_effect.resize(data.n_tests(), 0.0);
        let old_items = self.latent_utility.len();
        for l in old_items..data.n_items() {
            self.latent_utility.push(if data.response(l) { 1.0 } else { -1.0 });
        }
        self.ks_scale.resize(data.n_items(), 1.0);
    }

    /// Check the state's structural invariants against the data.
    pub fn check_invariants(&self, data: &SubjectData) -> std::result::Result<(), String> {
        if self.theta.len() != data.n_days() + 1 || self.theta.iter().any(|x| !x.is_finite()) {
            return Err("theta has wrong length or non-finite entries".into());
        }
        if !(self.growth >= 0.0) {
            return Err(format!("growth {} is negative", self.growth));
        }
        if !(self.day_effect_precision > 0.0 && self.test_effect_precision > 0.0) {
            return Err("random-effect precisions must be positive".into());
        }
        for d in 0..data.n_days() {
            let tests = data.tests_of_day(d);
            let sum: f64 = self.test_effect[tests.clone()].iter().sum();
            let scale = self.test_effect[tests.clone()].iter().map(|x| x.abs()).fold(1.0, f64::max);
            if sum.abs() > 1e-12 * scale {
                return Err(format!("day {}: test effects sum to {sum}", d + 1));
            }
            if tests.len() == 1 && self.test_effect[tests.start] != 0.0 {
                return Err(format!("day {}: single test effect must be zero", d + 1));
            }
        }
        for l in 0..data.n_items() {
            let y = self.latent_utility[l];
            if data.response(l) != (y > 0.0) {
                return Err(format!("item {l}: latent utility {y} disagrees with the response"));
            }
            if !(self.ks_scale[l] > 0.0) {
                return Err(format!("item {l}: K-S scale must be positive"));
            }
        }
        Ok(())
    }
}

/// Every unknown of the model for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub subjects: Vec<SubjectState>,
    /// System-noise precision φ.
    pub drift_precision: f64,
}

impl LatentState {
    pub fn initial(data: &Dataset) -> Self {
        LatentState {
            subjects: data.subjects().iter().map(SubjectState::initial).collect(),
            drift_precision: 1.0,
        }
    }

    pub fn check_invariants(&self, data: &Dataset) -> std::result::Result<(), String> {
        if !(self.drift_precision > 0.0) {
            return Err("drift precision must be positive".into());
        }
        for (i, (state, subject)) in self.subjects.iter().zip(data.subjects()).enumerate() {
            state.check_invariants(subject).map_err(|e| format!("individual {}: {e}", i + 1))?;
        }
        Ok(())
    }
}

/// A posterior-propriety or full-conditional requirement a dataset can violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Clause {
    /// At least two individuals.
    MinIndividuals,
    /// Each individual tested on at least two days.
    MinDays,
    /// Two days with two or more tests, each having two tests with one 0 and one 1 observation.
    MixedTests,
    /// (Σ_t S_{i,t} − (T_i + 1)) / 2 > 0.
    TestPrecisionShape,
    /// (T_i − 1) / 2 > 0.
    DayPrecisionShape,
    /// (Σ_i T_i − 1) / 2 > 0.
    DriftPrecisionShape,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clause::MinIndividuals => "n ≥ 2",
            Clause::MinDays => "T_i ≥ 2",
            Clause::MixedTests => {
                "S_{i,t} ≥ 2 on at least two days, with at least two tests on each having one 0 and one 1 observation"
            }
            Clause::TestPrecisionShape => "(Σ_t S_{i,t} − (T_i+1))/2 > 0",
            Clause::DayPrecisionShape => "(T_i − 1)/2 > 0",
            Clause::DriftPrecisionShape => "(Σ_i T_i − 1)/2 > 0",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub clause: Clause,
    /// 0-based individual, `None` for dataset-wide clauses.
    pub individual: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.individual {
            Some(i) => write!(f, "individual {}: {}", i + 1, self.clause),
            None => write!(f, "{}", self.clause),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// Distinct violated clauses.
    pub fn clauses(&self) -> Vec<Clause> {
        let mut c: Vec<Clause> = self.violations.iter().map(|v| v.clause).collect();
        c.sort();
        c.dedup();
        c
    }

    pub fn has(&self, clause: Clause) -> bool {
        self.violations.iter().any(|v| v.clause == clause)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return f.write_str("pass");
        }
        write!(f, "fail: ")?;
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn has_both_outcomes(data: &SubjectData, test: usize) -> bool {
    let items = data.items_of_test(test);
    let correct = items.clone().filter(|&l| data.response(l)).count();
    correct > 0 && correct < items.len()
}

/// Clauses that concern a single individual.
pub fn subject_violations(data: &SubjectData) -> Vec<Clause> {
    let mut out = Vec::new();
    let days = data.n_days();
    if days < 2 {
        out.push(Clause::MinDays);
    }
    let qualifying_days = (0..days)
        .filter(|&d| {
            data.tests_on_day(d) >= 2 && data.tests_of_day(d).filter(|&s| has_both_outcomes(data, s)).count() >= 2
        })
        .count();
    if qualifying_days < 2 {
        out.push(Clause::MixedTests);
    }
    if data.n_tests() as f64 - (days as f64 + 1.0) <= 0.0 {
        out.push(Clause::TestPrecisionShape);
    }
    if days as f64 - 1.0 <= 0.0 {
        out.push(Clause::DayPrecisionShape);
    }
    out
}

/// Check the conditions under which the posterior is proper and every
/// gamma full conditional has a positive shape.
pub fn validate_dataset(data: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    if data.n_individuals() < 2 {
        violations.push(Violation { clause: Clause::MinIndividuals, individual: None });
    }
    for (i, subject) in data.subjects().iter().enumerate() {
        violations.extend(subject_violations(subject).into_iter().map(|clause| Violation { clause, individual: Some(i) }));
    }
    let total_days: usize = data.subjects().iter().map(SubjectData::n_days).sum();
    if total_days as f64 - 1.0 <= 0.0 {
        violations.push(Violation { clause: Clause::DriftPrecisionShape, individual: None });
    }
    ValidationReport { violations }
}
