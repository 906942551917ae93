//! Forward simulation of datasets with known ground truth.

use rand::Rng;

use crate::distributions::{sample_open01, sample_std_normal, stream_rng, ChainRng};
use crate::error::{Error, Result};
use crate::inference::{Quantity, QuantityKey, TruthTable};
use crate::model::{validate_dataset, Dataset, DayRecord, GroupPrior, ModelConstants, SubjectData, TestRecord};

const REFERENCE_GROWTH: [f64; 10] = [0.0055, 0.0065, 0.0026, 0.0037, 0.0061, 0.0047, 0.0035, 0.0043, 0.0039, 0.0015];
const REFERENCE_DAY_PRECISION: [f64; 10] = [2.0408, 1.3333, 1.8182, 1.2346, 1.5873, 1.0, 2.2222, 1.0526, 1.1494, 2.0];
const REFERENCE_TEST_PRECISION: [f64; 10] = [4.0, 3.1250, 4.3478, 2.7027, 3.7037, 2.8571, 4.0, 2.2222, 9.0909, 4.5455];
const REFERENCE_DRIFT_SD: f64 = 0.0218;

const MAX_BERNOULLI_RETRIES: u64 = 100;

/// Time between consecutive test days.
#[derive(Debug, Clone, PartialEq)]
pub enum LapseRule {
    /// 10 + t for t ≤ T/2, t − 10 afterwards (t is the 1-based day).
    ReferenceSchedule,
    Constant(f64),
    /// One lapse per day, shared by every individual.
    Table(Vec<f64>),
}

impl LapseRule {
    fn lapses(&self, days: usize) -> Result<Vec<f64>> {
        let out: Vec<f64> = match self {
            LapseRule::ReferenceSchedule => (1..=days)
                .map(|t| if t <= days / 2 { 10.0 + t as f64 } else { t as f64 - 10.0 })
                .collect(),
            LapseRule::Constant(l) => vec![*l; days],
            LapseRule::Table(table) => {
                if table.len() != days {
                    return Err(Error::Config(format!("lapse table has {} entries for {days} days", table.len())));
                }
                table.clone()
            }
        };
        if let Some((t, l)) = out.iter().enumerate().find(|(_, &l)| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("lapse rule gives lapse {l} on day {}", t + 1)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_individuals: usize,
    pub days: usize,
    pub tests_per_day: usize,
    pub items_per_test: usize,
    pub lapse: LapseRule,
    /// True growth rate per individual.
    pub growth: Vec<f64>,
    pub day_effect_precision: Vec<f64>,
    pub test_effect_precision: Vec<f64>,
    pub drift_precision: f64,
    pub sigma: f64,
    pub rho: f64,
    pub delta_tmax: f64,
    /// Test difficulties are θ_t + ζ with ζ ~ U(−w, w).
    pub difficulty_half_width: f64,
    pub initial: GroupPrior,
    pub group: String,
    pub seed: u64,
    /// Redraw responses until the dataset passes the validation gate.
    pub require_valid: bool,
}

impl SimConfig {
    /// Ten individuals, 50 days, 4 tests of 10 items, and the reference truth values.
    pub fn reference_design(seed: u64) -> Self {
        SimConfig {
            n_individuals: 10,
            days: 50,
            tests_per_day: 4,
            items_per_test: 10,
            lapse: LapseRule::ReferenceSchedule,
            growth: REFERENCE_GROWTH.to_vec(),
            day_effect_precision: REFERENCE_DAY_PRECISION.to_vec(),
            test_effect_precision: REFERENCE_TEST_PRECISION.to_vec(),
            drift_precision: 1.0 / (REFERENCE_DRIFT_SD * REFERENCE_DRIFT_SD),
            sigma: 0.7333,
            rho: 0.1180,
            delta_tmax: 14.0,
            difficulty_half_width: 0.1,
            initial: GroupPrior { mean: 0.0, var: 1.0 },
            group: "1".into(),
            seed,
            require_valid: true,
        }
    }

    /// A smaller design reusing the reference truth vectors (cycled if `n > 10`).
    /// Series too short for the reference lapse schedule use a constant weekly lapse.
    pub fn scaled(n: usize, days: usize, tests: usize, items: usize, seed: u64) -> Self {
        let take = |v: &[f64]| (0..n).map(|i| v[i % v.len()]).collect::<Vec<_>>();
        let lapse = if LapseRule::ReferenceSchedule.lapses(days).is_ok() { LapseRule::ReferenceSchedule } else { LapseRule::Constant(7.0) };
        SimConfig {
            lapse,
            n_individuals: n,
            days,
            tests_per_day: tests,
            items_per_test: items,
            growth: take(&REFERENCE_GROWTH),
            day_effect_precision: take(&REFERENCE_DAY_PRECISION),
            test_effect_precision: take(&REFERENCE_TEST_PRECISION),
            ..Self::reference_design(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_individuals == 0 || self.days == 0 || self.tests_per_day == 0 || self.items_per_test == 0 {
            return Err(Error::Config("all simulation counts must be at least 1".into()));
        }
        for (name, v) in [
            ("growth", &self.growth),
            ("day_effect_precision", &self.day_effect_precision),
            ("test_effect_precision", &self.test_effect_precision),
        ] {
            if v.len() != self.n_individuals {
                return Err(Error::Config(format!("{name} has {} entries for {} individuals", v.len(), self.n_individuals)));
            }
        }
        if self.growth.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config("growth rates must be finite and nonnegative".into()));
        }
        let precisions = self.day_effect_precision.iter().chain(&self.test_effect_precision);
        if precisions.chain(std::iter::once(&self.drift_precision)).any(|p| !(*p > 0.0)) {
            return Err(Error::Config("truth precisions must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.rho > 0.0 && self.delta_tmax > 0.0 && self.difficulty_half_width >= 0.0) {
            return Err(Error::Config("sigma, rho, delta_tmax or the difficulty width is out of range".into()));
        }
        if !(self.initial.var > 0.0) {
            return Err(Error::Config("initial-ability variance must be positive".into()));
        }
        self.lapse.lapses(self.days).map(|_| ())
    }

    /// Constants matching this design, for fitting the simulated data.
    pub fn model_constants(&self) -> ModelConstants {
        let mut constants = ModelConstants {
            sigma: self.sigma,
            rho: self.rho,
            delta_tmax: self.delta_tmax,
            default_group_prior: self.initial,
            ..ModelConstants::default()
        };
        constants.group_priors.insert(self.group.clone(), self.initial);
        constants
    }
}

/// Ground truth behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    /// θ_0..θ_T per individual.
    pub theta: Vec<Vec<f64>>,
    pub growth: Vec<f64>,
    pub day_effect_precision: Vec<f64>,
    pub test_effect_precision: Vec<f64>,
    pub drift_precision: f64,
    pub day_effects: Vec<Vec<f64>>,
    /// Per test, flattened in dataset order.
    pub test_effects: Vec<Vec<f64>>,
    /// Item-difficulty deviations ε, flattened in dataset order.
    pub item_deviations: Vec<Vec<f64>>,
}

impl SimTruth {
    /// Truth keyed like posterior summaries.
    pub fn table(&self) -> TruthTable {
        let mut table = TruthTable::new();
        for (i, path) in self.theta.iter().enumerate() {
            for (t, &v) in path.iter().enumerate() {
                table.insert(QuantityKey::theta(i, t), v);
            }
            table.insert(QuantityKey::individual(Quantity::Growth, i), self.growth[i]);
            table.insert(QuantityKey::individual(Quantity::DayEffectSd, i), self.day_effect_precision[i].powf(-0.5));
            table.insert(QuantityKey::individual(Quantity::TestEffectSd, i), self.test_effect_precision[i].powf(-0.5));
        }
        table.insert(QuantityKey::global(Quantity::DriftSd), self.drift_precision.powf(-0.5));
        table
    }
}

/// Latent layer of one individual; responses are drawn separately.
struct LatentDraw {
    theta: Vec<f64>,
    day_effects: Vec<f64>,
    test_effects: Vec<f64>,
    difficulties: Vec<f64>,
    deviations: Vec<f64>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    mean + var.sqrt() * sample_std_normal(rng)
}

fn draw_latent(cfg: &SimConfig, i: usize, lapses: &[f64], rng: &mut ChainRng) -> LatentDraw {
    let (days, tests, items) = (cfg.days, cfg.tests_per_day, cfg.items_per_test);
    let mut theta = Vec::with_capacity(days + 1);
    theta.push(normal(rng, cfg.initial.mean, cfg.initial.var));
    for &lapse in lapses {
        let prev = *theta.last().unwrap();
        let drift = cfg.growth[i] * (1.0 - cfg.rho * prev) * lapse.min(cfg.delta_tmax);
        theta.push(prev + drift + normal(rng, 0.0, lapse / cfg.drift_precision));
    }
    let mut out = LatentDraw {
        theta,
        day_effects: Vec::with_capacity(days),
        test_effects: Vec::with_capacity(days * tests),
        difficulties: Vec::with_capacity(days * tests),
        deviations: Vec::with_capacity(days * tests * items),
    };
    for d in 0..days {
        out.day_effects.push(normal(rng, 0.0, 1.0 / cfg.day_effect_precision[i]));
        // Centered iid normals are exactly N(0, τ⁻¹I) conditioned on a zero sum.
        let raw: Vec<f64> = (0..tests).map(|_| normal(rng, 0.0, 1.0 / cfg.test_effect_precision[i])).collect();
        let mean = raw.iter().sum::<f64>() / tests as f64;
        if tests == 1 {
            out.test_effects.push(0.0);
        } else {
            let mut centered: Vec<f64> = raw.iter().map(|x| x - mean).collect();
            let head: f64 = centered[..tests - 1].iter().sum();
            centered[tests - 1] = -head;
            out.test_effects.extend(centered);
        }
        for _ in 0..tests {
            let zeta = cfg.difficulty_half_width * (2.0 * sample_open01(rng) - 1.0);
            out.difficulties.push(out.theta[d + 1] + zeta);
        }
        for _ in 0..tests * items {
            out.deviations.push(cfg.sigma * sample_std_normal(rng));
        }
    }
    out
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn draw_responses(cfg: &SimConfig, latent: &LatentDraw, lapses: &[f64], rng: &mut ChainRng) -> Result<SubjectData> {
    let (tests, items) = (cfg.tests_per_day, cfg.items_per_test);
    let records = (0..cfg.days)
        .map(|d| DayRecord {
            lapse: lapses[d],
            tests: (0..tests)
                .map(|s| {
                    let test = d * tests + s;
                    let location = latent.theta[d + 1] - latent.difficulties[test]
                        + latent.day_effects[d]
                        + latent.test_effects[test];
                    TestRecord {
                        difficulty: latent.difficulties[test],
                        responses: (0..items)
                            .map(|l| sample_open01(rng) < logistic(location - latent.deviations[test * items + l]))
                            .collect(),
                    }
                })
                .collect(),
        })
        .collect();
    SubjectData::new(cfg.group.clone(), records)
}

/// Simulate a dataset and keep the truth that generated it.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<(Dataset, SimTruth)> {
    cfg.validate()?;
    let lapses = cfg.lapse.lapses(cfg.days)?;
    let latent: Vec<LatentDraw> = (0..cfg.n_individuals)
        .map(|i| draw_latent(cfg, i, &lapses, &mut stream_rng(cfg.seed, 0, i as u64)))
        .collect();

    let mut attempt = 0;
    let data = loop {
        attempt += 1;
        let subjects = latent
            .iter()
            .enumerate()
            .map(|(i, l)| draw_responses(cfg, l, &lapses, &mut stream_rng(cfg.seed, attempt, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let data = Dataset::new(subjects)?;
        if !cfg.require_valid {
            break data;
        }
        let report = validate_dataset(&data);
        if report.passed() {
            break data;
        }
        if attempt >= MAX_BERNOULLI_RETRIES {
            return Err(Error::Validation(report));
        }
    };

    let truth = SimTruth {
        growth: cfg.growth.clone(),
        day_effect_precision: cfg.day_effect_precision.clone(),
        test_effect_precision: cfg.test_effect_precision.clone(),
        drift_precision: cfg.drift_precision,
        theta: latent.iter().map(|l| l.theta.clone()).collect(),
        day_effects: latent.iter().map(|l| l.day_effects.clone()).collect(),
        test_effects: latent.iter().map(|l| l.test_effects.clone()).collect(),
        item_deviations: latent.into_iter().map(|l| l.deviations).collect(),
    };
    Ok((data, truth))
}
