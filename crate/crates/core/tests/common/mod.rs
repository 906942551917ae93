#![allow(dead_code)]

use dir_core::model::{Dataset, DayRecord, SubjectData, TestRecord};

/// One subject from `days[d][s] = (difficulty, responses)` with the given lapses.
pub fn subject(lapses: &[f64], days: &[&[(f64, &[bool])]]) -> SubjectData {
    let records = lapses
        .iter()
        .zip(days)
        .map(|(&lapse, tests)| DayRecord {
            lapse,
            tests: tests.iter().map(|&(difficulty, r)| TestRecord { difficulty, responses: r.to_vec() }).collect(),
        })
        .collect();
    SubjectData::new("1", records).unwrap()
}

/// Two subjects, three days, two or three tests a day, mixed responses.
pub fn small_dataset() -> Dataset {
    let a = subject(
        &[3.0, 20.0, 5.0],
        &[
            &[(0.2, &[true, false, true]), (-0.4, &[false, true])],
            &[(0.0, &[true, true, false]), (0.5, &[false, false, true]), (-0.1, &[true])],
            &[(0.3, &[true, false]), (0.1, &[false, true, true])],
        ],
    );
    let b = subject(
        &[1.0, 2.0, 30.0],
        &[
            &[(-0.5, &[true, false]), (0.5, &[false, true])],
            &[(0.0, &[true, false, false])],
            &[(1.0, &[false, false, true]), (-1.0, &[true, true, false]), (0.0, &[true, false])],
        ],
    );
    Dataset::new(vec![a, b]).unwrap()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Standard error of the mean from non-overlapping batch means.
pub fn batch_se(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = x.chunks_exact(size).map(mean).collect();
    (variance(&means) / means.len() as f64).sqrt()
}

/// Standard error of a sample variance for independent draws: sqrt((m4 − s⁴)/n).
pub fn variance_se(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2) / n).sqrt()
}
