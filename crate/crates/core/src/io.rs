//! CSV files for datasets, ground truth, draw traces and summaries.
//!
//! Indices are 1-based in files and 0-based in memory. Floats are written with
//! 17 significant digits so a write/read cycle is lossless.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::inference::{DrawSet, Quantity, QuantityKey, SummaryRow, TruthTable};
use crate::model::{DayRecord, Dataset, SubjectData, TestRecord};

pub const RESPONSES_FILE: &str = "responses.csv";
pub const LAPSES_FILE: &str = "lapses.csv";
pub const GROUPS_FILE: &str = "groups.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const TRACES_FILE: &str = "traces.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Group used when no groups file is present.
pub const DEFAULT_GROUP: &str = "1";

/// Shortest representation that still round-trips through 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv { path: path.display().to_string(), detail: e.to_string() }
}

fn malformed(path: &Path, line: u64, detail: impl std::fmt::Display) -> Error {
    Error::Csv { path: path.display().to_string(), detail: format!("line {line}: {detail}") }
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(u64, T)>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_rows_from(path, file)
}

fn read_rows_from<T: for<'de> Deserialize<'de>>(path: &Path, reader: impl Read) -> Result<Vec<(u64, T)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: T = row.map_err(csv_err(path))?;
        let line = out.len() as u64 + 2;
        out.push((line, row));
    }
    Ok(out)
}

fn write_file(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut wtr = csv::Writer::from_writer(std::io::BufWriter::new(file));
    wtr.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        wtr.write_record(&row).map_err(csv_err(path))?;
    }
    wtr.flush().map_err(io_err(path))
}

fn one_based(index: usize) -> String {
    (index + 1).to_string()
}

fn opt_index(index: Option<usize>) -> String {
    index.map(one_based).unwrap_or_default()
}

fn to_zero_based(path: &Path, line: u64, what: &str, value: usize) -> Result<usize> {
    value.checked_sub(1).ok_or_else(|| malformed(path, line, format!("{what} indices start at 1")))
}

#[derive(Debug, Deserialize)]
struct ResponseRow {
    individual: usize,
    day: usize,
    test: usize,
    item: usize,
    response: u8,
    difficulty: f64,
}

#[derive(Debug, Deserialize)]
struct LapseRow {
    individual: usize,
    day: usize,
    lapse_days: f64,
}

#[derive(Debug, Deserialize)]
struct GroupRow {
    individual: usize,
    group: String,
}

/// Check that the keys of a map are exactly 0..n.
fn contiguous<V>(map: &BTreeMap<usize, V>, path: &Path, what: &str) -> Result<()> {
    match map.keys().enumerate().find(|(k, &v)| *k != v) {
        None => Ok(()),
        Some((k, _)) => Err(Error::Malformed(format!("{}: {what} {} is missing", path.display(), k + 1))),
    }
}

type ItemMap = BTreeMap<usize, bool>;
type TestMap = BTreeMap<usize, (f64, ItemMap)>;
type DayMap = BTreeMap<usize, TestMap>;

/// Read `responses.csv`, `lapses.csv` and, if present, `groups.csv` from `dir`.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let responses_path = dir.join(RESPONSES_FILE);
    let lapses_path = dir.join(LAPSES_FILE);
    let groups_path = dir.join(GROUPS_FILE);

    let mut subjects: BTreeMap<usize, DayMap> = BTreeMap::new();
    for (line, row) in read_rows::<ResponseRow>(&responses_path)? {
        let p = responses_path.as_path();
        let i = to_zero_based(p, line, "individual", row.individual)?;
        let d = to_zero_based(p, line, "day", row.day)?;
        let s = to_zero_based(p, line, "test", row.test)?;
        let l = to_zero_based(p, line, "item", row.item)?;
        let response = match row.response {
            0 => false,
            1 => true,
            other => return Err(malformed(p, line, format!("response must be 0 or 1, got {other}"))),
        };
        let test = subjects.entry(i).or_default().entry(d).or_default().entry(s).or_insert((row.difficulty, ItemMap::new()));
        if test.0.to_bits() != row.difficulty.to_bits() {
            return Err(malformed(p, line, "difficulty differs between items of the same test"));
        }
        if test.1.insert(l, response).is_some() {
            return Err(malformed(p, line, "duplicate item"));
        }
    }
    if subjects.is_empty() {
        return Err(Error::Malformed(format!("{}: no responses", responses_path.display())));
    }

    let mut lapses: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (line, row) in read_rows::<LapseRow>(&lapses_path)? {
        let p = lapses_path.as_path();
        let key = (to_zero_based(p, line, "individual", row.individual)?, to_zero_based(p, line, "day", row.day)?);
        if lapses.insert(key, row.lapse_days).is_some() {
            return Err(malformed(p, line, "duplicate lapse"));
        }
    }

    let mut groups: BTreeMap<usize, String> = BTreeMap::new();
    if groups_path.exists() {
        for (line, row) in read_rows::<GroupRow>(&groups_path)? {
            let i = to_zero_based(&groups_path, line, "individual", row.individual)?;
            if groups.insert(i, row.group).is_some() {
                return Err(malformed(&groups_path, line, "duplicate individual"));
            }
        }
    }

    contiguous(&subjects, &responses_path, "individual")?;
    let n = subjects.len();
    if let Some(i) = groups.keys().find(|&&i| i >= n) {
        return Err(Error::Malformed(format!("{}: individual {} has no responses", groups_path.display(), i + 1)));
    }
    if let Some((i, d)) = lapses.keys().find(|(i, d)| subjects.get(i).is_none_or(|days| !days.contains_key(d))) {
        return Err(Error::Malformed(format!(
            "{}: individual {}, day {} has no responses",
            lapses_path.display(),
            i + 1,
            d + 1
        )));
    }

    let mut out = Vec::with_capacity(n);
    for (i, days) in subjects {
        contiguous(&days, &responses_path, &format!("individual {}: day", i + 1))?;
        let mut records = Vec::with_capacity(days.len());
        for (d, tests) in days {
            contiguous(&tests, &responses_path, &format!("individual {}, day {}: test", i + 1, d + 1))?;
            let lapse = *lapses.get(&(i, d)).ok_or_else(|| {
                Error::Malformed(format!("{}: no lapse for individual {}, day {}", lapses_path.display(), i + 1, d + 1))
            })?;
            let mut test_records = Vec::with_capacity(tests.len());
            for (s, (difficulty, items)) in tests {
                contiguous(&items, &responses_path, &format!("individual {}, day {}, test {}: item", i + 1, d + 1, s + 1))?;
                test_records.push(TestRecord { difficulty, responses: items.into_values().collect() });
            }
            records.push(DayRecord { lapse, tests: test_records });
        }
        let group = groups.remove(&i).unwrap_or_else(|| DEFAULT_GROUP.to_string());
        out.push(
            SubjectData::new(group, records)
                .map_err(|e| Error::Malformed(format!("individual {}: {e}", i + 1)))?,
        );
    }
    Dataset::new(out)
}

/// Write the responses, lapses and groups files into `dir` (created if missing).
/// Returns the written paths.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let responses = dir.join(RESPONSES_FILE);
    let lapses = dir.join(LAPSES_FILE);
    let groups = dir.join(GROUPS_FILE);

    let subjects = data.subjects();
    write_file(
        &responses,
        &["individual", "day", "test", "item", "response", "difficulty"],
        subjects.iter().enumerate().flat_map(|(i, subject)| {
            (0..subject.n_days()).flat_map(move |d| {
                subject.tests_of_day(d).enumerate().flat_map(move |(s_local, s)| {
                    let difficulty = fmt_float(subject.difficulty(s));
                    subject.items_of_test(s).enumerate().map(move |(l_local, l)| {
                        vec![
                            one_based(i),
                            one_based(d),
                            one_based(s_local),
                            one_based(l_local),
                            (subject.response(l) as u8).to_string(),
                            difficulty.clone(),
                        ]
                    })
                })
            })
        }),
    )?;
    write_file(
        &lapses,
        &["individual", "day", "lapse_days"],
        subjects.iter().enumerate().flat_map(|(i, subject)| {
            subject.lapses().iter().enumerate().map(move |(d, &lapse)| vec![one_based(i), one_based(d), fmt_float(lapse)])
        }),
    )?;
    write_file(
        &groups,
        &["individual", "group"],
        subjects.iter().enumerate().map(|(i, s)| vec![one_based(i), s.group().to_string()]),
    )?;
    Ok(vec![responses, lapses, groups])
}

fn parse_key(path: &Path, line: u64, quantity: &str, individual: Option<usize>, day: Option<usize>) -> Result<QuantityKey> {
    let quantity: Quantity = quantity.parse().map_err(|e: Error| malformed(path, line, e))?;
    let individual = individual.map(|i| to_zero_based(path, line, "individual", i)).transpose()?;
    // Ability day 0 is the initial ability, so days are written as-is.
    let key = QuantityKey { quantity, individual, day };
    let shape_ok = match quantity {
        Quantity::Theta => individual.is_some() && day.is_some(),
        Quantity::DriftSd => individual.is_none() && day.is_none(),
        _ => individual.is_some() && day.is_none(),
    };
    if !shape_ok {
        return Err(malformed(path, line, format!("wrong index columns for {quantity}")));
    }
    Ok(key)
}

fn key_columns(key: &QuantityKey) -> [String; 3] {
    [key.quantity.name().to_string(), opt_index(key.individual), key.day.map(|d| d.to_string()).unwrap_or_default()]
}

pub fn write_truth(path: &Path, truth: &TruthTable) -> Result<()> {
    write_file(
        path,
        &["quantity", "individual", "day", "value"],
        truth.iter().map(|(key, &v)| {
            let [q, i, d] = key_columns(key);
            vec![q, i, d, fmt_float(v)]
        }),
    )
}

pub fn read_truth(path: &Path) -> Result<TruthTable> {
    #[derive(Deserialize)]
    struct Row {
        quantity: String,
        individual: Option<usize>,
        day: Option<usize>,
        value: f64,
    }
    let mut out = TruthTable::new();
    for (line, row) in read_rows::<Row>(path)? {
        let key = parse_key(path, line, &row.quantity, row.individual, row.day)?;
        if out.insert(key, row.value).is_some() {
            return Err(malformed(path, line, "duplicate quantity"));
        }
    }
    Ok(out)
}

/// Long-format traces: one row per stored draw of every quantity.
pub fn write_traces(path: &Path, draws: &DrawSet) -> Result<()> {
    write_file(
        path,
        &["quantity", "individual", "day", "iteration", "value"],
        draws.keys.iter().zip(&draws.series).flat_map(|(key, series)| {
            let [q, i, d] = key_columns(key);
            series.iter().zip(&draws.iterations).map(move |(&v, &k)| vec![q.clone(), i.clone(), d.clone(), k.to_string(), fmt_float(v)])
        }),
    )
}

pub fn read_traces(path: &Path) -> Result<DrawSet> {
    #[derive(Deserialize)]
    struct Row {
        quantity: String,
        individual: Option<usize>,
        day: Option<usize>,
        iteration: usize,
        value: f64,
    }
    let mut out = DrawSet::default();
    let mut index: BTreeMap<QuantityKey, usize> = BTreeMap::new();
    let mut iterations: Vec<Vec<usize>> = Vec::new();
    for (line, row) in read_rows::<Row>(path)? {
        let key = parse_key(path, line, &row.quantity, row.individual, row.day)?;
        let slot = *index.entry(key).or_insert_with(|| {
            out.keys.push(key);
            out.series.push(Vec::new());
            iterations.push(Vec::new());
            out.keys.len() - 1
        });
        out.series[slot].push(row.value);
        iterations[slot].push(row.iteration);
    }
    let Some(first) = iterations.first() else {
        return Err(Error::Csv { path: path.display().to_string(), detail: "no draws".into() });
    };
    if iterations.iter().any(|its| its != first) {
        return Err(Error::Csv {
            path: path.display().to_string(),
            detail: "quantities were not recorded at the same iterations".into(),
        });
    }
    out.iterations = first.clone();
    Ok(out)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_file(
        path,
        &["quantity", "individual", "day", "q025", "median", "q975"],
        rows.iter().map(|r| {
            let [q, i, d] = key_columns(&r.key);
            vec![q, i, d, fmt_float(r.q025), fmt_float(r.median), fmt_float(r.q975)]
        }),
    )
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    #[derive(Deserialize)]
    struct Row {
        quantity: String,
        individual: Option<usize>,
        day: Option<usize>,
        q025: f64,
        median: f64,
        q975: f64,
    }
    read_rows::<Row>(path)?
        .into_iter()
        .map(|(line, row)| {
            Ok(SummaryRow { key: parse_key(path, line, &row.quantity, row.individual, row.day)?, q025: row.q025, median: row.median, q975: row.q975 })
        })
        .collect()
}

/// Write arbitrary text, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
