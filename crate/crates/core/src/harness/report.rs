//! Metrics records, CSV persistence, per-operating-point aggregation and
//! the acceptance summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::shield::{allocate_power, AllocationWeights, PowerMetrics};

pub const CSV_HEADER: &str =
    "scenario,snr_db,an_power,jsr_db,comm_mse,comm_mse_undefended,privacy_mi,eve_accuracy,percept_mse,identified_kind,seed";

/// One row per operating point and seed. Arms of the jamming scenarios are
/// written as `scenario:arm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: String,
    pub snr_db: f64,
    pub an_power: Option<f64>,
    pub jsr_db: Option<f64>,
    pub comm_mse: Option<f64>,
    pub comm_mse_undefended: Option<f64>,
    pub privacy_mi: Option<f64>,
    pub eve_accuracy: Option<f64>,
    pub percept_mse: Option<f64>,
    pub identified_kind: Option<String>,
    pub seed: u64,
}

impl MetricsRecord {
    pub fn new(scenario: impl Into<String>, snr_db: f64, seed: u64) -> Self {
        Self {
            scenario: scenario.into(),
            snr_db,
            an_power: None,
            jsr_db: None,
            comm_mse: None,
            comm_mse_undefended: None,
            privacy_mi: None,
            eve_accuracy: None,
            percept_mse: None,
            identified_kind: None,
            seed,
        }
    }

    fn numeric(&self) -> [(&'static str, Option<f64>); 8] {
        [
            ("snr_db", Some(self.snr_db)),
            ("an_power", self.an_power),
            ("jsr_db", self.jsr_db),
            ("comm_mse", self.comm_mse),
            ("comm_mse_undefended", self.comm_mse_undefended),
            ("privacy_mi", self.privacy_mi),
            ("eve_accuracy", self.eve_accuracy),
            ("percept_mse", self.percept_mse),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.numeric() {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{} row (snr {}, seed {}): {name} is not finite",
                    self.scenario, self.snr_db, self.seed
                )));
            }
        }
        Ok(())
    }

    /// Scenario name without the arm suffix.
    pub fn base_scenario(&self) -> &str {
        self.scenario.split(':').next().unwrap_or(&self.scenario)
    }

    pub fn arm(&self) -> Option<&str> {
        self.scenario.split_once(':').map(|(_, a)| a)
    }
}

pub fn metrics_csv_bytes(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        r.check_finite()?;
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::Config(format!(
            "{}: header `{header}` does not match the metrics schema",
            path.display()
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::from(e).context(path.display().to_string())))
        .collect()
}

// ---------------------------------------------------------------------------
// Aggregation

/// Seed-averaged metrics at one `(scenario, snr, an_power)` point. Metrics
/// missing from any row stay missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub scenario: String,
    pub snr_db: f64,
    pub an_power: Option<f64>,
    pub jsr_db: Option<f64>,
    pub seeds: usize,
    pub comm_mse: Option<f64>,
    pub comm_mse_undefended: Option<f64>,
    pub privacy_mi: Option<f64>,
    pub eve_accuracy: Option<f64>,
    pub eve_accuracy_min: Option<f64>,
    pub percept_mse: Option<f64>,
    pub percept_mse_max: Option<f64>,
    pub identified_kind: Option<String>,
}

fn mean_of(rows: &[&MetricsRecord], f: impl Fn(&MetricsRecord) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = rows.iter().map(|r| f(r)).collect();
    vals.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn extreme_of(rows: &[&MetricsRecord], f: impl Fn(&MetricsRecord) -> Option<f64>, max: bool) -> Option<f64> {
    let vals: Option<Vec<f64>> = rows.iter().map(|r| f(r)).collect();
    vals.and_then(|v| {
        v.into_iter()
            .reduce(|a, b| if (b > a) == max { b } else { a })
    })
}

fn modal(rows: &[&MetricsRecord]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        if let Some(k) = &r.identified_kind {
            *counts.entry(k).or_default() += 1;
        }
    }
    // ties go to the alphabetically first kind
    counts
        .into_iter()
        .fold(None, |best: Option<(&str, usize)>, (k, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((k, c)),
        })
        .map(|(k, _)| k.to_string())
}

/// Groups rows by `(scenario, snr, an_power)` in first-appearance order.
pub fn aggregate(records: &[MetricsRecord]) -> Vec<Aggregate> {
    let mut order: Vec<(String, u64, Option<u64>)> = Vec::new();
    let mut groups: BTreeMap<(String, u64, Option<u64>), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.scenario.clone(), r.snr_db.to_bits(), r.an_power.map(f64::to_bits));
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rows = &groups[&key];
            Aggregate {
                scenario: key.0.clone(),
                snr_db: rows[0].snr_db,
                an_power: rows[0].an_power,
                jsr_db: rows[0].jsr_db,
                seeds: rows.len(),
                comm_mse: mean_of(rows, |r| r.comm_mse),
                comm_mse_undefended: mean_of(rows, |r| r.comm_mse_undefended),
                privacy_mi: mean_of(rows, |r| r.privacy_mi),
                eve_accuracy: mean_of(rows, |r| r.eve_accuracy),
                eve_accuracy_min: extreme_of(rows, |r| r.eve_accuracy, false),
                percept_mse: mean_of(rows, |r| r.percept_mse),
                percept_mse_max: extreme_of(rows, |r| r.percept_mse, true),
                identified_kind: modal(rows),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Acceptance verdicts

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotApplicable => "N/A",
        }
    }

    fn of(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub id: &'static str,
    pub status: Status,
    pub detail: String,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.id, self.status.label(), self.detail)
    }
}

fn na(id: &'static str, detail: impl Into<String>) -> Verdict {
    Verdict {
        id,
        status: Status::NotApplicable,
        detail: detail.into(),
    }
}

fn verdict(id: &'static str, ok: bool, detail: String) -> Verdict {
    Verdict {
        id,
        status: Status::of(ok),
        detail,
    }
}

pub const A1_MSE_LIMIT: f64 = 0.02;
pub const A3_MAX_AN: f64 = 0.09;
pub const A3_ACCURACY_LIMIT: f64 = 0.30;
pub const A3_PERCEPT_LIMIT: f64 = 0.1;
pub const A4_MI_LIMIT: f64 = 0.1;
pub const A4_SLACK: f64 = 0.05;
pub const A5_UNDEFENDED_FACTOR: f64 = 5.0;
pub const A5_CLOSENESS: f64 = 0.2;

fn rows_of<'a>(aggs: &'a [Aggregate], scenario: &str) -> Vec<&'a Aggregate> {
    aggs.iter().filter(|a| a.scenario == scenario).collect()
}

fn snrs(rows: &[&Aggregate]) -> Vec<f64> {
    let mut s: Vec<f64> = rows.iter().map(|a| a.snr_db).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

fn at_snr<'a>(rows: &[&'a Aggregate], snr: f64) -> Vec<&'a Aggregate> {
    let mut r: Vec<&Aggregate> = rows.iter().copied().filter(|a| a.snr_db == snr).collect();
    r.sort_by(|a, b| a.an_power.unwrap_or(0.0).total_cmp(&b.an_power.unwrap_or(0.0)));
    r
}

fn check_a1(aggs: &[Aggregate]) -> Verdict {
    let rows = rows_of(aggs, "baseline");
    let Some(a) = rows.iter().find(|a| a.snr_db == 10.0) else {
        return na("A1", "no baseline rows at 10 dB");
    };
    match a.comm_mse_undefended {
        Some(m) => verdict(
            "A1",
            m <= A1_MSE_LIMIT,
            format!("baseline MSE at 10 dB = {m:.5} (limit {A1_MSE_LIMIT}, {} seeds)", a.seeds),
        ),
        None => na("A1", "baseline rows lack comm_mse_undefended"),
    }
}

fn check_a3(aggs: &[Aggregate]) -> Verdict {
    let rows = rows_of(aggs, "eavesdrop_adversarial");
    if rows.is_empty() {
        return na("A3", "no eavesdrop_adversarial rows");
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for snr in snrs(&rows) {
        let pts = at_snr(&rows, snr);
        let Some(op) = pts
            .iter()
            .filter(|a| a.an_power.is_some_and(|p| p > 0.0 && p <= A3_MAX_AN))
            .last()
        else {
            ok = false;
            parts.push(format!("{snr} dB: no AN power in (0, {A3_MAX_AN}]"));
            continue;
        };
        let acc = op.eve_accuracy.unwrap_or(f64::NAN);
        let (def, und) = (
            op.comm_mse.unwrap_or(f64::NAN),
            op.comm_mse_undefended.unwrap_or(f64::NAN),
        );
        let percept = pts
            .iter()
            .filter(|a| a.an_power.is_some_and(|p| p <= A3_MAX_AN))
            .filter_map(|a| a.percept_mse_max)
            .fold(0.0, f64::max);
        ok &= acc <= A3_ACCURACY_LIMIT && def <= und && percept < A3_PERCEPT_LIMIT;
        parts.push(format!(
            "{snr} dB @ AN {}: eve acc {acc:.3}, bob MSE {def:.5} (undefended {und:.5}), max percept {percept:.4}",
            op.an_power.unwrap_or(f64::NAN)
        ));
    }
    verdict("A3", ok, parts.join("; "))
}

fn check_a4(aggs: &[Aggregate]) -> Verdict {
    let rows = rows_of(aggs, "eavesdrop_gaussian");
    if rows.is_empty() {
        return na("A4", "no eavesdrop_gaussian rows");
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for snr in snrs(&rows) {
        let mi: Vec<(f64, f64)> = at_snr(&rows, snr)
            .iter()
            .map(|a| (a.an_power.unwrap_or(0.0), a.privacy_mi.unwrap_or(f64::NAN)))
            .collect();
        let (top_p, top_mi) = *mi.last().expect("non-empty group");
        let worst_rise = mi
            .windows(2)
            .map(|w| w[1].1 - w[0].1)
            .fold(f64::NEG_INFINITY, f64::max);
        let monotone = mi.windows(2).all(|w| w[1].1 <= w[0].1 + A4_SLACK);
        ok &= top_mi <= A4_MI_LIMIT && monotone;
        parts.push(format!(
            "{snr} dB: MI {top_mi:.4} nats at AN {top_p}, largest step rise {}",
            if mi.len() > 1 { format!("{worst_rise:.4}") } else { "-".into() }
        ));
    }
    verdict("A4", ok, parts.join("; "))
}

fn arm<'a>(aggs: &'a [Aggregate], scenario: &str, arm: &str, snr: f64) -> Option<&'a Aggregate> {
    let name = format!("{scenario}:{arm}");
    aggs.iter().find(|a| a.scenario == name && a.snr_db == snr)
}

fn check_a5(aggs: &[Aggregate]) -> Verdict {
    let nj_rows = rows_of(aggs, "jam_highpower:no_jamming");
    if nj_rows.is_empty() {
        return na("A5", "no jam_highpower rows");
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for snr in snrs(&nj_rows) {
        let get = |name: &str| arm(aggs, "jam_highpower", name, snr);
        let (Some(nj), Some(und), Some(dif), Some(cf)) =
            (get("no_jamming"), get("undefended"), get("diffusion_only"), get("coarse_fine"))
        else {
            ok = false;
            parts.push(format!("{snr} dB: missing arm"));
            continue;
        };
        let nan = f64::NAN;
        let reference = nj.comm_mse_undefended.unwrap_or(nan);
        let reference_denoised = nj.comm_mse.unwrap_or(nan);
        let (u, d, c) = (
            und.comm_mse.unwrap_or(nan),
            dif.comm_mse.unwrap_or(nan),
            cf.comm_mse.unwrap_or(nan),
        );
        ok &= u >= A5_UNDEFENDED_FACTOR * reference
            && c < d
            && d < u
            && (c - reference).abs() <= A5_CLOSENESS * reference;
        parts.push(format!(
            "{snr} dB: no-jamming {reference:.5} (denoised {reference_denoised:.5}), undefended {u:.5}, \
             diffusion-only {d:.5}, coarse+fine {c:.5} ({:+.1}% vs no-jamming)",
            100.0 * (c / reference - 1.0)
        ));
    }
    verdict("A5", ok, parts.join("; "))
}

fn check_a6(aggs: &[Aggregate]) -> Verdict {
    let base = rows_of(aggs, "jam_adversarial:undefended");
    if base.is_empty() {
        return na("A6", "no jam_adversarial rows");
    }
    let mut ok = true;
    let mut parts = Vec::new();
    let mut gains = Vec::new();
    for snr in snrs(&base) {
        let (Some(und), Some(def)) = (
            arm(aggs, "jam_adversarial", "undefended", snr),
            arm(aggs, "jam_adversarial", "defended", snr),
        ) else {
            ok = false;
            parts.push(format!("{snr} dB: missing arm"));
            continue;
        };
        let (u, d) = (und.comm_mse.unwrap_or(f64::NAN), def.comm_mse.unwrap_or(f64::NAN));
        ok &= d < u;
        gains.push(u - d);
        parts.push(format!("{snr} dB: undefended {u:.5}, defended {d:.5}"));
    }
    if let (Some(lo), Some(hi)) = (gains.first(), gains.last()) {
        ok &= lo >= hi;
        parts.push(format!("gain at lowest SNR {lo:.5} vs highest {hi:.5}"));
    }
    verdict("A6", ok, parts.join("; "))
}

/// Per-SNR allocation over the eavesdropping grid, using seed-averaged
/// metrics as the evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationRow {
    pub scenario: String,
    pub snr_db: f64,
    pub an_power: f64,
    pub metrics: PowerMetrics,
    pub objective: f64,
    pub selected: bool,
}

pub fn allocations(aggs: &[Aggregate], w: &AllocationWeights) -> Result<Vec<AllocationRow>> {
    let mut out = Vec::new();
    for scenario in ["eavesdrop_gaussian", "eavesdrop_adversarial"] {
        let rows = rows_of(aggs, scenario);
        for snr in snrs(&rows) {
            let pts = at_snr(&rows, snr);
            let complete: Option<Vec<(f64, PowerMetrics)>> = pts
                .iter()
                .map(|a| {
                    Some((
                        a.an_power?,
                        PowerMetrics {
                            privacy_mi: a.privacy_mi?,
                            comm_mse: a.comm_mse?,
                            percept_mse: a.percept_mse?,
                        },
                    ))
                })
                .collect();
            let Some(points) = complete else { continue };
            let grid: Vec<f64> = points.iter().map(|p| p.0).collect();
            let res = allocate_power(
                &grid,
                |p| {
                    Ok(points
                        .iter()
                        .find(|q| q.0 == p)
                        .expect("grid drawn from points")
                        .1)
                },
                w,
            )?;
            out.extend(res.table.iter().map(|g| AllocationRow {
                scenario: scenario.to_string(),
                snr_db: snr,
                an_power: g.an_power,
                metrics: g.metrics,
                objective: g.objective,
                selected: g.an_power == res.an_power,
            }));
        }
    }
    Ok(out)
}

/// Brute-force re-evaluation of the weighted objective, written without
/// the allocation code path.
fn exhaustive_choice(rows: &[&AllocationRow], w: &AllocationWeights) -> f64 {
    let span = |f: &dyn Fn(&AllocationRow) -> f64| {
        let vals: Vec<f64> = rows.iter().map(|r| f(r)).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let scale = |v: f64, (lo, hi): (f64, f64)| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
    let s_mi = span(&|r| r.metrics.privacy_mi);
    let s_mse = span(&|r| r.metrics.comm_mse);
    let s_per = span(&|r| r.metrics.percept_mse);
    let mut best: Option<(f64, f64)> = None;
    for r in rows {
        let j = w.security() * scale(r.metrics.privacy_mi, s_mi)
            + w.reliability() * scale(r.metrics.comm_mse, s_mse)
            + w.covertness() * scale(r.metrics.percept_mse, s_per);
        best = match best {
            Some((bj, bp)) if bj < j || (bj == j && bp <= r.an_power) => Some((bj, bp)),
            _ => Some((j, r.an_power)),
        };
    }
    best.map_or(f64::NAN, |b| b.1)
}

fn check_a8(allocs: &[AllocationRow], w: &AllocationWeights) -> Verdict {
    if allocs.is_empty() {
        return na("A8", "no eavesdropping grid to allocate over");
    }
    let mut ok = true;
    let mut parts = Vec::new();
    let mut keys: Vec<(&str, f64)> = allocs.iter().map(|r| (r.scenario.as_str(), r.snr_db)).collect();
    keys.dedup();
    for (scenario, snr) in keys {
        let rows: Vec<&AllocationRow> = allocs
            .iter()
            .filter(|r| r.scenario == scenario && r.snr_db == snr)
            .collect();
        let chosen = rows.iter().find(|r| r.selected).map_or(f64::NAN, |r| r.an_power);
        let brute = exhaustive_choice(&rows, w);
        ok &= chosen == brute;
        parts.push(format!("{scenario} {snr} dB: grid search {chosen}, exhaustive {brute}"));
    }
    verdict("A8", ok, parts.join("; "))
}

/// Acceptance lines A1..A9 derived from `records`. Criteria that do not
/// depend on experiment data are reported as N/A here and exercised by the
/// test suite.
pub fn evaluate(records: &[MetricsRecord], w: &AllocationWeights, csv_digest: Option<&str>) -> Result<Vec<Verdict>> {
    let aggs = aggregate(records);
    let allocs = allocations(&aggs, w)?;
    Ok(vec![
        check_a1(&aggs),
        na("A2", "schedule algebra has no run-time data; covered by the test suite"),
        check_a3(&aggs),
        check_a4(&aggs),
        check_a5(&aggs),
        check_a6(&aggs),
        na("A7", "identification corpus is not part of a run; covered by the test suite"),
        check_a8(&allocs, w),
        na(
            "A9",
            match csv_digest {
                Some(d) => format!("metrics.csv sha256 {d}; compare against a repeated run"),
                None => "requires a repeated run".to_string(),
            },
        ),
    ])
}

/// Aggregate table, one line per `(scenario, snr, an_power)`.
pub fn summary_table(aggs: &[Aggregate]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<36} {:>7} {:>8} {:>7} {:>5} {:>10} {:>10} {:>9} {:>9} {:>9} {:>9}  {}",
        "scenario",
        "snr_db",
        "an_power",
        "jsr_db",
        "seeds",
        "comm_mse",
        "mse_undef",
        "mi",
        "eve_acc",
        "eve_min",
        "percept",
        "kind"
    );
    for a in aggs {
        let o = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |v| format!("{v:.p$}"));
        let _ = writeln!(
            s,
            "{:<36} {:>7} {:>8} {:>7} {:>5} {:>10} {:>10} {:>9} {:>9} {:>9} {:>9}  {}",
            a.scenario,
            a.snr_db,
            a.an_power.map_or_else(|| "-".to_string(), |v| v.to_string()),
            a.jsr_db.map_or_else(|| "-".to_string(), |v| v.to_string()),
            a.seeds,
            o(a.comm_mse, 6),
            o(a.comm_mse_undefended, 6),
            o(a.privacy_mi, 4),
            o(a.eve_accuracy, 4),
            o(a.eve_accuracy_min, 4),
            o(a.percept_mse, 4),
            a.identified_kind.as_deref().unwrap_or("-"),
        );
    }
    s
}

pub fn summary_text(records: &[MetricsRecord], w: &AllocationWeights, version: &str, csv_digest: Option<&str>) -> Result<String> {
    let mut s = format!("{version}\n\n");
    s.push_str(&summary_table(&aggregate(records)));
    s.push('\n');
    for v in evaluate(records, w, csv_digest)? {
        let _ = writeln!(s, "{v}");
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// Files

const PLOT_HEADER: [&str; 11] = [
    "snr_db",
    "an_power",
    "jsr_db",
    "seeds",
    "comm_mse",
    "comm_mse_undefended",
    "privacy_mi",
    "eve_accuracy",
    "percept_mse",
    "eve_accuracy_min",
    "identified_kind",
];

fn plot_csv(rows: &[&Aggregate]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PLOT_HEADER)?;
    let f = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for a in rows {
        w.write_record([
            a.snr_db.to_string(),
            f(a.an_power),
            f(a.jsr_db),
            a.seeds.to_string(),
            f(a.comm_mse),
            f(a.comm_mse_undefended),
            f(a.privacy_mi),
            f(a.eve_accuracy),
            f(a.percept_mse),
            f(a.eve_accuracy_min),
            a.identified_kind.clone().unwrap_or_default(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn allocation_csv(rows: &[AllocationRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scenario",
        "snr_db",
        "an_power",
        "privacy_mi",
        "comm_mse",
        "percept_mse",
        "objective",
        "selected",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.snr_db.to_string(),
            r.an_power.to_string(),
            r.metrics.privacy_mi.to_string(),
            r.metrics.comm_mse.to_string(),
            r.metrics.percept_mse.to_string(),
            r.objective.to_string(),
            u8::from(r.selected).to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Plot-data files keyed by file name. Each scenario (arm) gets a
/// `_vs_snr` projection ordered by AN power then SNR, and scenarios with
/// an AN grid also get a `_vs_an_power` projection ordered by SNR then
/// power.
pub fn plot_files(aggs: &[Aggregate]) -> Result<Vec<(String, Vec<u8>)>> {
    let mut names: Vec<&str> = aggs.iter().map(|a| a.scenario.as_str()).collect();
    names.dedup();
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for name in names {
        if seen.contains(&name) {
            continue;
        }
        seen.push(name);
        let stem = name.replace(':', "_");
        let mut rows = rows_of(aggs, name);
        let key = |a: &Aggregate| a.an_power.unwrap_or(0.0);
        rows.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.snr_db.total_cmp(&b.snr_db)));
        out.push((format!("{stem}_vs_snr.csv"), plot_csv(&rows)?));
        if rows.iter().any(|a| a.an_power.is_some()) {
            rows.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db).then(key(a).total_cmp(&key(b))));
            out.push((format!("{stem}_vs_an_power.csv"), plot_csv(&rows)?));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeta<'a> {
    pub version: &'a str,
    pub config: &'a serde_json::Value,
}

/// Everything [`emit_report`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub meta: PathBuf,
    pub allocation: Option<PathBuf>,
    pub plots: Vec<PathBuf>,
    pub verdicts: Vec<Verdict>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

/// Writes `metrics.csv`, `metrics.meta.json`, `summary.txt`,
/// `allocation.csv` (when an AN grid is present) and `plots/*.csv`. All
/// content is rendered before the first file is created.
pub fn emit_report(
    records: &[MetricsRecord],
    out_dir: &Path,
    w: &AllocationWeights,
    meta: &RunMeta<'_>,
) -> Result<ReportFiles> {
    if records.is_empty() {
        return Err(Error::Degenerate("no metrics records to report"));
    }
    let csv_bytes = metrics_csv_bytes(records)?;
    let digest = format!("{:x}", Sha256::digest(&csv_bytes));
    let aggs = aggregate(records);
    let allocs = allocations(&aggs, w)?;
    let verdicts = evaluate(records, w, Some(&digest))?;
    let summary = summary_text(records, w, meta.version, Some(&digest))?;
    let meta_bytes = serde_json::to_vec_pretty(meta)?;
    let plots = plot_files(&aggs)?;
    let alloc_bytes = if allocs.is_empty() { None } else { Some(allocation_csv(&allocs)?) };

    let plot_dir = out_dir.join("plots");
    std::fs::create_dir_all(&plot_dir)
        .map_err(|e| Error::from(e).context(format!("creating {}", plot_dir.display())))?;
    let files = ReportFiles {
        metrics: out_dir.join("metrics.csv"),
        summary: out_dir.join("summary.txt"),
        meta: out_dir.join("metrics.meta.json"),
        allocation: alloc_bytes.as_ref().map(|_| out_dir.join("allocation.csv")),
        plots: plots.iter().map(|(n, _)| plot_dir.join(n)).collect(),
        verdicts,
    };
    write(&files.metrics, &csv_bytes)?;
    write(&files.meta, &meta_bytes)?;
    write(&files.summary, summary.as_bytes())?;
    if let (Some(path), Some(bytes)) = (&files.allocation, &alloc_bytes) {
        write(path, bytes)?;
    }
    for (path, (_, bytes)) in files.plots.iter().zip(&plots) {
        write(path, bytes)?;
    }
    Ok(files)
}
