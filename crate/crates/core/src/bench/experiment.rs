use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::corpus::{bundled_word_counts, load_word_counts, top_values, Corpus};
use super::fpr::fpr_curve;
use super::oracle::{Oracle, OracleCount};
use super::synthetic::{corrupt_value, make_synthetic};
use crate::encoding::Value;
use crate::error::{Error, Result};
use crate::method::{MethodRegistry, MethodSettings};
use crate::rng;

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Which records clients report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestSource {
    Original,
    /// Half of every value's occurrences replaced by similar variants.
    Synthetic,
}

/// Where query values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySource {
    /// Distinct values of the base corpus.
    Original,
    /// A corrupted variant of each sampled base value.
    Corrupted,
    /// Distinct values of the ingested corpus.
    Ingested,
}

/// Which oracle count an estimate is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Exact,
    Fuzzy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Word-count file; the bundled sample when absent.
    pub dataset: Option<PathBuf>,
    /// Keep only the most frequent values; 0 keeps all.
    pub max_words: usize,
    pub clients: u64,
    pub methods: Vec<String>,
    pub epsilons: Vec<f64>,
    pub segments: Vec<usize>,
    /// Seeds `seed, seed + 1, ...`.
    pub repetitions: usize,
    /// Distinct query values per seed; 0 queries every candidate.
    pub queries: usize,
    pub ingest: IngestSource,
    pub query_source: QuerySource,
    pub truth: Truth,
    /// Similarity threshold for corruption, oracle and queries.
    pub s_t: f64,
    pub corrupt_fraction: f64,
    /// Record wall-clock columns; off makes every CSV reproducible.
    pub timing: bool,
    pub fpr_checkpoints: Vec<usize>,
    pub fpr_probes: usize,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub settings: MethodSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            dataset: None,
            max_words: 0,
            clients: 10_000,
            methods: vec!["ppcf".into(), "rappor".into(), "cms".into()],
            epsilons: vec![6.0],
            segments: vec![5],
            repetitions: 1,
            queries: 200,
            ingest: IngestSource::Original,
            query_source: QuerySource::Original,
            truth: Truth::Exact,
            s_t: 0.8,
            corrupt_fraction: 0.5,
            timing: true,
            fpr_checkpoints: Vec::new(),
            fpr_probes: 500,
            threads: 0,
            settings: MethodSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64)
            .map(|i| self.seed + i)
            .collect()
    }

    pub fn validate(&self, registry: &MethodRegistry) -> Result<()> {
        for m in &self.methods {
            if !registry.contains(m) {
                return Err(Error::UnknownMethod(m.clone()));
            }
        }
        if self.epsilons.is_empty() || self.segments.is_empty() || self.repetitions == 0 {
            return Err(Error::Config(
                "epsilons, segments and repetitions must be non-empty".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.s_t) || self.s_t == 0.0 {
            return Err(Error::Config(format!(
                "s_t must lie in (0, 1], got {}",
                self.s_t
            )));
        }
        if self.fpr_checkpoints.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("fpr_checkpoints must be ascending".into()));
        }
        if let Some(p) = &self.dataset {
            if !p.exists() {
                return Err(Error::Config(format!("dataset {} not found", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub method: String,
    pub epsilon: f64,
    pub m: usize,
    pub seed: u64,
    pub query: String,
    pub true_exact: u64,
    pub true_fuzzy: u64,
    pub estimate: f64,
    pub abs_error: f64,
    pub latency_ns: Option<u64>,
    pub n_inserted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: String,
    pub epsilon: f64,
    pub m: usize,
    pub seed: u64,
    pub operation: &'static str,
    pub ops: usize,
    pub cumulative_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FprRow {
    pub method: String,
    pub epsilon: f64,
    pub m: usize,
    pub seed: u64,
    pub n_inserted: usize,
    pub probes: usize,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub epsilon: f64,
    pub m: usize,
    pub seeds: usize,
    pub queries: usize,
    /// Median over all pooled queries.
    pub median_abs_error: f64,
    pub mean_abs_error: f64,
    pub median_truth: f64,
    /// Mean and standard error of the per-seed medians.
    pub seed_median_mean: f64,
    pub seed_median_se: f64,
    pub insert_ns_per_op: Option<f64>,
    pub query_ns_per_op: Option<f64>,
}

/// Everything one (method, ε, m, seed) cell produced.
#[derive(Debug, Clone, Default)]
pub struct CellResult {
    pub records: Vec<ExperimentRecord>,
    pub timing: Vec<TimingRow>,
    pub fpr: Vec<FprRow>,
    pub insert_ops: usize,
    pub insert_ns: u64,
    pub query_ns: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResults {
    pub records: Vec<ExperimentRecord>,
    pub timing: Vec<TimingRow>,
    pub fpr: Vec<FprRow>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell<'a> {
    method: &'a str,
    epsilon: f64,
    m: usize,
    seed: u64,
}

/// Data shared by every cell of one seed.
struct SeedData {
    ingest: Corpus,
    queries: Vec<(String, OracleCount)>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn base_counts(cfg: &ExperimentConfig) -> Result<Vec<(String, u64)>> {
    let counts = match &cfg.dataset {
        Some(p) => load_word_counts(p)?,
        None => bundled_word_counts(),
    };
    if counts.is_empty() {
        return Err(Error::Config("dataset holds no values".into()));
    }
    Ok(top_values(counts, cfg.max_words))
}

fn seed_data(cfg: &ExperimentConfig, counts: &[(String, u64)], seed: u64) -> Result<SeedData> {
    let q = cfg.settings.encoder.q;
    let base = Corpus::from_counts(counts, cfg.clients, &mut rng::derive(seed, "corpus", 0))?;
    let ingest = match cfg.ingest {
        IngestSource::Original => base.clone(),
        IngestSource::Synthetic => make_synthetic(
            &base,
            cfg.s_t,
            q,
            cfg.corrupt_fraction,
            &mut rng::derive(seed, "synthetic", 0),
        )?,
    }
    .dedup_per_client();

    let candidates: Vec<String> = match cfg.query_source {
        QuerySource::Original | QuerySource::Corrupted => base.counts().into_keys().collect(),
        QuerySource::Ingested => ingest.counts().into_keys().collect(),
    };
    let mut pick_rng = rng::derive(seed, "queries", 0);
    let mut picked: Vec<usize> = if cfg.queries == 0 || cfg.queries >= candidates.len() {
        (0..candidates.len()).collect()
    } else {
        index::sample(&mut pick_rng, candidates.len(), cfg.queries).into_vec()
    };
    picked.sort_unstable();
    let mut queries: Vec<String> = picked.into_iter().map(|i| candidates[i].clone()).collect();
    if cfg.query_source == QuerySource::Corrupted {
        let mut crng = rng::derive(seed, "corrupt-queries", 0);
        for qv in &mut queries {
            *qv = corrupt_value(qv, cfg.s_t, q, &mut crng)?.value;
        }
    }
    let oracle = Oracle::new(&ingest, q);
    let queries = queries
        .into_iter()
        .map(|v| {
            let c = oracle.count(&v, cfg.s_t);
            (v, c)
        })
        .collect();
    Ok(SeedData { ingest, queries })
}

const TIMING_POINTS: usize = 50;

fn timing_rows(cell: &Cell, op: &'static str, cumulative: &[u64]) -> Vec<TimingRow> {
    let n = cumulative.len();
    if n == 0 {
        return Vec::new();
    }
    let step = n.div_ceil(TIMING_POINTS).max(1);
    let mut idx: Vec<usize> = (step..=n).step_by(step).collect();
    if idx.last() != Some(&n) {
        idx.push(n);
    }
    idx.into_iter()
        .map(|ops| TimingRow {
            method: cell.method.to_string(),
            epsilon: cell.epsilon,
            m: cell.m,
            seed: cell.seed,
            operation: op,
            ops,
            cumulative_ns: cumulative[ops - 1],
        })
        .collect()
}

fn run_cell(
    cfg: &ExperimentConfig,
    registry: &MethodRegistry,
    settings: &MethodSettings,
    data: &SeedData,
    cell: Cell,
) -> Result<CellResult> {
    let mut s = settings.clone();
    s.mechanism.epsilon = cell.epsilon;
    s.mechanism.m = cell.m;
    s.mechanism.s_t = cfg.s_t;
    let label = format!("cell:{}:{}:{}", cell.method, cell.epsilon, cell.m);
    let mut rng = rng::derive(cell.seed, &label, 0);
    let mut method = registry.create(cell.method, &s)?;
    let mut out = CellResult::default();

    let mut cumulative = Vec::with_capacity(if cfg.timing { data.ingest.len() } else { 0 });
    let mut total_ns = 0u64;
    for r in &data.ingest.records {
        let start = Instant::now();
        if let Some(report) = method.report(r.client, &Value::Text(r.value.clone()), &mut rng)? {
            method.ingest(&report)?;
        }
        if cfg.timing {
            total_ns += start.elapsed().as_nanos() as u64;
            cumulative.push(total_ns);
        }
    }
    out.insert_ops = data.ingest.len();
    out.insert_ns = total_ns;
    if cfg.timing {
        out.timing.extend(timing_rows(&cell, "insert", &cumulative));
    }

    let mut cumulative = Vec::new();
    let mut total_ns = 0u64;
    for (query, truth) in &data.queries {
        let start = Instant::now();
        let estimate = method.estimate(&Value::Text(query.clone()))?;
        let latency = start.elapsed().as_nanos() as u64;
        total_ns += latency;
        cumulative.push(total_ns);
        let target = match cfg.truth {
            Truth::Exact => truth.exact,
            Truth::Fuzzy => truth.fuzzy,
        };
        out.records.push(ExperimentRecord {
            method: cell.method.to_string(),
            epsilon: cell.epsilon,
            m: cell.m,
            seed: cell.seed,
            query: query.clone(),
            true_exact: truth.exact,
            true_fuzzy: truth.fuzzy,
            estimate,
            abs_error: (estimate - target as f64).abs(),
            latency_ns: cfg.timing.then_some(latency),
            n_inserted: data.ingest.len(),
        });
    }
    if cfg.timing {
        out.query_ns = total_ns;
        out.timing.extend(timing_rows(&cell, "query", &cumulative));
    }

    if !cfg.fpr_checkpoints.is_empty() {
        let mut fresh = registry.create(cell.method, &s)?;
        let mut frng = rng::derive(cell.seed, &format!("fpr:{label}"), 0);
        for (n, fpr) in fpr_curve(
            fresh.as_mut(),
            &cfg.fpr_checkpoints,
            cfg.fpr_probes,
            cfg.s_t,
            &mut frng,
        )? {
            out.fpr.push(FprRow {
                method: cell.method.to_string(),
                epsilon: cell.epsilon,
                m: cell.m,
                seed: cell.seed,
                n_inserted: n,
                probes: cfg.fpr_probes,
                fpr,
            });
        }
    }
    Ok(out)
}

fn summarize(cfg: &ExperimentConfig, cells: &[(Cell, CellResult)]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for method in &cfg.methods {
        for &epsilon in &cfg.epsilons {
            for &m in &cfg.segments {
                let group: Vec<&CellResult> = cells
                    .iter()
                    .filter(|(c, _)| c.method == method && c.epsilon == epsilon && c.m == m)
                    .map(|(_, r)| r)
                    .collect();
                let mut errors: Vec<f64> = group
                    .iter()
                    .flat_map(|r| r.records.iter().map(|x| x.abs_error))
                    .collect();
                let mut truths: Vec<f64> = group
                    .iter()
                    .flat_map(|r| r.records.iter())
                    .map(|x| match cfg.truth {
                        Truth::Exact => x.true_exact as f64,
                        Truth::Fuzzy => x.true_fuzzy as f64,
                    })
                    .collect();
                let per_seed: Vec<f64> = group
                    .iter()
                    .map(|r| median(&mut r.records.iter().map(|x| x.abs_error).collect::<Vec<_>>()))
                    .collect();
                let k = per_seed.len() as f64;
                let mean = per_seed.iter().sum::<f64>() / k;
                let se = if per_seed.len() > 1 {
                    (per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) / k)
                        .sqrt()
                } else {
                    0.0
                };
                let n_ins: usize = group.iter().map(|r| r.insert_ops).sum();
                let n_q = errors.len();
                let ins_ns: u64 = group.iter().map(|r| r.insert_ns).sum();
                let q_ns: u64 = group.iter().map(|r| r.query_ns).sum();
                rows.push(SummaryRow {
                    method: method.clone(),
                    epsilon,
                    m,
                    seeds: group.len(),
                    queries: n_q,
                    mean_abs_error: errors.iter().sum::<f64>() / n_q.max(1) as f64,
                    median_abs_error: median(&mut errors),
                    median_truth: median(&mut truths),
                    seed_median_mean: mean,
                    seed_median_se: se,
                    insert_ns_per_op: (cfg.timing && n_ins > 0)
                        .then(|| ins_ns as f64 / n_ins as f64),
                    query_ns_per_op: (cfg.timing && n_q > 0).then(|| q_ns as f64 / n_q as f64),
                });
            }
        }
    }
    rows
}

/// Runs every (method, ε, m, seed) cell, handing each finished cell to
/// `sink` in grid order.
pub fn run_cells(
    cfg: &ExperimentConfig,
    registry: &MethodRegistry,
    sink: &mut dyn FnMut(&CellResult) -> Result<()>,
) -> Result<ExperimentResults> {
    cfg.validate(registry)?;
    let counts = base_counts(cfg)?;
    let mut settings = cfg.settings.clone();
    settings.mechanism.s_t = cfg.s_t;
    if cfg.methods.iter().any(|m| m == "ppcf") && settings.dictionary.is_none() {
        settings.dictionary = Some(settings.dictionary()?);
    }
    let seeds = cfg.seeds();
    let data: Vec<SeedData> = seeds
        .iter()
        .map(|&s| seed_data(cfg, &counts, s))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for method in &cfg.methods {
        for &epsilon in &cfg.epsilons {
            for &m in &cfg.segments {
                for (i, &seed) in seeds.iter().enumerate() {
                    cells.push((
                        Cell {
                            method,
                            epsilon,
                            m,
                            seed,
                        },
                        i,
                    ));
                }
            }
        }
    }

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if cfg.threads > 0 {
            b = b.num_threads(cfg.threads);
        }
        b.build().map_err(|e| Error::Config(e.to_string()))?
    };
    let chunk = pool.current_num_threads().max(1);
    let mut done: Vec<(Cell, CellResult)> = Vec::with_capacity(cells.len());
    for batch in cells.chunks(chunk) {
        let results: Vec<Result<CellResult>> = pool.install(|| {
            use rayon::prelude::*;
            batch
                .par_iter()
                .map(|(cell, i)| run_cell(cfg, registry, &settings, &data[*i], *cell))
                .collect()
        });
        for ((cell, _), result) in batch.iter().zip(results) {
            let result = result?;
            sink(&result)?;
            done.push((*cell, result));
        }
    }

    let summary = summarize(cfg, &done);
    let mut out = ExperimentResults {
        summary,
        ..Default::default()
    };
    for (_, r) in done {
        out.records.extend(r.records);
        out.timing.extend(r.timing);
        out.fpr.extend(r.fpr);
    }
    Ok(out)
}

/// In-memory run without output files.
pub fn run_in_memory(
    cfg: &ExperimentConfig,
    registry: &MethodRegistry,
) -> Result<ExperimentResults> {
    run_cells(cfg, registry, &mut |_| Ok(()))
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(dir.join(name))?)
}

/// Runs the grid and writes `records.csv`, `timing.csv` (when timing is
/// on), `fpr.csv`, `summary.csv` and the resolved `config.toml` to `out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    registry: &MethodRegistry,
    out: &Path,
) -> Result<ExperimentResults> {
    cfg.validate(registry)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("config.toml"),
        format!("# csv schema {CSV_SCHEMA_VERSION}\n{}", cfg.to_toml()),
    )?;
    let mut records = writer(out, "records.csv")?;
    let mut timing = if cfg.timing {
        Some(writer(out, "timing.csv")?)
    } else {
        None
    };
    let mut fpr = writer(out, "fpr.csv")?;
    let results = run_cells(cfg, registry, &mut |cell| {
        for r in &cell.records {
            records.serialize(r)?;
        }
        records.flush()?;
        if let Some(t) = timing.as_mut() {
            for r in &cell.timing {
                t.serialize(r)?;
            }
            t.flush()?;
        }
        for r in &cell.fpr {
            fpr.serialize(r)?;
        }
        fpr.flush()?;
        Ok(())
    })?;
    let mut summary = writer(out, "summary.csv")?;
    for row in &results.summary {
        summary.serialize(row)?;
    }
    summary.flush()?;
    Ok(results)
}
