//! Overlap diagnostics between output, base and attribute distributions, and
//! the control-strength and training-volume sweeps built on top of them.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decode::{
    generate_with_rng, CompositionMode, GenerationConfig, GenerationTrace, StepRecord, TopEntry,
};
use crate::dist::{top_ids, TokenDist};
use crate::ensemble::{AttributeEnsemble, AttributePreset, EnsembleConfig};
use crate::error::{Error, Result};
use crate::metrics::{bayes_classify, distinctness, retokenize};
use crate::ngram::NGramModel;
use crate::par;
use crate::sampling::{sequence_rng, SamplerConfig};
use crate::vocab::TokenId;

/// The `k` highest-probability ids, ties by ascending id.
pub fn top_set(dist: &TokenDist, k: usize) -> Result<Vec<TokenId>> {
    if k < 1 || k > dist.len() {
        return Err(Error::Config(format!(
            "top-set size {k} outside 1..={}",
            dist.len()
        )));
    }
    Ok(top_ids(dist.probs(), k))
}

/// Top-k sets of the output (`S_o`), base (`S_r`) and attribute (`S_a`) distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TopSets {
    pub output: HashSet<TokenId>,
    pub raw: HashSet<TokenId>,
    pub attribute: HashSet<TokenId>,
    pub k: usize,
}

impl TopSets {
    pub fn from_dists(
        output: &TokenDist,
        raw: &TokenDist,
        attribute: &TokenDist,
        k: usize,
    ) -> Result<Self> {
        Ok(TopSets {
            output: top_set(output, k)?.into_iter().collect(),
            raw: top_set(raw, k)?.into_iter().collect(),
            attribute: top_set(attribute, k)?.into_iter().collect(),
            k,
        })
    }

    pub fn from_ids(
        output: impl IntoIterator<Item = TokenId>,
        raw: impl IntoIterator<Item = TokenId>,
        attribute: impl IntoIterator<Item = TokenId>,
        k: usize,
    ) -> Self {
        TopSets {
            output: output.into_iter().collect(),
            raw: raw.into_iter().collect(),
            attribute: attribute.into_iter().collect(),
            k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapRatios {
    pub k: usize,
    /// `|S_o ∩ S_r| / |S_o|`
    pub r_or: f64,
    /// `|S_o ∩ S_a| / |S_o|`
    pub r_oa: f64,
    /// `|S_o ∩ S_r ∩ S_a| / |S_o|`
    pub r_ora: f64,
}

impl OverlapRatios {
    pub fn mean<'a>(items: impl Iterator<Item = &'a OverlapRatios>) -> Option<OverlapRatios> {
        let mut n = 0usize;
        let mut acc = OverlapRatios {
            k: 0,
            r_or: 0.0,
            r_oa: 0.0,
            r_ora: 0.0,
        };
        for r in items {
            n += 1;
            acc.k = r.k;
            acc.r_or += r.r_or;
            acc.r_oa += r.r_oa;
            acc.r_ora += r.r_ora;
        }
        (n > 0).then(|| OverlapRatios {
            k: acc.k,
            r_or: acc.r_or / n as f64,
            r_oa: acc.r_oa / n as f64,
            r_ora: acc.r_ora / n as f64,
        })
    }
}

pub fn overlap_ratios(sets: &TopSets) -> Result<OverlapRatios> {
    if sets.output.is_empty() {
        return Err(Error::EmptyInput("output top-set is empty"));
    }
    let n = sets.output.len() as f64;
    let mut or = 0usize;
    let mut oa = 0usize;
    let mut ora = 0usize;
    for id in &sets.output {
        let in_r = sets.raw.contains(id);
        let in_a = sets.attribute.contains(id);
        or += in_r as usize;
        oa += in_a as usize;
        ora += (in_r && in_a) as usize;
    }
    Ok(OverlapRatios {
        k: sets.k,
        r_or: or as f64 / n,
        r_oa: oa as f64 / n,
        r_ora: ora as f64 / n,
    })
}

/// Recomputes per-step overlap ratios from the top-token lists of a saved trace.
///
/// Uses `k` when given, otherwise the `k` logged with each step. Every list
/// must hold at least `k` entries.
pub fn recompute_overlaps(steps: &[StepRecord], k: Option<usize>) -> Result<Vec<OverlapRatios>> {
    steps
        .iter()
        .map(|s| {
            let top = s.top_tokens.as_ref().ok_or_else(|| {
                Error::Config(format!("step {} has no top-token lists", s.step))
            })?;
            let k = k
                .or(s.overlap.map(|o| o.k))
                .ok_or_else(|| Error::Config("no top-set size given or logged".into()))?;
            let take = |entries: &[TopEntry]| -> Result<Vec<TokenId>> {
                if entries.len() < k {
                    return Err(Error::Config(format!(
                        "step {} keeps {} entries, fewer than k = {k}",
                        s.step,
                        entries.len()
                    )));
                }
                Ok(entries[..k].iter().map(|e| e.id).collect())
            };
            let sets = TopSets::from_ids(take(&top.output)?, take(&top.base)?, take(&top.attribute)?, k);
            overlap_ratios(&sets)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub omega: f64,
    pub mode: CompositionMode,
    pub acc: f64,
    pub ppl: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub dist3: f64,
    pub r_or: f64,
    pub r_oa: f64,
    pub r_ora: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub omega: f64,
    pub mode: CompositionMode,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

impl SweepReport {
    pub fn row(&self, omega: f64, mode: CompositionMode) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.omega == omega && r.mode == mode)
    }

    pub fn mode_rows(&self, mode: CompositionMode) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.mode == mode).collect()
    }
}

/// Everything a sweep needs besides the ensemble.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub prompts: Vec<String>,
    pub targets: Vec<String>,
    pub omegas: Vec<f64>,
    pub modes: Vec<CompositionMode>,
    pub samples_per_point: usize,
    /// Supplies `top_k`, `top_p` and `length`; its `omega` is ignored.
    pub preset: AttributePreset,
    /// Top-set size for the overlap ratios.
    pub overlap_k: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl SweepSettings {
    pub fn validate(&self) -> Result<()> {
        if self.omegas.is_empty() || self.modes.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.prompts.is_empty() || self.targets.is_empty() {
            return Err(Error::Config("sweep needs at least one prompt and target".into()));
        }
        if self.samples_per_point == 0 {
            return Err(Error::Config("samples per point must be positive".into()));
        }
        if self.overlap_k == 0 {
            return Err(Error::Config("overlap top-set size must be positive".into()));
        }
        self.preset.validate()
    }

    /// Sample `j` steers toward `targets[j % T]` from `prompts[(j / T) % P]`.
    pub fn request(&self, j: usize) -> (&str, &str) {
        let t = self.targets.len();
        (
            &self.prompts[(j / t) % self.prompts.len()],
            &self.targets[j % t],
        )
    }

    fn generation_config(&self, omega: f64, mode: CompositionMode) -> GenerationConfig {
        GenerationConfig {
            omega,
            mode,
            sampler: SamplerConfig {
                top_k: self.preset.top_k,
                top_p: self.preset.top_p,
                temperature: 1.0,
                seed: self.seed,
            },
            length: self.preset.length,
            stop_at_eos: false,
            trace_top: 0,
            overlap_k: Some(self.overlap_k),
        }
    }
}

/// Scores one grid point's generations. Accuracy uses the ensemble's Bayes
/// classifier on prompt + continuation; perplexity scores the continuation
/// given the prompt under `eval_model`.
pub fn score_traces(
    ensemble: &AttributeEnsemble,
    eval_model: &NGramModel,
    traces: &[GenerationTrace],
) -> Result<(f64, f64, [f64; 3], OverlapRatios)> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("no generations to score"));
    }
    let mut correct = 0usize;
    let mut ppl_sum = 0.0;
    for t in traces {
        let post = bayes_classify(ensemble, &t.full_tokens());
        let best = crate::dist::ranked_ids(&post)[0] as usize;
        if ensemble.labels()[best] == t.target {
            correct += 1;
        }
        let prompt = retokenize(&t.prompt_ids, ensemble.vocab(), eval_model.vocab());
        let text = retokenize(&t.tokens, ensemble.vocab(), eval_model.vocab());
        ppl_sum += eval_model.conditional_perplexity(&prompt, &text)?;
    }
    let texts: Vec<Vec<TokenId>> = traces.iter().map(|t| t.tokens.clone()).collect();
    let dist = [
        distinctness(&texts, 1)?,
        distinctness(&texts, 2)?,
        distinctness(&texts, 3)?,
    ];
    let per_trace: Vec<OverlapRatios> = traces.iter().filter_map(|t| t.mean_overlap()).collect();
    let overlap = OverlapRatios::mean(per_trace.iter())
        .ok_or_else(|| Error::Config("generations carry no overlap diagnostics".into()))?;
    let n = traces.len() as f64;
    Ok((correct as f64 / n, ppl_sum / n, dist, overlap))
}

/// Runs every `(omega, mode)` grid point. Every point reuses the same per-sample
/// RNG streams, so points differ only through the decoding settings.
pub fn omega_sweep(
    ensemble: &AttributeEnsemble,
    eval_model: &NGramModel,
    settings: &SweepSettings,
) -> Result<SweepReport> {
    settings.validate()?;
    for t in &settings.targets {
        ensemble.label_index(t)?;
    }
    let grid: Vec<(f64, CompositionMode)> = settings
        .omegas
        .iter()
        .flat_map(|&w| settings.modes.iter().map(move |&m| (w, m)))
        .collect();
    let per_point = settings.samples_per_point;
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..per_point).map(move |j| (g, j)))
        .collect();

    let traces = par::map_indexed(&tasks, settings.jobs, |_, &(g, j)| {
        let (omega, mode) = grid[g];
        let config = settings.generation_config(omega, mode);
        let (prompt, target) = settings.request(j);
        let mut rng = sequence_rng(settings.seed, j as u64);
        generate_with_rng(ensemble, prompt, target, &config, &mut rng)
    });

    let mut report = SweepReport::default();
    let mut traces = traces.into_iter();
    for &(omega, mode) in &grid {
        let point: Result<Vec<GenerationTrace>> = traces.by_ref().take(per_point).collect();
        let scored = point.and_then(|ts| score_traces(ensemble, eval_model, &ts));
        match scored {
            Ok((acc, ppl, [dist1, dist2, dist3], ov)) => {
                let row = SweepRow {
                    omega,
                    mode,
                    acc,
                    ppl,
                    dist1,
                    dist2,
                    dist3,
                    r_or: ov.r_or,
                    r_oa: ov.r_oa,
                    r_ora: ov.r_ora,
                };
                log::info!(
                    "omega={omega} mode={mode} acc={acc:.3} ppl={ppl:.2} r_or={:.3} r_oa={:.3} r_ora={:.3}",
                    row.r_or,
                    row.r_oa,
                    row.r_ora
                );
                report.rows.push(row);
            }
            Err(e) => {
                log::warn!("omega={omega} mode={mode} failed: {e}");
                report.failures.push(SweepFailure {
                    omega,
                    mode,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub volume: usize,
    #[serde(flatten)]
    pub row: SweepRow,
}

/// Seeded subsample of `volume` documents.
pub fn subsample(docs: &[String], volume: usize, seed: u64) -> Result<Vec<String>> {
    if volume > docs.len() {
        return Err(Error::Config(format!(
            "volume {volume} exceeds corpus size {}",
            docs.len()
        )));
    }
    if volume == docs.len() {
        return Ok(docs.to_vec());
    }
    let mut idx: Vec<usize> = (0..docs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(volume);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| docs[i].clone()).collect())
}

/// Retrains the ensemble on `volume` documents per class for each volume and
/// sweeps it. The evaluation model stays fixed.
pub fn data_volume_sweep(
    labeled: &[(String, Vec<String>)],
    base_corpus: Option<&[String]>,
    volumes: &[usize],
    ensemble_config: &EnsembleConfig,
    eval_model: &NGramModel,
    settings: &SweepSettings,
) -> Result<(Vec<VolumeRow>, Vec<SweepFailure>)> {
    if volumes.is_empty() {
        return Err(Error::Config("no training volumes given".into()));
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &volume in volumes {
        let sub: Vec<(String, Vec<String>)> = labeled
            .iter()
            .enumerate()
            .map(|(c, (label, docs))| {
                let seed = settings.seed ^ ((volume as u64) << 16) ^ c as u64;
                Ok((label.clone(), subsample(docs, volume, seed)?))
            })
            .collect::<Result<_>>()?;
        let ensemble = AttributeEnsemble::build(&sub, base_corpus, ensemble_config)?;
        log::info!("volume {volume}: sweeping");
        let report = omega_sweep(&ensemble, eval_model, settings)?;
        rows.extend(report.rows.into_iter().map(|row| VolumeRow { volume, row }));
        failures.extend(report.failures);
    }
    Ok((rows, failures))
}

pub const SWEEP_CSV_HEADER: [&str; 10] = [
    "omega", "mode", "acc", "ppl", "dist1", "dist2", "dist3", "r_or", "r_oa", "r_ora",
];

fn row_fields(r: &SweepRow) -> [String; 10] {
    [
        r.omega.to_string(),
        r.mode.to_string(),
        r.acc.to_string(),
        r.ppl.to_string(),
        r.dist1.to_string(),
        r.dist2.to_string(),
        r.dist3.to_string(),
        r.r_or.to_string(),
        r.r_oa.to_string(),
        r.r_ora.to_string(),
    ]
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_CSV_HEADER)?;
    for r in rows {
        w.write_record(row_fields(r))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_volume_csv<W: Write>(rows: &[VolumeRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["volume"];
    header.extend(SWEEP_CSV_HEADER);
    w.write_record(header)?;
    for r in rows {
        let mut rec = vec![r.volume.to_string()];
        rec.extend(row_fields(&r.row));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_jsonl<W: Write, T: Serialize>(rows: &[T], mut out: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

/// Gnuplot data: one block per mode, blocks separated by two blank lines so
/// they can be addressed with `index`.
pub fn write_gnuplot<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    let io = |e| Error::io("<dat>", e);
    let mut first = true;
    for mode in CompositionMode::ALL {
        let block: Vec<&SweepRow> = rows.iter().filter(|r| r.mode == mode).collect();
        if block.is_empty() {
            continue;
        }
        if !first {
            out.write_all(b"\n\n").map_err(io)?;
        }
        first = false;
        writeln!(out, "# mode={mode}").map_err(io)?;
        writeln!(out, "# omega acc ppl dist1 dist2 dist3 r_or r_oa r_ora").map_err(io)?;
        for r in block {
            writeln!(
                out,
                "{} {} {} {} {} {} {} {} {}",
                r.omega, r.acc, r.ppl, r.dist1, r.dist2, r.dist3, r.r_or, r.r_oa, r.r_ora
            )
            .map_err(io)?;
        }
    }
    Ok(())
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}
