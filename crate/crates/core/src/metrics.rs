//! Tree recovery (UUAS) and distance rank correlation (DSpr) metrics, their
//! corpus aggregation, and side-by-side comparison of two evaluations.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::conllu::Sentence;
use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::graph::{mst_prim, tree_to_distances, DepTree, DistanceMatrix};
use crate::model::{predict_matrix, ProbeParams};

/// Edge overlap between a predicted and a gold tree: `(correct, total)`.
pub fn uuas(pred: &DepTree, gold: &DepTree) -> Result<(usize, usize)> {
    uuas_counted(pred, gold, None)
}

/// UUAS restricted to edges whose endpoints are both kept (`keep[i - 1]`).
pub fn uuas_counted(
    pred: &DepTree,
    gold: &DepTree,
    keep: Option<&[bool]>,
) -> Result<(usize, usize)> {
    if pred.n() != gold.n() {
        return Err(Error::Size(format!(
            "predicted tree has {} words, gold has {}",
            pred.n(),
            gold.n()
        )));
    }
    let counts = |&(a, b): &(usize, usize)| keep.is_none_or(|k| k[a - 1] && k[b - 1]);
    let total = gold.edges().iter().filter(|e| counts(e)).count();
    let correct = pred
        .edges()
        .iter()
        .filter(|e| counts(e) && gold.contains_edge(e.0, e.1))
        .count();
    Ok((correct, total))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    /// At least one input had constant ranks; `rho` is reported as 0.
    pub degenerate: bool,
}

/// Values closer than this (relative to the larger magnitude) rank as ties,
/// so floating-point roundoff in computed distances cannot order values that
/// are equal in exact arithmetic.
pub const TIE_TOLERANCE: f64 = 1e-9;

fn tied(a: f64, b: f64) -> bool {
    a == b || (b - a).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

/// Average ranks (1-based), with ties sharing the mean of their positions.
/// A tie group collects every value within [`TIE_TOLERANCE`] of its smallest member.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && tied(values[order[start]], values[order[end]]) {
            end += 1;
        }
        // Positions start+1 ..= end share their mean.
        let shared = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = shared;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation with fractional ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Size(format!(
            "{} values against {}",
            x.len(),
            y.len()
        )));
    }
    let rx = fractional_ranks(x);
    let ry = fractional_ranks(y);
    let mean = (x.len() + 1) as f64 / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if x.len() < 2 || sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation {
            rho: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        rho: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

fn check_size(pred: &DistanceMatrix, gold: &DepTree) -> Result<()> {
    if pred.n() != gold.n() {
        return Err(Error::Size(format!(
            "distance matrix over {} words, tree over {}",
            pred.n(),
            gold.n()
        )));
    }
    Ok(())
}

/// Spearman between all predicted pairwise distances and tree path lengths.
pub fn dspr_sentence(pred: &DistanceMatrix, gold: &DepTree) -> Result<Correlation> {
    check_size(pred, gold)?;
    if gold.n() < 2 {
        return Err(Error::Size("DSpr needs at least two words".into()));
    }
    let target = tree_to_distances(gold);
    spearman(pred.upper(), target.upper())
}

/// DSpr after replacing the prediction by the path lengths of its minimum
/// spanning tree.
pub fn dspr_pfw_sentence(pred: &DistanceMatrix, gold: &DepTree) -> Result<Correlation> {
    check_size(pred, gold)?;
    let decoded = mst_prim(pred);
    dspr_sentence(&tree_to_distances(&decoded), gold)
}

/// Mean of per-word Spearman correlations (each word against all others).
/// `None` when every row is degenerate.
pub fn dspr_per_word(pred: &DistanceMatrix, gold: &DepTree) -> Result<Option<f64>> {
    check_size(pred, gold)?;
    let n = gold.n();
    let target = tree_to_distances(gold);
    let mut total = 0.0;
    let mut count = 0;
    for i in 1..=n {
        let (p, g): (Vec<f64>, Vec<f64>) = (1..=n)
            .filter(|&j| j != i)
            .map(|j| (pred.get(i, j), target.get(i, j)))
            .unzip();
        if p.len() < 2 {
            continue;
        }
        let c = spearman(&p, &g)?;
        if !c.degenerate {
            total += c.rho;
            count += 1;
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DsprMode {
    /// One correlation over all pairs per sentence, macro-averaged.
    #[default]
    AllPairs,
    /// Additionally report per-word correlations averaged within each
    /// sentence length 5..=50, then across lengths.
    LengthBin,
}

impl fmt::Display for DsprMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DsprMode::AllPairs => "allpairs",
            DsprMode::LengthBin => "lengthbin",
        })
    }
}

impl FromStr for DsprMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "allpairs" => Ok(DsprMode::AllPairs),
            "lengthbin" => Ok(DsprMode::LengthBin),
            other => Err(Error::config(
                "dspr_mode",
                format!("unknown mode '{other}'"),
            )),
        }
    }
}

pub const LENGTH_BINS: std::ops::RangeInclusive<usize> = 5..=50;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub exclude_punct: bool,
    pub dspr_mode: DsprMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceRecord {
    pub id: String,
    pub n: usize,
    pub correct: usize,
    pub total: usize,
    pub dspr: Correlation,
    pub dspr_pfw: Correlation,
    /// Per-word DSpr, only filled in length-bin mode.
    pub dspr_per_word: Option<f64>,
}

impl SentenceRecord {
    fn flags(&self) -> String {
        let mut flags = Vec::new();
        if self.dspr.degenerate {
            flags.push("dspr_degenerate");
        }
        if self.dspr_pfw.degenerate {
            flags.push("dspr_pfw_degenerate");
        }
        if flags.is_empty() {
            "-".to_string()
        } else {
            flags.join(",")
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregates {
    pub uuas_micro: f64,
    pub uuas_macro: f64,
    pub dspr_macro: f64,
    pub dspr_pfw_macro: f64,
    pub dspr_degenerate: usize,
    pub dspr_pfw_degenerate: usize,
    pub dspr_lengthbin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Key/value pairs describing how the report was produced.
    pub echo: Vec<(String, String)>,
    pub sentences: Vec<SentenceRecord>,
    pub aggregates: Aggregates,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Corpus aggregates: micro UUAS over the pooled edges, macro UUAS over
/// sentences with at least one counted edge, and DSpr macro-averages that
/// skip degenerate sentences.
pub fn aggregate(records: &[SentenceRecord], mode: DsprMode) -> Aggregates {
    let correct: usize = records.iter().map(|r| r.correct).sum();
    let total: usize = records.iter().map(|r| r.total).sum();
    let dspr_lengthbin = match mode {
        DsprMode::AllPairs => None,
        DsprMode::LengthBin => {
            let mut bins: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in records.iter().filter(|r| LENGTH_BINS.contains(&r.n)) {
                if let Some(v) = r.dspr_per_word {
                    bins.entry(r.n).or_default().push(v);
                }
            }
            Some(mean(bins.values().map(|v| mean(v.iter().copied()))))
        }
    };
    Aggregates {
        uuas_micro: if total == 0 {
            f64::NAN
        } else {
            correct as f64 / total as f64
        },
        uuas_macro: mean(
            records
                .iter()
                .filter(|r| r.total > 0)
                .map(|r| r.correct as f64 / r.total as f64),
        ),
        dspr_macro: mean(
            records
                .iter()
                .filter(|r| !r.dspr.degenerate)
                .map(|r| r.dspr.rho),
        ),
        dspr_pfw_macro: mean(
            records
                .iter()
                .filter(|r| !r.dspr_pfw.degenerate)
                .map(|r| r.dspr_pfw.rho),
        ),
        dspr_degenerate: records.iter().filter(|r| r.dspr.degenerate).count(),
        dspr_pfw_degenerate: records.iter().filter(|r| r.dspr_pfw.degenerate).count(),
        dspr_lengthbin,
    }
}

/// Scores one predicted distance matrix against its sentence.
pub fn score_sentence(
    sentence: &Sentence,
    pred: &DistanceMatrix,
    options: &EvalOptions,
) -> Result<SentenceRecord> {
    let gold = sentence.gold_tree();
    let decoded = mst_prim(pred);
    let keep: Option<Vec<bool>> = options
        .exclude_punct
        .then(|| sentence.tokens().iter().map(|t| !t.is_punct()).collect());
    let (correct, total) = uuas_counted(&decoded, gold, keep.as_deref())?;
    let dspr = dspr_sentence(pred, gold)?;
    let dspr_pfw = dspr_sentence(&tree_to_distances(&decoded), gold)?;
    let dspr_per_word = match options.dspr_mode {
        DsprMode::AllPairs => None,
        DsprMode::LengthBin => dspr_per_word(pred, gold)?,
    };
    Ok(SentenceRecord {
        id: sentence.id.clone(),
        n: sentence.n(),
        correct,
        total,
        dspr,
        dspr_pfw,
        dspr_per_word,
    })
}

/// Decodes and scores every sentence (in parallel, reported in input order).
pub fn evaluate(
    params: &ProbeParams,
    squared: bool,
    data: &[(&Sentence, &EmbeddingSequence)],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let records: Vec<SentenceRecord> = data
        .par_iter()
        .enumerate()
        .map(|(index, (sentence, emb))| {
            if emb.n() != sentence.n() {
                return Err(Error::Alignment {
                    index,
                    message: format!(
                        "sentence '{}' has {} words but {} embedding rows",
                        sentence.id,
                        sentence.n(),
                        emb.n()
                    ),
                });
            }
            let pred = predict_matrix(params, emb, squared)?;
            score_sentence(sentence, &pred.distances, options)
        })
        .collect::<Result<_>>()?;
    let aggregates = aggregate(&records, options.dspr_mode);
    Ok(EvalReport {
        echo: vec![
            ("rank".into(), params.rank().to_string()),
            ("dim".into(), params.dim().to_string()),
            ("squared".into(), squared.to_string()),
            ("exclude_punct".into(), options.exclude_punct.to_string()),
            ("dspr_mode".into(), options.dspr_mode.to_string()),
        ],
        sentences: records,
        aggregates,
    })
}

const TABLE_HEADER: &str = "id\tn\tcorrect\ttotal\tdspr\tdspr_pfw\tflags";

impl EvalReport {
    /// Header block of `key<TAB>value` lines, a blank line, then the
    /// per-sentence table.
    pub fn to_text(&self) -> String {
        let a = &self.aggregates;
        let mut out = String::new();
        for (k, v) in &self.echo {
            let _ = writeln!(out, "{k}\t{v}");
        }
        let _ = writeln!(out, "sentences\t{}", self.sentences.len());
        let _ = writeln!(out, "uuas_micro\t{}", a.uuas_micro);
        let _ = writeln!(out, "uuas_macro\t{}", a.uuas_macro);
        let _ = writeln!(out, "dspr_macro\t{}", a.dspr_macro);
        let _ = writeln!(out, "dspr_pfw_macro\t{}", a.dspr_pfw_macro);
        let _ = writeln!(out, "dspr_degenerate\t{}", a.dspr_degenerate);
        let _ = writeln!(out, "dspr_pfw_degenerate\t{}", a.dspr_pfw_degenerate);
        if let Some(v) = a.dspr_lengthbin {
            let _ = writeln!(out, "dspr_lengthbin\t{v}");
        }
        out.push('\n');
        out.push_str(TABLE_HEADER);
        out.push('\n');
        for r in &self.sentences {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.id,
                r.n,
                r.correct,
                r.total,
                r.dspr.rho,
                r.dspr_pfw.rho,
                r.flags()
            );
        }
        out
    }

    /// Parses [`EvalReport::to_text`] output. Corpus aggregates are read back
    /// as written.
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Data(format!("report line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        let mut header: Vec<(String, String)> = Vec::new();
        for (k, line) in lines.by_ref() {
            if line.is_empty() {
                break;
            }
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| bad(k + 1, "expected key<TAB>value"))?;
            header.push((key.to_string(), value.to_string()));
        }
        match lines.next() {
            Some((_, h)) if h == TABLE_HEADER => {}
            Some((k, _)) => return Err(bad(k + 1, "missing per-sentence table header")),
            None => return Err(Error::Data("report has no per-sentence table".into())),
        }

        let mut sentences = Vec::new();
        for (k, line) in lines {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 {
                return Err(bad(k + 1, "expected 7 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(k + 1, "bad number"));
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(k + 1, "bad count"));
            let flags: HashSet<&str> = cols[6].split(',').collect();
            sentences.push(SentenceRecord {
                id: cols[0].to_string(),
                n: int(cols[1])?,
                correct: int(cols[2])?,
                total: int(cols[3])?,
                dspr: Correlation {
                    rho: num(cols[4])?,
                    degenerate: flags.contains("dspr_degenerate"),
                },
                dspr_pfw: Correlation {
                    rho: num(cols[5])?,
                    degenerate: flags.contains("dspr_pfw_degenerate"),
                },
                dspr_per_word: None,
            });
        }

        let mut echo = Vec::new();
        let mut values: BTreeMap<String, String> = BTreeMap::new();
        const AGGREGATE_KEYS: &[&str] = &[
            "sentences",
            "uuas_micro",
            "uuas_macro",
            "dspr_macro",
            "dspr_pfw_macro",
            "dspr_degenerate",
            "dspr_pfw_degenerate",
            "dspr_lengthbin",
        ];
        for (k, v) in header {
            if AGGREGATE_KEYS.contains(&k.as_str()) {
                values.insert(k, v);
            } else {
                echo.push((k, v));
            }
        }
        let get = |key: &str| -> Result<f64> {
            values
                .get(key)
                .ok_or_else(|| Error::Data(format!("report lacks '{key}'")))?
                .parse()
                .map_err(|_| Error::Data(format!("report value for '{key}' is not a number")))
        };
        let aggregates = Aggregates {
            uuas_micro: get("uuas_micro")?,
            uuas_macro: get("uuas_macro")?,
            dspr_macro: get("dspr_macro")?,
            dspr_pfw_macro: get("dspr_pfw_macro")?,
            dspr_degenerate: get("dspr_degenerate")? as usize,
            dspr_pfw_degenerate: get("dspr_pfw_degenerate")? as usize,
            dspr_lengthbin: values.get("dspr_lengthbin").and_then(|v| v.parse().ok()),
        };
        if get("sentences")? as usize != sentences.len() {
            return Err(Error::Data(
                "sentence count does not match the table".into(),
            ));
        }
        Ok(EvalReport {
            echo,
            sentences,
            aggregates,
        })
    }
}

pub const COMPARED_METRICS: [&str; 4] =
    ["uuas_micro", "uuas_macro", "dspr_macro", "dspr_pfw_macro"];

fn metric_values(a: &Aggregates) -> [f64; 4] {
    [a.uuas_micro, a.uuas_macro, a.dspr_macro, a.dspr_pfw_macro]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceDelta {
    pub id: String,
    pub uuas: f64,
    pub dspr: f64,
    pub dspr_pfw: f64,
}

/// Differences `a − b` between two evaluations of the same sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub label: String,
    /// `(metric, a, b, a − b)` in [`COMPARED_METRICS`] order.
    pub metrics: Vec<(&'static str, f64, f64, f64)>,
    pub sentences: Vec<SentenceDelta>,
}

impl Comparison {
    pub fn delta(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.0 == metric).map(|m| m.3)
    }
}

fn sentence_uuas(r: &SentenceRecord) -> f64 {
    if r.total == 0 {
        f64::NAN
    } else {
        r.correct as f64 / r.total as f64
    }
}

pub fn compare(label: &str, a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    let ids_a: HashSet<&str> = a.sentences.iter().map(|r| r.id.as_str()).collect();
    let ids_b: HashSet<&str> = b.sentences.iter().map(|r| r.id.as_str()).collect();
    if ids_a != ids_b || a.sentences.len() != b.sentences.len() {
        let only_a = ids_a.difference(&ids_b).count();
        let only_b = ids_b.difference(&ids_a).count();
        return Err(Error::Data(format!(
            "{label}: reports cover different sentences ({only_a} only in first, {only_b} only in second)"
        )));
    }
    let by_id: BTreeMap<&str, &SentenceRecord> =
        b.sentences.iter().map(|r| (r.id.as_str(), r)).collect();

    let metrics = COMPARED_METRICS
        .iter()
        .zip(
            metric_values(&a.aggregates)
                .into_iter()
                .zip(metric_values(&b.aggregates)),
        )
        .map(|(&name, (x, y))| (name, x, y, x - y))
        .collect();
    let sentences = a
        .sentences
        .iter()
        .map(|ra| {
            let rb = by_id[ra.id.as_str()];
            SentenceDelta {
                id: ra.id.clone(),
                uuas: sentence_uuas(ra) - sentence_uuas(rb),
                dspr: ra.dspr.rho - rb.dspr.rho,
                dspr_pfw: ra.dspr_pfw.rho - rb.dspr_pfw.rho,
            }
        })
        .collect();
    Ok(Comparison {
        label: label.to_string(),
        metrics,
        sentences,
    })
}

/// One row per compared run (e.g. per language) with both values and the
/// delta for every metric, followed by a `mean_delta` summary line.
pub fn comparison_table(runs: &[Comparison]) -> String {
    let mut out = String::from("run");
    for m in COMPARED_METRICS {
        let _ = write!(out, "\t{m}_a\t{m}_b\t{m}_delta");
    }
    out.push('\n');
    for run in runs {
        out.push_str(&run.label);
        for (_, a, b, d) in &run.metrics {
            let _ = write!(out, "\t{a}\t{b}\t{d}");
        }
        out.push('\n');
    }
    out.push_str(&mean_delta_line(runs));
    out.push('\n');
    out
}

pub fn mean_delta_line(runs: &[Comparison]) -> String {
    let parts: Vec<String> = COMPARED_METRICS
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let d = mean(runs.iter().map(|r| r.metrics[k].3));
            format!("{m}={d}")
        })
        .collect();
    format!("mean_delta\truns={}\t{}", runs.len(), parts.join("\t"))
}

/// Per-sentence deltas of one comparison.
pub fn sentence_delta_table(run: &Comparison) -> String {
    let mut out = String::from("id\tuuas_delta\tdspr_delta\tdspr_pfw_delta\n");
    for s in &run.sentences {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", s.id, s.uuas, s.dspr, s.dspr_pfw);
    }
    out
}
