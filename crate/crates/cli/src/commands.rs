use std::collections::HashSet;
use std::fs::{self, File};
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};

use treeprobe::config::RunConfig;
use treeprobe::conllu::{filter_and_split, write_conllu, Sentence, SplitRatios};
use treeprobe::embeddings::{
    align, random_sentences, read_store_header, write_store, EmbeddingStore, TreeEmbedder,
    STORE_MAGIC,
};
use treeprobe::metrics::{
    compare as compare_reports, comparison_table, evaluate, sentence_delta_table, Comparison,
    DsprMode, EvalOptions, EvalReport,
};
use treeprobe::model::{
    read_checkpoint, read_checkpoint_header, write_checkpoint, ProbeParams, CHECKPOINT_MAGIC,
};
use treeprobe::train::{random_search, train_with_progress, Example};
use treeprobe::{EmbeddingSequence, Error};

use crate::io::{read_embeddings, read_skips, read_treebank, RunManifest};
use crate::{
    CompareArgs, DataArgs, EvalArgs, InspectArgs, PrepareArgs, SearchArgs, SynthArgs, TrainArgs,
    TreeSource,
};

/// Bad command-line usage that clap cannot catch (exit status 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn conllu_bytes(sentences: &[Sentence]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_conllu(sentences, &mut buf)?;
    Ok(buf)
}

fn store_bytes(store: &EmbeddingStore) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_store(store, &mut buf)?;
    Ok(buf)
}

fn checkpoint_bytes(params: &ProbeParams, squared: bool) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(params, squared, &mut buf)?;
    Ok(buf)
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let mut manifest = RunManifest::start("prepare");
    manifest.seed = Some(args.seed);
    manifest.inputs.push(args.treebank.clone());

    let ratios: SplitRatios = args.ratios.parse()?;
    let bank = read_treebank(&args.treebank)?;
    let split = filter_and_split(bank.sentences, args.cap, ratios, args.seed)?;

    for (part, sentences) in [
        ("train", &split.train),
        ("dev", &split.dev),
        ("test", &split.test),
    ] {
        manifest.emit(
            args.out.join(format!("{part}.conllu")),
            &conllu_bytes(sentences)?,
        )?;
    }
    let mut log = String::new();
    for rejection in bank.rejected.iter().chain(&split.filter_log) {
        log.push_str(&format!("{rejection}\n"));
    }
    manifest.emit(args.out.join("filter.log"), log.as_bytes())?;
    eprintln!(
        "train {}  dev {}  test {}  dropped {}",
        split.train.len(),
        split.dev.len(),
        split.test.len(),
        bank.rejected.len() + split.filter_log.len()
    );
    manifest.finish(&args.out)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut manifest = RunManifest::start("synth");
    manifest.seed = Some(args.seed);
    let embedder = TreeEmbedder::new(args.dim, args.noise, args.seed)?;

    match args.source {
        TreeSource::Random => {
            if !args.treebank.is_empty() {
                return Err(usage("--treebank requires --source from-treebank"));
            }
            if args.min_len < 2 || args.min_len > args.max_len {
                return Err(usage(format!(
                    "need 2 <= --min-len <= --max-len, got {}..{}",
                    args.min_len, args.max_len
                )));
            }
            if args.dim + 1 < args.max_len {
                return Err(Error::config(
                    "dim",
                    format!(
                        "{} is below max length - 1 = {}",
                        args.dim,
                        args.max_len - 1
                    ),
                )
                .into());
            }
            let sentences = random_sentences(
                args.count,
                args.min_len..=args.max_len,
                &args.name,
                args.seed,
            )?;
            let store = embedder.embed_all(&sentences, &args.name)?;
            manifest.emit(
                args.out.join(format!("{}.conllu", args.name)),
                &conllu_bytes(&sentences)?,
            )?;
            manifest.emit(
                args.out.join(format!("{}.sdeb", args.name)),
                &store_bytes(&store)?,
            )?;
            eprintln!("{}: {} sentences", args.name, sentences.len());
        }
        TreeSource::FromTreebank => {
            if args.treebank.is_empty() {
                return Err(usage(
                    "--source from-treebank needs at least one --treebank",
                ));
            }
            let mut stems = HashSet::new();
            for path in &args.treebank {
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| usage(format!("cannot name output for {}", path.display())))?
                    .to_string();
                if !stems.insert(stem.clone()) {
                    return Err(usage(format!("two treebanks share the file stem '{stem}'")));
                }
                manifest.inputs.push(path.clone());
                let bank = read_treebank(path)?;
                let store = embedder
                    .embed_all(&bank.sentences, &stem)
                    .with_context(|| format!("embedding {}", path.display()))?;
                manifest.emit(
                    args.out.join(format!("{stem}.conllu")),
                    &conllu_bytes(&bank.sentences)?,
                )?;
                manifest.emit(args.out.join(format!("{stem}.sdeb")), &store_bytes(&store)?)?;
                eprintln!(
                    "{stem}: {} sentences ({} rejected)",
                    bank.sentences.len(),
                    bank.rejected.len()
                );
            }
        }
    }
    manifest.finish(&args.out)
}

/// Treebank and embeddings of one split, before alignment.
struct Part {
    sentences: Vec<Sentence>,
    store: EmbeddingStore,
}

fn load_part(data: &DataArgs, part: &str, manifest: &mut RunManifest) -> Result<Part> {
    let conllu = data.data.join(format!("{part}.conllu"));
    let sdeb = data.data.join(format!("{part}.sdeb"));
    let sentences = read_treebank(&conllu)?.sentences;
    let store = read_embeddings(&sdeb)?;
    manifest.inputs.push(conllu);
    manifest.inputs.push(sdeb);
    Ok(Part { sentences, store })
}

fn aligned<'a>(
    part: &'a Part,
    skip: &HashSet<String>,
    name: &str,
) -> Result<Vec<(&'a Sentence, &'a EmbeddingSequence)>> {
    align(&part.sentences, &part.store, skip).with_context(|| format!("aligning the {name} split"))
}

fn examples<'a>(pairs: &[(&'a Sentence, &'a EmbeddingSequence)]) -> Vec<Example<'a>> {
    pairs.iter().map(|(s, e)| (*e, s.gold_tree())).collect()
}

fn load_config(args: &TrainArgs, manifest: &mut RunManifest) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
        config.merge_toml_str(&text)?;
        manifest.config_path = Some(path.clone());
    }
    for (key, value) in args.flags.overrides() {
        config.set(key, value)?;
    }
    config.validate()?;
    manifest.seed = Some(config.train.seed);
    Ok(config)
}

fn print_epoch(stats: &treeprobe::train::EpochStats) {
    eprintln!(
        "epoch {:>3}  train {:.6}  dev {:.6}",
        stats.epoch, stats.train_loss, stats.dev_loss
    );
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::start("train");
    let config = load_config(args, &mut manifest)?;
    let skip = read_skips(args.data.skip_list.as_deref())?;
    manifest.inputs.extend(args.data.skip_list.clone());
    let train_part = load_part(&args.data, "train", &mut manifest)?;
    let dev_part = load_part(&args.data, "dev", &mut manifest)?;
    let train_set = examples(&aligned(&train_part, &skip, "train")?);
    let dev_set = examples(&aligned(&dev_part, &skip, "dev")?);

    let record = train_with_progress(&config.train, &train_set, &dev_set, print_epoch)?;
    manifest.wall_clock_seconds = Some(record.wall_clock.as_secs_f64());
    write_model_outputs(
        &args.out,
        &config,
        &record.params,
        record.squared,
        &record.to_report(),
        &mut manifest,
    )?;
    eprintln!(
        "best epoch {}  dev loss {}",
        record.best_epoch, record.best_dev_loss
    );
    manifest.finish(&args.out)
}

fn write_model_outputs(
    out: &Path,
    config: &RunConfig,
    params: &ProbeParams,
    squared: bool,
    report: &str,
    manifest: &mut RunManifest,
) -> Result<()> {
    manifest.emit(out.join("config.toml"), config.to_toml().as_bytes())?;
    manifest.emit(out.join("train_report.tsv"), report.as_bytes())?;
    manifest.emit(out.join("model.spbm"), &checkpoint_bytes(params, squared)?)
}

pub fn search(args: &SearchArgs) -> Result<()> {
    let mut manifest = RunManifest::start("search");
    let config = load_config(&args.train, &mut manifest)?;
    let data = &args.train.data;
    let skip = read_skips(data.skip_list.as_deref())?;
    manifest.inputs.extend(data.skip_list.clone());
    let train_part = load_part(data, "train", &mut manifest)?;
    let dev_part = load_part(data, "dev", &mut manifest)?;
    let train_set = examples(&aligned(&train_part, &skip, "train")?);
    let dev_set = examples(&aligned(&dev_part, &skip, "dev")?);

    let started = std::time::Instant::now();
    let outcome = random_search(
        &config.search,
        &config.train,
        &train_set,
        &dev_set,
        args.jobs.max(1),
    )?;
    manifest.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    let (best_config, record) = outcome.best();
    let best = RunConfig {
        train: best_config.clone(),
        search: config.search.clone(),
    };
    let out = &args.train.out;
    manifest.emit(
        out.join("search_report.tsv"),
        outcome.to_report().as_bytes(),
    )?;
    write_model_outputs(
        out,
        &best,
        &record.params,
        record.squared,
        &record.to_report(),
        &mut manifest,
    )?;
    eprintln!(
        "best trial {}  rank {}  lr {}  dropout {}  dev loss {}",
        outcome.best_index,
        best_config.rank,
        best_config.learning_rate,
        best_config.dropout_rate,
        record.best_dev_loss
    );
    manifest.finish(out)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::start("eval");
    let dspr_mode: DsprMode = args.dspr_mode.parse()?;
    let file = File::open(&args.checkpoint)
        .with_context(|| format!("opening {}", args.checkpoint.display()))?;
    let (params, squared) = read_checkpoint(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", args.checkpoint.display()))?;
    manifest.inputs.push(args.checkpoint.clone());

    let skip = read_skips(args.data.skip_list.as_deref())?;
    manifest.inputs.extend(args.data.skip_list.clone());
    let part = load_part(&args.data, &args.part, &mut manifest)?;
    if part.store.dim != params.dim() {
        return Err(Error::dimension(
            format!(
                "checkpoint has d={} but the {} container has d={}",
                params.dim(),
                args.part,
                part.store.dim
            ),
            params.dim(),
            part.store.dim,
        )
        .into());
    }
    let data = aligned(&part, &skip, &args.part)?;
    let options = EvalOptions {
        exclude_punct: args.exclude_punct,
        dspr_mode,
    };
    let report = evaluate(&params, squared, &data, &options)?;
    manifest.emit(
        args.out.join("eval_report.tsv"),
        report.to_text().as_bytes(),
    )?;

    let a = &report.aggregates;
    println!("uuas_micro\t{}", a.uuas_micro);
    println!("uuas_macro\t{}", a.uuas_macro);
    println!("dspr_macro\t{}", a.dspr_macro);
    println!("dspr_pfw_macro\t{}", a.dspr_pfw_macro);
    if let Some(v) = a.dspr_lengthbin {
        println!("dspr_lengthbin\t{v}");
    }
    manifest.finish(&args.out)
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EvalReport::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let mut manifest = RunManifest::start("compare");
    let mut runs: Vec<Comparison> = Vec::new();
    for spec in &args.runs {
        let (label, paths) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--run '{spec}' is not LABEL=REPORT_A,REPORT_B")))?;
        let (a, b) = paths
            .split_once(',')
            .ok_or_else(|| usage(format!("--run '{spec}' is not LABEL=REPORT_A,REPORT_B")))?;
        let (a, b) = (Path::new(a), Path::new(b));
        manifest.inputs.push(a.to_path_buf());
        manifest.inputs.push(b.to_path_buf());
        let comparison = compare_reports(label, &read_report(a)?, &read_report(b)?)
            .with_context(|| format!("comparing run '{label}'"))?;
        runs.push(comparison);
    }
    let table = comparison_table(&runs);
    print!("{table}");
    if let Some(out) = &args.out {
        manifest.emit(out.join("compare.tsv"), table.as_bytes())?;
        for run in &runs {
            manifest.emit(
                out.join(format!("sentences_{}.tsv", run.label)),
                sentence_delta_table(run).as_bytes(),
            )?;
        }
        manifest.finish(out)?;
    }
    Ok(())
}

pub fn inspect(args: &InspectArgs) -> Result<()> {
    let path = &args.path;
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{} is shorter than a header", path.display())))?;
    let file = std::io::BufReader::new(File::open(path)?);
    if magic == STORE_MAGIC {
        let h = read_store_header(file)?;
        println!("format\tSDEB");
        println!("version\t{}", h.version);
        println!("count\t{}", h.count);
        println!("dim\t{}", h.dim);
    } else if magic == CHECKPOINT_MAGIC {
        let h = read_checkpoint_header(file)?;
        println!("format\tSPBM");
        println!("version\t{}", h.version);
        println!("rank\t{}", h.rank);
        println!("dim\t{}", h.dim);
        println!("squared\t{}", h.squared);
    } else {
        return Err(Error::Format(format!(
            "{}: unrecognised magic {:02x?}",
            path.display(),
            magic
        ))
        .into());
    }
    Ok(())
}
