use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use engagekit::aggregate::{
    aggregate_sharded, index_metas, parse_events, parse_jsonl, parse_metas, write_jsonl,
    AggregateConfig,
};
use engagekit::evalkit::{evaluate, plcc, srcc, EvalRow};
use engagekit::model::{read_manifest, FeatureKind};
use engagekit::normfit::{annotate_nawp, distribution_report, fit_envelope, metric_correlation, EnvelopeModel, FitConfig};
use engagekit::synthgen::{generate_events, generate_features, write_corpus, SynthConfig};
use engagekit::trainer::{self, Checkpoint, Dataset, LogRecord, Mode, PredictionRow, TrainConfig, Trainer};
use engagekit::VideoRecord;

use crate::{
    AggregateArgs, CompareArgs, EvalArgs, FitNormArgs, PredictArgs, ReportArgs, SynthArgs,
    TrainArgs, TrainOptions, UsageError,
};

const CHECKPOINT_FILE: &str = "checkpoint.engw";
const CONFIG_FILE: &str = "train_config.json";
const LOG_FILE: &str = "metrics.jsonl";
const PREDICTIONS_FILE: &str = "test_predictions.jsonl";

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(engagekit::Error::from).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(engagekit::Error::from)?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(engagekit::Error::from).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?)
        .map_err(engagekit::Error::from)
        .with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(engagekit::Error::from)?;
    w.write_all(b"\n").map_err(engagekit::Error::from)?;
    w.flush().map_err(engagekit::Error::from)?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(open(path)?)
        .collect::<engagekit::Result<Vec<T>>>()
        .with_context(|| format!("reading {}", path.display()))
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_jsonl(create(path)?, items).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.n_videos = a.n_videos.unwrap_or(cfg.n_videos);
    cfg.views_per_video = a.views_per_video.unwrap_or(cfg.views_per_video);
    cfg.frame_rate = a.frame_rate.unwrap_or(cfg.frame_rate);
    cfg.feature_noise = a.feature_noise.unwrap_or(cfg.feature_noise);
    let corpus = generate_events(&cfg)?;
    let features = generate_features(&corpus.videos, &cfg)?;
    write_corpus(&a.out, &corpus, &features)?;
    write_json(&a.out.join("synth_config.json"), &cfg)?;
    println!(
        "wrote {} videos, {} events to {}; ridge oracle SRCC nawp {:.4}, ecr {:.4}",
        corpus.videos.len(),
        corpus.events.len(),
        a.out.display(),
        features.oracle.srcc_nawp,
        features.oracle.srcc_ecr
    );
    Ok(())
}

/// Reads every line, reporting malformed ones; with `strict` the first
/// malformed line is fatal.
fn collect_lines<T>(items: impl Iterator<Item = engagekit::Result<T>>, what: &str, strict: bool) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut bad = 0usize;
    for item in items {
        match item {
            Ok(v) => out.push(v),
            Err(e) if strict => return Err(e).with_context(|| format!("in {what}")),
            Err(e) => {
                bad += 1;
                if bad <= 10 {
                    eprintln!("warning: {what}: {e}");
                }
            }
        }
    }
    if bad > 10 {
        eprintln!("warning: {what}: {bad} malformed lines skipped in total");
    }
    Ok(out)
}

pub fn aggregate(a: AggregateArgs) -> Result<()> {
    if a.shards == 0 {
        return Err(UsageError("--shards must be at least 1".into()).into());
    }
    let config = AggregateConfig {
        ecr_threshold_s: a.ecr_threshold,
        min_views: a.min_views,
        duration_range_s: (a.min_duration, a.max_duration),
    };
    let metas = collect_lines(parse_metas(open(&a.metas)?), "metas", true)?;
    let metas = index_metas(metas)?;
    let events = collect_lines(parse_events(open(&a.events)?), "events", a.strict)?;
    let result = aggregate_sharded(&events, &metas, &config, a.shards)?;
    if result.unknown_video_events > 0 {
        eprintln!("warning: {} events reference unknown videos and were skipped", result.unknown_video_events);
    }
    for w in &result.warnings {
        eprintln!("warning: {}: {} views longer than 10x the duration", w.video_id, w.views_over_10x_duration);
    }
    write_lines(&a.out, &result.records)?;
    println!(
        "{} records written, {} excluded by filters",
        result.records.len(),
        result.excluded_by_filter
    );
    Ok(())
}

pub fn fit_norm(a: FitNormArgs) -> Result<()> {
    let records: Vec<VideoRecord> = read_jsonl(&a.records)?;
    let env = if a.reference {
        EnvelopeModel::reference()
    } else {
        let cfg = FitConfig {
            quantile_tau: a.quantile_tau,
            bin_width_s: a.bin_width,
            min_bin_count: a.min_bin_count,
            duration_range_s: (a.min_duration, a.max_duration),
        };
        fit_envelope(&records, &cfg)?
    };
    let annotated = annotate_nawp(&records, &env)?;
    write_json(&a.out_envelope, &env)?;
    write_lines(&a.out_records, &annotated)?;
    println!(
        "f_max(d) = {:.6} d + {:.6} ({} bins)",
        env.slope_a, env.intercept_b, env.fit_stats.bins_used
    );
    Ok(())
}

fn resolve_train_config(opts: &TrainOptions) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &opts.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = opts.seed.unwrap_or(cfg.seed);
    cfg.iterations = opts.iterations.unwrap_or(cfg.iterations);
    cfg.batch_size = opts.batch_size.unwrap_or(cfg.batch_size);
    cfg.eval_interval = opts.eval_interval.unwrap_or(cfg.eval_interval);
    if let Some(t) = opts.target {
        cfg.target = t.into();
    }
    cfg.duration_as_input |= opts.duration_as_input;
    cfg.model.ecr_causal_mask |= opts.ecr_causal_mask;
    cfg.model.d_model = opts.d_model.unwrap_or(cfg.model.d_model);
    if let Some(list) = &opts.features {
        cfg.model.enabled = FeatureKind::parse_list(list).map_err(|e| UsageError(e.to_string()))?;
    }
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = resolve_train_config(&a.opts)?;
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    let data = Dataset::load(&a.opts.manifest)?;
    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(&data, cfg.clone(), Checkpoint::load(path)?)?,
        None => Trainer::new(&data, cfg.clone())?,
    };
    fs::create_dir_all(&a.out).map_err(engagekit::Error::from)?;
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    let log_path = a.out.join(LOG_FILE);
    let mut log = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .write(true)
            .append(a.resume.is_some())
            .truncate(a.resume.is_none())
            .open(&log_path)
            .map_err(engagekit::Error::from)?,
    );
    let until = a.stop_after.unwrap_or(cfg.iterations);
    let mut io_err = None;
    trainer.run_until(until, |rec: &LogRecord| {
        let line = serde_json::to_string(rec).expect("log record serialises");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            io_err.get_or_insert(e);
        }
        eprintln!(
            "step {:>6}  lr {:.3e}  loss {:.6}  srcc nawp {}  ecr {}",
            rec.step,
            rec.lr,
            rec.train_loss,
            fmt_opt(rec.eval_srcc_nawp),
            fmt_opt(rec.eval_srcc_ecr)
        );
    })?;
    if let Some(e) = io_err {
        return Err(engagekit::Error::from(e)).context("writing metric log");
    }
    trainer.checkpoint().save(&a.out.join(CHECKPOINT_FILE))?;
    write_lines(&a.out.join(PREDICTIONS_FILE), &trainer.predict_test()?)?;
    println!(
        "trained {} / {} steps, {} parameters; outputs in {}",
        trainer.step(),
        cfg.iterations,
        trainer.params().count(),
        a.out.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let cfg: TrainConfig = read_json(&a.model.join(CONFIG_FILE))?;
    let ck = Checkpoint::load(&a.model.join(CHECKPOINT_FILE))?;
    ck.check_config(&cfg)?;
    let data = Dataset::load(&a.manifest)?;
    let preds = trainer::predict(&data, &ck.params, &cfg)?;
    write_lines(&a.out, &preds)?;
    println!("{} predictions written", preds.len());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let preds: Vec<PredictionRow> = read_jsonl(&a.predictions)?;
    let rows = read_manifest(open(&a.manifest)?)?;
    let by_id: BTreeMap<&str, _> = rows.iter().map(|r| (r.video_id.as_str(), r)).collect();
    let target: trainer::Target = a.target.into();
    let eval_rows = preds
        .iter()
        .map(|p| {
            let r = by_id.get(p.video_id.as_str()).ok_or_else(|| {
                engagekit::Error::InvalidInput(format!("prediction for unknown video `{}`", p.video_id))
            })?;
            let label = match target {
                trainer::Target::Nawp => r.nawp_label,
                trainer::Target::Awt => r.awt_label,
                trainer::Target::Awp => r.awp_label,
            };
            let missing = || engagekit::Error::InvalidInput(format!("`{}` lacks a label", r.video_id));
            Ok(EvalRow {
                video_id: p.video_id.clone(),
                duration_s: r.duration_s,
                nawp_hat: p.nawp_hat,
                ecr_hat: p.ecr_hat,
                nawp: label.ok_or_else(missing)?,
                ecr: r.ecr_label.ok_or_else(missing)?,
            })
        })
        .collect::<engagekit::Result<Vec<_>>>()?;
    let report = evaluate(&eval_rows, a.topk_percent, a.group_width)?;
    write_json(&a.out, &report)?;
    println!(
        "n={} nawp srcc {:.4} plcc {:.4} | ecr srcc {:.4} plcc {:.4}",
        report.n, report.nawp.srcc, report.nawp.plcc, report.ecr.srcc, report.ecr.plcc
    );
    Ok(())
}

#[derive(Serialize)]
struct MetricsReport {
    nawp: engagekit::normfit::DistributionReport,
    ecr: engagekit::normfit::DistributionReport,
    correlation: engagekit::normfit::MetricCorrelation,
}

pub fn report(a: ReportArgs) -> Result<()> {
    let records: Vec<VideoRecord> = read_jsonl(&a.records)?;
    let nawp: Vec<f64> = records
        .iter()
        .map(|r| r.nawp.ok_or_else(|| engagekit::Error::InvalidInput(format!("{} has no NAWP; run fit-norm", r.video_id))))
        .collect::<engagekit::Result<_>>()?;
    let ecr: Vec<f64> = records.iter().map(|r| r.ecr).collect();
    let rep = MetricsReport {
        nawp: distribution_report("nawp", &nawp, a.bins)?,
        ecr: distribution_report("ecr", &ecr, a.bins)?,
        correlation: metric_correlation(&records)?,
    };
    write_json(&a.out, &rep)?;
    println!(
        "bimodality nawp {:.4} ecr {:.4}; ecr~nawp srcc {:.4} plcc {:.4}",
        rep.nawp.bimodality_coefficient,
        rep.ecr.bimodality_coefficient,
        rep.correlation.srcc_ecr_nawp,
        rep.correlation.plcc_ecr_nawp
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct Scores {
    srcc: f64,
    plcc: f64,
}

#[derive(Debug, Serialize)]
struct CompareRow {
    mode: Mode,
    nawp: Option<Scores>,
    ecr: Option<Scores>,
}

#[derive(Debug, Serialize)]
struct CompareTable {
    iterations: u64,
    seed: u64,
    n_test: usize,
    rows: Vec<CompareRow>,
}

pub fn compare_joint(a: CompareArgs) -> Result<()> {
    let base = resolve_train_config(&a.opts)?;
    let data = Dataset::load(&a.opts.manifest)?;
    let mut rows = Vec::new();
    let mut n_test = 0;
    for mode in [Mode::NawpOnly, Mode::EcrOnly, Mode::Joint] {
        let cfg = TrainConfig { mode, ..base.clone() };
        let mut t = Trainer::new(&data, cfg.clone())?;
        t.run_until(cfg.iterations, |_| {})?;
        let preds = t.predict_test()?;
        let test: Vec<&trainer::Sample> = t
            .test_ids()
            .iter()
            .map(|id| &data.samples()[data.position(id).expect("test ids come from the dataset")])
            .collect();
        n_test = test.len();
        let score = |pred: Vec<f64>, truth: Vec<f64>| -> engagekit::Result<Scores> {
            Ok(Scores { srcc: srcc(&pred, &truth)?, plcc: plcc(&pred, &truth)? })
        };
        let nawp = mode
            .trains_first_head()
            .then(|| {
                let truth = test.iter().map(|s| s.target_label(cfg.target).unwrap_or(f64::NAN)).collect();
                score(preds.iter().map(|p| p.nawp_hat).collect(), truth)
            })
            .transpose()?;
        let ecr = mode
            .trains_ecr_head()
            .then(|| {
                let truth = test.iter().map(|s| s.ecr_label().unwrap_or(f64::NAN)).collect();
                score(preds.iter().map(|p| p.ecr_hat).collect(), truth)
            })
            .transpose()?;
        rows.push(CompareRow { mode, nawp, ecr });
    }
    let table = CompareTable { iterations: base.iterations, seed: base.seed, n_test, rows };
    write_json(&a.out, &table)?;
    println!("| training | NAWP SRCC | NAWP PLCC | ECR SRCC | ECR PLCC |");
    println!("|---|---|---|---|---|");
    for r in &table.rows {
        let cell = |s: &Option<Scores>| match s {
            Some(s) => format!("{:.4} | {:.4}", s.srcc, s.plcc),
            None => "- | -".to_string(),
        };
        let mode = match r.mode {
            Mode::Joint => "joint",
            Mode::NawpOnly => "nawp_only",
            Mode::EcrOnly => "ecr_only",
        };
        println!("| {mode} | {} | {} |", cell(&r.nawp), cell(&r.ecr));
    }
    Ok(())
}
