use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;

use maskseed::check::{run_all, CheckOptions, Fault};
use maskseed::eval::{evaluate, EvalReport, GtImage, IouKind};
use maskseed::inference::{load_proposals, propose, save_proposals, DenseModel, ProposalRecord};
use maskseed::model::{
    load_checkpoint, load_weights, save_checkpoint, train_step, Branch, ModelParams, StepReport,
};
use maskseed::rng::stream;
use maskseed::sampler::{
    generate_scene, load_annotations, mean_color, read_records, save_annotations, Dataset, ImageStorage,
};
use maskseed::{fsutil, Params32};

use crate::{CliError, CliResult, Common};

const THREADS_VAR: &str = "MASKSEED_THREADS";

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} not found: {}", path.display())))
    }
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))
}

pub fn gen(common: &Common, scenes: Option<usize>, first_id: Option<u64>) -> CliResult<()> {
    let mut cfg = common.run_config()?;
    if let Some(n) = scenes {
        cfg.gen.scenes = n;
    }
    if let Some(id) = first_id {
        cfg.gen.first_id = id;
    }
    let out = common.out_dir()?;
    let t0 = Instant::now();
    let generated = (0..cfg.gen.scenes as u64)
        .map(|k| {
            let id = cfg.gen.first_id + k;
            generate_scene(&cfg.synth, id, &mut stream(cfg.seed, "scene", id))
        })
        .collect::<maskseed::Result<Vec<_>>>()?;
    fsutil::create_dir_all(&out)?;
    let storage = if cfg.gen.inline {
        ImageStorage::Inline
    } else {
        ImageStorage::Files
    };
    save_annotations(&generated, &out.join("annotations.json"), storage)?;
    cfg.write_sidecar(&out, "gen")?;
    let instances: usize = generated.iter().map(|s| s.annotations.len()).sum();
    info!(
        "wrote {} scenes with {instances} instances to {} in {:.1}s",
        generated.len(),
        out.display(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

struct LogRow {
    step: usize,
    report: StepReport,
}

fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step,branch,loss,accuracy\n");
    for r in rows {
        let acc = r.report.accuracy().map(|a| format!("{a:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{},{},{:.8},{acc}", r.step, r.report.branch.name(), r.report.loss);
    }
    s
}

/// Rows of an existing loss log strictly before `step`, as raw lines.
fn log_prefix(path: &Path, step: usize) -> CliResult<Vec<String>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = fsutil::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|v| v.parse::<usize>().ok())
                .is_some_and(|s| s < step)
        })
        .map(str::to_string)
        .collect())
}

fn state(step: usize, seed: u64) -> BTreeMap<String, String> {
    BTreeMap::from([("step".to_string(), step.to_string()), ("seed".to_string(), seed.to_string())])
}

pub fn train(common: &Common, data: &Path, steps: Option<usize>, resume: Option<&Path>) -> CliResult<()> {
    let mut cfg = common.run_config()?;
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    cfg.train.seed = cfg.seed;
    let out = common.out_dir()?;
    require_file(data, "dataset")?;
    let scenes = load_annotations(data, None)?;
    let mean = mean_color(&scenes);
    cfg.model.input_mean = mean;

    let (mut params, start, prefix): (Params32, usize, Vec<String>) = match resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let ck = load_checkpoint::<f32>(path, Some(&cfg.model))?;
            let step: usize = ck
                .state
                .get("step")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::Data(format!("{} has no step counter", path.display())))?;
            if ck.state.get("seed").map(String::as_str) != Some(cfg.seed.to_string().as_str()) {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was trained with a different seed",
                    path.display()
                )));
            }
            if step > cfg.train.steps {
                return Err(CliError::Usage(format!(
                    "checkpoint is at step {step}, beyond the requested {} steps",
                    cfg.train.steps
                )));
            }
            (ck.params, step, log_prefix(&out.join("loss.csv"), step)?)
        }
        None => (
            ModelParams::build(&cfg.model, &mut stream(cfg.seed, "init", 0))?,
            0,
            Vec::new(),
        ),
    };
    params.set_input_norm(mean, cfg.model.input_std);
    let sampler = cfg.sampler_config()?;
    let dataset = if cfg.train.steps > start {
        let d = Dataset::new(scenes, sampler)?;
        if d.positive_count() == 0 {
            return Err(CliError::Data("dataset has no annotated instances".into()));
        }
        Some(d)
    } else {
        None
    };
    fsutil::create_dir_all(&out)?;
    cfg.write_sidecar(&out, "train")?;

    let batch_size = cfg.train.optimizer.batch_size;
    let every = cfg.train_extras.checkpoint_every;
    let log_every = cfg.train_extras.log_every.max(1);
    let write_log = |rows: &[LogRow]| -> CliResult<()> {
        let mut text = log_csv(rows);
        if !prefix.is_empty() {
            let (head, tail) = text.split_at(text.find('\n').expect("header") + 1);
            text = format!("{head}{}\n{tail}", prefix.join("\n"));
        }
        Ok(fsutil::write_atomic(&out.join("loss.csv"), text.as_bytes())?)
    };
    let mut rows = Vec::new();
    let t0 = Instant::now();
    for step in start..cfg.train.steps {
        let branch = cfg.train.branch_at(step);
        let dataset = dataset.as_ref().expect("dataset exists while steps remain");
        let batch = dataset.make_batch::<f32, _>(branch, batch_size, &mut stream(cfg.seed, "batch", step as u64))?;
        let report = train_step(
            &mut params,
            &batch,
            branch,
            &cfg.train,
            &mut stream(cfg.seed, "dropout", step as u64),
        )?;
        rows.push(LogRow { step, report });
        let done = step + 1;
        if done % log_every == 0 {
            let recent = &rows[rows.len().saturating_sub(log_every)..];
            let mean_of = |b: Branch| {
                let v: Vec<f64> = recent.iter().filter(|r| r.report.branch == b).map(|r| r.report.loss).collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            };
            let acc: Vec<f64> = recent.iter().filter_map(|r| r.report.accuracy()).collect();
            info!(
                "step {done}/{}: mask loss {:.4}, score loss {:.4}, score accuracy {:.3} ({:.0}s)",
                cfg.train.steps,
                mean_of(Branch::Segmentation),
                mean_of(Branch::Scoring),
                acc.iter().sum::<f64>() / acc.len().max(1) as f64,
                t0.elapsed().as_secs_f64()
            );
        }
        if every > 0 && done % every == 0 && done < cfg.train.steps {
            let dir = out.join("checkpoints");
            fsutil::create_dir_all(&dir)?;
            save_checkpoint(&params, &state(done, cfg.seed), &dir.join(format!("step_{done:06}.dmsk")))?;
            write_log(&rows)?;
        }
    }
    save_checkpoint(
        &params,
        &state(cfg.train.steps.max(start), cfg.seed),
        &out.join("weights.dmsk"),
    )?;
    write_log(&rows)?;
    info!(
        "trained steps {start}..{} in {:.1}s; weights at {}",
        cfg.train.steps,
        t0.elapsed().as_secs_f64(),
        out.join("weights.dmsk").display()
    );
    Ok(())
}

pub fn infer(
    common: &Common,
    weights: &Path,
    data: &Path,
    zoom: bool,
    max_proposals: Option<usize>,
) -> CliResult<()> {
    let mut cfg = common.run_config()?;
    cfg.pyramid.zoom |= zoom;
    if let Some(n) = max_proposals {
        cfg.pyramid.max_proposals = n;
    }
    cfg.pyramid.validate()?;
    let out = common.out_dir()?;
    require_file(weights, "weights file")?;
    require_file(data, "annotation file")?;
    let expected = cfg.model_explicit.then(|| cfg.model.clone());
    let params = load_weights::<f32>(weights, expected.as_ref())?;
    cfg.model = params.config().clone();
    let scenes = load_annotations(data, None)?;
    let model = DenseModel::new(&params)?;
    let pool = thread_pool()?;
    let t0 = Instant::now();
    let per_image = pool.install(|| {
        scenes
            .par_iter()
            .map(|s| propose(&model, &s.image, &cfg.pyramid, s.id))
            .collect::<Vec<_>>()
    });
    let mut records = Vec::new();
    for proposals in per_image {
        records.extend(proposals?.iter().map(ProposalRecord::from));
    }
    fsutil::create_dir_all(&out)?;
    save_proposals(&records, &out.join("proposals.json"))?;
    cfg.write_sidecar(&out, "infer")?;
    info!(
        "{} proposals for {} images in {:.1}s ({} threads)",
        records.len(),
        scenes.len(),
        t0.elapsed().as_secs_f64(),
        pool.current_num_threads()
    );
    Ok(())
}

fn summarise(report: &EvalReport) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    let ars: Vec<String> = report
        .report_budgets
        .iter()
        .map(|&b| format!("AR@{b} {}", fmt(report.ar(b))))
        .collect();
    format!(
        "{}, AUC {} over {} ground truths ({} small, {} medium, {} large)",
        ars.join(", "),
        fmt(report.auc),
        report.gt_counts.total,
        report.gt_counts.small,
        report.gt_counts.medium,
        report.gt_counts.large
    )
}

pub fn eval(common: &Common, proposals: &Path, annotations: &Path, iou: Option<&str>) -> CliResult<()> {
    let mut cfg = common.run_config()?;
    match iou {
        Some("box") => cfg.eval.iou = IouKind::Box,
        Some("mask") => cfg.eval.iou = IouKind::Mask,
        _ => {}
    }
    let out = common.out_dir()?;
    require_file(proposals, "proposal file")?;
    require_file(annotations, "annotation file")?;
    let gts = GtImage::from_records(&read_records(annotations)?, None);
    let props = load_proposals(proposals)?;
    let report = evaluate(&gts, &props, &cfg.eval)?;
    report.write_files(&out)?;
    cfg.write_sidecar(&out, "eval")?;
    println!("{}", summarise(&report));
    Ok(())
}

pub fn plot(common: &Common, report: &Path) -> CliResult<()> {
    let out = common.out_dir()?;
    require_file(report, "report")?;
    let text = fsutil::read_to_string(report)?;
    let parsed = EvalReport::from_json(&text, &report.display().to_string())?;
    fsutil::create_dir_all(&out)?;
    parsed.write_plots(&out)?;
    info!("plots written to {}", out.display());
    Ok(())
}

pub fn selftest(common: &Common, fault: Option<&str>, quick: bool) -> CliResult<()> {
    let fault = fault
        .map(|f| Fault::parse(f).ok_or_else(|| CliError::Usage(format!("unknown fault '{f}' (conv2d)"))))
        .transpose()?;
    let mut options = CheckOptions {
        fault,
        ..CheckOptions::default()
    };
    if quick {
        options.seeds = 3;
        options.dense_seeds = 2;
        options.metric_cases = 200;
    }
    let t0 = Instant::now();
    let outcomes = run_all(&options);
    let mut text = String::new();
    for o in &outcomes {
        println!("{o}");
        let _ = writeln!(text, "{o}");
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    let _ = writeln!(text, "{} checks, {} failed, {:.1}s", outcomes.len(), failed.len(), t0.elapsed().as_secs_f64());
    if let Some(out) = &common.out {
        fsutil::create_dir_all(out)?;
        fsutil::write_atomic(&out.join("selftest.txt"), text.as_bytes())?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("selftest failed: {}", failed.join(", "))))
    }
}
