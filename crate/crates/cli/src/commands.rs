use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use sdsr::events::{
    downsample_stream, render_frame, write_pgm, EventStream, Frame, PsthSource,
};
use sdsr::network::{decode_events, Mode, Network, NetworkConfig};
use sdsr::objective::{psnr, rmse, LossWeights};
use sdsr::profiler::{emit_report, ComplexityReport, ReportFormat};
use sdsr::trainer::{self, baseline_rmse, BarDataset, evaluate, prepare_all, Sample, TrainConfig};

use crate::io::{self, create_dir, write_atomic};
use crate::manifest::{sidecar, ManifestBuilder};
use crate::{DownsampleArgs, EvalArgs, FormatArg, ProfileArgs, RenderArgs, SynthArgs, TimingArgs, TrainArgs};

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let manifest = ManifestBuilder::start("synth");
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if args.width % 2 != 0 || args.height % 2 != 0 {
        return Err(usage("--width and --height must be even to form LR pairs"));
    }
    let pairs = trainer::moving_bar_pairs(&BarDataset {
        width: args.width,
        height: args.height,
        count: args.count,
        speed: args.speed,
        speed_jitter: args.speed_jitter,
        duration_ms: args.duration_ms,
        polarity: args.polarity.into(),
        seed: args.seed,
    })?;

    let (hr_dir, lr_dir) = (args.out.join("hr"), args.out.join("lr"));
    create_dir(&hr_dir)?;
    create_dir(&lr_dir)?;
    let mut outputs = Vec::with_capacity(2 * args.count);
    for (i, pair) in pairs.iter().enumerate() {
        let name = format!("{i:05}.evt");
        for (dir, stream) in [(&hr_dir, &pair.hr), (&lr_dir, &pair.lr)] {
            let path = dir.join(&name);
            write_atomic(&path, &io::stream_bytes(stream)?)?;
            outputs.push(path);
        }
    }
    manifest
        .finish(args, Some(args.seed), vec![], outputs)?
        .write(&args.out.join("manifest.json"))?;
    println!("wrote {} pairs to {}", args.count, args.out.display());
    Ok(())
}

pub fn downsample(args: &DownsampleArgs) -> Result<()> {
    let manifest = ManifestBuilder::start("downsample");
    let hr = io::read_stream(&args.input)?;
    let lr = downsample_stream(&hr)?;
    write_atomic(&args.out, &io::stream_bytes(&lr)?)?;
    manifest
        .finish(args, None, vec![args.input.clone()], vec![args.out.clone()])?
        .write(&sidecar(&args.out))?;
    println!(
        "{} events at {}x{} -> {} events at {}x{}",
        hr.len(),
        hr.width,
        hr.height,
        lr.len(),
        lr.width,
        lr.height
    );
    Ok(())
}

fn train_config(timing: &TimingArgs, steps: usize, loss: LossWeights) -> TrainConfig {
    TrainConfig {
        loss,
        bin_ms: timing.bin_ms,
        dt_ms: timing.dt_ms,
        steps,
        ..TrainConfig::default()
    }
}

fn load_data(dir: &Path, timing: &TimingArgs) -> Result<(io::Dataset, usize)> {
    let data = io::read_dataset(dir)?;
    if data.pairs.is_empty() {
        bail!("{} holds no LR/HR pairs", dir.display());
    }
    let g = data.pairs[0].lr.geometry();
    if let Some(bad) = data.pairs.iter().position(|p| {
        let q = p.lr.geometry();
        (q.width, q.height) != (g.width, g.height)
    }) {
        bail!("{} has a different geometry from {}", data.names[bad], data.names[0]);
    }
    let steps = timing.steps.unwrap_or_else(|| io::steps_for(&data.pairs, timing.dt_ms));
    Ok((data, steps))
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let manifest = ManifestBuilder::start("train");
    if args.checkpoint_every == 0 {
        return Err(usage("--checkpoint-every must be at least 1"));
    }
    let (data, steps) = load_data(&args.data, &args.timing)?;
    let loss = LossWeights {
        alpha: args.alpha,
        beta: args.beta,
    };
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        lr0: args.lr,
        seed: args.seed,
        ..train_config(&args.timing, steps, loss)
    };
    config.validate()?;
    let g = data.pairs[0].lr.geometry();
    let mut net_config = NetworkConfig::new(args.mode.into(), g.height as usize, g.width as usize);
    net_config.seed = args.seed;
    let mut net = Network::build(net_config)?;
    let samples = prepare_all(data.pairs, &config)?;

    let ckpt_dir = args.out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let mut log = String::from("# epoch lr loss rmse events_per_step\n");
    let mut outputs = Vec::new();
    let log_path = args.out.join("train.log");
    trainer::train(&mut net, &samples, &config, |stats, net| {
        println!("{stats}");
        let _ = writeln!(log, "{stats}");
        let mut persist = || -> Result<()> {
            write_atomic(&log_path, log.as_bytes())?;
            let epoch = stats.epoch + 1;
            if epoch % args.checkpoint_every == 0 {
                let path = ckpt_dir.join(format!("epoch-{epoch:03}.sdsr"));
                write_atomic(&path, &io::checkpoint_bytes(net)?)?;
                outputs.push(path);
            }
            Ok(())
        };
        persist().map_err(|e| sdsr::Error::Checkpoint(format!("{e:#}")))
    })?;
    let model = args.out.join("model.sdsr");
    write_atomic(&model, &io::checkpoint_bytes(&net)?)?;
    outputs.extend([log_path, model.clone()]);

    #[derive(Serialize)]
    struct Resolved<'a> {
        args: &'a TrainArgs,
        train: &'a TrainConfig,
        network: &'a NetworkConfig,
    }
    let inputs = data.names.iter().map(|n| args.data.join("lr").join(n)).collect();
    manifest
        .finish(
            Resolved {
                args,
                train: &config,
                network: &net.config,
            },
            Some(args.seed),
            inputs,
            outputs,
        )?
        .write(&args.out.join("manifest.json"))?;
    println!("saved {}", model.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    samples: usize,
    rmse: f64,
    psnr_db: Option<f64>,
    /// Nearest-neighbour upsampled LR input, checkpoint mode only.
    baseline_rmse: Option<f64>,
    loss: Option<f64>,
    complexity: Option<ComplexityReport>,
}

fn render_eval(report: &EvalReport, format: FormatArg) -> Result<String> {
    if format == FormatArg::Json {
        return Ok(serde_json::to_string_pretty(report)?);
    }
    let mut out = String::new();
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    writeln!(out, "samples        {}", report.samples)?;
    writeln!(out, "rmse           {:.6}", report.rmse)?;
    writeln!(out, "psnr_db        {}", fmt(report.psnr_db))?;
    writeln!(out, "baseline_rmse  {}", fmt(report.baseline_rmse))?;
    writeln!(out, "loss           {}", fmt(report.loss))?;
    if let Some(c) = &report.complexity {
        writeln!(out)?;
        out.push_str(&emit_report(c, ReportFormat::Table)?);
    }
    Ok(out)
}

fn check_geometry(net: &Network, samples: &[Sample]) -> Result<()> {
    let c = &net.config;
    for s in samples {
        let g = s.pair.lr.geometry();
        if (g.height as usize, g.width as usize) != (c.input_height, c.input_width) {
            bail!(
                "data is {}x{} but the checkpoint expects {}x{}",
                g.width,
                g.height,
                c.input_width,
                c.input_height
            );
        }
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let manifest = ManifestBuilder::start("eval");
    let (data, steps) = load_data(&args.data, &args.timing)?;
    let config = train_config(&args.timing, steps, LossWeights::default());
    config.validate()?;
    let mut inputs = vec![args.data.clone()];
    let mut predictions = Vec::new();

    let (report, default_dir) = if let Some(ckpt) = &args.ckpt {
        inputs.push(ckpt.clone());
        let net = io::read_checkpoint(ckpt)?;
        let samples = prepare_all(data.pairs, &config)?;
        check_geometry(&net, &samples)?;
        let modes: Vec<Mode> = args.modes.iter().map(|&m| m.into()).collect();
        let ev = evaluate(&net, &samples, &config, &modes)?;
        if args.save_predictions.is_some() {
            predictions = samples
                .par_iter()
                .map(|s| {
                    let out = net.forward_sequence(&s.input, false)?.output;
                    decode_events(&out, s.pair.hr.duration)
                })
                .collect::<sdsr::Result<Vec<_>>>()?;
        }
        let report = EvalReport {
            samples: samples.len(),
            rmse: ev.rmse,
            psnr_db: ev.psnr,
            baseline_rmse: Some(baseline_rmse(&samples, &config)?),
            loss: Some(ev.loss),
            complexity: ev.report,
        };
        (report, ckpt.parent().map(Path::to_path_buf).unwrap_or_default())
    } else {
        let dir = args.pred_dir.as_ref().expect("clap enforces ckpt or pred-dir");
        inputs.push(dir.clone());
        let mut rows = Vec::with_capacity(data.names.len());
        for (name, pair) in data.names.iter().zip(&data.pairs) {
            let pred = io::read_stream(&dir.join(name)).with_context(|| format!("prediction for {name}"))?;
            if pred.dims() != pair.hr.dims() || pred.duration != pair.hr.duration {
                bail!("prediction {name} does not match its ground-truth geometry");
            }
            let p = (pair.hr.len() > 0)
                .then(|| psnr(&pred, &pair.hr, config.bin_ms))
                .transpose()?;
            rows.push((rmse(&pred, &pair.hr, config.bin_ms)?, p));
        }
        let psnrs: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
        let report = EvalReport {
            samples: rows.len(),
            rmse: rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64,
            psnr_db: (!psnrs.is_empty()).then(|| psnrs.iter().sum::<f64>() / psnrs.len() as f64),
            baseline_rmse: None,
            loss: None,
            complexity: None,
        };
        (report, dir.clone())
    };

    let text = render_eval(&report, args.report)?;
    print!("{text}");
    let out = args.out.clone().unwrap_or_else(|| {
        default_dir.join(match args.report {
            FormatArg::Json => "eval.json",
            FormatArg::Table => "eval.txt",
        })
    });
    let mut outputs = Vec::new();
    if let Some(dir) = &args.save_predictions {
        create_dir(dir)?;
        for (name, stream) in data.names.iter().zip(&predictions) {
            let path = dir.join(name);
            write_atomic(&path, &io::stream_bytes(stream)?)?;
            outputs.push(path);
        }
    }
    write_atomic(&out, text.as_bytes())?;
    outputs.push(out.clone());
    manifest.finish(args, None, inputs, outputs)?.write(&sidecar(&out))?;
    Ok(())
}

pub fn profile(args: &ProfileArgs) -> Result<()> {
    let manifest = ManifestBuilder::start("profile");
    let mut inputs = Vec::new();
    let report = if args.structural {
        let config = match &args.ckpt {
            Some(path) => {
                inputs.push(path.clone());
                io::read_checkpoint(path)?.config
            }
            None => NetworkConfig::new(Mode::Ann, args.height, args.width),
        };
        ComplexityReport::structural(&config)?
    } else {
        let (Some(ckpt), Some(data_dir)) = (&args.ckpt, &args.data) else {
            return Err(usage("profiling needs --ckpt and --data unless --structural is given"));
        };
        if args.modes.is_empty() {
            return Err(usage("--modes must name at least one mode"));
        }
        inputs.extend([ckpt.clone(), data_dir.clone()]);
        let net = io::read_checkpoint(ckpt)?;
        let (data, steps) = load_data(data_dir, &args.timing)?;
        let config = train_config(&args.timing, steps, LossWeights::default());
        let samples = prepare_all(data.pairs, &config)?;
        check_geometry(&net, &samples)?;
        let modes: Vec<Mode> = args.modes.iter().map(|&m| m.into()).collect();
        evaluate(&net, &samples, &config, &modes)?
            .report
            .expect("report requested for a nonempty mode list")
    };
    let text = emit_report(&report, args.format.into())?;
    print!("{text}");
    if !text.ends_with('\n') {
        println!();
    }
    if let Some(out) = &args.out {
        write_atomic(out, text.as_bytes())?;
        manifest
            .finish(args, None, inputs, vec![out.clone()])?
            .write(&sidecar(out))?;
    }
    Ok(())
}

/// Per-frame event counts, `[frame][channel][y][x]`, over fixed windows.
fn bin_counts(stream: &EventStream, bin_ms: f64, frames: usize) -> Vec<Vec<f64>> {
    let (c, h, w) = stream.dims();
    let mut out = vec![vec![0.0; c * h * w]; frames];
    stream.for_each_mass(&mut |t_ms, cell, v| {
        let k = ((t_ms / bin_ms).floor() as usize).min(frames - 1);
        out[k][cell] += v;
    });
    out
}

fn upscale(frame: &Frame, k: usize) -> Frame {
    let (w, h) = (frame.width * k, frame.height * k);
    let pixels = (0..h * w)
        .map(|i| frame.pixels[(i / w / k) * frame.width + (i % w) / k])
        .collect();
    Frame {
        width: w,
        height: h,
        pixels,
    }
}

fn pgm_bytes(frame: &Frame) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_pgm(frame, &mut buf)?;
    Ok(buf)
}

pub fn render(args: &RenderArgs) -> Result<()> {
    let manifest = ManifestBuilder::start("render");
    if !(args.bin_ms > 0.0 && args.bin_ms.is_finite()) {
        return Err(usage("--bin-ms must be positive"));
    }
    let input = io::read_stream(&args.input)?;
    let triplet = match (&args.gt, &args.pred) {
        (Some(gt), Some(pred)) => {
            let (gt_s, pred_s) = (io::read_stream(gt)?, io::read_stream(pred)?);
            if gt_s.dims() != pred_s.dims() {
                bail!("ground truth and prediction differ in geometry");
            }
            if gt_s.width % input.width != 0
                || gt_s.height % input.height != 0
                || gt_s.width / input.width != gt_s.height / input.height
            {
                bail!("input geometry does not evenly divide the ground truth");
            }
            Some((gt_s, pred_s))
        }
        _ => None,
    };
    let horizon_ms = triplet
        .as_ref()
        .map_or(input.duration, |(g, _)| g.duration.max(input.duration)) as f64
        / 1000.0;
    let frames = ((horizon_ms / args.bin_ms).ceil() as usize).max(1);
    let stem = args
        .input
        .file_stem()
        .map_or("stream".to_string(), |s| s.to_string_lossy().into_owned());

    let render_all = |s: &EventStream| -> Result<Vec<[Frame; 2]>> {
        let (w, h) = (s.width as usize, s.height as usize);
        bin_counts(s, args.bin_ms, frames)
            .iter()
            .map(|counts| {
                Ok([
                    render_frame(&counts[..w * h], w, h)?,
                    render_frame(&counts[w * h..], w, h)?,
                ])
            })
            .collect()
    };
    let mut files: Vec<(PathBuf, Frame)> = Vec::new();
    let input_frames = render_all(&input)?;
    for (k, pair) in input_frames.iter().enumerate() {
        for (pol, frame) in ["off", "on"].iter().zip(pair) {
            files.push((args.out.join(format!("{stem}_bin{k:04}_{pol}.pgm")), frame.clone()));
        }
    }
    if let Some((gt, pred)) = &triplet {
        let factor = (gt.width / input.width) as usize;
        let (gt_frames, pred_frames) = (render_all(gt)?, render_all(pred)?);
        for k in 0..frames {
            for (j, pol) in ["off", "on"].iter().enumerate() {
                let composite = Frame::hconcat(&[
                    upscale(&input_frames[k][j], factor),
                    gt_frames[k][j].clone(),
                    pred_frames[k][j].clone(),
                ]);
                files.push((args.out.join(format!("composite_bin{k:04}_{pol}.pgm")), composite));
            }
        }
    }

    create_dir(&args.out)?;
    let mut outputs = Vec::with_capacity(files.len());
    for (path, frame) in files {
        write_atomic(&path, &pgm_bytes(&frame)?)?;
        outputs.push(path);
    }
    let mut inputs = vec![args.input.clone()];
    inputs.extend(args.gt.iter().chain(&args.pred).cloned());
    let n = outputs.len();
    manifest
        .finish(args, None, inputs, outputs)?
        .write(&args.out.join("manifest.json"))?;
    println!("wrote {n} frames to {}", args.out.display());
    Ok(())
}
