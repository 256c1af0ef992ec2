//! Experiment runners behind the command line subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::config::{DataSource, ExperimentConfig, MaskMode};
use super::data::{self, Dataset, MaskSource, Prefetcher, SyntheticDatasetSpec};
use crate::error::{Error, Result};
use crate::inpaintnet::{checkpoint, Architecture, Discriminator, Generator, Trainer};
use crate::masks::{CoverageInterval, MaskKind, MaskSpec, RegionMask};
use crate::metrics::{self, Image, MetricSummary, MetricsRow};
use crate::norm::shift_report;
use crate::tensor::Tensor;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

/// An evaluation image together with its mask.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub image: usize,
    pub label: String,
    pub mask: RegionMask,
}

pub fn eval_pairs(ds: &Dataset, masks: &MaskSource) -> Result<Vec<EvalPair>> {
    let mut out = Vec::new();
    for image in 0..ds.len() {
        for (label, mask) in masks.evaluation(image)? {
            out.push(EvalPair { image, label, mask });
        }
    }
    Ok(out)
}

/// SHA-256 over every evaluation image and mask, in order.
pub fn pairs_hash(ds: &Dataset, pairs: &[EvalPair]) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        h.update(ds.names[p.image].as_bytes());
        for v in ds.images[p.image].data() {
            h.update(v.to_le_bytes());
        }
        h.update(p.mask.bits());
    }
    format!("{:x}", h.finalize())
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub rows: Vec<MetricsRow>,
    pub summary: MetricSummary,
    /// Mean hole coverage of the first RN-L layer's mask, and of all RN-L
    /// layers; `None` without RN-L layers.
    pub rnl_coverage: Option<(f64, f64)>,
}

/// Scores the composite output against the original for every pair.
pub fn evaluate(generator: &mut Generator<f32>, ds: &Dataset, pairs: &[EvalPair]) -> Result<Evaluation> {
    let mut rows = Vec::with_capacity(pairs.len());
    let mut summary = MetricSummary::default();
    let (mut first, mut all, mut layers) = (0.0, 0.0, 0usize);
    for p in pairs {
        let original = &ds.images[p.image];
        let out = generator.infer(original, std::slice::from_ref(&p.mask))?;
        let report = metrics::evaluate(&Image::from_unit_tensor(&out.composite, 0), &Image::from_unit_tensor(original, 0))?;
        summary.add(&report);
        if let Some(d) = out.diagnostics.first() {
            first += d.rnl.masks[0].coverage_ratio();
            for d in &out.diagnostics {
                all += d.rnl.masks[0].coverage_ratio();
            }
            layers = out.diagnostics.len();
        }
        rows.push(MetricsRow {
            image: format!("{}@{}", ds.names[p.image], p.label),
            mask_ratio: p.mask.coverage_ratio(),
            report,
        });
    }
    if summary.identical_count() > 0 {
        log::info!(
            "{} of {} pairs are identical to the original and left out of the PSNR mean",
            summary.identical_count(),
            summary.count()
        );
    }
    let n = pairs.len().max(1) as f64;
    let rnl_coverage = (layers > 0).then(|| (first / n, all / (n * layers as f64)));
    Ok(Evaluation {
        rows,
        summary,
        rnl_coverage,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: u64,
    /// Mean training L1 since the previous point.
    pub train_l1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub curve: Vec<CurvePoint>,
    pub checkpoint: PathBuf,
    pub pairs_hash: String,
}

fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "train_l1", "psnr", "ssim", "l1"])?;
    for p in curve {
        w.write_record([p.iteration.to_string(), f6(p.train_l1), f6(p.psnr), f6(p.ssim), f6(p.l1)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    metrics::write_metrics_csv(f, rows)
}

/// Writes input, mask, composite and every RN-L response map and mask of
/// one evaluation pair as PNGs.
pub fn dump_diagnostics(generator: &mut Generator<f32>, image: &Tensor<f32>, mask: &RegionMask, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let out = generator.infer(image, std::slice::from_ref(mask))?;
    let holed = Generator::network_input(image, std::slice::from_ref(mask))?;
    let s = image.shape();
    let rgb = Tensor::from_vec(s, holed.data()[..s.c * s.plane()].to_vec())?;
    data::save_rgb_png(&rgb, 0, &dir.join("input.png"))?;
    mask.save_png(dir.join("mask.png"))?;
    data::save_rgb_png(&out.completed, 0, &dir.join("completed.png"))?;
    data::save_rgb_png(&out.composite, 0, &dir.join("composite.png"))?;
    for d in &out.diagnostics {
        let r = &d.rnl.response;
        let rs = r.shape();
        data::save_gray_png(r.plane(0, 0), rs.h, rs.w, &dir.join(format!("{}.response.png", d.layer)))?;
        d.rnl.masks[0].save_png(dir.join(format!("{}.mask.png", d.layer)))?;
    }
    Ok(())
}

/// Trains one configuration and writes `config.txt`, `training_curve.csv`,
/// `metrics.csv`, checkpoints and diagnostic PNGs under `output_dir`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    cfg.check_paths()?;
    let out_dir = &cfg.output_dir;
    create_dir(out_dir)?;
    write_file(&out_dir.join("config.txt"), cfg.to_text())?;

    let ds = data::load(&cfg.data, cfg.image_size())?;
    let (train, eval) = ds.split_tail(cfg.eval_count);
    if train.is_empty() {
        return Err(Error::Config("no training images".into()));
    }
    let masks = MaskSource::from_config(cfg)?;
    let pairs = eval_pairs(&eval, &masks)?;
    let hash = pairs_hash(&eval, &pairs);
    log::info!(
        "{}: {} training images, {} evaluation pairs (sha256 {hash})",
        cfg.architecture,
        train.len(),
        pairs.len()
    );

    let generator = Generator::<f32>::new(cfg.generator.clone(), cfg.seed)?;
    let discriminator = Discriminator::new(cfg.generator.base_channels, cfg.seed);
    let mut trainer = Trainer::new(generator, discriminator, cfg.losses, cfg.optimizer)?;
    let prefetch = Prefetcher::spawn(
        Arc::new(train.images),
        masks,
        cfg.batch_size,
        cfg.iterations,
        cfg.seed,
        cfg.prefetch,
    );

    let started = Instant::now();
    let mut curve = Vec::new();
    let (mut l1_sum, mut l1_count) = (0.0, 0u64);
    let mut point = |trainer: &mut Trainer<f32>, iteration: u64, l1_sum: f64, l1_count: u64| -> Result<Evaluation> {
        let ev = evaluate(&mut trainer.generator, &eval, &pairs)?;
        curve.push(CurvePoint {
            iteration,
            train_l1: if l1_count > 0 { l1_sum / l1_count as f64 } else { f64::NAN },
            psnr: ev.summary.mean_psnr(),
            ssim: ev.summary.mean_ssim(),
            l1: ev.summary.mean_l1(),
        });
        Ok(ev)
    };
    while let Some(batch) = prefetch.next_batch() {
        let batch = batch?;
        let step = trainer.train_step(&batch.images, &batch.masks)?;
        l1_sum += step.loss_l1;
        l1_count += 1;
        let done = step.iteration + 1;
        if done % 100 == 0 {
            log::debug!("iteration {done}: l1 {:.5} ({:.1}s)", step.loss_l1, started.elapsed().as_secs_f64());
        }
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < cfg.iterations {
            let ev = point(&mut trainer, done, l1_sum, l1_count)?;
            log::info!(
                "iteration {done}: eval psnr {:.3} ssim {:.4} l1 {:.3}% ({:.0}s)",
                ev.summary.mean_psnr(),
                ev.summary.mean_ssim(),
                ev.summary.mean_l1(),
                started.elapsed().as_secs_f64()
            );
            (l1_sum, l1_count) = (0.0, 0);
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations {
            checkpoint::save(&trainer.generator, out_dir.join(format!("checkpoint_{done:07}.ckpt")))?;
        }
    }
    if trainer.iteration() != cfg.iterations {
        return Err(Error::Config(format!(
            "batch producer stopped after {} of {} iterations",
            trainer.iteration(),
            cfg.iterations
        )));
    }
    let ev = point(&mut trainer, cfg.iterations, l1_sum, l1_count)?;
    log::info!(
        "{} finished {} iterations in {:.0}s: psnr {:.3} ssim {:.4} l1 {:.3}%",
        cfg.architecture,
        cfg.iterations,
        started.elapsed().as_secs_f64(),
        ev.summary.mean_psnr(),
        ev.summary.mean_ssim(),
        ev.summary.mean_l1()
    );

    write_curve(&out_dir.join("training_curve.csv"), &curve)?;
    write_metrics(&out_dir.join("metrics.csv"), &ev.rows)?;
    let ckpt = out_dir.join("final.ckpt");
    checkpoint::save(&trainer.generator, &ckpt)?;
    if let Some(p) = pairs.first() {
        dump_diagnostics(&mut trainer.generator, &eval.images[p.image], &p.mask, &out_dir.join("dumps"))?;
    }
    Ok(TrainReport {
        psnr: ev.summary.mean_psnr(),
        ssim: ev.summary.mean_ssim(),
        l1: ev.summary.mean_l1(),
        curve,
        checkpoint: ckpt,
        pairs_hash: hash,
    })
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub data: DataSource,
    pub mask_mode: MaskMode,
    pub mask_dir: Option<PathBuf>,
    pub intervals: Vec<CoverageInterval>,
    pub mask_seed: u64,
    /// RN-L thresholds to sweep; `None` evaluates the stored threshold.
    pub thresholds: Option<Vec<f64>>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub rnl_coverage_first: f64,
    pub rnl_coverage_mean: f64,
}

#[derive(Clone, Debug)]
pub enum EvalOutcome {
    Metrics(Vec<MetricsRow>),
    Sweep(Vec<SweepRow>),
}

/// Evaluates a checkpoint. Writes per-pair rows (`image,mask_ratio,psnr,
/// ssim,l1`), or one row per threshold when sweeping. The checkpoint file
/// is only read.
pub fn run_eval(opts: &EvalOptions) -> Result<EvalOutcome> {
    let mut generator = checkpoint::load::<f32>(&opts.checkpoint)?;
    let size = generator.config().image_size;
    if let DataSource::Directory(d) = &opts.data {
        if !d.is_dir() {
            return Err(Error::io(d, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")));
        }
    }
    let ds = data::load(&opts.data, size)?;
    let masks = MaskSource::new(opts.mask_mode, size, opts.intervals.clone(), opts.mask_seed, opts.mask_dir.as_deref())?;
    let pairs = eval_pairs(&ds, &masks)?;
    log::info!("evaluating {} pairs (sha256 {})", pairs.len(), pairs_hash(&ds, &pairs));
    if let Some(parent) = opts.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let Some(thresholds) = &opts.thresholds else {
        let ev = evaluate(&mut generator, &ds, &pairs)?;
        write_metrics(&opts.out, &ev.rows)?;
        return Ok(EvalOutcome::Metrics(ev.rows));
    };

    let mut rows = Vec::new();
    for &t in thresholds {
        generator.set_rnl_threshold(t)?;
        let ev = evaluate(&mut generator, &ds, &pairs)?;
        let (first, mean) = ev
            .rnl_coverage
            .ok_or_else(|| Error::Config("threshold sweep needs a generator with RN-L layers".into()))?;
        rows.push(SweepRow {
            threshold: t,
            psnr: ev.summary.mean_psnr(),
            ssim: ev.summary.mean_ssim(),
            l1: ev.summary.mean_l1(),
            rnl_coverage_first: first,
            rnl_coverage_mean: mean,
        });
    }
    let mut w = csv_writer(&opts.out)?;
    w.write_record(["threshold", "psnr", "ssim", "l1", "rnl_coverage_first", "rnl_coverage_mean"])?;
    for r in &rows {
        w.write_record([
            format!("{}", r.threshold),
            f6(r.psnr),
            f6(r.ssim),
            f6(r.l1),
            f6(r.rnl_coverage_first),
            f6(r.rnl_coverage_mean),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&opts.out, e))?;
    Ok(EvalOutcome::Sweep(rows))
}

/// Inpaints one image; optionally dumps RN-L diagnostics next to it.
pub fn run_infer(checkpoint_path: &Path, image: &Path, mask: &Path, out: &Path, dump_dir: Option<&Path>) -> Result<()> {
    let mut generator = checkpoint::load::<f32>(checkpoint_path)?;
    let size = generator.config().image_size;
    let img = data::load_image(image, size)?;
    let m = data::load_mask_sized(mask, size)?;
    let result = generator.infer(&img, std::slice::from_ref(&m))?;
    data::save_rgb_png(&result.composite, 0, out)?;
    if let Some(dir) = dump_dir {
        dump_diagnostics(&mut generator, &img, &m, dir)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftRow {
    pub image: String,
    pub mask: String,
    pub channel: usize,
    pub mask_ratio: f64,
    pub report: crate::norm::ShiftReport,
}

/// Mean/variance shift of every image channel (in `[0, 255]`) under each
/// mask when holes are filled with `fill`.
pub fn run_shift_analyze(ds: &Dataset, masks: &MaskSource, fill: f64, out: &Path) -> Result<Vec<ShiftRow>> {
    let mut rows = Vec::new();
    for p in eval_pairs(ds, masks)? {
        let img = &ds.images[p.image];
        for c in 0..img.shape().c {
            let plane: Vec<f64> = img.plane(0, c).iter().map(|&v| v as f64 * 255.0).collect();
            rows.push(ShiftRow {
                image: ds.names[p.image].clone(),
                mask: p.label.clone(),
                channel: c,
                mask_ratio: p.mask.coverage_ratio(),
                report: shift_report(&plane, &p.mask, fill)?,
            });
        }
    }
    let mut w = csv_writer(out)?;
    w.write_record([
        "image",
        "mask",
        "channel",
        "mask_ratio",
        "mu_3u",
        "sigma_3u",
        "mu2_analytic",
        "sigma2_analytic",
        "mu2_empirical",
        "sigma2_empirical",
        "mean_shift",
    ])?;
    for r in &rows {
        let s = &r.report;
        w.write_record([
            r.image.clone(),
            r.mask.clone(),
            r.channel.to_string(),
            f6(r.mask_ratio),
            f6(s.mu_3u),
            f6(s.sigma_3u),
            f6(s.mu2_analytic),
            f6(s.sigma2_analytic),
            f6(s.mu2_empirical),
            f6(s.sigma2_empirical),
            f6(s.mean_shift()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(rows)
}

/// Writes `count` masks as `mask_00000.png ...` and returns their coverage.
pub fn run_mask_gen(
    kind: MaskKind,
    count: usize,
    interval: CoverageInterval,
    size: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<f64>> {
    create_dir(out_dir)?;
    let spec = MaskSpec {
        kind,
        coverage: interval,
        seed,
    };
    (0..count)
        .map(|i| {
            let m = crate::masks::generate(size, size, &spec, i as u64)?;
            m.save_png(out_dir.join(format!("mask_{i:05}.png")))?;
            Ok(m.coverage_ratio())
        })
        .collect()
}

pub fn run_synth_data(spec: &SyntheticDatasetSpec, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    for i in 0..spec.count {
        data::save_rgb_png(&spec.image(i), 0, &out_dir.join(spec.name(i)))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub architecture: Architecture,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
}

/// Trains each architecture under the same config (each in its own
/// subdirectory) and writes one row per architecture to `csv_name`.
pub fn run_ablation(cfg: &ExperimentConfig, archs: &[Architecture], csv_name: &str) -> Result<Vec<AblationRow>> {
    create_dir(&cfg.output_dir)?;
    let mut rows = Vec::new();
    let mut hash: Option<String> = None;
    for &arch in archs {
        let mut c = cfg.clone();
        c.set("architecture", arch.name())?;
        c.output_dir = cfg.output_dir.join(arch.name());
        let report = run_train(&c)?;
        match &hash {
            None => hash = Some(report.pairs_hash.clone()),
            Some(h) if *h != report.pairs_hash => {
                return Err(Error::Config(format!("{arch} was evaluated on different image/mask pairs")))
            }
            Some(_) => {}
        }
        rows.push(AblationRow {
            architecture: arch,
            psnr: report.psnr,
            ssim: report.ssim,
            l1: report.l1,
        });
    }
    let path = cfg.output_dir.join(csv_name);
    let mut w = csv_writer(&path)?;
    w.write_record(["architecture", "encoder", "resblocks", "decoder", "psnr", "ssim", "l1"])?;
    for r in &rows {
        let [e, m, d] = r.architecture.norms();
        w.write_record([
            r.architecture.name().to_string(),
            e.to_string(),
            m.to_string(),
            d.to_string(),
            f6(r.psnr),
            f6(r.ssim),
            f6(r.l1),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    if let Some(h) = hash {
        log::info!("all architectures evaluated on pairs with sha256 {h}");
        write_file(&cfg.output_dir.join("eval_pairs.sha256"), format!("{h}\n"))?;
    }
    Ok(rows)
}

/// The plug-location study: baseline and arch1..arch6.
pub fn run_table4(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    run_ablation(cfg, &Architecture::PLUG_STUDY, "table4.csv")
}
