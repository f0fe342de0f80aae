//! The four CLI entry points: `train`, `sr`, `eval`, and `gradcheck`.
//! Each is an ordinary library function so integration tests can drive the
//! exact code paths the binary runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::data::{
    augment, batch_to_tensor, bicubic_pair, load_images, resample_bicubic, sample_patches,
    AugmentConfig, DatasetManifest, ImagePlane,
};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::loss::LossReport;
use crate::metrics::{evaluate_pair, EvalProtocol, EvalResult};
use crate::model::{Discriminator, Generator};
use crate::optim::{AdamConfig, Trainer};
use crate::tensor::RngStream;

/// Train from scratch (or resume from `--checkpoint`), writing the resolved
/// config, a per-iteration loss CSV, periodic checkpoints, and a final
/// checkpoint into the run directory. Returns the run directory.
pub fn cmd_train(cfg: &Config) -> Result<PathBuf> {
    cfg.validate()?;
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("train requires --data <manifest>".into()))?;
    let manifest =
        DatasetManifest::from_file(data, cfg.scale, cfg.patch_size, cfg.patches_per_epoch)?;
    manifest.validate(cfg.g_n_half)?;
    let images = load_images(&manifest)?;

    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("config.txt"), cfg.serialize())?;

    let base = RngStream::new(cfg.seed);
    let mut g_stream = base.split(1);
    let mut d_stream = base.split(2);
    let mut data_stream = base.split(3);

    let generator = Generator::<f32>::build(cfg.generator_plan(), &mut g_stream)?;
    let discriminator = Discriminator::<f32>::build(cfg.discriminator_plan(), &mut d_stream)?;
    let mut trainer = Trainer::new(
        generator,
        discriminator,
        AdamConfig::default(),
        cfg.loss_weights(),
        cfg.schedule(),
    )?;
    if let Some(ck_path) = &cfg.checkpoint {
        let ck = Checkpoint::load(ck_path)?;
        ck.apply_to_trainer(&mut trainer)?;
        eprintln!(
            "resumed from {ck_path} at iteration {}",
            trainer.iteration()
        );
    }

    let csv_path = cfg.out.join("loss.csv");
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    writeln!(csv, "{}", LossReport::csv_header())?;

    let aug = AugmentConfig::default();
    let mut pool: Vec<ImagePlane> = Vec::new();
    let mut pos = 0usize;
    let started = Instant::now();
    while trainer.iteration() < cfg.iters {
        if pos + cfg.batch > pool.len() {
            pool = sample_patches(&images, &mut data_stream, cfg.patches_per_epoch, cfg.patch_size)?;
            pos = 0;
        }
        let mut zs = Vec::with_capacity(cfg.batch);
        let mut ys = Vec::with_capacity(cfg.batch);
        for patch in &pool[pos..pos + cfg.batch] {
            let hr = augment(patch, &mut data_stream, &aug);
            let (z_img, y_img) = bicubic_pair(&hr, cfg.scale)?;
            zs.push(z_img);
            ys.push(y_img);
        }
        pos += cfg.batch;
        let z = batch_to_tensor::<f32>(&zs);
        let y = batch_to_tensor::<f32>(&ys);
        let report = trainer.train_iteration(&z, &y)?;
        let it = trainer.iteration();
        writeln!(csv, "{}", report.csv_row(it))?;
        if it % cfg.checkpoint_every == 0 && it < cfg.iters {
            csv.flush()?;
            save_checkpoint(&trainer, cfg, &cfg.out.join(format!("checkpoint_{it:07}.ckpt")))?;
        }
        if it % 50 == 0 || it == cfg.iters {
            eprintln!(
                "iter {it}/{} l_g={:.5} l_d={:.5} l_y={:.5} ({:.1}s)",
                cfg.iters,
                report.l_g,
                report.l_d,
                report.l_y,
                started.elapsed().as_secs_f64()
            );
        }
    }
    csv.flush()?;
    save_checkpoint(&trainer, cfg, &cfg.out.join("final.ckpt"))?;
    Ok(cfg.out.clone())
}

fn save_checkpoint(trainer: &Trainer<f32>, cfg: &Config, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::from_trainer(trainer);
    ck.insert_scalar("meta.scale", cfg.scale as f64);
    ck.save(path)
}

/// Rebuild the generator stored in a checkpoint file.
fn load_generator(path: &str) -> Result<(Generator<f32>, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let plan = ck.generator_plan()?;
    let mut stream = RngStream::new(0);
    let mut g = Generator::<f32>::build(plan, &mut stream)?;
    ck.apply_to_generator(&mut g)?;
    Ok((g, ck))
}

/// Replicate-pad an already-upscaled input to the generator's divisibility
/// requirement, run the generator, and crop the padding away.
fn run_generator(g: &Generator<f32>, z_img: &ImagePlane) -> Result<ImagePlane> {
    let (w, h) = (z_img.width(), z_img.height());
    let mult = 1usize << g.plan.n_half;
    let padded = z_img.pad_replicate(w.div_ceil(mult) * mult, h.div_ceil(mult) * mult)?;
    let out = g.forward(&padded.to_tensor::<f32>())?;
    ImagePlane::from_tensor(&out, 0)?.crop(0, 0, w, h)
}

/// Bicubic-upscale `img` by `scale`, then refine it with the generator.
fn super_resolve(g: &Generator<f32>, img: &ImagePlane, scale: usize) -> Result<ImagePlane> {
    let up = resample_bicubic(img, img.width() * scale, img.height() * scale, false);
    run_generator(g, &up)
}

/// Super-resolve one image with a trained generator; writes
/// `<stem>_sr<scale>.png` into the output directory and returns its path.
pub fn cmd_sr(cfg: &Config) -> Result<PathBuf> {
    let input = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("sr requires --data <image>".into()))?;
    let ck_path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("sr requires --checkpoint <file>".into()))?;
    if !matches!(cfg.scale, 2 | 4 | 8) {
        return Err(Error::Config(format!(
            "scale must be 2, 4, or 8, got {}",
            cfg.scale
        )));
    }
    let (g, ck) = load_generator(ck_path)?;
    if let Ok(trained_scale) = ck.scalar("meta.scale") {
        if trained_scale as usize != cfg.scale {
            eprintln!(
                "warning: checkpoint was trained for scale {}, running at {}",
                trained_scale as usize, cfg.scale
            );
        }
    }
    let img = ImagePlane::load(input)?;
    let sr = super_resolve(&g, &img, cfg.scale)?;
    std::fs::create_dir_all(&cfg.out)?;
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let out_path = cfg.out.join(format!("{stem}_sr{}.png", cfg.scale));
    sr.save_png(&out_path)?;
    println!("{}", out_path.display());
    Ok(out_path)
}

/// One evaluation row.
struct EvalRow {
    name: String,
    result: EvalResult,
}

/// Evaluate PSNR/SSIM over every image in a directory. `--checkpoint
/// bicubic` scores the bicubic reconstruction itself (the no-model
/// baseline); a checkpoint path scores the generator's output. Prints the
/// CSV report, writes it to `<out>/report.csv`, and returns it.
pub fn cmd_eval(cfg: &Config) -> Result<String> {
    let dir = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("eval requires --data <directory>".into()))?;
    let mode = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("eval requires --checkpoint <file|bicubic>".into()))?;
    if !matches!(cfg.scale, 2 | 4 | 8) {
        return Err(Error::Config(format!(
            "scale must be 2, 4, or 8, got {}",
            cfg.scale
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| {
                    matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "bmp")
                })
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no decodable images (png/jpg/bmp) in {}",
            dir.display()
        )));
    }
    let generator = if mode == "bicubic" {
        None
    } else {
        Some(load_generator(mode)?.0)
    };
    let proto = EvalProtocol::for_scale(cfg.scale);

    let rows: Vec<EvalRow> = files
        .par_iter()
        .map(|path| -> Result<EvalRow> {
            let img = ImagePlane::load(path)?;
            let (z_img, y_img) = bicubic_pair(&img, cfg.scale)?;
            let candidate = match &generator {
                None => z_img,
                Some(g) => run_generator(g, &z_img)?,
            };
            let result = evaluate_pair(&candidate, &y_img, &proto)?;
            let name = path
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or("?")
                .to_string();
            Ok(EvalRow { name, result })
        })
        .collect::<Result<_>>()?;

    let mut csv = String::from("image,psnr_db,ssim\n");
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for row in &rows {
        csv.push_str(&format!(
            "{},{:.6},{:.6}\n",
            row.name, row.result.psnr_db, row.result.ssim
        ));
        psnr_sum += row.result.psnr_db;
        ssim_sum += row.result.ssim;
    }
    let n = rows.len() as f64;
    csv.push_str(&format!("mean,{:.6},{:.6}\n", psnr_sum / n, ssim_sum / n));
    print!("{csv}");
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("report.csv"), &csv)?;
    Ok(csv)
}

/// Run the full finite-difference suite (op-level, loss-level, end-to-end)
/// and print one row per check. Any failure is an error (exit code 3).
pub fn cmd_gradcheck(seed: u64) -> Result<()> {
    let started = Instant::now();
    let reports = gradcheck::run_suite(seed);
    println!(
        "{:<44} {:>12} {:>10} {:>7} {:>7}",
        "check", "max_rel_err", "threshold", "probes", "status"
    );
    let mut failures = Vec::new();
    for r in &reports {
        let status = if r.pass() { "PASS" } else { "FAIL" };
        println!(
            "{:<44} {:>12.3e} {:>10.1e} {:>7} {:>7}",
            r.name, r.max_rel_err, r.threshold, r.probes, status
        );
        if !r.pass() {
            failures.push(r.name.clone());
        }
    }
    println!(
        "{} checks, {} failed, {:.1}s",
        reports.len(),
        failures.len(),
        started.elapsed().as_secs_f64()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheckFailed(failures.join(", ")))
    }
}
