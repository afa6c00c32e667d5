use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use clap::ArgMatches;
use funcnet::data::{pnm, ImageBuffer, Manifest, Split, Task};
use funcnet::eval::{
    ablate, degrade_for_eval, evaluate_at, evaluate_plain, export_plain_to, kernel_viz, report_db,
    sweep, write_ablation_csv, write_sweep_csv, Checkpoint, Variant,
};
use funcnet::model::{Model, ModelKind};
use funcnet::train::{run_training, LossReport, TrainConfig, TrainOutputs, Trainer};
use funcnet::{Error, Result};

use crate::args::{
    AblateArgs, DegradeArgs, EvalArgs, EvalData, EvalPlainArgs, ExportArgs, KernelArgs, SweepArgs,
    TrainArgs,
};
use crate::config::{resolve, RunConfig};

pub const CHECKPOINT_FILE: &str = "model.fnck";
pub const LOG_FILE: &str = "train.log.csv";

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn reporter(every: u64) -> impl FnMut(&str, &LossReport, Option<&[f64]>) {
    move |name, r, val| {
        let done = r.iteration + 1;
        if every > 0 && done % every == 0 {
            eprintln!(
                "{name} iter {done} loss {:.6} lr {:.3e} ({:.0} ms)",
                r.loss, r.lr, r.wall_ms
            );
        }
        if let Some(v) = val {
            let v: Vec<String> = v.iter().map(|p| format!("{:.3}", report_db(*p))).collect();
            eprintln!("{name} iter {done} val psnr {}", v.join(" "));
        }
    }
}

fn load_images(
    manifest: &Manifest,
    channels: usize,
) -> Result<(Vec<ImageBuffer>, Vec<ImageBuffer>)> {
    Ok((
        manifest.load_split(Split::Train, channels)?,
        manifest.load_split(Split::Val, channels)?,
    ))
}

pub fn train(args: &TrainArgs, m: &ArgMatches) -> Result<()> {
    let RunConfig {
        kind,
        network,
        train,
        manifest,
    } = resolve(&args.run, m)?;
    let (train_imgs, val_imgs) = load_images(&manifest, network.input_channels)?;
    let outputs = TrainOutputs {
        checkpoint: args.out_dir.join(CHECKPOINT_FILE),
        log: args.out_dir.join(LOG_FILE),
    };
    let mut trainer = if args.resume && outputs.checkpoint.is_file() {
        let t = Checkpoint::load(&outputs.checkpoint)?.trainer()?;
        let same_run = TrainConfig {
            total_iters: train.total_iters,
            ..t.config.clone()
        };
        if t.model.kind() != kind || *t.model.config() != network || same_run != train {
            return Err(Error::Config(format!(
                "{} was written by a different run configuration",
                outputs.checkpoint.display()
            )));
        }
        Trainer { config: train, ..t }
    } else {
        Trainer::new(kind, network, train)?
    };
    let mut report = reporter(args.run.report_every);
    run_training(
        &mut trainer,
        &train_imgs,
        &val_imgs,
        &outputs,
        &mut |r, v| report("train", r, v),
    )?;
    println!(
        "wrote {} after {} iterations",
        outputs.checkpoint.display(),
        trainer.iteration
    );
    Ok(())
}

fn eval_task(ckpt: &Checkpoint, data: &EvalData) -> Result<Task> {
    data.task
        .task()
        .or(ckpt.header.train.as_ref().map(|t| t.task))
        .ok_or_else(|| {
            Error::Config("checkpoint has no training configuration; pass --task".into())
        })
}

fn eval_images(ckpt: &Checkpoint, data: &EvalData) -> Result<Vec<ImageBuffer>> {
    Manifest::load(&data.manifest)?
        .load_split(data.split.into(), ckpt.header.network.input_channels)
}

fn print_psnr(x: f64, psnr: f64, images: usize) {
    println!("x,psnr_db,images");
    println!("{x},{},{images}", report_db(psnr));
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let task = eval_task(&ckpt, &args.data)?;
    let images = eval_images(&ckpt, &args.data)?;
    let model = ckpt.model()?;
    let psnr = evaluate_at(
        &model,
        &images,
        task,
        args.x,
        args.data.eval_seed,
        args.data.ensemble,
    )?;
    print_psnr(args.x, psnr, images.len());
    Ok(())
}

pub fn eval_plain(args: &EvalPlainArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let net = match ckpt.model()? {
        Model::Plain(n) => n,
        Model::Func(_) => {
            return Err(Error::Config(format!(
                "{} holds a functional network; export it first",
                args.checkpoint.display()
            )))
        }
    };
    let x = if args.x == "auto" {
        ckpt.header
            .materialized_at
            .ok_or_else(|| Error::Config("checkpoint records no export level; pass --x".into()))?
    } else {
        args.x
            .parse()
            .map_err(|_| Error::Config(format!("invalid --x {:?}", args.x)))?
    };
    net.config().domain.check(x)?;
    let task = eval_task(&ckpt, &args.data)?;
    let images = eval_images(&ckpt, &args.data)?;
    let psnr = evaluate_plain(
        &net,
        &images,
        task,
        x,
        args.data.eval_seed,
        args.data.ensemble,
    )?;
    print_psnr(x, psnr, images.len());
    Ok(())
}

/// Parses `start:stop:step` (inclusive of `stop` up to rounding) or a
/// comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("invalid grid {s:?}"));
    let num = |p: &str| p.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0 && a <= b && a.is_finite() && b.is_finite()) {
                return Err(bad());
            }
            let n = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..n).map(|i| a + i as f64 * step).collect())
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

fn grid_or_default(grid: &str, task: Task) -> Result<Vec<f64>> {
    if grid == "auto" {
        Ok(task.sweep_grid())
    } else {
        parse_grid(grid)
    }
}

pub fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let task = eval_task(&ckpt, &args.data)?;
    let xs = grid_or_default(&args.grid, task)?;
    let model = ckpt.model()?;
    for &x in &xs {
        model.config().domain.check(x)?;
    }
    let images = eval_images(&ckpt, &args.data)?;
    let rows = sweep(
        &model,
        &images,
        task,
        &xs,
        args.data.eval_seed,
        args.data.ensemble,
    )?;
    let mut out = create(&args.out)?;
    write_sweep_csv(&rows, &mut out)?;
    out.flush().map_err(io_err(&args.out))?;
    for r in &rows {
        println!("{},{}", r.x, report_db(r.psnr));
    }
    Ok(())
}

pub fn export(args: &ExportArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let out = export_plain_to(&ckpt, args.x, &args.out)?;
    println!(
        "wrote {} ({} parameter bytes, from {})",
        args.out.display(),
        out.parameter_blob_bytes(),
        ckpt.parameter_blob_bytes()
    );
    Ok(())
}

pub fn kernels(args: &KernelArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let net = match ckpt.model()? {
        Model::Func(n) => n,
        Model::Plain(_) => {
            return Err(Error::Config(
                "kernel inspection needs a functional network".into(),
            ))
        }
    };
    let xs = match ckpt.header.train.as_ref() {
        Some(t) => grid_or_default(&args.grid, t.task)?,
        None if args.grid == "auto" => {
            let d = net.config().domain;
            (0..8)
                .map(|i| d.lo + (d.hi - d.lo) * i as f64 / 7.0)
                .collect()
        }
        None => parse_grid(&args.grid)?,
    };
    let grid = kernel_viz(&net, args.layer, args.out_channel, args.in_channel, &xs)?;
    let mut csv = create(&args.csv)?;
    grid.write_csv(&mut csv)?;
    csv.flush().map_err(io_err(&args.csv))?;
    if let Some(dir) = args.montage.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    pnm::write(&args.montage, &grid.montage()?)?;
    for s in &grid.slices {
        println!("{},{},{}", s.x, s.t, s.l2_norm());
    }
    Ok(())
}

pub fn ablate_cmd(args: &AblateArgs, m: &ArgMatches) -> Result<()> {
    let cfg = resolve(&args.run, m)?;
    if cfg.kind != ModelKind::Funcnet {
        return Err(Error::Config(
            "ablation derives every variant from a functional network; drop --model".into(),
        ));
    }
    let variants = args
        .variants
        .split(',')
        .map(|v| v.trim().parse::<Variant>())
        .collect::<Result<Vec<_>>>()?;
    let (train_imgs, val_imgs) = load_images(&cfg.manifest, cfg.network.input_channels)?;
    let mut report = reporter(args.run.report_every);
    let rows = ablate(
        &cfg.network,
        &cfg.train,
        &variants,
        &train_imgs,
        &val_imgs,
        &args.dir,
        &mut |v, r, val| report(v.name(), r, val),
    )?;
    let path = args.dir.join("ablation.csv");
    let mut out = create(&path)?;
    write_ablation_csv(&rows, &mut out)?;
    out.flush().map_err(io_err(&path))?;
    let mut stdout = io::stdout().lock();
    write_ablation_csv(&rows, &mut stdout)?;
    Ok(())
}

pub fn degrade(args: &DegradeArgs) -> Result<()> {
    let task = args
        .task
        .task()
        .ok_or_else(|| Error::Config("degrade needs a concrete --task".into()))?;
    let img = pnm::read(&args.input)?;
    let img = if task == Task::Deblock {
        img.to_gray()
    } else {
        img
    };
    let out = degrade_for_eval(task, &img, args.x, args.seed, args.index)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    pnm::write(&args.out, &out)?;
    Ok(())
}
