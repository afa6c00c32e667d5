//! End-to-end acceptance checks, one line per criterion.
//!
//! Criteria 7 to 9 train the default backbone for the full budget through
//! the `ablate` command. Trained checkpoints are cached under the cargo
//! target tmpdir and reused by later runs.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use funcnet::data::{add_awgn, jpeg_degrade, pnm, quant_table, ImageBuffer, LUMINANCE_TABLE};
use funcnet::eval::{export_plain, psnr, Checkpoint};
use funcnet::func_param::{FuncParam, Level, MapKind, ParamDomain};
use funcnet::model::{LayerSpec, Model, ModelKind, NetworkConfig, PlainNetwork};
use funcnet::rng::{stream, Purpose};
use funcnet::train::{batch_loss, LevelGroup};
use funcnet_tensor::{Element, Shape, Tape, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cache() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn funcnet(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_funcnet"))
        .args(args)
        .current_dir(root())
        .env_remove("FUNCNET_THREADS")
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "funcnet {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn gaussian<T: Element>(dims: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(scale * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

fn uniform<T: Element>(dims: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random::<f64>()))
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

fn perturb<T: Element>(model: &mut Model<T>, scale: f64, rng: &mut impl Rng) {
    for t in model.tensors_mut() {
        let n = gaussian::<T>(t.dims(), scale, rng);
        for (v, d) in t.data_mut().iter_mut().zip(n.data()) {
            *v = *v + *d;
        }
    }
}

/// A random map together with a domain on which it is defined.
fn random_map(rng: &mut impl Rng, analytic_only: bool) -> (MapKind, ParamDomain) {
    let kinds = if analytic_only { 3 } else { 4 };
    let kind = match rng.random_range(0..kinds) {
        0 => MapKind::Identity,
        1 => MapKind::Reciprocal,
        2 => MapKind::JpegScale,
        _ => MapKind::LearnedMlp,
    };
    let lo = match kind {
        MapKind::JpegScale => rng.random_range(5.0..40.0),
        MapKind::Reciprocal => rng.random_range(0.5..4.0),
        _ => rng.random_range(-5.0..20.0),
    };
    let hi = lo + rng.random_range(5.0..50.0);
    (kind, ParamDomain::new(lo, hi).unwrap())
}

/// Conv → PReLU → ChannelAffine → Conv with a residual output.
fn two_layer(c: usize, width: usize, map: MapKind, domain: ParamDomain) -> NetworkConfig {
    NetworkConfig {
        input_channels: c,
        layers: vec![
            LayerSpec::Conv {
                in_ch: c,
                out_ch: width,
                k: 3,
            },
            LayerSpec::Prelu { ch: width },
            LayerSpec::ChannelAffine { ch: width },
            LayerSpec::Conv {
                in_ch: width,
                out_ch: c,
                k: 3,
            },
        ],
        domain,
        map,
        residual_output: true,
    }
}

fn loss_at(model: &Model<f64>, groups: &[LevelGroup<f64>]) -> f64 {
    let tape = Tape::new();
    let vars = model.register(&tape).unwrap();
    batch_loss(model, &vars, &tape, groups)
        .unwrap()
        .value()
        .item()
        .unwrap()
}

/// Smallest distance to an L1 or PReLU kink; central differences across a
/// kink do not estimate the derivative.
fn kink_margin(model: &Model<f64>, groups: &[LevelGroup<f64>]) -> f64 {
    let cfg = model.config();
    let first = NetworkConfig {
        layers: cfg.layers[..1].to_vec(),
        residual_output: false,
        ..cfg.clone()
    };
    let mut margin = f64::INFINITY;
    for g in groups {
        let plain = model.materialize(g.x).unwrap();
        let out = plain.forward(&g.degraded).unwrap();
        for (o, c) in out.data().iter().zip(g.clean.data()) {
            margin = margin.min((o - c).abs());
        }
        let conv =
            PlainNetwork::from_tensors(first.clone(), plain.weights()[..2].to_vec()).unwrap();
        for z in conv.forward(&g.degraded).unwrap().data() {
            margin = margin.min(z.abs());
        }
    }
    margin
}

fn gradient_correctness() -> Outcome {
    let mut worst = 0.0f64;
    let mut scalars = 0;
    let mut maps = Vec::new();
    for cfg_i in 0..20u64 {
        let mut rng = stream(cfg_i, Purpose::Test, 100, 0);
        let (map, domain) = random_map(&mut rng, cfg_i >= 4);
        let map = if cfg_i < 4 { MapKind::LearnedMlp } else { map };
        maps.push(format!("{map:?}"));
        let c = rng.random_range(1..=2);
        let width = rng.random_range(2..=3);
        let mut model =
            Model::<f64>::build(ModelKind::Funcnet, two_layer(c, width, map, domain), cfg_i)
                .unwrap();
        perturb(&mut model, 0.2, &mut rng);
        let groups = loop {
            let groups: Vec<_> = (0..2)
                .map(|_| LevelGroup {
                    x: rng.random_range(domain.lo..=domain.hi),
                    degraded: uniform(&[2, c, 5, 5], &mut rng),
                    clean: uniform(&[2, c, 5, 5], &mut rng),
                })
                .collect();
            if kink_margin(&model, &groups) > 1e-3 {
                break groups;
            }
        };
        let analytic: Vec<Tensor<f64>> = {
            let tape = Tape::new();
            let vars = model.register(&tape).unwrap();
            let loss = batch_loss(&model, &vars, &tape, &groups).unwrap();
            let g = tape.backward(loss).unwrap();
            vars.all().into_iter().map(|v| g.get_or_zeros(v)).collect()
        };
        let h = 1e-5;
        for (ti, grad) in analytic.iter().enumerate() {
            for j in 0..grad.numel() {
                let orig = model.tensors_mut()[ti].data()[j];
                model.tensors_mut()[ti].data_mut()[j] = orig + h;
                let up = loss_at(&model, &groups);
                model.tensors_mut()[ti].data_mut()[j] = orig - h;
                let down = loss_at(&model, &groups);
                model.tensors_mut()[ti].data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = grad.data()[j];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
                scalars += 1;
            }
        }
    }
    check(
        worst <= 1e-4,
        format!(
            "max relative error {worst:.2e} over {scalars} scalars in 20 configs ({})",
            maps.join(",")
        ),
    )
}

fn materialization_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut bitwise = true;
    for case in 0..100u64 {
        let mut rng = stream(case, Purpose::Test, 200, 0);
        let (map, domain) = random_map(&mut rng, false);
        let c = rng.random_range(1..=3);
        let width = rng.random_range(2..=6);
        let mut model =
            Model::<f32>::build(ModelKind::Funcnet, two_layer(c, width, map, domain), case)
                .unwrap();
        perturb(&mut model, 0.1, &mut rng);
        let Model::Func(net) = &model else {
            unreachable!()
        };
        let (h, w) = (rng.random_range(3..12), rng.random_range(3..12));
        let input = uniform::<f32>(&[rng.random_range(1..3), c, h, w], &mut rng);
        let x = rng.random_range(domain.lo..=domain.hi);
        for (x, endpoint) in [(x, false), (domain.lo, true), (domain.hi, true)] {
            let a = net.forward(x, &input).unwrap();
            let b = net.materialize(x).unwrap().forward(&input).unwrap();
            let scale = a.data().iter().fold(0f64, |m, v| m.max(f64::from(v.abs())));
            worst = worst.max(f64::from(a.max_abs_diff(&b).unwrap()) / scale);
            if endpoint {
                bitwise &= a.bitwise_eq(&b);
            }
        }
    }
    check(
        worst <= 1e-6 && bitwise,
        format!("max relative difference {worst:.2e} over 100 cases; endpoints bitwise: {bitwise}"),
    )
}

fn pair(a: Vec<f32>, b: Vec<f32>) -> FuncParam<f32> {
    let n = a.len();
    FuncParam::new(
        Tensor::from_vec(&[n], a).unwrap(),
        Tensor::from_vec(&[n], b).unwrap(),
    )
    .unwrap()
}

fn function_properties() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let vals = || prop::collection::vec((-1e4f32..1e4, -1e4f32..1e4), 1..16);
    let mut failures = Vec::new();

    let r = runner.run(&vals(), |ab| {
        let (a, b): (Vec<f32>, Vec<f32>) = ab.into_iter().unzip();
        let p = pair(a.clone(), b.clone());
        prop_assert_eq!(p.evaluate(0.0).into_data(), a);
        prop_assert_eq!(p.evaluate(1.0).into_data(), b);
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("endpoints: {e}"));
    }

    let r = runner.run(&(-1e4f32..1e4, -1e4f32..1e4), |(a, b)| {
        let w = f64::from(pair(vec![a], vec![b]).evaluate(0.5).data()[0]);
        let exact = (f64::from(a) + f64::from(b)) / 2.0;
        // one f32 rounding of the result
        prop_assert!((w - exact).abs() <= exact.abs() * 1.2e-7 + 1e-30);
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("midpoint: {e}"));
    }

    let r = runner.run(&(vals(), 0.0f64..=1.0), |(ab, t)| {
        let (a, b): (Vec<f32>, Vec<f32>) = ab.into_iter().unzip();
        let w = pair(a.clone(), b.clone()).evaluate(t);
        for ((&w, &a), &b) in w.data().iter().zip(&a).zip(&b) {
            prop_assert!(a.min(b) <= w && w <= a.max(b));
        }
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("bounded: {e}"));
    }

    let grads = prop::collection::vec(-1e4f32..1e4, 1..16);
    let r = runner.run(&(grads, 0.0f64..=1.0), |(g, t)| {
        let n = g.len();
        let p = pair(vec![0.5; n], vec![-0.25; n]);
        let tape = Tape::new();
        let a = tape.param(p.theta_a().clone()).unwrap();
        let b = tape.param(p.theta_b().clone()).unwrap();
        let w = FuncParam::evaluate_on_tape(a, b, &Level::Fixed(t)).unwrap();
        let upstream = tape
            .constant(Tensor::from_vec(&[n], g.clone()).unwrap())
            .unwrap();
        let loss = w.mul(upstream).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        let (ga, gb) = (grads.get_or_zeros(a), grads.get_or_zeros(b));
        for i in 0..n {
            prop_assert_eq!(ga.data()[i] + gb.data()[i], g[i]);
        }
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("conservation: {e}"));
    }

    check(
        failures.is_empty(),
        if failures.is_empty() {
            "endpoints, midpoint, boundedness and gradient conservation hold on 10000 cases each"
                .into()
        } else {
            failures.join("; ")
        },
    )
}

fn initialization_bound() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for fan_in in [9usize, 288, 2048] {
        let sigma = (2.0 / fan_in as f64).sqrt();
        let mut rng = stream(fan_in as u64, Purpose::Test, 300, 0);
        let mut draws = Vec::with_capacity(100_000);
        // 1000 parameters of 100 weights, each evaluated at its own t
        for _ in 0..1000 {
            let p = FuncParam::<f64>::init_he(Shape::new(vec![100]).unwrap(), fan_in, &mut rng)
                .unwrap();
            let t = rng.random::<f64>();
            draws.extend_from_slice(p.evaluate(t).data());
        }
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let in_band = std >= 0.95 * sigma / 2f64.sqrt() && std <= 1.05 * sigma;
        let centered = mean.abs() <= 3.0 * std / n.sqrt();
        ok &= in_band && centered;
        parts.push(format!(
            "fan_in {fan_in}: std/sigma {:.4}, mean {:.1} SE",
            std / sigma,
            mean / (std / n.sqrt())
        ));
    }
    check(ok, format!("{} (band [0.672, 1.05])", parts.join("; ")))
}

/// A random backbone: entry conv, up to three residual blocks, exit conv.
fn random_backbone(rng: &mut impl Rng) -> NetworkConfig {
    let (map, domain) = random_map(rng, true);
    let c = rng.random_range(1..=3);
    let w = rng.random_range(3..=12);
    let mut layers = vec![LayerSpec::Conv {
        in_ch: c,
        out_ch: w,
        k: 3,
    }];
    for _ in 0..rng.random_range(0..=3) {
        layers.extend([
            LayerSpec::ResidualBlockBegin,
            LayerSpec::Conv {
                in_ch: w,
                out_ch: w,
                k: 3,
            },
            LayerSpec::Prelu { ch: w },
            LayerSpec::Conv {
                in_ch: w,
                out_ch: w,
                k: 3,
            },
            LayerSpec::ChannelAffine { ch: w },
            LayerSpec::ResidualBlockEnd,
        ]);
    }
    layers.push(LayerSpec::Conv {
        in_ch: w,
        out_ch: c,
        k: 3,
    });
    NetworkConfig {
        input_channels: c,
        layers,
        domain,
        map,
        residual_output: true,
    }
}

fn storage_claim() -> Outcome {
    let mut ratios = Vec::new();
    for case in 0..5u64 {
        let mut rng = stream(case, Purpose::Test, 400, 0);
        let cfg = random_backbone(&mut rng);
        let mut model = Model::<f32>::build(ModelKind::Funcnet, cfg.clone(), case).unwrap();
        perturb(&mut model, 0.01, &mut rng);
        let ckpt = Checkpoint::from_model(&model, None, 0, case);
        let x = rng.random_range(cfg.domain.lo..=cfg.domain.hi);
        let plain = export_plain(&ckpt, x).map_err(|e| e.to_string())?;
        let (f, p) = (ckpt.parameter_blob_bytes(), plain.parameter_blob_bytes());
        if f != 2 * p {
            return Err(format!("config {case}: {f} bytes vs plain {p}"));
        }
        ratios.push(format!("{f}/{p}"));
    }
    let mut overheads = Vec::new();
    for c in [1, 3] {
        let cfg =
            NetworkConfig::desk_default(c, ParamDomain::new(0.0, 75.0).unwrap(), MapKind::Identity);
        // evaluating w = a + t·Δ costs one multiply-add per plain weight
        let model = Model::<f32>::build(ModelKind::Funcnet, cfg.clone(), 0).unwrap();
        let eval: usize = model
            .materialize(30.0)
            .unwrap()
            .weights()
            .iter()
            .map(Tensor::numel)
            .sum();
        if eval as u64 != cfg.evaluation_macs() {
            return Err(format!(
                "evaluation count {} disagrees with weight count {eval}",
                cfg.evaluation_macs()
            ));
        }
        // conv taps plus one per PReLU and affine element, counted by hand
        let px = 32 * 32;
        let hand = px * (c * 32 * 9 + 6 * 32 * 32 * 9 + 32 * c * 9 + 6 * 32);
        if hand as u64 != cfg.forward_macs(32, 32) {
            return Err(format!(
                "forward count {} disagrees with {hand}",
                cfg.forward_macs(32, 32)
            ));
        }
        overheads.push(eval as f64 / hand as f64 * 100.0);
    }
    check(
        overheads.iter().all(|&o| o < 0.1),
        format!(
            "blob bytes exactly 2x on 5 configs ({}); evaluation overhead {:.4}% gray, {:.4}% color",
            ratios.join(", "),
            overheads[0],
            overheads[1]
        ),
    )
}

fn degradation_oracles() -> Outcome {
    let clean = ImageBuffer::new(1000, 1000, 1, vec![0.5; 1_000_000]).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, sigma) in [15.0, 35.0, 75.0].into_iter().enumerate() {
        let noisy = add_awgn(&clean, sigma, &mut stream(6, Purpose::Test, i as u64, 0))
            .map_err(|e| e.to_string())?;
        let d: Vec<f64> = noisy.data().iter().map(|&v| f64::from(v) - 0.5).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let rel = std * 255.0 / sigma - 1.0;
        ok &= rel.abs() < 0.005;
        parts.push(format!("sigma {sigma}: {:+.3}%", rel * 100.0));
    }
    let q50 = quant_table(50.0).map_err(|e| e.to_string())?;
    let identity = q50
        .iter()
        .zip(&LUMINANCE_TABLE)
        .all(|(a, &b)| *a == f64::from(b));
    ok &= identity;
    let img = pnm::read(root().join("data/corpus/camera.pgm")).map_err(|e| e.to_string())?;
    let scores = [10.0, 40.0, 80.0]
        .iter()
        .map(|&q| psnr(&jpeg_degrade(&img, q)?, &img, 1.0))
        .collect::<funcnet::Result<Vec<f64>>>()
        .map_err(|e| e.to_string())?;
    let rising = scores[0] < scores[1] && scores[1] < scores[2];
    ok &= rising;
    check(
        ok,
        format!(
            "AWGN std error {}; q50 table identity: {identity}; JPEG PSNR q10/40/80 = {:.2}/{:.2}/{:.2} dB",
            parts.join(", "),
            scores[0],
            scores[1],
            scores[2]
        ),
    )
}

struct AblationResult {
    dir: PathBuf,
    funcnet: f64,
    plain: f64,
    identity: f64,
}

/// Runs (or reuses) the denoising ablation for `seed` and parses its CSV.
fn denoise_ablation(seed: u64) -> Result<AblationResult, String> {
    let dir = cache().join(format!("denoise-seed{seed}"));
    let seed = seed.to_string();
    let csv = funcnet(&[
        "ablate",
        "--task",
        "denoise",
        "--seed",
        &seed,
        "--variants",
        "funcnet,plain,identity_h",
        "--dir",
        dir.to_str().unwrap(),
        "--report-every",
        "500",
    ])?;
    let mean = |variant: &str| -> Result<f64, String> {
        csv.lines()
            .find(|l| l.starts_with(&format!("{variant},")))
            .and_then(|l| l.rsplit(',').next())
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format!("no {variant} row in ablation output:\n{csv}"))
    };
    Ok(AblationResult {
        funcnet: mean("funcnet")?,
        plain: mean("plain")?,
        identity: mean("identity_h")?,
        dir,
    })
}

fn deblock_model() -> Result<PathBuf, String> {
    let dir = cache().join("deblock-seed0");
    funcnet(&[
        "ablate",
        "--task",
        "deblock",
        "--seed",
        "0",
        "--variants",
        "funcnet",
        "--dir",
        dir.to_str().unwrap(),
        "--report-every",
        "500",
    ])?;
    Ok(dir.join("funcnet.fnck"))
}

fn ablation_trend(runs: &[AblationResult]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        let gain = r.funcnet - r.plain;
        let gap = (r.identity - r.funcnet).abs();
        ok &= gain >= 0.1 && gap <= 0.15;
        parts.push(format!(
            "seed {seed}: funcnet {:.3} plain {:.3} identity_h {:.3} dB (gain {gain:+.3}, identity gap {gap:.3})",
            r.funcnet, r.plain, r.identity
        ));
    }
    check(ok, parts.join("; "))
}

fn sweep(ckpt: &Path, grid: &str, tag: &str) -> Result<Vec<f64>, String> {
    let out = cache().join(format!("sweep-{tag}.csv"));
    funcnet(&[
        "sweep",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--grid",
        grid,
        "--out",
        out.to_str().unwrap(),
    ])?;
    let text = fs::read_to_string(&out).map_err(|e| e.to_string())?;
    text.lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| format!("bad sweep row {l:?}"))
        })
        .collect()
}

fn monotonic_difficulty(runs: &[AblationResult], deblocker: &Path) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        for variant in ["funcnet", "plain"] {
            let ckpt = r.dir.join(format!("{variant}.fnck"));
            let s = sweep(&ckpt, "5,15,25,35,50,75", &format!("{variant}-{seed}"))?;
            let dec = s.windows(2).all(|w| w[0] > w[1]);
            ok &= dec;
            parts.push(format!(
                "{variant} seed {seed} {}: {}",
                if dec { "decreasing" } else { "NOT decreasing" },
                fmt_db(&s)
            ));
        }
    }
    let s = sweep(deblocker, "10,20,30,40", "deblock")?;
    let inc = s.windows(2).all(|w| w[0] < w[1]);
    ok &= inc;
    parts.push(format!(
        "deblock {}: {}",
        if inc { "increasing" } else { "NOT increasing" },
        fmt_db(&s)
    ));
    check(ok, parts.join("; "))
}

fn fmt_db(v: &[f64]) -> String {
    v.iter()
        .map(|p| format!("{p:.2}"))
        .collect::<Vec<_>>()
        .join("/")
}

fn eval_psnr(ckpt: &Path, x: f64, ensemble: bool) -> Result<f64, String> {
    let x = x.to_string();
    let mut args = vec!["eval", "--checkpoint", ckpt.to_str().unwrap(), "--x", &x];
    if ensemble {
        args.push("--ensemble");
    }
    let out = funcnet(&args)?;
    out.lines()
        .nth(1)
        .and_then(|l| l.split(',').nth(1))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("bad eval output {out:?}"))
}

fn ensemble_trend(runs: &[AblationResult], deblocker: &Path) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut models: Vec<(String, PathBuf, Vec<f64>)> = runs
        .iter()
        .enumerate()
        .map(|(s, r)| {
            (
                format!("denoise seed {s}"),
                r.dir.join("funcnet.fnck"),
                vec![15.0, 35.0, 75.0],
            )
        })
        .collect();
    models.push((
        "deblock".into(),
        deblocker.to_path_buf(),
        vec![10.0, 20.0, 30.0, 40.0],
    ));
    for (name, ckpt, probes) in models {
        let mut diffs = Vec::new();
        for &x in &probes {
            diffs.push(eval_psnr(&ckpt, x, true)? - eval_psnr(&ckpt, x, false)?);
        }
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let each = diffs.iter().all(|&d| d >= -0.02);
        ok &= each && mean >= 0.0;
        parts.push(format!(
            "{name}: gain {} dB (mean {mean:+.3})",
            diffs
                .iter()
                .map(|d| format!("{d:+.3}"))
                .collect::<Vec<_>>()
                .join("/")
        ));
    }
    check(ok, parts.join("; "))
}

fn reproducibility() -> Outcome {
    let mut dirs = Vec::new();
    for (name, threads) in [("repro-a", "1"), ("repro-b", "2")] {
        let dir = cache().join(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
        }
        funcnet(&[
            "--threads",
            threads,
            "train",
            "--iters",
            "200",
            "--val-every",
            "100",
            "--checkpoint-every",
            "100",
            "--report-every",
            "0",
            "--seed",
            "3",
            "--out-dir",
            dir.to_str().unwrap(),
        ])?;
        dirs.push(dir);
    }
    let mut same = Vec::new();
    for f in ["model.fnck", "train.log.csv"] {
        let a = fs::read(dirs[0].join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(dirs[1].join(f)).map_err(|e| e.to_string())?;
        same.push((f, a == b, a.len()));
    }
    check(
        same.iter().all(|s| s.1),
        same.iter()
            .map(|(f, eq, n)| format!("{f} ({n} bytes) identical: {eq}"))
            .collect::<Vec<_>>()
            .join("; ")
            + " across --threads 1 and 2, 200 iterations",
    )
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> Option<bool> {
    if !selected(n) {
        println!("criterion {n:>2} SKIP {name}");
        return None;
    }
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (status, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n:>2} {status} {name} [{secs:.1} s]: {detail}");
    Some(outcome.is_ok())
}

/// Criteria named by numeric arguments, or all of them.
fn selected(n: usize) -> bool {
    let picked: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    picked.is_empty() || picked.contains(&n)
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filtered runs expect the libtest protocol
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    fs::create_dir_all(cache()).expect("acceptance cache directory");

    let mut passed = Vec::new();
    passed.push(run(1, "gradient correctness", gradient_correctness));
    passed.push(run(
        2,
        "materialization equivalence",
        materialization_equivalence,
    ));
    passed.push(run(3, "interpolation properties", function_properties));
    passed.push(run(4, "initialization bound", initialization_bound));
    passed.push(run(5, "storage and evaluation cost", storage_claim));
    passed.push(run(6, "degradation oracles", degradation_oracles));

    let needs_models = [7, 8, 9].into_iter().any(selected);
    let trained = (|| -> Result<(Vec<AblationResult>, PathBuf), String> {
        if !needs_models {
            return Err("not selected".into());
        }
        let runs = vec![denoise_ablation(0)?, denoise_ablation(1)?];
        Ok((runs, deblock_model()?))
    })();
    match &trained {
        Ok((runs, deblocker)) => {
            passed.push(run(7, "ablation trend", || ablation_trend(runs)));
            passed.push(run(8, "monotonic difficulty", || {
                monotonic_difficulty(runs, deblocker)
            }));
            passed.push(run(9, "self-ensemble trend", || {
                ensemble_trend(runs, deblocker)
            }));
        }
        Err(e) => {
            for (n, name) in [
                (7, "ablation trend"),
                (8, "monotonic difficulty"),
                (9, "self-ensemble trend"),
            ] {
                passed.push(run(n, name, || Err(format!("training failed: {e}"))));
            }
        }
    }
    passed.push(run(10, "reproducibility", reproducibility));

    let ran: Vec<bool> = passed.into_iter().flatten().collect();
    let n_pass = ran.iter().filter(|&&p| p).count();
    println!("acceptance: {n_pass}/{} criteria passed", ran.len());
    if n_pass == ran.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
