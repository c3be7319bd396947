use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use specsplat_core::io::{
    load_checkpoint, load_dataset, load_image, load_layout, make_synthetic_scene, save_checkpoint, save_image16,
    save_image8, split_train_eval, views_in_band_set, SynthParams,
};
use specsplat_core::metrics::{evaluate, EvalReport};
use specsplat_core::registration::{gradient_error_map, mi_register, warp, SearchBounds};
use specsplat_core::train::{ColorModelChoice, SamplingMode};
use specsplat_core::vi::{colorize_vi, render_vegetation_index, vi_to_unit, VegIndex};
use specsplat_core::{
    payload_floats_per_primitive, Camera, ColorModelKind, Error, Image, Intrinsics, Pose, SplatModel, Trainer,
};

use crate::args::{
    ColorModelArg, EvalArgs, IndexArg, NdviArgs, PayloadArgs, RegisterArgs, RenderArgs, SamplingArg, SynthArgs,
    TrainArgs,
};
use crate::error::{CliError, CliResult};

fn require<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn eval_lines(iteration: u64, report: &EvalReport) -> String {
    report.to_key_values().lines().map(|l| format!("eval iter={iteration} {l}\n")).collect()
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let data = require(a.data, "data")?;
    let out = require(a.out, "out")?;
    let mut cfg = a.options.unwrap_or_default();
    if let Some(v) = a.iters {
        cfg.iterations = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.color_model {
        cfg.color_model = match v {
            ColorModelArg::Neural => ColorModelChoice::Neural,
            ColorModelArg::Sh => ColorModelChoice::Sh,
        };
    }
    if let Some(v) = a.feature_dim {
        cfg.feature_dim = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden_width = v;
    }
    if let Some(v) = a.layers {
        cfg.hidden_layers = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup_iters = v;
    }
    if let Some(v) = a.sampling {
        cfg.sampling = match v {
            SamplingArg::Weighted => SamplingMode::Weighted,
            SamplingArg::Interleave => SamplingMode::Interleave,
        };
    }
    if let Some(v) = a.rgb_weight {
        cfg.rgb_sampling_weight = v;
    }
    if let Some(v) = a.densify {
        cfg.densify_enabled = v;
    }
    if let Some(v) = a.background {
        cfg.background = v;
    }
    if let Some(v) = a.eval_every {
        cfg.eval_interval = v;
    }
    cfg.validate()?;

    let mut ds = load_dataset(&data)?;
    if let Some(names) = &a.bands {
        ds = ds.select_bands(names)?;
    }
    let (train_views, eval_views) = split_train_eval(&ds.views, a.holdout.unwrap_or(10));
    let log_path = a.log.unwrap_or_else(|| out.with_extension("log"));
    let mut log = create(&log_path)?;
    let io = |e| CliError::from(Error::io(&log_path, e));
    let band_names: Vec<&str> = ds.band_set.bands().iter().map(|b| b.name.as_str()).collect();
    writeln!(
        log,
        "run seed={} iterations={} bands={} train_views={} eval_views={}",
        cfg.seed,
        cfg.iterations,
        band_names.join(","),
        train_views.len(),
        eval_views.len()
    )
    .map_err(io)?;

    let every = cfg.eval_interval;
    let ck_every = a.checkpoint_every.unwrap_or(0);
    let mut t = Trainer::new(cfg, ds.band_set.clone(), &ds.points, train_views)?;
    while !t.is_done() {
        let r = t.step()?;
        writeln!(log, "{}", r.log_line()).map_err(io)?;
        if every > 0 && t.iteration % every == 0 && !t.is_done() && !eval_views.is_empty() {
            let report = evaluate(&t.model, &eval_views)?;
            log.write_all(eval_lines(t.iteration, &report).as_bytes()).map_err(io)?;
        }
        if ck_every > 0 && t.iteration % ck_every == 0 && !t.is_done() {
            save_checkpoint(&t.snapshot(), &out)?;
        }
    }
    let final_report = if eval_views.is_empty() { None } else { Some(evaluate(&t.model, &eval_views)?) };
    if let Some(report) = &final_report {
        log.write_all(eval_lines(t.iteration, report).as_bytes()).map_err(io)?;
    }
    log.flush().map_err(io)?;
    save_checkpoint(&t.snapshot(), &out)?;
    println!("iterations={}", t.iteration);
    println!("primitives={}", t.model.cloud.len());
    println!("checkpoint={}", out.display());
    println!("log={}", log_path.display());
    if let Some(report) = final_report {
        print!("{}", report.to_key_values());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    /// World-to-camera rotation as `(w, x, y, z)`.
    rotation: [f64; 4],
    translation: [f64; 3],
}

/// A view index within `band` of the dataset at `data`, or a pose file.
fn resolve_view(view: &str, data: Option<&Path>, model: &SplatModel, band: usize) -> CliResult<Camera> {
    if let Ok(k) = view.parse::<usize>() {
        let data = data.ok_or_else(|| CliError::usage("a numeric --view needs --data"))?;
        let layout = load_layout(data)?;
        let views = views_in_band_set(&layout.views, &layout.band_set, &model.band_set)?;
        let in_band: Vec<_> = views.iter().filter(|v| v.band_index == band).collect();
        let name = &model.band_set.band(band)?.name;
        let v = in_band.get(k).ok_or_else(|| {
            CliError::usage(format!("view {k} out of range: band {name} has {} views", in_band.len()))
        })?;
        return Ok(Camera::from(*v));
    }
    let path = Path::new(view);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p: PoseFile = toml::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 0,
        msg: e.to_string().replace('\n', " "),
    })?;
    let intrinsics = Intrinsics { fx: p.fx, fy: p.fy, cx: p.cx, cy: p.cy, width: p.width, height: p.height };
    intrinsics.validate()?;
    Ok(Camera { intrinsics, pose: Pose::from_quat_translation(p.rotation, p.translation)? })
}

pub fn render(a: RenderArgs) -> CliResult<()> {
    let ck = load_checkpoint(&require(a.ckpt, "ckpt")?)?;
    let view = require(a.view, "view")?;
    let band_name = require(a.band, "band")?;
    let out = require(a.out, "out")?;
    let model = &ck.model;
    let band = model.band_set.find(&band_name)?;
    let camera = resolve_view(&view, a.data.as_deref(), model, band)?;
    let img = model.render(&camera, band)?;
    save_image16(&img, &out)?;
    println!("band={}", model.band_set.band(band)?.name);
    println!("size={}x{}x{}", img.width, img.height, img.channels);
    println!("image={}", out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let ckpt = require(a.ckpt, "ckpt")?;
    let data = require(a.data, "data")?;
    let ck = load_checkpoint(&ckpt)?;
    let ds = load_dataset(&data)?;
    let views = views_in_band_set(&ds.views, &ds.band_set, &ck.model.band_set)?;
    let (_, eval_views) = split_train_eval(&views, a.holdout.unwrap_or(10));
    if eval_views.is_empty() {
        return Err(Error::EmptyViews.into());
    }
    let report = evaluate(&ck.model, &eval_views)?;
    let out = a.out.unwrap_or_else(|| with_suffix(&ckpt, ".eval.txt"));
    let kv = a.kv.unwrap_or_else(|| out.with_extension("kv"));
    write_text(&out, &report.to_table())?;
    write_text(&kv, &report.to_key_values())?;
    print!("{}", report.to_table());
    println!("report={}", out.display());
    println!("kv={}", kv.display());
    Ok(())
}

pub fn ndvi(a: NdviArgs) -> CliResult<()> {
    let ck = load_checkpoint(&require(a.ckpt, "ckpt")?)?;
    let view = require(a.view, "view")?;
    let out = require(a.out, "out")?;
    let index = match a.index.unwrap_or(IndexArg::Ndvi) {
        IndexArg::Ndvi => VegIndex::Ndvi,
        IndexArg::Gndvi => VegIndex::Gndvi,
        IndexArg::Savi => VegIndex::Savi { lsoil: a.lsoil.unwrap_or(0.5) },
    };
    let model = &ck.model;
    let (nir, _) = index.bands(&model.band_set)?;
    let camera = resolve_view(&view, a.data.as_deref(), model, nir)?;
    let vi = render_vegetation_index(model, &camera, index)?;
    save_image16(&vi_to_unit(&vi), &out)?;
    let colorized = colorize_vi(&vi);
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "vi".into());
    let color_path = out.with_file_name(format!("{stem}_color.png"));
    save_image8(&colorized.image, &color_path)?;
    let valid: Vec<f64> =
        vi.values.data.iter().zip(&vi.valid).filter(|(_, ok)| **ok).map(|(v, _)| *v).collect();
    let mean = if valid.is_empty() { 0.0 } else { valid.iter().sum::<f64>() / valid.len() as f64 };
    println!("index={}", index.name());
    println!("valid_pixels={}", valid.len());
    println!("mean={mean:.6}");
    println!("clamped={}", colorized.clamped);
    println!("image={}", out.display());
    println!("colorized={}", color_path.display());
    Ok(())
}

/// Single-channel view of an image file; colour images are averaged.
fn load_gray(path: &Path) -> CliResult<Image> {
    match load_image(path, 1) {
        Ok(img) => Ok(img),
        Err(Error::Image { .. }) => {
            let rgb = load_image(path, 3)?;
            let data = rgb.data.chunks(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
            Ok(Image::from_vec(rgb.width, rgb.height, 1, data)?)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn register(a: RegisterArgs) -> CliResult<()> {
    let reference = load_gray(&require(a.reference, "ref")?)?;
    let moving = load_gray(&require(a.moving, "moving")?)?;
    let mut bounds = SearchBounds::default();
    if let Some(b) = a.bounds {
        if b.len() != 2 || b.iter().any(|v| !(*v >= 0.0)) {
            return Err(CliError::usage("--bounds takes max_shift_px,max_angle_deg"));
        }
        bounds = SearchBounds { max_shift: b[0], max_angle: b[1].to_radians() };
    }
    let r = mi_register(&reference, &moving, bounds, a.bins.unwrap_or(32), a.seed.unwrap_or(0))?;
    let t = r.transform;
    println!("tx={:.6}", t.tx);
    println!("ty={:.6}", t.ty);
    println!("angle_deg={:.6}", t.angle_degrees());
    println!("mi={:.9}", r.mi);
    println!("identity_mi={:.9}", r.identity_mi);
    println!("evaluations={}", r.evaluations);
    if let Some(path) = a.error_map {
        let warped: Vec<f64> = warp(&moving, t).into_iter().map(|v| v.unwrap_or(0.0)).collect();
        let warped = Image::from_vec(moving.width, moving.height, 1, warped)?;
        let mut map = gradient_error_map(&reference, &warped)?;
        let max = map.data.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            map.data.iter_mut().for_each(|v| *v /= max);
        }
        save_image16(&map, &path)?;
        println!("error_map_max={max:.6}");
        println!("error_map={}", path.display());
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let out = require(a.out, "out")?;
    let d = SynthParams::default();
    let params = SynthParams {
        seed: a.seed.unwrap_or(d.seed),
        n_gaussians: a.gaussians.unwrap_or(d.n_gaussians),
        views_per_band: a.views.unwrap_or(d.views_per_band),
        width: a.width.unwrap_or(d.width),
        height: a.height.unwrap_or(d.height),
        nir_texture: a.nir_texture.unwrap_or(d.nir_texture),
        ..d
    };
    if params.n_gaussians < 4 || params.views_per_band == 0 || params.width == 0 || params.height == 0 {
        return Err(CliError::usage("synth needs at least 4 Gaussians, one view per band and a non-empty image"));
    }
    let scene = make_synthetic_scene(&params)?;
    scene.write(&out)?;
    println!("bands={}", scene.dataset.band_set.len());
    println!("views={}", scene.dataset.views.len());
    println!("points={}", scene.dataset.points.positions.len());
    println!("out={}", out.display());
    Ok(())
}

pub fn payload(a: PayloadArgs) -> CliResult<()> {
    let (kind, channels, total) = if let Some(path) = a.ckpt {
        let ck = load_checkpoint(&path)?;
        let m = &ck.model;
        let kind = m.color.kind(&m.band_set, m.cloud.feature_dim);
        (kind, m.band_set.total_channels(), Some((m.cloud.len(), m.total_floats())))
    } else {
        let channels = a.channels.unwrap_or(7);
        let kind = match a.color_model.unwrap_or(ColorModelArg::Neural) {
            ColorModelArg::Neural => ColorModelKind::Neural { feature_dim: a.feature_dim.unwrap_or(8) },
            ColorModelArg::Sh => ColorModelKind::PerBandSh { degree: a.sh_degree.unwrap_or(3), total_channels: channels },
        };
        let total = a.primitives.map(|n| (n, n * payload_floats_per_primitive(kind)));
        (kind, channels, total)
    };
    let floats = payload_floats_per_primitive(kind);
    println!("floats_per_primitive={floats}");
    println!("geometry_floats={}", specsplat_core::scene::GEOMETRY_FLOATS);
    println!("color_floats={}", floats - specsplat_core::scene::GEOMETRY_FLOATS);
    if let ColorModelKind::Neural { .. } = kind {
        let sh = payload_floats_per_primitive(ColorModelKind::PerBandSh { degree: 3, total_channels: channels });
        println!("sh_floats_per_primitive={sh}");
        println!("reduction_vs_sh={:.6}", 1.0 - floats as f64 / sh as f64);
    }
    if let Some((n, total)) = total {
        println!("primitives={n}");
        println!("model_floats={total}");
        println!("model_bytes_f32={}", total * 4);
    }
    Ok(())
}
