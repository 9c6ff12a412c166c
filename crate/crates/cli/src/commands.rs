use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cavt_core::bors::{generate_sequences, manifest_lines, random_sequences, BorsError};
use cavt_core::data::{
    evaluate, format_manifest, load_dataset, read_manifest, read_packed_file, synth_dataset,
    write_packed_file, DataError, ManifestEntry,
};
use cavt_core::model::{
    count_params, forward, read_checkpoint, write_checkpoint, CavtParams, DepthPlan, ModelError,
    CONFIG_KEYS,
};
use cavt_core::numerics::{compare_gradients, value_and_grad, NumericsError, Tensor};
use cavt_core::training::{
    format_loss_log, predict as predict_video, train as train_model, Sampler, TrainError,
};

use crate::config::RunConfig;
use crate::CliError;

/// Largest model `gradcheck` will differentiate numerically.
pub const GRADCHECK_PARAM_CAP: usize = 100_000;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Parameter count reported for the full model; shown for comparison only.
pub const REFERENCE_PARAMS: &str = "119.85M";

fn data_err(e: DataError) -> CliError {
    CliError::Data(e.to_string())
}

fn bors_err(e: BorsError) -> CliError {
    match e {
        BorsError::InvalidParam(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    }
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::Config(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    }
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Config(m) => CliError::Usage(m),
        TrainError::Model(e) => model_err(e),
        TrainError::Sampling(e) => bors_err(e),
        other => CliError::Data(other.to_string()),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
        None => {
            write_stdout(text);
            Ok(())
        }
    }
}

/// Writes to standard output; a closed pipe downstream is not an error.
fn write_stdout(text: &str) {
    use std::io::Write as _;
    let mut stdout = std::io::stdout().lock();
    let _ = stdout
        .write_all(text.as_bytes())
        .and_then(|()| stdout.flush());
}

/// Fixed-point with at most 12 decimals and no trailing zeros.
pub fn format_metric(v: f64) -> String {
    let s = format!("{v:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn video_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn sample(video: &Path, rc: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let params = rc.sampling();
    params.validate().map_err(bors_err)?;
    let v = read_packed_file(video, video_id(video)).map_err(data_err)?;
    let set = match rc.sampler {
        Sampler::Ordered(mode) => generate_sequences(v.frames, &params, mode),
        Sampler::Random => random_sequences(v.frames, &params, rc.train.seed),
    }
    .map_err(bors_err)?;
    let mut text = String::new();
    for line in manifest_lines(&v.id, &set) {
        text.push_str(&line);
        text.push('\n');
    }
    emit(&text, out)
}

pub fn synth(rc: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let sampling = rc.sampling();
    sampling.validate().map_err(bors_err)?;
    let frames = rc.synth_frames.unwrap_or_else(|| sampling.min_frames());
    if rc.synth_count == 0 || frames == 0 || rc.model.height == 0 || rc.model.width == 0 {
        return Err(CliError::Usage(
            "synth_count, synth_frames, height and width must be >= 1".into(),
        ));
    }
    let videos = dir.join("videos");
    fs::create_dir_all(&videos)
        .map_err(|e| CliError::Data(format!("{}: {e}", videos.display())))?;
    let data = synth_dataset(
        rc.synth_count,
        frames,
        rc.model.height,
        rc.model.width,
        rc.train.seed,
    );
    let mut entries = Vec::with_capacity(data.len());
    for lv in &data {
        let rel = PathBuf::from("videos").join(format!("{}.cavf", lv.video.id));
        write_packed_file(&dir.join(&rel), &lv.video).map_err(data_err)?;
        entries.push(ManifestEntry {
            id: lv.video.id.clone(),
            path: rel,
            label: lv.label,
        });
    }
    let manifest = dir.join("labels.csv");
    fs::write(&manifest, format_manifest(&entries))
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest.display())))?;
    write_stdout(&format!(
        "wrote {} videos of {frames} frames to {}\n",
        data.len(),
        manifest.display()
    ));
    Ok(())
}

/// The loss log lives next to the checkpoint.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

pub fn train(manifest: &Path, rc: &RunConfig, out: &Path) -> Result<(), CliError> {
    rc.model.validate().map_err(model_err)?;
    rc.train.validate().map_err(train_err)?;
    rc.sampling().validate().map_err(bors_err)?;
    let data = load_dataset(manifest).map_err(data_err)?;
    if data.is_empty() {
        return Err(CliError::Data(format!("{}: no videos", manifest.display())));
    }
    let outcome =
        train_model(&data, &rc.sampling(), rc.sampler, &rc.model, &rc.train).map_err(train_err)?;

    let file =
        fs::File::create(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    write_checkpoint(std::io::BufWriter::new(file), &outcome.params).map_err(model_err)?;
    let log = log_path(out);
    fs::write(&log, format_loss_log(&outcome.log))
        .map_err(|e| CliError::Data(format!("{}: {e}", log.display())))?;

    let last = outcome
        .log
        .last()
        .map_or("none".to_string(), |r| r.loss.to_string());
    write_stdout(&format!(
        "videos={} sequences={} steps={} final_loss={last}\ncheckpoint={}\nlog={}\n",
        data.len(),
        outcome.items,
        outcome.log.len(),
        out.display(),
        log.display()
    ));
    Ok(())
}

/// Loads a checkpoint and rejects any model key set explicitly to a different value.
fn load_compatible(path: &Path, rc: &RunConfig) -> Result<CavtParams, CliError> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let params = read_checkpoint(std::io::BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for key in CONFIG_KEYS
        .iter()
        .filter(|k| rc.model_keys_set.contains(**k))
    {
        let ours = rc.model.get(key);
        let theirs = params.config.get(key);
        if ours != theirs {
            return Err(CliError::Compatibility(format!(
                "config key {key} is {} but the checkpoint has {}",
                ours.unwrap_or_default(),
                theirs.unwrap_or_default()
            )));
        }
    }
    Ok(params)
}

fn predictions_for(
    manifest: &Path,
    checkpoint: &Path,
    rc: &RunConfig,
) -> Result<Vec<(String, f64, f64)>, CliError> {
    let params = load_compatible(checkpoint, rc)?;
    let mut sampling = rc.sampling();
    sampling.windows = params.config.frames;
    let data = load_dataset(manifest).map_err(data_err)?;
    data.iter()
        .map(|lv| {
            let y = predict_video(&lv.video, &sampling, &params).map_err(train_err)?;
            Ok((lv.video.id.clone(), y, lv.label))
        })
        .collect()
}

pub fn predict(
    manifest: &Path,
    checkpoint: &Path,
    rc: &RunConfig,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut text = String::new();
    for (id, y, _) in predictions_for(manifest, checkpoint, rc)? {
        let _ = writeln!(text, "{id},{y}");
    }
    emit(&text, out)
}

fn read_predictions(path: &Path, manifest: &Path) -> Result<Vec<(String, f64, f64)>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let entries = read_manifest(manifest).map_err(data_err)?;
    let mut out = Vec::with_capacity(entries.len());
    let mut seen = std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| CliError::Data(format!("{}:{}: {m}", path.display(), lineno + 1));
        let (id, y) = line
            .split_once(',')
            .ok_or_else(|| bad("expected video_id,y"))?;
        let y: f64 = y
            .trim()
            .parse()
            .map_err(|_| bad("prediction is not a number"))?;
        if !y.is_finite() {
            return Err(bad("prediction is not finite"));
        }
        if seen.insert(id.trim().to_string(), y).is_some() {
            return Err(bad("duplicate video id"));
        }
    }
    for e in entries {
        let y = seen.get(&e.id).copied().ok_or_else(|| {
            CliError::Data(format!("{}: no prediction for {}", path.display(), e.id))
        })?;
        out.push((e.id, y, e.label));
    }
    Ok(out)
}

pub fn eval(
    manifest: &Path,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    rc: &RunConfig,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let rows = match (checkpoint, predictions) {
        (Some(c), None) => predictions_for(manifest, c, rc)?,
        (None, Some(p)) => read_predictions(p, manifest)?,
        _ => {
            return Err(CliError::Usage(
                "eval needs exactly one of --checkpoint or --predictions".into(),
            ))
        }
    };
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.1, r.2)).collect();
    let m = evaluate(&pairs).map_err(data_err)?;
    let mut text = format!(
        "mse={}\nmmse={}\n",
        format_metric(m.mse),
        format_metric(m.mmse)
    );
    for l in &m.per_level {
        let _ = writeln!(
            text,
            "level={} count={} mse={}",
            l.level,
            l.count,
            format_metric(l.mse)
        );
    }
    emit(&text, out)
}

/// Spreads every parameter over U(-0.5, 0.5) so no branch is silent during the check.
fn gradcheck_point(rc: &RunConfig) -> Result<(CavtParams, Tensor), CliError> {
    let config = &rc.model;
    let mut rng = ChaCha8Rng::seed_from_u64(rc.train.seed);
    let mut params = CavtParams::zeros(config).map_err(model_err)?;
    for t in &mut params.tensors {
        for v in t.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let shape = [config.frames, config.height, config.width, 3];
    let n = shape.iter().product();
    let clip = Tensor::new(&shape, (0..n).map(|_| rng.random::<f64>()).collect())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((params, clip))
}

pub fn gradcheck(rc: &RunConfig, corrupt: bool, out: Option<&Path>) -> Result<(), CliError> {
    rc.model.validate().map_err(model_err)?;
    let count = count_params(&rc.model);
    if count > GRADCHECK_PARAM_CAP {
        return Err(CliError::Usage(format!(
            "gradcheck is capped at {GRADCHECK_PARAM_CAP} parameters; this config has {count}"
        )));
    }
    if rc.grad_step.is_nan() || rc.grad_step <= 0.0 {
        return Err(CliError::Usage(format!(
            "grad_step must be > 0, got {}",
            rc.grad_step
        )));
    }
    let (params, clip) = gradcheck_point(rc)?;
    let plan = DepthPlan::inference(&rc.model);
    let label = 0.66;
    let loss = |g: &mut cavt_core::numerics::Graph,
                vars: &[cavt_core::numerics::Var]|
     -> Result<cavt_core::numerics::Var, NumericsError> {
        let trace = forward(g, &params, vars, &clip, &plan).map_err(|e| match e {
            ModelError::Numerics(n) | ModelError::Layer { source: n, .. } => n,
            other => NumericsError::Contract(other.to_string()),
        })?;
        let diff = g.add_scalar(trace.y, -label)?;
        let sq = g.square(diff)?;
        g.sum(sq)
    };
    let numerics = |e: NumericsError| CliError::Data(e.to_string());
    let (_, mut analytic) = value_and_grad(&params.tensors, &loss).map_err(numerics)?;
    if corrupt {
        let head = params.layout.head_weight;
        analytic[head].data_mut()[0] += 1.0;
    }
    let report =
        compare_gradients(&params.tensors, &analytic, rc.grad_step, &loss).map_err(numerics)?;

    let mut groups: Vec<(&str, f64)> = Vec::new();
    for check in &report.tensors {
        let group = params.layout.specs[check.index].group();
        match groups.iter_mut().find(|(g, _)| *g == group) {
            Some(entry) => entry.1 = entry.1.max(check.max_rel_error),
            None => groups.push((group, check.max_rel_error)),
        }
    }
    let overall = report.max_rel_error();
    let mut text = format!("params={count} step={:e}\n", rc.grad_step);
    for (group, err) in &groups {
        let _ = writeln!(text, "{group} max_rel_error={err:.3e}");
    }
    let _ = writeln!(
        text,
        "overall max_rel_error={overall:.3e} tolerance={GRADCHECK_TOLERANCE:e}"
    );
    emit(&text, out)?;
    if overall < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed: {overall:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

pub fn summary(rc: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    rc.model.validate().map_err(model_err)?;
    let layout = cavt_core::model::ParamLayout::new(&rc.model);
    let mut text = String::new();
    for spec in &layout.specs {
        let dims: Vec<String> = spec.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(text, "{} [{}] {}", spec.name, dims.join(", "), spec.numel());
    }
    let total = count_params(&rc.model);
    let _ = writeln!(text, "total={total} ({:.2}M)", total as f64 / 1e6);
    let _ = writeln!(
        text,
        "reference={REFERENCE_PARAMS} (diagnostic: the reference count depends on an unstated MLP width and head layout)"
    );
    emit(&text, out)
}
