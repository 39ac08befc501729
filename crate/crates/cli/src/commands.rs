//! Subcommand implementations. Each returns the JSON summary for stdout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::info;
use resq::bitstream::{self, CodeStream};
use resq::dataset::{self, FrameReader, RawDtype, SynthKind, SynthSpec};
use resq::metrics;
use resq::qinco::{QincoModel, QincoTrainer, TrainConfig};
use resq::quantizer::stage_mse_curve;
use resq::{AnyModel, Error, FrameSet, KMeansConfig, Quantizer};
use serde_json::{json, Value};

use crate::args::*;
use crate::failure::Failure;

type Outcome = std::result::Result<Value, Failure>;

/// Frames encoded per chunk when streaming a frame file.
const ENCODE_CHUNK: usize = 4096;

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed command never leaves partial output.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<&File>) -> resq::Result<()>) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        f(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Failure::from(e.error))?;
    Ok(())
}

/// Prefixes failures that concern an input file with its path.
fn with_path<T>(path: &Path, r: resq::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn load_model(path: &Path) -> Result<AnyModel, Failure> {
    with_path(path, AnyModel::load(path))
}

/// An f32 hyperparameter as the shortest decimal that round-trips.
fn f32_json(v: f32) -> Value {
    json!(v.to_string().parse::<f64>().unwrap_or(v as f64))
}

fn check_dim(q: &dyn Quantizer, dim: usize) -> Result<(), Failure> {
    if q.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            actual: dim,
        }
        .into());
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Outcome {
    if a.codebook_size < 2 {
        return Err(Failure::usage(format!(
            "--codebook-size must be at least 2, got {}",
            a.codebook_size
        )));
    }
    if a.n_codebooks == 0 {
        return Err(Failure::usage("--n-codebooks must be at least 1"));
    }
    let mut kcfg = KMeansConfig::new(a.codebook_size).with_seed(a.seed).with_max_iters(a.kmeans_iters);
    if let Some(b) = a.kmeans_batch {
        kcfg.batch_size = b;
    }
    let tcfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        steps: a.steps,
        seed: a.seed,
        ..TrainConfig::default()
    };
    if a.quantizer == QuantizerKind::Qinco {
        tcfg.validate()?;
        if a.hidden_dim == 0 {
            return Err(Failure::usage("--hidden-dim must be positive"));
        }
    }
    let mut config = json!({
        "quantizer": a.quantizer.name(),
        "frames": a.frames,
        "out": a.out,
        "n_codebooks": a.n_codebooks,
        "codebook_size": a.codebook_size,
        "seed": a.seed,
        "kmeans_iters": kcfg.max_iters,
        "kmeans_batch": kcfg.batch_size,
    });
    if a.quantizer == QuantizerKind::Qinco {
        let extra = json!({
            "blocks": a.blocks,
            "hidden_dim": a.hidden_dim,
            "steps": tcfg.steps,
            "lr": f32_json(tcfg.learning_rate),
            "batch_size": tcfg.batch_size,
            "beta1": f32_json(tcfg.beta1),
            "beta2": f32_json(tcfg.beta2),
            "eps": f32_json(tcfg.eps),
            "clip_norm": f32_json(tcfg.clip_norm),
        });
        config.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    }

    let frames = with_path(&a.frames, dataset::read_frames(&a.frames))?;
    info!("loaded {} frames of dimension {}", frames.len(), frames.dim());
    let mut summary = json!({ "command": "train", "config": config });
    let model = match a.quantizer {
        QuantizerKind::Rvq => AnyModel::Rvq(resq::rvq_train(&frames, a.n_codebooks, &kcfg)?),
        QuantizerKind::Irvq => AnyModel::Rvq(resq::irvq_train(&frames, a.n_codebooks, &kcfg)?),
        QuantizerKind::Qinco => {
            let base = resq::rvq_train(&frames, a.n_codebooks, &kcfg)?;
            let init = QincoModel::init(&base, a.blocks, a.hidden_dim, a.seed)?;
            let mut trainer = QincoTrainer::new(init, tcfg)?;
            let mut trajectory = Vec::new();
            let every = a.log_every.max(1);
            trainer.fit(&frames, |r| {
                if r.step % every == 0 || r.step == a.steps {
                    info!("step {} loss {:.6} grad norm {:.4}", r.step, r.loss, r.grad_norm);
                    trajectory.push(json!({ "step": r.step, "loss": r.loss, "per_stage": r.per_stage }));
                }
            })?;
            summary["trajectory"] = json!(trajectory);
            AnyModel::Qinco(trainer.into_model())
        }
    };
    let q = model.as_quantizer();
    let curve = stage_mse_curve(q, &frames)?;
    write_atomic(&a.out, |w| model.write_to(w))?;
    info!("wrote {}", a.out.display());
    summary["train_mse"] = json!(curve.last());
    summary["stage_mse"] = json!(curve);
    Ok(summary)
}

pub fn encode(a: &EncodeArgs) -> Outcome {
    if let Some(f) = a.frame_rate {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Failure::usage(format!("--frame-rate must be positive, got {f}")));
        }
    }
    let model = load_model(&a.model)?;
    let q = model.as_quantizer();
    let reader = with_path(&a.frames, FrameReader::open(&a.frames))?;
    check_dim(q, reader.dim())?;
    let mut stream = CodeStream::new(q.codebook_size(), q.n_stages(), q.dim());
    stream.frame_rate = a.frame_rate;
    let mut chunk = FrameSet::with_capacity(q.dim(), ENCODE_CHUNK);
    let flush = |chunk: &mut FrameSet, stream: &mut CodeStream| -> resq::Result<()> {
        for c in q.encode_all(chunk)? {
            stream.push(&c)?;
        }
        *chunk = FrameSet::with_capacity(q.dim(), ENCODE_CHUNK);
        Ok(())
    };
    for frame in reader {
        chunk.push(&with_path(&a.frames, frame)?)?;
        if chunk.len() == ENCODE_CHUNK {
            flush(&mut chunk, &mut stream)?;
        }
    }
    flush(&mut chunk, &mut stream)?;
    let bytes = if a.unpacked {
        bitstream::pack_unpacked(&stream)?
    } else {
        bitstream::pack(&stream)?
    };
    write_atomic(&a.out, |w| Ok(w.write_all(&bytes)?))?;
    let mut summary = json!({
        "command": "encode",
        "config": { "model": a.model, "frames": a.frames, "out": a.out, "frame_rate": a.frame_rate, "unpacked": a.unpacked },
        "frames": stream.frames(),
        "n_codebooks": stream.n_stages,
        "codebook_size": stream.k,
        "bytes": bytes.len(),
    });
    if !a.unpacked {
        summary["payload_bits"] = json!(stream.payload_bits()?);
    }
    if let Some(f) = a.frame_rate {
        let nominal = bitstream::bitrate(stream.n_stages, stream.k, f)?;
        info!("bitrate {nominal} bit/s");
        summary["bitrate"] = json!(nominal);
    }
    Ok(summary)
}

pub fn decode(a: &DecodeArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let q = model.as_quantizer();
    let mut bytes = Vec::new();
    with_path(
        &a.stream,
        File::open(&a.stream)
            .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
            .map_err(Error::from),
    )?;
    let stream = with_path(&a.stream, bitstream::unpack(&bytes))?;
    if stream.n_stages != q.n_stages() || stream.k != q.codebook_size() {
        return Err(Error::ModelStreamMismatch {
            stream_n: stream.n_stages,
            stream_k: stream.k,
            model_n: q.n_stages(),
            model_k: q.codebook_size(),
        }
        .into());
    }
    check_dim(q, stream.dim)?;
    let t = stream.frames();
    write_atomic(&a.out, |w| {
        let mut fw = dataset::FrameWriter::new(std::io::Cursor::new(Vec::new()), q.dim())?;
        for start in (0..t).step_by(ENCODE_CHUNK) {
            let end = (start + ENCODE_CHUNK).min(t);
            let codes: Vec<resq::CodeVector> = (start..end).map(|i| stream.frame(i).to_vec().into()).collect();
            for row in q.decode_all(&codes)?.iter() {
                fw.push(row)?;
            }
        }
        w.write_all(&fw.finish()?.into_inner())?;
        Ok(())
    })?;
    Ok(json!({
        "command": "decode",
        "config": { "model": a.model, "stream": a.stream, "out": a.out },
        "frames": t,
        "dim": q.dim(),
    }))
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let q = model.as_quantizer();
    let frames = with_path(&a.frames, dataset::read_frames(&a.frames))?;
    check_dim(q, frames.dim())?;
    let report = metrics::evaluate(q, &frames)?;
    if let Some(csv) = &a.csv {
        let text = report.perplexity_csv();
        write_atomic(csv, |w| Ok(w.write_all(text.as_bytes())?))?;
    }
    for (metric, stage, value) in report.records() {
        info!("{metric} stage={stage} {value}");
    }
    Ok(json!({
        "command": "eval",
        "config": { "model": a.model, "frames": a.frames, "csv": a.csv },
        "quantizer": model.kind(),
        "frames": report.frames,
        "codebook_size": report.codebook_size,
        "mse": report.mse,
        "stage_mse": report.stage_mse,
        "stage_perplexity": report.stage_perplexity,
        "perplexity": report.perplexity,
    }))
}

pub fn import(a: &ImportArgs) -> Outcome {
    if a.latent_dim == 0 {
        return Err(Failure::usage("--latent-dim must be positive"));
    }
    let dtype = match a.dtype {
        Dtype::F32 => RawDtype::F32,
        Dtype::F64 => RawDtype::F64,
    };
    let input = with_path(&a.input, File::open(&a.input).map_err(Error::from))?;
    let mut count = 0;
    write_atomic(&a.out, |w| {
        let mut buf = std::io::Cursor::new(Vec::new());
        count = dataset::import_raw(input, &mut buf, a.latent_dim, dtype)?;
        w.write_all(buf.get_ref())?;
        Ok(())
    })?;
    Ok(json!({
        "command": "import",
        "config": { "input": a.input, "out": a.out, "latent_dim": a.latent_dim, "dtype": format!("{:?}", a.dtype).to_lowercase() },
        "frames": count,
    }))
}

pub fn dump(a: &DumpArgs) -> Outcome {
    let t = &a.target;
    if let Some(path) = &t.model {
        let model = load_model(path)?;
        let q = model.as_quantizer();
        let mut out = json!({
            "command": "dump",
            "model": path,
            "quantizer": model.kind(),
            "dim": q.dim(),
            "n_codebooks": q.n_stages(),
            "codebook_size": q.codebook_size(),
        });
        let codebooks = match &model {
            AnyModel::Rvq(m) => m.codebooks(),
            AnyModel::Qinco(m) => {
                out["blocks"] = json!(m.blocks());
                out["hidden_dim"] = json!(m.hidden());
                out["stage_params"] = json!(m.stage_param_count());
                m.codebooks()
            }
        };
        out["codebooks"] = codebooks
            .iter()
            .map(|cb| {
                json!({
                    "null_index": cb.null_index(),
                    "has_scales": cb.scales().is_some(),
                    "entries": (0..cb.k().min(a.limit)).map(|k| cb.entry(k).to_vec()).collect::<Vec<_>>(),
                })
            })
            .collect();
        return Ok(out);
    }
    if let Some(path) = &t.stream {
        let mut bytes = Vec::new();
        with_path(
            path,
            File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(Error::from),
        )?;
        let s = with_path(path, bitstream::unpack(&bytes))?;
        return Ok(json!({
            "command": "dump",
            "stream": path,
            "codebook_size": s.k,
            "n_codebooks": s.n_stages,
            "dim": s.dim,
            "frames": s.frames(),
            "frame_rate": s.frame_rate,
            "measured_bitrate": s.measured_bitrate(),
            "codes": (0..s.frames().min(a.limit)).map(|i| s.frame(i).to_vec()).collect::<Vec<_>>(),
        }));
    }
    let path = t.frames.as_ref().expect("clap enforces one dump target");
    let reader = with_path(path, FrameReader::open(path))?;
    let (dim, count) = (reader.dim(), reader.frame_count());
    let head = reader
        .take(a.limit)
        .map(|f| f.map(|f| f.to_vec()))
        .collect::<resq::Result<Vec<_>>>()?;
    Ok(json!({ "command": "dump", "frames_file": path, "dim": dim, "frames": count, "head": head }))
}

pub fn bitrate(a: &BitrateArgs) -> Outcome {
    let bps = bitstream::bitrate(a.n_codebooks, a.codebook_size, a.frame_rate)?;
    Ok(json!({
        "command": "bitrate",
        "config": { "n_codebooks": a.n_codebooks, "codebook_size": a.codebook_size, "frame_rate": a.frame_rate },
        "bitrate": bps,
    }))
}

pub fn synth(a: &SynthArgs) -> Outcome {
    let kind = match a.kind {
        SynthKindArg::Isotropic => SynthKind::Isotropic,
        SynthKindArg::Anisotropic => SynthKind::Anisotropic,
        SynthKindArg::HeavyTailed => SynthKind::HeavyTailed,
    };
    let mut spec = SynthSpec::new(kind, a.components, a.latent_dim).with_seed(a.seed);
    let (lo, hi) = (a.spread_min.unwrap_or(spec.spread_min), a.spread_max.unwrap_or(spec.spread_max));
    spec = spec.with_spreads(lo, hi);
    if let Some(c) = a.center_spread {
        spec = spec.with_center_spread(c);
    }
    let frames = dataset::synth_generate(&spec, a.count)?;
    write_atomic(&a.out, |w| dataset::write_frames(w, &frames))?;
    Ok(json!({
        "command": "synth",
        "config": {
            "kind": format!("{:?}", spec.kind),
            "components": spec.components,
            "latent_dim": spec.dim,
            "count": a.count,
            "seed": spec.seed,
            "spread_min": spec.spread_min,
            "spread_max": spec.spread_max,
            "center_spread": spec.center_spread,
            "out": a.out,
        },
        "frames": frames.len(),
    }))
}
