use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use vqvid::bench::{render_table, sweep};
use vqvid::dataset::{build_dataset, read_manifest, tokenize, DatasetItem, Split, MANIFEST};
use vqvid::decoder::{train_decoder, Decoder, TextSequence};
use vqvid::metrics::{corpus_eval, matrix_csv, sc_aggregate, vr_aggregate, EvalSample, JudgmentRecord};
use vqvid::sampler::best_of_n;
use vqvid::video::{export_gif, export_png_frames, VideoTensor};
use vqvid::vq::{train_vqvae, TokenGrid, VqVae};

use crate::settings::{Settings, RESOLVED};
use crate::Usage;

pub const VQ_CKPT: &str = "vqvae.ckpt";
pub const GEN_CKPT: &str = "gen.ckpt";
/// Frame delay of exported GIFs, in hundredths of a second.
const GIF_DELAY: u16 = 25;

/// Creates `out` and records the resolved settings in it.
fn prepare_out(out: Option<&Path>, settings: &Settings) -> Result<PathBuf> {
    let out = out.ok_or_else(|| Usage("--out-dir is required for this command".into()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(RESOLVED), settings.to_kv())?;
    Ok(out.to_path_buf())
}

fn write_json(path: PathBuf, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_vq(path: &Path) -> Result<VqVae> {
    VqVae::load(path).with_context(|| format!("loading VQ-VAE checkpoint {}", path.display()))
}

fn load_decoder(path: &Path) -> Result<Decoder> {
    Decoder::load(path).with_context(|| format!("loading generator checkpoint {}", path.display()))
}

fn manifest(data_dir: &Path) -> Result<Vec<DatasetItem>> {
    let path = data_dir.join(MANIFEST);
    read_manifest(&path).with_context(|| format!("reading {}", path.display()))
}

fn load_video(data_dir: &Path, item: &DatasetItem) -> Result<VideoTensor> {
    let path = data_dir.join(&item.video);
    VideoTensor::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn export_media(video: &VideoTensor, out: &Path) -> Result<()> {
    export_gif(video, out.join("video.gif"), GIF_DELAY)?;
    export_png_frames(video, out.join("frames"))?;
    Ok(())
}

pub fn build_data(settings: &Settings, out: Option<&Path>, vqvae_ckpt: Option<&Path>) -> Result<()> {
    settings.validate()?;
    let out = prepare_out(out, settings)?;
    let glyphs = settings.glyphs();
    let vq = vqvae_ckpt.map(load_vq).transpose()?;
    if let Some(vq) = &vq {
        let c = vq.config();
        if (c.height, c.width, c.channels) != (settings.data_height, settings.data_width, settings.data_channels) {
            return Err(Usage(format!(
                "checkpoint expects {}×{}×{} frames, dataset renders {}×{}×{}",
                c.height, c.width, c.channels, settings.data_height, settings.data_width, settings.data_channels
            ))
            .into());
        }
    }
    let encode = vq.as_ref().map(|vq| move |v: &VideoTensor| vq.encode(v));
    let items = build_dataset(
        &settings.dataset(),
        &glyphs,
        &out,
        encode.as_ref().map(|f| f as &dyn Fn(&VideoTensor) -> vqvid::Result<TokenGrid>),
    )?;
    let train = items.iter().filter(|i| i.split == Split::Train).count();
    info!("wrote {} training and {} validation scenes to {}", train, items.len() - train, out.display());
    write_json(out.join("summary.json"), &json!({ "train": train, "val": items.len() - train, "tokens": vq.is_some() }))
}

pub fn train_vq(settings: &Settings, out: Option<&Path>, data_dir: &Path) -> Result<()> {
    settings.validate()?;
    let out = prepare_out(out, settings)?;
    let mut train: Vec<DatasetItem> = manifest(data_dir)?.into_iter().filter(|i| i.split == Split::Train).collect();
    if settings.train_vq_videos > 0 {
        train.truncate(settings.train_vq_videos);
    }
    if train.is_empty() {
        return Err(Usage(format!("{} has no training videos", data_dir.display())).into());
    }
    let videos = train.iter().map(|i| load_video(data_dir, i)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut model = VqVae::init(settings.vq()?, &mut rng)?;
    info!("training VQ-VAE on {} videos for {} steps", videos.len(), settings.train_vq_steps);
    let report = train_vqvae(&mut model, &videos, &settings.vq_train())?;
    model.save(out.join(VQ_CKPT))?;

    let mut log = fs::File::create(out.join("train_log.jsonl"))?;
    for epoch in &report.epochs {
        writeln!(log, "{}", serde_json::to_string(epoch)?)?;
    }
    let mut mse = 0.0;
    let mut codes = Vec::new();
    for v in &videos {
        mse += model.reconstruct(v)?.mse(v)?;
        codes.extend_from_slice(model.encode(v)?.indices());
    }
    mse /= videos.len() as f64;
    codes.sort_unstable();
    codes.dedup();
    info!("reconstruction MSE {mse:.3e}, {} codes in use", codes.len());
    write_json(
        out.join("report.json"),
        &json!({ "videos": videos.len(), "steps": report.steps.len(), "mse": mse, "codes_used": codes.len() }),
    )?;
    if settings.train_vq_target_mse > 0.0 && mse >= settings.train_vq_target_mse {
        bail!("reconstruction MSE {mse:.3e} did not reach train.vq_target_mse = {}", settings.train_vq_target_mse);
    }
    Ok(())
}

fn item_grid(data_dir: &Path, item: &DatasetItem, vq: &VqVae) -> Result<TokenGrid> {
    match &item.tokens {
        Some(rel) => {
            let grid = TokenGrid::load(data_dir.join(rel))?;
            if grid.codebook_size() != vq.config().codebook_size {
                return Err(Usage(format!("{} was encoded with a different codebook", rel.display())).into());
            }
            Ok(grid)
        }
        None => Ok(vq.encode(&load_video(data_dir, item)?)?),
    }
}

pub fn train_gen(settings: &Settings, out: Option<&Path>, data_dir: &Path, vqvae_ckpt: &Path) -> Result<()> {
    settings.validate()?;
    let out = prepare_out(out, settings)?;
    let vq = load_vq(vqvae_ckpt)?;
    let train: Vec<DatasetItem> = manifest(data_dir)?.into_iter().filter(|i| i.split == Split::Train).collect();
    if train.is_empty() {
        return Err(Usage(format!("{} has no training videos", data_dir.display())).into());
    }
    let mut data = Vec::with_capacity(train.len());
    for item in &train {
        let text = tokenize(&item.caption, settings.gen_text_len)?;
        data.push((text, item_grid(data_dir, item, &vq)?));
    }
    let cfg = settings.decoder(vq.config(), data[0].1.frames())?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut decoder = Decoder::init(cfg, vq.codebook().entries(), &mut rng)?;
    info!("training generator on {} pairs for {} steps", data.len(), settings.train_gen_steps);
    let report = train_decoder(&mut decoder, &data, &settings.gen_train())?;
    decoder.save(out.join(GEN_CKPT))?;
    let mut log = fs::File::create(out.join("train_log.jsonl"))?;
    for (epoch, loss) in report.epochs.iter().enumerate() {
        writeln!(log, "{}", json!({ "epoch": epoch, "loss": loss }))?;
    }
    let last = report.steps.last().copied().unwrap_or(f64::NAN);
    info!("final batch loss {last:.4}");
    write_json(out.join("report.json"), &json!({ "pairs": data.len(), "steps": report.steps.len(), "final_loss": last }))
}

fn caption_sequence(decoder: &Decoder, caption: &str) -> Result<TextSequence> {
    Ok(tokenize(caption, decoder.config().text_len)?)
}

pub fn generate(settings: &Settings, out: Option<&Path>, text: &str, vqvae_ckpt: &Path, gen_ckpt: &Path) -> Result<()> {
    settings.validate()?;
    let out = prepare_out(out, settings)?;
    let vq = load_vq(vqvae_ckpt)?;
    let decoder = load_decoder(gen_ckpt)?;
    let seq = caption_sequence(&decoder, text)?;
    let oracle = settings.oracle()?;
    let sampling = settings.sampling();
    let result = best_of_n(text, &seq, &decoder, &vq, &sampling, oracle.as_ref())?;
    result.grid.save(out.join("tokens.gdtk"))?;
    result.video.save(out.join("video.gdvv"))?;
    export_media(&result.video, &out)?;
    result.write_report(&out)?;
    info!("candidate {} of {} scored {:.4}", result.best, sampling.candidates, result.score);
    write_json(
        out.join("result.json"),
        &json!({
            "text": text,
            "strategy": sampling.strategy.to_string(),
            "candidates": sampling.candidates,
            "best": result.best,
            "score": result.score,
        }),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    All,
}

pub struct EvalArgs<'a> {
    pub data_dir: &'a Path,
    pub vqvae_ckpt: &'a Path,
    pub gen_ckpt: &'a Path,
    pub split: SplitArg,
    pub limit: Option<usize>,
    pub judgments: Option<&'a Path>,
}

pub fn eval(settings: &Settings, out: Option<&Path>, args: EvalArgs<'_>) -> Result<()> {
    settings.validate()?;
    let out = prepare_out(out, settings)?;
    let vq = load_vq(args.vqvae_ckpt)?;
    let decoder = load_decoder(args.gen_ckpt)?;
    let oracle = settings.oracle()?;
    let sampling = settings.sampling();
    let mut items: Vec<DatasetItem> = manifest(args.data_dir)?
        .into_iter()
        .filter(|i| match args.split {
            SplitArg::Train => i.split == Split::Train,
            SplitArg::Val => i.split == Split::Val,
            SplitArg::All => true,
        })
        .collect();
    if let Some(n) = args.limit {
        items.truncate(n);
    }
    if items.is_empty() {
        return Err(Usage("no samples to evaluate".into()).into());
    }
    fs::create_dir_all(out.join("predictions"))?;
    let mut samples = Vec::with_capacity(items.len());
    for item in &items {
        let seq = caption_sequence(&decoder, &item.caption)?;
        let result = best_of_n(&item.caption, &seq, &decoder, &vq, &sampling, oracle.as_ref())
            .with_context(|| format!("sample {}", item.id))?;
        result.grid.save(out.join("predictions").join(format!("{}.gdtk", item.id)))?;
        samples.push(EvalSample {
            text: item.caption.clone(),
            predicted: result.video,
            ground_truth: load_video(args.data_dir, item)?,
        });
    }
    let report = corpus_eval(&samples, oracle.as_ref())?;
    info!(
        "SIM {:.2}, RM {}, {} undefined",
        report.mean_sim,
        report.mean_rm.map_or("undefined".into(), |r| format!("{r:.2}")),
        report.undefined_rm
    );
    fs::write(out.join("sim_predicted.csv"), matrix_csv(&report.sim_predicted))?;
    fs::write(out.join("sim_ground_truth.csv"), matrix_csv(&report.sim_ground_truth))?;
    let ids: Vec<&str> = items.iter().map(|i| i.id.as_str()).collect();
    let mut value = serde_json::to_value(&report)?;
    value["ids"] = json!(ids);
    write_json(out.join("report.json"), &value)?;

    if let Some(path) = args.judgments {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<JudgmentRecord>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Usage(format!("{}: {e}", path.display())))?;
        let models = records.iter().map(|r| r.model_i.max(r.model_j) + 1).max().unwrap_or(0);
        let samples = records.iter().map(|r| r.sample + 1).max().unwrap_or(0);
        let vr = vr_aggregate(&records, models, samples)?;
        let sc = sc_aggregate(&records, models, samples)?;
        write_json(out.join("human.json"), &json!({ "models": models, "samples": samples, "vr": vr, "sc": sc }))?;
    }
    Ok(())
}

pub fn bench_attention(settings: &Settings, out: Option<&Path>, print_json: bool) -> Result<()> {
    let rows = sweep(&settings.bench_frames.0, &settings.bench_heights.0, &settings.bench_widths.0, settings.bench_text_len);
    if rows.iter().any(|r| r.tokens == 0) {
        return Err(Usage("grid sizes must be positive".into()).into());
    }
    let value = serde_json::to_value(&rows)?;
    if print_json {
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        print!("{}", render_table(&rows));
    }
    if out.is_some() {
        let out = prepare_out(out, settings)?;
        write_json(out.join("bench.json"), &value)?;
    }
    Ok(())
}
