use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use ugformer::data::{
    generate_phantom, load_checkpoint, load_dataset, save_checkpoint, write_manifest, write_tensor, Dataset, Dtype,
    ManifestRecord, PhantomSpec, Split, Style,
};
use ugformer::pipeline::two_stage::{binarize, probabilities};
use ugformer::pipeline::{compute_roi, prepare_sample, roi_sample, two_stage_predict, Sample, Segmenter};
use ugformer::training::gradcheck::{finite_diff_gradcheck_with, GradcheckSettings};
use ugformer::training::{
    ablation_table, dice_score, evaluate, run_ablation, train_loop, BlockId, Metrics, Target,
};
use ugformer::Model;

use crate::config::RunConfig;
use crate::output::{overlay, roi_panel, write_jsonl, write_pgm, write_run_record};
use crate::{CliError, Common, SplitArg, TargetArg};

fn setup(common: &Common) -> Result<(RunConfig, u64), CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.train.seed);
    cfg.train.seed = seed;
    fs::create_dir_all(&common.out)?;
    Ok((cfg, seed))
}

fn parse_styles(names: &[String]) -> Result<Vec<Style>, CliError> {
    if names.is_empty() {
        return Err(CliError::Usage("at least one style is required".into()));
    }
    names.iter().map(|n| n.trim().parse().map_err(|e: ugformer::Error| CliError::Usage(e.to_string()))).collect()
}

fn load_prepared(data: &Path, size: usize) -> Result<Dataset, CliError> {
    let raw = load_dataset(data)?;
    let prep = |v: &[Sample]| v.iter().map(|s| prepare_sample(s, size)).collect::<ugformer::Result<Vec<_>>>();
    Ok(Dataset { train: prep(&raw.train)?, val: prep(&raw.val)?, test: prep(&raw.test)? })
}

fn splits(which: SplitArg) -> Vec<Split> {
    match which {
        SplitArg::All => vec![Split::Train, Split::Val, Split::Test],
        SplitArg::Train => vec![Split::Train],
        SplitArg::Val => vec![Split::Val],
        SplitArg::Test => vec![Split::Test],
    }
}

fn plane_mask(m: &Option<ugformer::Tensor>) -> Result<&ugformer::Tensor, CliError> {
    m.as_ref().ok_or_else(|| CliError::Data(ugformer::Error::Malformed("sample without mask".into())))
}

/// Scar-model examples: each slice cropped to a box around its reference
/// atrium and resized to the scar model's input side.
fn scar_samples(samples: &[Sample], cfg: &RunConfig) -> Result<Vec<Sample>, CliError> {
    samples
        .iter()
        .map(|s| {
            let roi = compute_roi(plane_mask(&s.la_mask)?, cfg.pipeline.tolerance)?;
            Ok(roi_sample(s, &roi, cfg.pipeline.scar_input)?)
        })
        .collect()
}

pub fn synth(
    common: &Common,
    count: usize,
    styles: &[String],
    val_styles: Option<&[String]>,
    val_count: Option<usize>,
    test_count: usize,
) -> Result<(), CliError> {
    let (cfg, seed) = setup(common)?;
    let train_styles = parse_styles(styles)?;
    let eval_styles = match val_styles {
        Some(v) => parse_styles(v)?,
        None => train_styles.clone(),
    };
    let val_count = val_count.unwrap_or(count / 10);
    if val_count + test_count > count {
        return Err(CliError::Usage(format!("{val_count} val + {test_count} test exceed --count {count}")));
    }
    let n_train = count - val_count - test_count;
    for sub in ["images", "la", "scar"] {
        fs::create_dir_all(common.out.join(sub))?;
    }
    let size = cfg.data.size;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let (split, j) = if i < n_train {
            (Split::Train, i)
        } else if i < n_train + val_count {
            (Split::Val, i - n_train)
        } else {
            (Split::Test, i - n_train - val_count)
        };
        let style = match split {
            Split::Train => train_styles[j % train_styles.len()],
            _ => eval_styles[j % eval_styles.len()],
        };
        let phantom_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let s = generate_phantom(&PhantomSpec::random(phantom_seed, size, size, style))?;
        let name = format!("{i:05}.ugt");
        let rec = ManifestRecord {
            image: PathBuf::from("images").join(&name),
            la: PathBuf::from("la").join(&name),
            scar: Some(PathBuf::from("scar").join(&name)),
            split,
            style: style.name().to_string(),
            seed: phantom_seed,
        };
        write_tensor(common.out.join(&rec.image), &s.image, Dtype::F32)?;
        write_tensor(common.out.join(&rec.la), plane_mask(&s.la_mask)?, Dtype::U8)?;
        write_tensor(common.out.join(rec.scar.as_ref().expect("set")), plane_mask(&s.scar_mask)?, Dtype::U8)?;
        records.push(rec);
    }
    write_manifest(common.out.join("manifest.jsonl"), &records)?;
    write_run_record(&common.out, "synth", seed, &cfg)?;
    println!("wrote {count} phantoms ({n_train} train, {val_count} val, {test_count} test) to {}", common.out.display());
    Ok(())
}

pub fn train(
    common: &Common,
    data: &Path,
    checkpoint: Option<&Path>,
    init_from: Option<&Path>,
    target: TargetArg,
) -> Result<(), CliError> {
    let (cfg, seed) = setup(common)?;
    let ds = load_prepared(data, cfg.data.size)?;
    let (train, val, target) = match target {
        TargetArg::La => (ds.train, ds.val, Target::La),
        TargetArg::Scar => (scar_samples(&ds.train, &cfg)?, scar_samples(&ds.val, &cfg)?, Target::Scar),
    };
    let mut model = Model::new(cfg.model.clone(), seed)?;
    if let Some(p) = init_from {
        let (prior, _) = load_checkpoint(p)?;
        let copied = model.params_mut().load_matching(prior.params());
        log::info!("initialised {copied} of {} tensors from {}", model.params().len(), p.display());
    }
    log::info!("training {target:?} model with {} parameters", model.num_parameters());
    let outcome = train_loop(&mut model, &train, &val, target, &cfg.train)?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| common.out.join("model.ckpt"));
    let meta = json!({ "target": target, "seed": seed, "size": cfg.data.size, "pipeline": cfg.pipeline });
    save_checkpoint(&ckpt, &model, meta)?;
    write_jsonl(&common.out.join("history.jsonl"), &outcome.history)?;
    write_run_record(&common.out, "train", seed, &cfg)?;
    let last = outcome.history.last().map_or(0.0, |r| r.val_dice);
    println!("final val dice {last:.4} after {} steps; checkpoint {}", outcome.steps, ckpt.display());
    Ok(())
}

#[derive(Serialize)]
struct PredictionRow {
    split: Split,
    index: usize,
    seed: u64,
    style: String,
    mask: PathBuf,
    dice: Option<f64>,
}

pub fn predict(common: &Common, data: &Path, checkpoint: &Path, which: SplitArg, with_overlay: bool) -> Result<(), CliError> {
    let (cfg, seed) = setup(common)?;
    let (model, _) = load_checkpoint(checkpoint)?;
    let ds = load_prepared(data, cfg.data.size)?;
    fs::create_dir_all(common.out.join("masks"))?;
    if with_overlay {
        fs::create_dir_all(common.out.join("overlays"))?;
    }
    let mut rows = Vec::new();
    for split in splits(which) {
        for (i, s) in ds.split(split).iter().enumerate() {
            let plane = s.plane();
            let mask = binarize(&probabilities(&model.logits(&plane)?), cfg.pipeline.threshold);
            let name = format!("{split}_{i:04}");
            let rel = PathBuf::from("masks").join(format!("{name}.ugt"));
            write_tensor(common.out.join(&rel), &mask, Dtype::U8)?;
            if with_overlay {
                write_pgm(&common.out.join("overlays").join(format!("{name}.pgm")), &overlay(&plane, &mask))?;
            }
            let dice = s.la_mask.as_ref().map(|gt| dice_score(&mask, gt)).transpose()?;
            rows.push(PredictionRow { split, index: i, seed: s.meta.seed, style: s.meta.style.clone(), mask: rel, dice });
        }
    }
    write_jsonl(&common.out.join("predictions.jsonl"), &rows)?;
    write_run_record(&common.out, "predict", seed, &cfg)?;
    println!("wrote {} masks to {}", rows.len(), common.out.join("masks").display());
    Ok(())
}

#[derive(Serialize)]
struct TwoStageRow {
    split: Split,
    index: usize,
    seed: u64,
    style: String,
    empty_la: bool,
    la_dice: f64,
    scar_dice: f64,
}

pub fn two_stage(common: &Common, data: &Path, lapm_path: &Path, spm_path: &Path, which: SplitArg) -> Result<(), CliError> {
    let (cfg, seed) = setup(common)?;
    let (lapm, _) = load_checkpoint(lapm_path)?;
    let (spm, _) = load_checkpoint(spm_path)?;
    let ds = load_prepared(data, cfg.data.size)?;
    let panels = common.out.join("panels");
    let masks = common.out.join("masks");
    fs::create_dir_all(&panels)?;
    fs::create_dir_all(&masks)?;
    let mut rows = Vec::new();
    for split in splits(which) {
        for (i, s) in ds.split(split).iter().enumerate() {
            let plane = s.plane();
            let out = two_stage_predict(&plane, &lapm, &spm, &cfg.pipeline)?;
            let name = format!("{split}_{i:04}");
            let panel = |tag: &str| panels.join(format!("{name}_{tag}.pgm"));
            write_pgm(&panel("input"), &plane)?;
            write_pgm(&panel("la"), &overlay(&plane, &out.la_mask))?;
            if let (Some(roi), Some(patch)) = (&out.roi, &out.patch) {
                write_pgm(&panel("roi"), &roi_panel(&plane, roi))?;
                write_pgm(&panel("patch"), patch)?;
            }
            write_pgm(&panel("scar"), &overlay(&plane, &out.scar_mask))?;
            write_tensor(masks.join(format!("{name}_la.ugt")), &out.la_mask, Dtype::U8)?;
            write_tensor(masks.join(format!("{name}_scar.ugt")), &out.scar_mask, Dtype::U8)?;
            rows.push(TwoStageRow {
                split,
                index: i,
                seed: s.meta.seed,
                style: s.meta.style.clone(),
                empty_la: out.empty_la,
                la_dice: dice_score(&out.la_mask, plane_mask(&s.la_mask)?)?,
                scar_dice: dice_score(&out.scar_mask, plane_mask(&s.scar_mask)?)?,
            });
        }
    }
    write_jsonl(&common.out.join("two_stage.jsonl"), &rows)?;
    write_run_record(&common.out, "two-stage", seed, &cfg)?;
    let n = rows.len().max(1) as f64;
    println!(
        "{} slices: mean LA dice {:.4}, mean scar dice {:.4}",
        rows.len(),
        rows.iter().map(|r| r.la_dice).sum::<f64>() / n,
        rows.iter().map(|r| r.scar_dice).sum::<f64>() / n
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    task: &'static str,
    split: Split,
    style: String,
    n: usize,
    mean: f64,
    std: f64,
}

fn grouped(task: &'static str, split: Split, samples: &[Sample], dice: &[f64], rows: &mut Vec<EvalRow>) {
    let mut by_style: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (s, &d) in samples.iter().zip(dice) {
        by_style.entry(s.meta.style.as_str()).or_default().push(d);
    }
    let mut push = |style: &str, v: Vec<f64>| {
        let n = v.len();
        let m = Metrics::from_slices(v);
        rows.push(EvalRow { task, split, style: style.to_string(), n, mean: m.mean, std: m.std });
    };
    for (style, v) in by_style {
        push(style, v);
    }
    push("all", dice.to_vec());
}

pub fn eval(common: &Common, data: &Path, checkpoint: &Path, spm_path: Option<&Path>) -> Result<(), CliError> {
    let (cfg, seed) = setup(common)?;
    let (lapm, _) = load_checkpoint(checkpoint)?;
    let spm = spm_path.map(load_checkpoint).transpose()?.map(|(m, _)| m);
    let ds = load_prepared(data, cfg.data.size)?;
    let mut rows = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let samples = ds.split(split);
        if samples.is_empty() {
            continue;
        }
        let la = evaluate(&lapm, samples, Target::La, cfg.train.batch_size)?;
        grouped("la", split, samples, &la.per_slice, &mut rows);
        if let Some(spm) = &spm {
            let scar = samples
                .iter()
                .map(|s| {
                    let out = two_stage_predict(&s.plane(), &lapm, spm, &cfg.pipeline)?;
                    Ok(dice_score(&out.scar_mask, plane_mask(&s.scar_mask)?)?)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            grouped("scar", split, samples, &scar, &mut rows);
        }
    }
    let mut table = String::from("| task | split | style | n | dice mean | dice std |\n|---|---|---|---|---|---|\n");
    for r in &rows {
        table += &format!("| {} | {} | {} | {} | {:.4} | {:.4} |\n", r.task, r.split, r.style, r.n, r.mean, r.std);
    }
    print!("{table}");
    fs::write(common.out.join("eval.md"), &table)?;
    write_jsonl(&common.out.join("eval.jsonl"), &rows)?;
    write_run_record(&common.out, "eval", seed, &cfg)?;
    Ok(())
}

pub fn ablate(common: &Common, data: &Path) -> Result<(), CliError> {
    let (cfg, seed) = setup(common)?;
    let ds = load_prepared(data, cfg.data.size)?;
    let rows = run_ablation(&cfg.model, &ds.train, &ds.val, Target::La, &cfg.train, seed)?;
    let table = ablation_table(&rows);
    print!("{table}");
    fs::write(common.out.join("ablation.md"), &table)?;
    write_jsonl(&common.out.join("ablation.jsonl"), &rows)?;
    write_run_record(&common.out, "ablate", seed, &cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct GradcheckRow {
    block: BlockId,
    precision: &'static str,
    max_rel_err: f64,
    tolerance: f64,
    passed: bool,
}

pub fn gradcheck(common: &Common, blocks: Option<&[String]>) -> Result<(), CliError> {
    let (cfg, seed) = setup(common)?;
    let blocks: Vec<BlockId> = match blocks {
        None => BlockId::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| n.trim().parse().map_err(|e: ugformer::Error| CliError::Usage(e.to_string())))
            .collect::<Result<_, _>>()?,
    };
    let mut rows = Vec::new();
    for &block in &blocks {
        let runs = [
            ("f64", finite_diff_gradcheck_with::<f64>(block, seed, GradcheckSettings::double())?),
            ("f32", finite_diff_gradcheck_with::<f32>(block, seed, GradcheckSettings::single())?),
        ];
        for (precision, r) in runs {
            println!(
                "{:<18} {precision} max rel err {:.3e} (tol {:.0e}) {}",
                block.name(),
                r.max_rel_err,
                r.tolerance,
                if r.passed { "PASS" } else { "FAIL" }
            );
            rows.push(GradcheckRow { block, precision, max_rel_err: r.max_rel_err, tolerance: r.tolerance, passed: r.passed });
        }
    }
    write_jsonl(&common.out.join("gradcheck.jsonl"), &rows)?;
    write_run_record(&common.out, "gradcheck", seed, &cfg)?;
    let failed: Vec<String> = rows.iter().filter(|r| !r.passed).map(|r| format!("{} ({})", r.block.name(), r.precision)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("gradient mismatch in {}", failed.join(", "))))
    }
}
