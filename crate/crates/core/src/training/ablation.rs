//! Component ablation: trains each grid configuration on the same data
//! and seed and reports validation Dice.

use serde::Serialize;

use crate::error::Result;
use crate::model::{Arch, Model, ModelConfig};
use crate::pipeline::sample::Sample;
use crate::training::metrics::Metrics;
use crate::training::schedule::TrainConfig;
use crate::training::trainer::{evaluate, train_loop, Target};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub group: &'static str,
    pub arch: Arch,
    /// Unset for the baseline, which has no transformer blocks.
    pub mhsa: Option<bool>,
    pub dconv: Option<bool>,
    pub gcn: bool,
    pub parameters: usize,
    pub dice_mean: f64,
    pub dice_std: f64,
}

/// The two comparison grids: ETB branch toggles with the bridge on plus
/// the full block without it, then the baseline and the full model each
/// with and without the bridge.
pub fn ablation_grid(base: &ModelConfig) -> Vec<(&'static str, ModelConfig)> {
    let ug = |mhsa, dconv, gcn| ModelConfig { arch: Arch::Ugformer, use_mhsa: mhsa, use_dconv: dconv, use_gcn: gcn, ..base.clone() };
    let unet = |gcn| ModelConfig { arch: Arch::Unet, use_gcn: gcn, ..base.clone() };
    vec![
        ("etb", ug(true, false, true)),
        ("etb", ug(false, true, true)),
        ("etb", ug(true, true, true)),
        ("etb", ug(true, true, false)),
        ("bridge", unet(false)),
        ("bridge", unet(true)),
        ("bridge", ug(true, true, false)),
        ("bridge", ug(true, true, true)),
    ]
}

/// Trains every grid row (identical configurations only once) and
/// evaluates it on `val`.
pub fn run_ablation(
    base: &ModelConfig,
    train: &[Sample],
    val: &[Sample],
    target: Target,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let mut done: Vec<(ModelConfig, usize, Metrics)> = Vec::new();
    let mut rows = Vec::new();
    for (group, mc) in ablation_grid(base) {
        let (parameters, m) = match done.iter().find(|(c, _, _)| *c == mc) {
            Some((_, p, m)) => (*p, m.clone()),
            None => {
                log::info!("ablation: {:?} mhsa={} dconv={} gcn={}", mc.arch, mc.use_mhsa, mc.use_dconv, mc.use_gcn);
                let mut model = Model::new(mc.clone(), seed)?;
                train_loop(&mut model, train, val, target, cfg)?;
                let m = evaluate(&model, val, target, cfg.batch_size)?;
                done.push((mc.clone(), model.num_parameters(), m.clone()));
                (model.num_parameters(), m)
            }
        };
        let ugformer = mc.arch == Arch::Ugformer;
        rows.push(AblationRow {
            group,
            arch: mc.arch,
            mhsa: ugformer.then_some(mc.use_mhsa),
            dconv: ugformer.then_some(mc.use_dconv),
            gcn: mc.use_gcn,
            parameters,
            dice_mean: m.mean,
            dice_std: m.std,
        });
    }
    Ok(rows)
}

/// Markdown table, one line per row.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mark = |b: Option<bool>| match b {
        Some(true) => "yes",
        Some(false) => "no",
        None => "-",
    };
    let mut table =
        String::from("| group | arch | mhsa | dconv | gcn | parameters | val dice |\n|---|---|---|---|---|---|---|\n");
    for r in rows {
        let arch = match r.arch {
            Arch::Ugformer => "ugformer",
            Arch::Unet => "unet",
        };
        table += &format!(
            "| {} | {} | {} | {} | {} | {} | {:.4} ± {:.4} |\n",
            r.group,
            arch,
            mark(r.mhsa),
            mark(r.dconv),
            mark(Some(r.gcn)),
            r.parameters,
            r.dice_mean,
            r.dice_std
        );
    }
    table
}
