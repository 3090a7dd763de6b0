//! Report files: JSON lines, run records and grayscale images.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use ugformer::pipeline::Roi;
use ugformer::Tensor;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
}

/// Writes `run.json` with the seed and fully resolved config.
pub fn write_run_record(dir: &Path, command: &str, seed: u64, config: &RunConfig) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&RunRecord { command, seed, config }).expect("serializable");
    fs::write(dir.join("run.json"), text + "\n")?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut f = fs::File::create(path)?;
    for r in rows {
        writeln!(f, "{}", serde_json::to_string(r).expect("serializable"))?;
    }
    Ok(())
}

/// Binary PGM of a `[H, W]` plane with values in `[0, 1]`.
pub fn write_pgm(path: &Path, plane: &Tensor) -> Result<(), CliError> {
    let [h, w] = plane.dims2()?;
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(plane.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes)?;
    Ok(())
}

/// Dimmed image with the mask outline drawn at full intensity.
pub fn overlay(image: &Tensor, mask: &Tensor) -> Tensor {
    let [h, w] = mask.dims2().expect("plane");
    let on = |y: usize, x: usize| mask.data()[y * w + x] != 0.0;
    Tensor::from_fn(&[h, w], |i| {
        let (y, x) = (i / w, i % w);
        let edge = on(y, x)
            && (y == 0 || x == 0 || y + 1 == h || x + 1 == w || !on(y - 1, x) || !on(y + 1, x) || !on(y, x - 1) || !on(y, x + 1));
        if edge {
            1.0
        } else {
            0.7 * image.data()[i]
        }
    })
}

/// Dimmed image with the rectangle outline drawn at full intensity.
pub fn roi_panel(image: &Tensor, roi: &Roi) -> Tensor {
    let [_, w] = image.dims2().expect("plane");
    Tensor::from_fn(image.dims(), |i| {
        let (y, x) = (i / w, i % w);
        let on_edge = roi.contains(y, x) && (y == roi.y_min || y == roi.y_max || x == roi.x_min || x == roi.x_max);
        if on_edge {
            1.0
        } else {
            0.7 * image.data()[i]
        }
    })
}
