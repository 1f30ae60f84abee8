use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{TrainLogRecord, Trainer, STREAM_SHUFFLE};
use crate::data::{crop_pair, save_checkpoint, ImagePair};
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const LOG_FILE: &str = "train_log.tsv";
pub const LOG_HEADER: &str = "step\td_loss\tg_adv\tg_rec\tg_total\td_real\td_fake";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step_{step:08}.ckpt"))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub first_step: u64,
    pub last_step: u64,
    pub records: Vec<TrainLogRecord>,
    pub final_checkpoint: PathBuf,
}

/// Index of the dataset item used for slot `j` of step `step` (1-based).
/// Each epoch visits every item once in a seeded order.
fn sample_index(seed: u64, n: usize, batch: usize, step: u64, j: usize) -> usize {
    let g = (step - 1) as usize * batch + j;
    let epoch = (g / n) as u64;
    Rng::new(seed).fork(STREAM_SHUFFLE + epoch).permutation(n)[g % n]
}

fn prepare_log(path: &Path, resume_step: u64) -> Result<fs::File> {
    let mut kept = vec![LOG_HEADER.to_string()];
    if resume_step > 0 {
        if let Ok(text) = fs::read_to_string(path) {
            kept.extend(
                text.lines()
                    .skip(1)
                    .filter(|l| {
                        l.split('\t')
                            .next()
                            .and_then(|s| s.parse::<u64>().ok())
                            .is_some_and(|s| s <= resume_step)
                    })
                    .map(str::to_string),
            );
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for l in kept {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(f)
}

/// Runs `trainer` up to `trainer.cfg.steps` generator steps over `pairs`,
/// writing the TSV log and checkpoints under `out_dir`. A trainer restored
/// from a checkpoint continues where it stopped and reproduces the
/// uninterrupted run.
pub fn train_loop(
    trainer: &mut Trainer,
    pairs: &[ImagePair],
    out_dir: &Path,
    mut progress: impl FnMut(&TrainLogRecord),
) -> Result<TrainSummary> {
    let cfg = trainer.cfg.clone();
    if pairs.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    if cfg.lr_crop > 0 {
        let hr_side = cfg.lr_crop * pairs[0].scale;
        if hr_side != trainer.disc.config().image_size {
            return Err(Error::Config(format!(
                "HR crop {hr_side} does not match discriminator image_size {}",
                trainer.disc.config().image_size
            )));
        }
    }
    fs::create_dir_all(out_dir.join("checkpoints")).map_err(|e| Error::io(out_dir, e))?;
    let first_step = trainer.step;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = prepare_log(&log_path, first_step)?;
    if first_step == 0 {
        save_checkpoint(&trainer.to_checkpoint(), checkpoint_path(out_dir, 0))?;
    }

    let mut records = Vec::new();
    while trainer.step < cfg.steps {
        let step = trainer.step + 1;
        let mut rng = trainer.step_rng(trainer.step);
        let batch: Vec<ImagePair> = (0..cfg.batch_size)
            .map(|j| {
                let p = &pairs[sample_index(cfg.seed, pairs.len(), cfg.batch_size, step, j)];
                if cfg.lr_crop > 0 {
                    crop_pair(p, cfg.lr_crop, &mut rng)
                } else {
                    Ok(p.clone())
                }
            })
            .collect::<Result<_>>()?;
        let rec = trainer.train_step(&batch, &mut rng)?;
        writeln!(log, "{}", rec.tsv_row()).map_err(|e| Error::io(&log_path, e))?;
        if step.is_multiple_of(cfg.log_every) || step == cfg.steps {
            progress(&rec);
        }
        if step.is_multiple_of(cfg.checkpoint_every) {
            save_checkpoint(&trainer.to_checkpoint(), checkpoint_path(out_dir, step))?;
        }
        records.push(rec);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_checkpoint = out_dir.join(super::FINAL_CHECKPOINT);
    save_checkpoint(&trainer.to_checkpoint(), &final_checkpoint)?;
    Ok(TrainSummary {
        first_step,
        last_step: trainer.step,
        records,
        final_checkpoint,
    })
}
