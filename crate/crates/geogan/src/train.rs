//! Training driver: periodic checkpoints and the CSV log.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use geogan_core::arch::ArchSpec;
use geogan_core::trainer::{
    StepRecord, TrainHooks, Trainer, TrainerState, TrainingConfig, TrainingLog,
};
use geogan_core::Volume;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::gckp;

pub const LOG_HEADER: [&str; 5] = ["step", "critic_loss", "gen_loss", "gp", "seconds"];

struct DriverHooks {
    start: Instant,
    checkpoint: PathBuf,
    every: u64,
    seed: u64,
    log: Option<(PathBuf, csv::Writer<File>)>,
}

impl TrainHooks for DriverHooks {
    fn elapsed_seconds(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn after_step(&mut self, trainer: &Trainer, rec: &StepRecord) -> geogan_core::Result<()> {
        if let Some((path, w)) = &mut self.log {
            let row = [
                rec.step.to_string(),
                rec.critic_loss.to_string(),
                rec.gen_loss.to_string(),
                rec.gp.to_string(),
                format!("{:.3}", rec.seconds),
            ];
            if let Err(e) = w.write_record(&row).and_then(|_| Ok(w.flush()?)) {
                return Err(geogan_core::Error::Argument {
                    op: "training log",
                    detail: format!("{}: {e}", path.display()),
                });
            }
        }
        let done = trainer.state().step;
        if self.every > 0
            && done.is_multiple_of(self.every)
            && done < trainer.config().total_gen_steps
        {
            let ckpt = checkpoint::from_state(trainer.state(), self.seed);
            gckp::write(&self.checkpoint, &ckpt).map_err(|e| geogan_core::Error::Argument {
                op: "checkpoint",
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }
}

/// Where a run starts from.
pub enum Start {
    Fresh(ArchSpec),
    Resume(Box<TrainerState>),
}

pub struct TrainOutcome {
    pub state: TrainerState,
    pub log: TrainingLog,
}

/// Trains and writes the final checkpoint to `checkpoint_path`; intermediate
/// checkpoints overwrite the same file every `cfg.checkpoint_every` steps. Log
/// rows are appended to `log_path` (created with a header when absent).
pub fn run(
    dataset: &[Volume],
    start: Start,
    cfg: &TrainingConfig,
    checkpoint_path: &Path,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut trainer = match start {
        Start::Fresh(spec) => Trainer::new(dataset, &spec, cfg)?,
        Start::Resume(state) => Trainer::resume(dataset, cfg, *state)?,
    };
    let log = match log_path {
        Some(p) => {
            let fresh = !p.exists() || trainer.state().step == 0;
            let file = std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(file);
            if fresh {
                w.write_record(LOG_HEADER)
                    .map_err(|e| Error::io(p, e.into()))?;
            }
            Some((p.to_path_buf(), w))
        }
        None => None,
    };
    let mut hooks = DriverHooks {
        start: Instant::now(),
        checkpoint: checkpoint_path.to_path_buf(),
        every: cfg.checkpoint_every,
        seed: cfg.seed,
        log,
    };
    let log = trainer.run(&mut hooks)?;
    let state = trainer.into_state();
    gckp::write(checkpoint_path, &checkpoint::from_state(&state, cfg.seed))?;
    Ok(TrainOutcome { state, log })
}
