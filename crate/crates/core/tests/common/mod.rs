#![allow(dead_code)]

use std::path::{Path, PathBuf};

use stratsearch::config::{RunConfig, TimestampMode};

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

/// The six-parameter sim_trainer config shipped in `configs/`.
pub fn d6_config(master_seed: u64, out: &Path) -> RunConfig {
    let mut c = RunConfig::load(&configs_dir().join("sim_trainer_d6.json")).unwrap();
    c.run.master_seed = master_seed;
    c.run.output_dir = Some(out.to_path_buf());
    c.run.timestamps = TimestampMode::Logical;
    c
}

/// A small serial search that runs in well under a second.
pub fn small_config(out: &Path) -> RunConfig {
    let mut c = d6_config(11, out);
    c.run.max_epoch = 30;
    c.run.initial_jobs = 4;
    c.run.workers = 1;
    c.run.checkpoint_every = 5;
    c
}
