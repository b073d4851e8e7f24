use std::path::PathBuf;

use serde::Serialize;

use super::config::{ExperimentConfig, InstanceConfig};
use super::io::{encode_dataset, sha256_hex, write_atomic, write_json};
use crate::error::{Error, Result};
use crate::instance::{generate_hard_instance, HardInstanceSpec};

/// JSON sidecar written next to each dataset file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedDataset {
    pub kind: &'static str,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub d: usize,
    pub file: PathBuf,
    pub sha256: String,
    pub config_hash: String,
}

/// Writes one hard-instance dataset (plus sidecar) per configured seed.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<Vec<GeneratedDataset>> {
    config.validate()?;
    let InstanceConfig::Hard { k, n, seeds } = config.instance()? else {
        return Err(Error::InvalidConfig("generate needs a `hard` instance".into()));
    };
    std::fs::create_dir_all(&config.output_dir)?;
    let hash = config.hash();
    let mut written = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let ds = generate_hard_instance(&HardInstanceSpec { k: *k, n: *n, seed })?;
        let bytes = encode_dataset(&ds);
        let stem = format!("hard_k{k}_n{n}_seed{seed}");
        let file = config.output_dir.join(format!("{stem}.nia"));
        write_atomic(&file, |w| Ok(w.write_all(&bytes)?))?;
        let sidecar = GeneratedDataset {
            kind: "hard",
            k: *k,
            n: *n,
            seed,
            d: ds.d(),
            file: file.clone(),
            sha256: sha256_hex(&bytes),
            config_hash: hash.clone(),
        };
        write_json(&config.output_dir.join(format!("{stem}.json")), &sidecar)?;
        written.push(sidecar);
    }
    Ok(written)
}
