//! JSON-Lines dataset files and their manifests.
//!
//! Line 1 is a header record carrying the schema string and the horizon
//! configuration; every following line is one scene. Floats keep full
//! round-trip precision (serde_json shortest representation).

use crate::error::{CbpError, Result};
use crate::sim::{Scene, ScenarioKind, SimConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const DATASET_SCHEMA: &str = "cbp.dataset.v1";
pub const MANIFEST_SCHEMA: &str = "cbp.manifest.v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub h_past: usize,
    pub t_future: usize,
    pub dt: f64,
    pub v_max: f64,
    pub n_scenes: usize,
}

impl DatasetHeader {
    pub fn from_config(cfg: &SimConfig, n_scenes: usize) -> Self {
        DatasetHeader {
            schema: DATASET_SCHEMA.to_string(),
            h_past: cfg.h_past,
            t_future: cfg.t_future,
            dt: cfg.dt,
            v_max: cfg.v_max,
            n_scenes,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub dataset_file: String,
    pub total_scenes: usize,
    pub counts_by_kind: BTreeMap<String, usize>,
    pub dataset_sha256: String,
    pub master_seed: u64,
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, scenes: &[Scene]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut file, header)?;
    file.write_all(b"\n")?;
    for scene in scenes {
        serde_json::to_writer(&mut file, scene)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Scene>)> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CbpError::Schema("empty dataset file".into()))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    if header.schema != DATASET_SCHEMA {
        return Err(CbpError::Schema(format!(
            "unsupported dataset schema {:?}, expected {DATASET_SCHEMA:?}",
            header.schema
        )));
    }
    let mut scenes = Vec::with_capacity(header.n_scenes);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(&line)
            .map_err(|e| CbpError::Schema(format!("scene line {}: {e}", i + 2)))?;
        scene.validate(header.h_past, header.t_future)?;
        scenes.push(scene);
    }
    if scenes.len() != header.n_scenes {
        return Err(CbpError::Schema(format!(
            "header announces {} scenes, file holds {}",
            header.n_scenes,
            scenes.len()
        )));
    }
    Ok((header, scenes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn build_manifest(dataset_path: &Path, scenes: &[Scene], master_seed: u64) -> Result<Manifest> {
    let bytes = std::fs::read(dataset_path)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for kind in ScenarioKind::ALL {
        counts.insert(kind.name().to_string(), 0);
    }
    for scene in scenes {
        *counts.get_mut(scene.scenario_kind.name()).expect("all kinds present") += 1;
    }
    Ok(Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        dataset_file: dataset_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        total_scenes: scenes.len(),
        counts_by_kind: counts,
        dataset_sha256: sha256_hex(&bytes),
        master_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim;

    #[test]
    fn roundtrip_and_byte_determinism() {
        let cfg = SimConfig { n_scenes: 12, ..SimConfig::default() };
        let scenes = sim::generate_dataset(&cfg, 7).unwrap();
        let header = DatasetHeader::from_config(&cfg, scenes.len());
        let dir = std::env::temp_dir().join("cbp_dataset_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.jsonl");
        let p2 = dir.join("b.jsonl");
        write_dataset(&p1, &header, &scenes).unwrap();
        let scenes2 = sim::generate_dataset(&cfg, 7).unwrap();
        write_dataset(&p2, &header, &scenes2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let (h, back) = read_dataset(&p1).unwrap();
        assert_eq!(h.n_scenes, 12);
        assert_eq!(back, scenes);

        let m1 = build_manifest(&p1, &scenes, 7).unwrap();
        let m2 = build_manifest(&p2, &scenes2, 7).unwrap();
        assert_eq!(m1.dataset_sha256, m2.dataset_sha256);
        assert_eq!(m1.counts_by_kind.values().sum::<usize>(), 12);
    }
}
