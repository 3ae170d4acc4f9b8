//! Checkpoint persistence for the two trained generators.
//!
//! One manifest records the topology of all six networks plus the aligned
//! and latent dimensions, the condition mode, and a config fingerprint; each
//! network's flat parameter vector is one `f32` blob. Loading restores every
//! parameter bitwise. Training histories are not part of a checkpoint (they
//! go to the loss-history CSV), so loaded models report empty histories.

use std::path::Path;

use super::format::{read_blob_f32, write_blob_f32, Manifest};
use super::DataError;
use crate::afg::AfgModel;
use crate::nn::MlpNet;
use crate::sfg::{ConditionMode, SfgModel};

/// A persisted pair of trained generators.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub afg: AfgModel,
    pub sfg: SfgModel,
    pub fingerprint: String,
}

const NETS: [&str; 6] = [
    "encoder_semantic",
    "decoder_semantic",
    "encoder_visual",
    "decoder_visual",
    "cvae_encoder",
    "cvae_decoder",
];

/// Writes the checkpoint manifest and one parameter blob per network.
pub fn save_checkpoint(
    afg: &AfgModel,
    sfg: &SfgModel,
    fingerprint: &str,
    manifest_path: &Path,
) -> Result<(), DataError> {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| DataError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let nets: [&MlpNet; 6] = [
        afg.encoder_semantic(),
        afg.decoder_semantic(),
        afg.encoder_visual(),
        afg.decoder_visual(),
        sfg.encoder(),
        sfg.decoder(),
    ];
    let mut m = Manifest::new("checkpoint");
    m.push("fingerprint", fingerprint);
    m.push("aligned_dim", afg.aligned_dim().to_string());
    m.push("latent_dim", sfg.latent_dim().to_string());
    m.push("condition_dim", sfg.condition_dim().to_string());
    m.push("condition_mode", sfg.condition_mode().as_str());
    for (name, net) in NETS.iter().zip(nets) {
        let sizes: Vec<String> = net.layer_sizes().iter().map(|s| s.to_string()).collect();
        m.push(&format!("{name}_layers"), sizes.join(" "));
        m.push(&format!("{name}_blob"), format!("{name}.bin"));
    }
    m.write(manifest_path)?;
    for (name, net) in NETS.iter().zip(nets) {
        write_blob_f32(&dir.join(format!("{name}.bin")), net.params())?;
    }
    Ok(())
}

fn load_net(m: &Manifest, dir: &Path, name: &str) -> Result<MlpNet, DataError> {
    let sizes = m.get_usize_list(&format!("{name}_layers"))?;
    let blob_name = m.get(&format!("{name}_blob"))?;
    let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let flat = read_blob_f32(&dir.join(blob_name), expected)?;
    MlpNet::from_flat(&sizes, &flat).map_err(|e| DataError::InvalidSpec(e.to_string()))
}

/// Loads a checkpoint, validating the version, every declared shape, and
/// blob lengths.
pub fn load_checkpoint(manifest_path: &Path) -> Result<Checkpoint, DataError> {
    let m = Manifest::read(manifest_path)?;
    m.expect_kind("checkpoint")?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let aligned_dim = m.get_usize("aligned_dim")?;
    let latent_dim = m.get_usize("latent_dim")?;
    let condition_dim = m.get_usize("condition_dim")?;
    let mode_raw = m.get("condition_mode")?;
    let condition_mode =
        ConditionMode::parse(mode_raw).ok_or_else(|| DataError::BadValue {
            key: "condition_mode".into(),
            value: mode_raw.to_string(),
        })?;
    let fingerprint = m.get("fingerprint")?.to_string();

    let afg = AfgModel::from_parts(
        load_net(&m, dir, "encoder_semantic")?,
        load_net(&m, dir, "decoder_semantic")?,
        load_net(&m, dir, "encoder_visual")?,
        load_net(&m, dir, "decoder_visual")?,
        aligned_dim,
        Vec::new(),
    )
    .map_err(|e| DataError::InvalidSpec(e.to_string()))?;
    let sfg = SfgModel::from_parts(
        load_net(&m, dir, "cvae_encoder")?,
        load_net(&m, dir, "cvae_decoder")?,
        latent_dim,
        aligned_dim,
        condition_dim,
        condition_mode,
        Vec::new(),
    )
    .map_err(|e| DataError::InvalidSpec(e.to_string()))?;

    Ok(Checkpoint {
        afg,
        sfg,
        fingerprint,
    })
}
