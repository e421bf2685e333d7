//! Versioned checkpoint files: an 8-byte magic, a little-endian `u32`
//! format version, then the bincode-encoded [`Checkpoint`].

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use polyseg_core::training::Checkpoint;

use crate::config::RunConfig;

pub const MAGIC: &[u8; 8] = b"PSEGCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    bincode::serialize_into(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).with_context(|| format!("cannot open checkpoint {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .with_context(|| format!("{} is too short to be a checkpoint", path.display()))?;
    if &header[..8] != MAGIC {
        bail!("{} is not a checkpoint file", path.display());
    }
    let version = u32::from_le_bytes(header[8..].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        bail!("{} has checkpoint format version {version}, expected {FORMAT_VERSION}", path.display());
    }
    let ckpt: Checkpoint =
        bincode::deserialize_from(r).with_context(|| format!("{} is corrupt", path.display()))?;
    Ok(ckpt)
}

/// A message when the stored fingerprint disagrees with the architecture the
/// checkpoint describes or with the one the caller expects.
pub fn fingerprint_warning(ckpt: &Checkpoint, expected: Option<u64>) -> Option<String> {
    let own = RunConfig::model_fingerprint(&ckpt.model);
    if ckpt.fingerprint != own {
        return Some(format!(
            "checkpoint fingerprint {:016x} does not match its model config ({own:016x})",
            ckpt.fingerprint
        ));
    }
    match expected {
        Some(e) if e != own => Some(format!(
            "checkpoint model {own:016x} differs from the configured model {e:016x}; using the checkpoint's"
        )),
        _ => None,
    }
}
