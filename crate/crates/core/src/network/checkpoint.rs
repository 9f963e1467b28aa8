//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form and parsed exactly, so save/load is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::weights::NetworkWeights;
use crate::error::{EgmnError, Result};

pub const CHECKPOINT_FORMAT: &str = "egmn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<W> {
    format: String,
    version: u32,
    weights: W,
}

pub fn write_checkpoint<W: Write>(out: W, weights: &NetworkWeights) -> Result<()> {
    let env = Envelope {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        weights,
    };
    serde_json::to_writer(out, &env)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<NetworkWeights> {
    let env: Envelope<NetworkWeights> = serde_json::from_reader(input)?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(EgmnError::Checkpoint(format!("unknown format tag {:?}", env.format)));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(EgmnError::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            env.version
        )));
    }
    validate_shapes(&env.weights)?;
    Ok(env.weights)
}

pub fn save_checkpoint(path: &Path, weights: &NetworkWeights) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, weights)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkWeights> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

fn validate_shapes(w: &NetworkWeights) -> Result<()> {
    let bad = |m: String| Err(EgmnError::Checkpoint(m));
    w.schema.validate()?;
    w.arch.validate()?;
    if w.embeddings.len() != w.schema.categorical.len() {
        return bad("embedding table count differs from schema".into());
    }
    for (t, f) in w.embeddings.iter().zip(&w.schema.categorical) {
        if t.len() != f.vocab_size * f.embedding_dim {
            return bad(format!("embedding table {:?} has wrong size", f.name));
        }
    }
    if w.backbone.len() != w.arch.hidden.len() {
        return bad("backbone depth differs from architecture".into());
    }
    let mut width = w.schema.input_dim();
    for (i, (l, &h)) in w.backbone.iter().zip(&w.arch.hidden).enumerate() {
        if l.in_dim != width || l.out_dim != h {
            return bad(format!("backbone.{i} has shape {}x{}", l.out_dim, l.in_dim));
        }
        width = h;
    }
    let heads = [
        (&w.heads.rate, 1),
        (&w.heads.mean, w.arch.k),
        (&w.heads.var, w.arch.k),
        (&w.heads.mix, w.arch.mix_rows()),
    ];
    for (l, rows) in heads {
        if l.in_dim != width || l.out_dim != rows {
            return bad("head shape does not match architecture".into());
        }
    }
    for l in w.blocks() {
        if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
            return bad("tensor length does not match its declared shape".into());
        }
    }
    if !w.is_finite() {
        return bad("checkpoint contains non-finite values".into());
    }
    Ok(())
}
