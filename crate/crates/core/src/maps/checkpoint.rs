//! Plain-text map checkpoints.
//!
//! ```text
//! pwgf-map 1
//! architecture residual-mlp
//! dim 2
//! hidden 50,50
//! params 2800
//! <one f64 per line, canonical order>
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! read–write cycle reproduces θ bit for bit.

use std::io::{BufRead, Write};

use super::{Architecture, PushforwardMap};
use crate::error::{Error, Result};

const MAGIC: &str = "pwgf-map 1";

pub fn write_checkpoint<W: Write>(map: &PushforwardMap, mut out: W) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "architecture {}", map.architecture().tag())?;
    writeln!(out, "dim {}", map.dim())?;
    match map.architecture() {
        Architecture::Affine => {}
        Architecture::PlanarFlowStack { layers } => writeln!(out, "layers {layers}")?,
        Architecture::ResidualMlp { hidden } => {
            let widths: Vec<String> = hidden.iter().map(|w| w.to_string()).collect();
            writeln!(out, "hidden {}", widths.join(","))?
        }
    }
    writeln!(out, "params {}", map.param_count())?;
    for v in map.params() {
        writeln!(out, "{v:?}")?;
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidInput(format!("checkpoint: {}", msg.into()))
}

fn header<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| bad(format!("missing '{key}' line")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| bad(format!("expected '{key} …', found '{line}'")))
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<PushforwardMap> {
    let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
    let mut it = lines.iter().map(|s| s.trim_end());
    if it.next() != Some(MAGIC) {
        return Err(bad("missing 'pwgf-map 1' header"));
    }
    let tag = header(it.next(), "architecture")?;
    let dim: usize = header(it.next(), "dim")?
        .parse()
        .map_err(|_| bad("dim is not an integer"))?;
    let arch = match tag {
        "affine" => Architecture::Affine,
        "planar-flow-stack" => Architecture::PlanarFlowStack {
            layers: header(it.next(), "layers")?
                .parse()
                .map_err(|_| bad("layers is not an integer"))?,
        },
        "residual-mlp" => Architecture::ResidualMlp {
            hidden: header(it.next(), "hidden")?
                .split(',')
                .map(|s| s.parse().map_err(|_| bad("hidden widths must be integers")))
                .collect::<Result<_>>()?,
        },
        other => return Err(bad(format!("unknown architecture '{other}'"))),
    };
    let n: usize = header(it.next(), "params")?
        .parse()
        .map_err(|_| bad("params is not an integer"))?;
    let theta: Vec<f64> = it
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().map_err(|_| bad(format!("bad value '{l}'"))))
        .collect::<Result<_>>()?;
    if theta.len() != n {
        return Err(bad(format!("expected {n} values, found {}", theta.len())));
    }
    PushforwardMap::new(arch, dim, theta)
}
