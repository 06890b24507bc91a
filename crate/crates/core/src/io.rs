//! Environment dumps and PGM snapshots.
//!
//! Environment file: one ASCII header line `FROZENENV <dim> <e_0> ... <e_{d-1}>`
//! followed by one byte per site in linear site order (axis 0 fastest):
//! `0` unfrozen minus, `1` unfrozen plus, `2` frozen minus, `3` frozen plus.
//! The text variant uses the header `FROZENENV-TEXT` and writes the same codes
//! as ASCII digits, one line per run of `e_0` sites.

use std::io::{BufRead, Write};

use crate::environment::{Environment, Frozen, SiteKind, Spin};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, LatticeGeometry};

const MAGIC: &str = "FROZENENV";
const MAGIC_TEXT: &str = "FROZENENV-TEXT";

fn header(magic: &str, geom: &LatticeGeometry) -> String {
    let mut h = format!("{magic} {}", geom.dim());
    for e in geom.extents() {
        h.push_str(&format!(" {e}"));
    }
    h.push('\n');
    h
}

pub fn write_environment<W: Write>(mut w: W, env: &Environment, text: bool) -> Result<()> {
    if text {
        w.write_all(header(MAGIC_TEXT, &env.geom).as_bytes())?;
        let row = env.geom.extents()[0];
        let codes: Vec<u8> = env.kinds().map(|k| b'0' + k as u8).collect();
        for chunk in codes.chunks(row) {
            w.write_all(chunk)?;
            w.write_all(b"\n")?;
        }
    } else {
        w.write_all(header(MAGIC, &env.geom).as_bytes())?;
        let codes: Vec<u8> = env.kinds().map(|k| k as u8).collect();
        w.write_all(&codes)?;
    }
    Ok(())
}

/// Read an environment file; the header fixes the extents, `boundary` the rest.
pub fn read_environment<R: BufRead>(mut r: R, boundary: Boundary) -> Result<Environment> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let magic = parts.next().unwrap_or_default();
    let text = match magic {
        MAGIC => false,
        MAGIC_TEXT => true,
        other => return Err(Error::Format(format!("unknown environment header {other:?}"))),
    };
    let nums: Vec<usize> = parts
        .map(|p| p.parse().map_err(|_| Error::Format(format!("bad header field {p:?}"))))
        .collect::<Result<_>>()?;
    let (&dim, extents) = nums
        .split_first()
        .ok_or_else(|| Error::Format("header lacks dimension".into()))?;
    if extents.len() != dim {
        return Err(Error::Format(format!("header declares d = {dim} but lists {} extents", extents.len())));
    }
    let geom = LatticeGeometry::new(extents.to_vec(), boundary)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let codes: Vec<u8> = if text {
        body.into_iter()
            .filter(|b| !b.is_ascii_whitespace())
            .map(|b| b.wrapping_sub(b'0'))
            .collect()
    } else {
        body
    };
    if codes.len() != geom.len() {
        return Err(Error::Format(format!("expected {} sites, found {}", geom.len(), codes.len())));
    }
    let mut frozen = Vec::with_capacity(codes.len());
    let mut spins = Vec::with_capacity(codes.len());
    for (i, &c) in codes.iter().enumerate() {
        let kind = SiteKind::from_byte(c).ok_or_else(|| Error::Format(format!("bad site code {c} at {i}")))?;
        let (f, s) = kind.split();
        frozen.push(f);
        spins.push(s);
    }
    Environment::from_parts(geom, frozen, spins)
}

/// Binary PGM, width `e_0`, height the product of the remaining extents.
fn write_pgm<W: Write>(mut w: W, geom: &LatticeGeometry, pixels: &[u8]) -> Result<()> {
    let width = geom.extents()[0];
    let height = geom.len() / width;
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)?;
    Ok(())
}

/// `0` for `-1`, `255` for `+1`.
pub fn write_spin_pgm<W: Write>(w: W, geom: &LatticeGeometry, spins: &[Spin]) -> Result<()> {
    let px: Vec<u8> = spins.iter().map(|&s| if s > 0 { 255 } else { 0 }).collect();
    write_pgm(w, geom, &px)
}

/// Companion mask: `128` at frozen sites, `0` elsewhere.
pub fn write_frozen_pgm<W: Write>(w: W, geom: &LatticeGeometry, frozen: &[Frozen]) -> Result<()> {
    let px: Vec<u8> = frozen.iter().map(|f| if f.is_frozen() { 128 } else { 0 }).collect();
    write_pgm(w, geom, &px)
}
