//! Parameter checkpoint: a text header terminated by an `end` line, then
//! little-endian f64 values. Payload order is the input standardisation
//! (mean, scale) followed by [`GraphResNet::tensors`].

use std::fmt::Write as _;
use std::path::Path;

use super::model::{GlobalInput, GraphResNet, NetShape};
use crate::error::{Error, Result};
use crate::mesh::RegionRanges;

const MAGIC: &str = "anatomesh-graphnet";

pub fn write_checkpoint(net: &GraphResNet) -> Vec<u8> {
    let s = &net.shape;
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let mut header = String::new();
    let _ = writeln!(header, "{MAGIC}");
    let _ = writeln!(header, "layers {}", s.layers);
    let _ = writeln!(header, "widths {}", join(&s.widths()));
    let _ = writeln!(header, "k_vertex {}", s.k_vertex);
    let _ = writeln!(header, "k_global {}", s.k_global);
    let _ = writeln!(header, "seed {}", net.seed);
    let _ = writeln!(header, "nodes {}", s.nodes);
    let _ = writeln!(header, "regions {}", join(&s.regions.counts()));
    let _ = writeln!(header, "global_input {}", s.global_input.name());
    let _ = writeln!(header, "end");
    let mut out = header.into_bytes();
    let mut push = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    push(net.norm.mean.as_slice().expect("contiguous"));
    push(net.norm.scale.as_slice().expect("contiguous"));
    for (_, t) in net.tensors() {
        push(t);
    }
    out
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Parse(format!("checkpoint: {}", reason.into()))
}

fn parse_list(v: &str) -> Result<Vec<usize>> {
    v.split_whitespace()
        .map(|x| x.parse().map_err(|_| bad(format!("bad integer {x:?}"))))
        .collect()
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<GraphResNet> {
    let mut pos = 0;
    let mut fields = std::collections::BTreeMap::new();
    let mut first = true;
    loop {
        let nl = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing end line"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| bad("header is not UTF-8"))?;
        pos += nl + 1;
        if first {
            if line != MAGIC {
                return Err(bad("not a graph network checkpoint"));
            }
            first = false;
            continue;
        }
        if line == "end" {
            break;
        }
        let (k, v) = line.split_once(' ').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).map(String::as_str).ok_or_else(|| bad(format!("missing {k}")));
    let one = |k: &str| -> Result<usize> { get(k)?.trim().parse().map_err(|_| bad(format!("bad {k}"))) };
    let widths = parse_list(get("widths")?)?;
    let layers = one("layers")?;
    if widths.len() != layers + 1 || widths[1..].iter().any(|&w| w != widths[1]) {
        return Err(bad(format!("widths {widths:?} inconsistent with {layers} layers")));
    }
    let counts = parse_list(get("regions")?)?;
    let counts: [usize; 4] = counts.try_into().map_err(|_| bad("regions needs four counts"))?;
    let shape = NetShape {
        input_width: widths[0],
        hidden: widths[1],
        layers,
        k_vertex: one("k_vertex")?,
        k_global: one("k_global")?,
        nodes: one("nodes")?,
        regions: RegionRanges::from_counts(counts)?,
        global_input: GlobalInput::from_name(get("global_input")?).ok_or_else(|| bad("bad global_input"))?,
    };
    let seed: u64 = get("seed")?.trim().parse().map_err(|_| bad("bad seed"))?;
    let mut net = GraphResNet::zeros(shape)?;
    net.seed = seed;

    let payload = &bytes[pos..];
    let width = net.shape.input_width;
    let expected = 2 * width + net.parameter_count();
    if payload.len() != expected * 8 {
        return Err(Error::PayloadLength { expected: expected * 8, found: payload.len() });
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = values.next().expect("length checked"));
    fill(net.norm.mean.as_slice_mut().expect("contiguous"));
    fill(net.norm.scale.as_slice_mut().expect("contiguous"));
    for (_, t) in net.tensors_mut() {
        fill(t);
    }
    net.check_finite()?;
    Ok(net)
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &GraphResNet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GraphResNet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
