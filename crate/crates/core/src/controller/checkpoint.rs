//! Plain-text policy checkpoints.
//!
//! ```text
//! falsify-policy 1
//! cardinalities 10 10 25 4 10
//! hidden 64
//! embed 16
//! adam_step 160
//! theta.embedding 61 16
//! <61*16 values, one per line>
//! ...
//! adam_m.embedding 61 16
//! ...
//! ```
//!
//! Each of `theta`, `adam_m` and `adam_v` is written as the named blocks of
//! [`Layout::blocks`] with a `rows cols` shape header. Floats use the
//! shortest round-trip representation, so loading is bit-exact.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use super::policy::{AdamState, Layout, PolicyParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "falsify-policy";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &PolicyParams, mut w: W) -> io::Result<()> {
    let l = &params.layout;
    writeln!(w, "{CHECKPOINT_MAGIC} {VERSION}")?;
    let cards: Vec<String> = l.cardinalities.iter().map(ToString::to_string).collect();
    writeln!(w, "cardinalities {}", cards.join(" "))?;
    writeln!(w, "hidden {}", l.hidden)?;
    writeln!(w, "embed {}", l.embed)?;
    writeln!(w, "adam_step {}", params.adam.step)?;
    for (prefix, data) in [
        ("theta", &params.theta),
        ("adam_m", &params.adam.m),
        ("adam_v", &params.adam.v),
    ] {
        for (name, off, rows, cols) in l.blocks() {
            writeln!(w, "{prefix}.{name} {rows} {cols}")?;
            for x in &data[off..off + rows * cols] {
                writeln!(w, "{x:?}")?;
            }
        }
    }
    Ok(())
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut w = io::BufWriter::new(f);
    write_checkpoint(params, &mut w).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.flush().map_err(|e| Error::Checkpoint(e.to_string()))
}

struct Lines<R> {
    inner: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(Ok(s)) => Ok(s),
            Some(Err(e)) => Err(Error::Checkpoint(e.to_string())),
            None => Err(Error::Checkpoint(format!(
                "unexpected end of file at line {}",
                self.line
            ))),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let s = self.next_line()?;
        let mut parts = s.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.map(str::to_string).collect()),
            _ => Err(Error::Checkpoint(format!(
                "line {}: expected `{key}`, found `{s}`",
                self.line
            ))),
        }
    }

    fn keyed_usize(&mut self, key: &str) -> Result<Vec<usize>> {
        let line = self.line + 1;
        self.keyed(key)?
            .iter()
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Checkpoint(format!("line {line}: bad integer `{v}`")))
            })
            .collect()
    }

    fn single(&mut self, key: &str) -> Result<usize> {
        let v = self.keyed_usize(key)?;
        match v.as_slice() {
            [x] => Ok(*x),
            _ => Err(Error::Checkpoint(format!(
                "line {}: `{key}` takes one value",
                self.line
            ))),
        }
    }
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<PolicyParams> {
    let mut lines = Lines {
        inner: r.lines(),
        line: 0,
    };
    let version = lines.single(CHECKPOINT_MAGIC)?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cards = lines.keyed_usize("cardinalities")?;
    let hidden = lines.single("hidden")?;
    let embed = lines.single("embed")?;
    let step = lines.single("adam_step")? as u64;
    let layout = Layout::new(&cards, hidden, embed)?;
    let mut arrays = Vec::with_capacity(3);
    for prefix in ["theta", "adam_m", "adam_v"] {
        let mut data = vec![0.0; layout.total];
        for (name, off, rows, cols) in layout.blocks() {
            let shape = lines.keyed_usize(&format!("{prefix}.{name}"))?;
            if shape != [rows, cols] {
                return Err(Error::Checkpoint(format!(
                    "line {}: `{prefix}.{name}` has shape {shape:?}, expected [{rows}, {cols}]",
                    lines.line
                )));
            }
            for slot in &mut data[off..off + rows * cols] {
                let s = lines.next_line()?;
                *slot = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("line {}: bad float `{s}`", lines.line)))?;
            }
        }
        arrays.push(data);
    }
    let v = arrays.pop().expect("three arrays");
    let m = arrays.pop().expect("three arrays");
    let theta = arrays.pop().expect("three arrays");
    Ok(PolicyParams {
        layout,
        theta,
        adam: AdamState { m, v, step },
    })
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let f = fs::File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(io::BufReader::new(f))
}
