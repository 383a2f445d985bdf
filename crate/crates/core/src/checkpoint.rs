//! Flat parameter container: a text manifest of `name,rows,cols` lines
//! terminated by `END`, followed by every tensor as little-endian `f64`s in
//! manifest order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "qosdiff-checkpoint v1";

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    for (_, p) in store.iter() {
        if p.name.contains(',') || p.name.contains('\n') {
            return Err(Error::Checkpoint(format!("parameter name `{}` is not storable", p.name)));
        }
        writeln!(out, "{},{},{}", p.name, p.value.rows(), p.value.cols())?;
    }
    writeln!(out, "END")?;
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Named tensors in stored order.
pub fn read_checkpoint<R: Read>(input: R) -> Result<Vec<(String, Tensor)>> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint("missing checkpoint header".into()));
    }
    let mut entries = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Checkpoint("manifest ended without END".into()));
        }
        let l = line.trim_end();
        if l == "END" {
            break;
        }
        let parts: Vec<&str> = l.split(',').collect();
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad manifest line `{l}`")))
        };
        if parts.len() != 3 {
            return Err(Error::Checkpoint(format!("bad manifest line `{l}`")));
        }
        entries.push((parts[0].to_string(), parse(parts[1])?, parse(parts[2])?));
    }
    let mut out = Vec::with_capacity(entries.len());
    let mut buf = [0u8; 8];
    for (name, rows, cols) in entries {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            reader
                .read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("truncated data for `{name}`")))?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(rows, cols, data)?));
    }
    if reader.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after data".into()));
    }
    Ok(out)
}

/// Overwrites every parameter of `store` with the stored tensor of the same
/// name. Missing names and shape mismatches are errors.
pub fn restore_into(store: &mut ParamStore, entries: &[(String, Tensor)]) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let (_, t) = entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks `{name}`")))?;
        store.set_value(id, t.clone())?;
    }
    Ok(())
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(store, std::io::BufWriter::new(file)).map_err(|e| e.at(path))
}

pub fn load(store: &mut ParamStore, path: &Path) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let entries = read_checkpoint(file).map_err(|e| e.at(path))?;
    restore_into(store, &entries)
}
