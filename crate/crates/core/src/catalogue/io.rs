//! Catalogue container and CSV node dump.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "PSGPCAT1"                      8-byte magic
//! u32 version                     currently 1
//! section*                        4-byte tag, u64 payload length, payload
//! u32 CRC-32                      of every preceding byte
//! ```
//!
//! Sections: `META` holds the build spec as UTF-8 JSON; one `TABL` per cell
//! type holds `u32 type index`, `u32 axis count`, per axis `u32 length`
//! and its `f64` values, then per node (first parameter fastest) the
//! parameters followed by [`SAMPLE_LEN`] `f64` values: `A` (21, upper
//! triangle row-major), `C` (6), `N`, `K` (6), porosity, `B` (6), `M`,
//! `A_U` (21), `ρ_m`. Symmetric 3×3 matrices list `(11,12,13,22,23,33)`.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Catalogue, CatalogueSpec, NodeSample, TypeTable};
use crate::error::{Error, Result};
use crate::micro::{CellType, HomogenizedCoefficients};
use crate::tensors::{SymMatrix3, SymTensor4};

pub const MAGIC: &[u8; 8] = b"PSGPCAT1";
pub const VERSION: u32 = 1;
pub const SAMPLE_LEN: usize = 21 + 6 + 1 + 6 + 1 + 6 + 1 + 21 + 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_section(buf: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    buf.extend_from_slice(tag);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(payload);
}

fn sample_values(s: &NodeSample) -> Vec<f64> {
    let c = &s.coeffs;
    let mut v = Vec::with_capacity(SAMPLE_LEN);
    v.extend_from_slice(c.a.upper());
    v.extend_from_slice(c.c.upper());
    v.push(c.n);
    v.extend_from_slice(c.k.upper());
    v.push(c.porosity);
    v.extend_from_slice(c.b.upper());
    v.push(c.m);
    v.extend_from_slice(c.a_undrained.upper());
    v.push(s.rho);
    v
}

fn sample_from(alpha: Vec<f64>, v: &[f64]) -> NodeSample {
    let a21 = |o: usize| SymTensor4::from_upper(v[o..o + 21].try_into().expect("21 values"));
    let s6 = |o: usize| SymMatrix3::from_upper(v[o..o + 6].try_into().expect("6 values"));
    NodeSample {
        alpha,
        coeffs: HomogenizedCoefficients {
            a: a21(0),
            c: s6(21),
            n: v[27],
            k: s6(28),
            porosity: v[34],
            b: s6(35),
            m: v[41],
            a_undrained: a21(42),
        },
        rho: v[63],
    }
}

/// Serializes a catalogue; identical catalogues give identical bytes.
pub fn to_bytes(cat: &Catalogue) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_section(&mut buf, b"META", &serde_json::to_vec(&cat.spec)?);
    for t in &cat.tables {
        let mut p = Vec::new();
        put_u32(&mut p, t.cell_type.index() as u32);
        put_u32(&mut p, t.axes.len() as u32);
        for ax in &t.axes {
            put_u32(&mut p, ax.len() as u32);
            for &x in ax {
                put_f64(&mut p, x);
            }
        }
        for s in &t.samples {
            for &a in &s.alpha {
                put_f64(&mut p, a);
            }
            for v in sample_values(s) {
                put_f64(&mut p, v);
            }
        }
        put_section(&mut buf, b"TABL", &p);
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    Ok(buf)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Malformed(format!(
                "unexpected end of data at byte {}",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

pub fn from_bytes(data: &[u8]) -> Result<Catalogue> {
    if data.len() < MAGIC.len() || &data[..MAGIC.len()] != MAGIC {
        if data.len() < MAGIC.len() && MAGIC.starts_with(data) {
            return Err(Error::ChecksumFailure("file is truncated".into()));
        }
        return Err(Error::Malformed("missing catalogue magic".into()));
    }
    if data.len() < MAGIC.len() + 8 {
        return Err(Error::ChecksumFailure("file is truncated".into()));
    }
    let (body, tail) = data.split_at(data.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::ChecksumFailure(format!(
            "stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader {
        data: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let mut spec: Option<CatalogueSpec> = None;
    let mut tables = Vec::new();
    while !r.done() {
        let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let len = r.u64()? as usize;
        let payload = r.take(len)?;
        match &tag {
            b"META" => spec = Some(serde_json::from_slice(payload)?),
            b"TABL" => tables.push(read_table(payload)?),
            _ => {
                return Err(Error::Malformed(format!(
                    "unknown section {:?}",
                    String::from_utf8_lossy(&tag)
                )))
            }
        }
    }
    let spec = spec.ok_or_else(|| Error::Malformed("missing META section".into()))?;
    Ok(Catalogue { spec, tables })
}

fn read_table(payload: &[u8]) -> Result<TypeTable> {
    let mut r = Reader {
        data: payload,
        pos: 0,
    };
    let t = CellType::from_index(r.u32()? as usize).map_err(|e| Error::Malformed(e.to_string()))?;
    let naxes = r.u32()? as usize;
    if naxes != t.n_params() {
        return Err(Error::Malformed(format!("{t:?} table with {naxes} axes")));
    }
    let mut axes = Vec::with_capacity(naxes);
    for _ in 0..naxes {
        let n = r.u32()? as usize;
        axes.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    }
    let count: usize = axes.iter().map(Vec::len).product();
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let alpha = (0..naxes).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let v = (0..SAMPLE_LEN)
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        samples.push(sample_from(alpha, &v));
    }
    if !r.done() {
        return Err(Error::Malformed("trailing bytes in table section".into()));
    }
    TypeTable::new(t, axes, samples)
}

pub fn save(cat: &Catalogue, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_bytes(cat)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Catalogue> {
    from_bytes(&std::fs::read(path)?)
}

/// Hex SHA-256 prefix identifying a serialized value.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One row per node sample, preceded by a comment line naming the tool
/// version and the spec hash.
pub fn write_nodes_csv(cat: &Catalogue, out: &mut impl Write) -> Result<()> {
    let spec_hash = content_hash(&serde_json::to_vec(&cat.spec)?);
    writeln!(
        out,
        "# porosgp {} catalogue nodes, spec {}",
        env!("CARGO_PKG_VERSION"),
        spec_hash
    )?;
    let mut header = vec!["cell_type".to_string(), "alpha1".into(), "alpha2".into()];
    for i in 0..6 {
        for j in i..6 {
            header.push(format!("A{}{}", i + 1, j + 1));
        }
    }
    for name in ["C", "K", "B"] {
        for s in ["11", "12", "13", "22", "23", "33"] {
            header.push(format!("{name}{s}"));
        }
    }
    header.extend(["N", "M", "porosity", "rho_m"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for t in &cat.tables {
        for s in &t.samples {
            let c = &s.coeffs;
            let mut row = vec![t.cell_type.index().to_string()];
            row.push(format!("{:e}", s.alpha[0]));
            row.push(s.alpha.get(1).map(|v| format!("{v:e}")).unwrap_or_default());
            let mut vals: Vec<f64> = c.a.upper().to_vec();
            vals.extend_from_slice(c.c.upper());
            vals.extend_from_slice(c.k.upper());
            vals.extend_from_slice(c.b.upper());
            vals.extend([c.n, c.m, c.porosity, s.rho]);
            row.extend(vals.iter().map(|v| format!("{v:e}")));
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}
