//! Binary dumps and CSV helpers.
//!
//! All binary formats are little-endian:
//!
//! | file | layout |
//! |------|--------|
//! | field | `"PHKS"`, u32 version = 1, u32 n, f64 extent, n^3 f64 (z fastest) |
//! | radial snapshot | `"PHKR"`, u32 m, f64 dr, f64 t, m f64 rho, m f64 c |
//! | particles | `"PHKP"`, u32 P, f64 t, 3P f64 (x, y, z per particle) |

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::{Grid3, ScalarField3, Vec3};
use crate::radial::{RadialSolution, RadialState};
use crate::scenario::SimParams;

pub const FIELD_MAGIC: &[u8; 4] = b"PHKS";
pub const FIELD_VERSION: u32 = 1;
pub const RADIAL_MAGIC: &[u8; 4] = b"PHKR";
pub const PARTICLE_MAGIC: &[u8; 4] = b"PHKP";

/// Little-endian cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::SizeMismatch {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self
            .take(4)
            .map_err(|_| Error::Format("file too short for magic bytes".into()))?;
        if got != want {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Require that exactly `bytes` bytes remain.
    pub(crate) fn expect_payload(&self, bytes: usize) -> Result<()> {
        if self.remaining() != bytes {
            return Err(Error::SizeMismatch {
                expected: bytes,
                found: self.remaining(),
            });
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_field(field: &ScalarField3) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + field.values.len() * 8);
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    out.extend_from_slice(&(field.grid.n as u32).to_le_bytes());
    out.extend_from_slice(&field.grid.extent.to_le_bytes());
    put_f64s(&mut out, &field.values);
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<ScalarField3> {
    let mut r = Reader::new(bytes);
    r.magic(FIELD_MAGIC)?;
    let version = r.u32()?;
    if version != FIELD_VERSION {
        return Err(Error::Format(format!(
            "unsupported field version {version}, expected {FIELD_VERSION}"
        )));
    }
    let n = r.u32()? as usize;
    let extent = r.f64()?;
    let grid = Grid3::new(extent, n).map_err(|e| Error::Format(format!("bad field header: {e}")))?;
    r.expect_payload(grid.len() * 8)?;
    let values = r.f64s(grid.len())?;
    ScalarField3::new(grid, values)
}

pub fn write_field(field: &ScalarField3, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_field(field))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<ScalarField3> {
    decode_field(&fs::read(path)?)
}

pub fn encode_radial_state(state: &RadialState) -> Vec<u8> {
    let m = state.rho.len();
    let mut out = Vec::with_capacity(24 + 16 * m);
    out.extend_from_slice(RADIAL_MAGIC);
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&state.dr.to_le_bytes());
    out.extend_from_slice(&state.time.to_le_bytes());
    put_f64s(&mut out, &state.rho);
    put_f64s(&mut out, &state.conc);
    out
}

pub fn decode_radial_state(bytes: &[u8]) -> Result<RadialState> {
    let mut r = Reader::new(bytes);
    r.magic(RADIAL_MAGIC)?;
    let m = r.u32()? as usize;
    let dr = r.f64()?;
    let time = r.f64()?;
    r.expect_payload(m * 16)?;
    let rho = r.f64s(m)?;
    let conc = r.f64s(m)?;
    Ok(RadialState { dr, rho, conc, time })
}

pub fn write_radial_state(state: &RadialState, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_radial_state(state))?;
    Ok(())
}

pub fn read_radial_state(path: impl AsRef<Path>) -> Result<RadialState> {
    decode_radial_state(&fs::read(path)?)
}

/// Writes `snap_XXXX.phkr` per snapshot, `index.csv` (time, filename) and
/// `solution.json` (parameters and symmetry centre).
pub fn write_radial_solution(sol: &RadialSolution, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut index = csv::Writer::from_path(dir.join("index.csv"))?;
    index.write_record(["time", "filename"])?;
    for (i, s) in sol.states.iter().enumerate() {
        let name = format!("snap_{i:04}.phkr");
        write_radial_state(s, dir.join(&name))?;
        index.write_record([format!("{:?}", s.time), name])?;
    }
    index.flush()?;
    let meta = serde_json::json!({ "params": sol.params, "center": sol.center });
    fs::write(dir.join("solution.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_radial_solution(dir: impl AsRef<Path>) -> Result<RadialSolution> {
    let dir = dir.as_ref();
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("solution.json"))?)?;
    let params: SimParams = serde_json::from_value(meta["params"].clone())?;
    let center: Vec3 = serde_json::from_value(meta["center"].clone())?;
    let mut rdr = csv::Reader::from_path(dir.join("index.csv"))?;
    let mut states = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let file: PathBuf = dir.join(rec.get(1).ok_or_else(|| Error::Format("index row missing filename".into()))?);
        states.push(read_radial_state(file)?);
    }
    RadialSolution::new(states, params, center)
}

pub fn encode_particles(positions: &[Vec3], time: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + positions.len() * 24);
    out.extend_from_slice(PARTICLE_MAGIC);
    out.extend_from_slice(&(positions.len() as u32).to_le_bytes());
    out.extend_from_slice(&time.to_le_bytes());
    for p in positions {
        put_f64s(&mut out, p);
    }
    out
}

pub fn decode_particles(bytes: &[u8]) -> Result<(Vec<Vec3>, f64)> {
    let mut r = Reader::new(bytes);
    r.magic(PARTICLE_MAGIC)?;
    let count = r.u32()? as usize;
    let time = r.f64()?;
    r.expect_payload(count * 24)?;
    let flat = r.f64s(count * 3)?;
    let positions = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok((positions, time))
}

pub fn write_particles(positions: &[Vec3], time: f64, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_particles(positions, time))?;
    Ok(())
}

pub fn read_particles(path: impl AsRef<Path>) -> Result<(Vec<Vec3>, f64)> {
    decode_particles(&fs::read(path)?)
}

/// Minimal CSV table writer used for metrics files.
pub fn write_csv<P, R, I, S>(path: P, header: &[&str], rows: R) -> Result<()>
where
    P: AsRef<Path>,
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
