//! On-disk formats for grids and gathers.
//!
//! Three binary formats share one little-endian layout, distinguished by a
//! four-byte magic:
//!
//! * `GFVM` — velocity map: magic, `u32` version, `u32` depth, `u32` width,
//!   `f32` dx, then `depth * width` row-major `f32` values.
//! * `GFPT` — perturbation: identical layout, signed values allowed.
//! * `GFSG` — seismic gather: magic, `u32` version, `u32` n_receivers,
//!   `u32` nt, `f32` dt, then one `(u32 row, u32 col)` pair per receiver,
//!   then `n_receivers * nt` receiver-major `f32` samples.
//!
//! Small grids (at most [`CSV_MAX_CELLS`] cells) can also be stored as
//! plain-text CSV for hand editing: comment lines start with `#`, a
//! `# dx = <meters>` line is required, and each remaining line is one row of
//! comma-separated values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::{fs, io::Write as _};

use thiserror::Error;

use crate::forward::SeismicGather;
use crate::model::{Grid, ModelError, Perturbation, VelocityMap};

pub const MAP_MAGIC: [u8; 4] = *b"GFVM";
pub const PERT_MAGIC: [u8; 4] = *b"GFPT";
pub const GATHER_MAGIC: [u8; 4] = *b"GFSG";
pub const FORMAT_VERSION: u32 = 1;

/// Largest grid the CSV form accepts, in cells.
pub const CSV_MAX_CELLS: usize = 10_000;

/// Hard ceiling on cells/samples declared by a file header, to keep a
/// corrupt header from provoking a giant allocation.
const MAX_FILE_CELLS: usize = 100_000_000;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected magic {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: unsupported format version {version}")]
    BadVersion { path: PathBuf, version: u32 },
    #[error("{path}: file truncated ({what})")]
    Truncated { path: PathBuf, what: String },
    #[error("{path}: header declares an implausible size ({what})")]
    ImplausibleSize { path: PathBuf, what: String },
    #[error("{path}, line {line}: {msg}")]
    MalformedCsv {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("CSV form holds at most {max} cells, grid has {got}")]
    CsvTooLarge { got: usize, max: usize },
    #[error("{path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Write `bytes` to `path` atomically: the data lands in a sibling temp file
/// first and is renamed into place, so readers never observe a half-written
/// file and a crash leaves the previous version intact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp.{}.{}", std::process::id(), n));
    let tmp = PathBuf::from(tmp);
    let write = |p: &Path| -> std::io::Result<()> {
        let mut f = fs::File::create(p)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    write(&tmp).map_err(|e| IoError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        IoError::io(path, e)
    })
}

// ---------------------------------------------------------------------------
// Little-endian cursor helpers.

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Reader { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IoError> {
        if self.pos + n > self.buf.len() {
            return Err(IoError::Truncated {
                path: self.path.to_path_buf(),
                what: what.to_string(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, IoError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32, IoError> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>, IoError> {
        let b = self.take(4 * n, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

// ---------------------------------------------------------------------------
// Grid formats (GFVM / GFPT / CSV).

fn encode_grid<G: Grid>(grid: &G, magic: [u8; 4]) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * grid.values().len());
    out.extend_from_slice(&magic);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, grid.depth_cells() as u32);
    push_u32(&mut out, grid.width_cells() as u32);
    push_f32(&mut out, grid.dx());
    for &v in grid.values() {
        push_f32(&mut out, v);
    }
    out
}

struct RawGrid {
    depth: usize,
    width: usize,
    dx: f32,
    values: Vec<f32>,
}

fn decode_grid(bytes: &[u8], path: &Path, magic: [u8; 4]) -> Result<RawGrid, IoError> {
    let mut r = Reader::new(bytes, path);
    let found = r.take(4, "magic")?;
    if found != magic {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(&magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(IoError::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let depth = r.u32("depth")? as usize;
    let width = r.u32("width")? as usize;
    let cells = depth.checked_mul(width).unwrap_or(usize::MAX);
    if cells > MAX_FILE_CELLS {
        return Err(IoError::ImplausibleSize {
            path: path.to_path_buf(),
            what: format!("{depth}x{width} cells"),
        });
    }
    let dx = r.f32("dx")?;
    let values = r.f32_vec(cells, "cell values")?;
    Ok(RawGrid {
        depth,
        width,
        dx,
        values,
    })
}

fn model_err(path: &Path) -> impl FnOnce(ModelError) -> IoError + '_ {
    move |source| IoError::Model {
        path: path.to_path_buf(),
        source,
    }
}

/// Save a velocity map in the binary `GFVM` form.
pub fn save_map(map: &VelocityMap, path: &Path) -> Result<(), IoError> {
    write_atomic(path, &encode_grid(map, MAP_MAGIC))
}

/// Save a small velocity map as CSV (see module docs for the layout).
pub fn save_map_csv(map: &VelocityMap, path: &Path) -> Result<(), IoError> {
    write_atomic(path, grid_to_csv(map)?.as_bytes())
}

/// Load a velocity map, accepting either the binary or the CSV form.
///
/// The format is sniffed from the content, not the file name: anything that
/// starts with the `GFVM` magic is parsed as binary, the rest as CSV.
pub fn load_map(path: &Path) -> Result<VelocityMap, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    let raw = if bytes.starts_with(&MAP_MAGIC) {
        decode_grid(&bytes, path, MAP_MAGIC)?
    } else if bytes.starts_with(&PERT_MAGIC) || bytes.starts_with(&GATHER_MAGIC) {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(&MAP_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    } else {
        csv_to_grid(&bytes, path)?
    };
    VelocityMap::new(raw.depth, raw.width, raw.dx, raw.values).map_err(model_err(path))
}

/// Save a perturbation in the binary `GFPT` form.
pub fn save_pert(pert: &Perturbation, path: &Path) -> Result<(), IoError> {
    write_atomic(path, &encode_grid(pert, PERT_MAGIC))
}

/// Save a small perturbation as CSV.
pub fn save_pert_csv(pert: &Perturbation, path: &Path) -> Result<(), IoError> {
    write_atomic(path, grid_to_csv(pert)?.as_bytes())
}

/// Load a perturbation from the binary or CSV form (content-sniffed).
pub fn load_pert(path: &Path) -> Result<Perturbation, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    let raw = if bytes.starts_with(&PERT_MAGIC) {
        decode_grid(&bytes, path, PERT_MAGIC)?
    } else if bytes.starts_with(&MAP_MAGIC) || bytes.starts_with(&GATHER_MAGIC) {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(&PERT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    } else {
        csv_to_grid(&bytes, path)?
    };
    Perturbation::new(raw.depth, raw.width, raw.dx, raw.values).map_err(model_err(path))
}

fn grid_to_csv<G: Grid>(grid: &G) -> Result<String, IoError> {
    let cells = grid.values().len();
    if cells > CSV_MAX_CELLS {
        return Err(IoError::CsvTooLarge {
            got: cells,
            max: CSV_MAX_CELLS,
        });
    }
    let mut s = String::new();
    let _ = writeln!(s, "# dx = {}", grid.dx());
    let w = grid.width_cells();
    for row in grid.values().chunks_exact(w) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            // `{}` prints the shortest decimal that round-trips to the same
            // f32, so CSV save/load is bit-exact.
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    Ok(s)
}

fn csv_to_grid(bytes: &[u8], path: &Path) -> Result<RawGrid, IoError> {
    let malformed = |line: usize, msg: String| IoError::MalformedCsv {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let text = std::str::from_utf8(bytes)
        .map_err(|_| malformed(1, "not valid UTF-8 (and no recognized binary magic)".into()))?;
    let mut dx: Option<f32> = None;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(rest) = comment.strip_prefix("dx") {
                let rest = rest.trim_start();
                if let Some(value) = rest.strip_prefix('=') {
                    let parsed: f32 = value.trim().parse().map_err(|_| {
                        malformed(lineno, format!("cannot parse dx value {:?}", value.trim()))
                    })?;
                    dx = Some(parsed);
                }
            }
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| malformed(lineno, format!("cannot parse cell {:?}", field.trim())))?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(malformed(
                    lineno,
                    format!("row has {} cells, expected {}", row.len(), w),
                ));
            }
            _ => {}
        }
        rows.push(row);
        if rows.len() * width.unwrap_or(1) > CSV_MAX_CELLS {
            return Err(IoError::CsvTooLarge {
                got: rows.len() * width.unwrap_or(1),
                max: CSV_MAX_CELLS,
            });
        }
    }
    let dx = dx.ok_or_else(|| malformed(1, "missing '# dx = <meters>' header line".into()))?;
    if rows.is_empty() {
        return Err(malformed(1, "no data rows".into()));
    }
    let width = width.unwrap();
    Ok(RawGrid {
        depth: rows.len(),
        width,
        dx,
        values: rows.into_iter().flatten().collect(),
    })
}

// ---------------------------------------------------------------------------
// Gather format (GFSG).

/// Save a gather in the binary `GFSG` form. Samples are stored as `f32`.
pub fn save_gather(gather: &SeismicGather, path: &Path) -> Result<(), IoError> {
    let n = gather.n_receivers();
    let nt = gather.nt();
    let mut out = Vec::with_capacity(20 + 8 * n + 4 * n * nt);
    out.extend_from_slice(&GATHER_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, n as u32);
    push_u32(&mut out, nt as u32);
    push_f32(&mut out, gather.dt());
    for &(row, col) in gather.receivers() {
        push_u32(&mut out, row);
        push_u32(&mut out, col);
    }
    for &s in gather.samples() {
        push_f32(&mut out, s as f32);
    }
    write_atomic(path, &out)
}

/// Load a gather from the binary `GFSG` form.
pub fn load_gather(path: &Path) -> Result<SeismicGather, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    let found = r.take(4, "magic")?;
    if found != GATHER_MAGIC {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(&GATHER_MAGIC).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(IoError::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n = r.u32("n_receivers")? as usize;
    let nt = r.u32("nt")? as usize;
    let samples = n.checked_mul(nt).unwrap_or(usize::MAX);
    if samples > MAX_FILE_CELLS {
        return Err(IoError::ImplausibleSize {
            path: path.to_path_buf(),
            what: format!("{n} receivers x {nt} samples"),
        });
    }
    let dt = r.f32("dt")?;
    let mut receivers = Vec::with_capacity(n);
    for _ in 0..n {
        let row = r.u32("receiver row")?;
        let col = r.u32("receiver col")?;
        receivers.push((row, col));
    }
    let data = r
        .f32_vec(samples, "samples")?
        .into_iter()
        .map(f64::from)
        .collect();
    SeismicGather::from_parts(receivers, nt, dt, data).map_err(|e| IoError::MalformedCsv {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })
}
