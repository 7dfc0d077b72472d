//! Binary trace files for raw shots and compressed profiles, plus a CSV
//! rendering that converts back without loss.
//!
//! A file is a sequence of records. Each record is a 48-byte little-endian
//! header followed by `count` x-polarization samples and `count`
//! y-polarization samples, each sample stored as `f32` real then imaginary.
//!
//! | offset | type | field |
//! |---|---|---|
//! | 0 | `[u8; 4]` | magic `CCOT` |
//! | 4 | `u16` | format version (1) |
//! | 6 | `u16` | kind: 1 shot A, 2 shot B, 3 profile |
//! | 8 | `f64` | timestamp, s |
//! | 16 | `f64` | sample rate, Hz |
//! | 24 | `f64` | position step, m (0 for shots) |
//! | 32 | `f64` | origin, m |
//! | 40 | `u64` | sample count per polarization |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ccotdr_core::probe::Which;
use ccotdr_core::{CompressedProfile, Error, Result, Shot};
use num_complex::Complex32;

pub const MAGIC: [u8; 4] = *b"CCOT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 48;
const SAMPLE_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    ShotA,
    ShotB,
    Profile,
}

impl RecordKind {
    fn code(self) -> u16 {
        match self {
            RecordKind::ShotA => 1,
            RecordKind::ShotB => 2,
            RecordKind::Profile => 3,
        }
    }

    fn from_code(code: u16) -> Option<Self> {
        match code {
            1 => Some(RecordKind::ShotA),
            2 => Some(RecordKind::ShotB),
            3 => Some(RecordKind::Profile),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RecordKind::ShotA => "shot_a",
            RecordKind::ShotB => "shot_b",
            RecordKind::Profile => "profile",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        [RecordKind::ShotA, RecordKind::ShotB, RecordKind::Profile]
            .into_iter()
            .find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub kind: RecordKind,
    pub timestamp: f64,
    pub sample_rate: f64,
    pub position_step: f64,
    pub origin: f64,
    pub x: Vec<Complex32>,
    pub y: Vec<Complex32>,
}

impl TraceRecord {
    pub fn from_shot(shot: &Shot) -> Self {
        TraceRecord {
            kind: match shot.which {
                Which::A => RecordKind::ShotA,
                Which::B => RecordKind::ShotB,
            },
            timestamp: shot.timestamp,
            sample_rate: shot.sample_rate,
            position_step: 0.0,
            origin: 0.0,
            x: shot.iq_x.clone(),
            y: shot.iq_y.clone(),
        }
    }

    pub fn from_profile(p: &CompressedProfile, sample_rate: f64) -> Self {
        TraceRecord {
            kind: RecordKind::Profile,
            timestamp: p.timestamp,
            sample_rate,
            position_step: p.position_step,
            origin: p.origin,
            x: p.x.clone(),
            y: p.y.clone(),
        }
    }

    pub fn into_shot(self) -> Result<Shot> {
        let which = match self.kind {
            RecordKind::ShotA => Which::A,
            RecordKind::ShotB => Which::B,
            RecordKind::Profile => {
                return Err(Error::InvalidInput(
                    "expected a raw shot record, found a profile".into(),
                ))
            }
        };
        Ok(Shot {
            timestamp: self.timestamp,
            which,
            iq_x: self.x,
            iq_y: self.y,
            sample_rate: self.sample_rate,
        })
    }

    pub fn into_profile(self) -> Result<CompressedProfile> {
        if self.kind != RecordKind::Profile {
            return Err(Error::InvalidInput(format!(
                "expected a profile record, found {}",
                self.kind.name()
            )));
        }
        Ok(CompressedProfile {
            x: self.x,
            y: self.y,
            position_step: self.position_step,
            origin: self.origin,
            timestamp: self.timestamp,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Bytes this record takes on disk.
    pub fn encoded_len(count: usize) -> u64 {
        HEADER_LEN + 2 * SAMPLE_BYTES * count as u64
    }

    /// Horizontal axis value of sample `i`: position for profiles, time
    /// since the shot start for raw shots.
    pub fn axis(&self, i: usize) -> f64 {
        match self.kind {
            RecordKind::Profile => self.origin + i as f64 * self.position_step,
            _ => i as f64 / self.sample_rate,
        }
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        assert_eq!(self.x.len(), self.y.len(), "polarizations differ in length");
        let mut head = Vec::with_capacity(HEADER_LEN as usize);
        head.extend_from_slice(&MAGIC);
        head.extend_from_slice(&VERSION.to_le_bytes());
        head.extend_from_slice(&self.kind.code().to_le_bytes());
        for v in [self.timestamp, self.sample_rate, self.position_step, self.origin] {
            head.extend_from_slice(&v.to_le_bytes());
        }
        head.extend_from_slice(&(self.x.len() as u64).to_le_bytes());
        w.write_all(&head)?;
        let mut buf = Vec::with_capacity(self.x.len() * SAMPLE_BYTES as usize);
        for pol in [&self.x, &self.y] {
            buf.clear();
            for s in pol.iter() {
                buf.extend_from_slice(&s.re.to_le_bytes());
                buf.extend_from_slice(&s.im.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }
}

/// Appends records to a trace file.
pub struct TraceWriter {
    path: PathBuf,
    out: BufWriter<File>,
    records: u64,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(TraceWriter {
            path: path.to_path_buf(),
            out: BufWriter::with_capacity(1 << 20, file),
            records: 0,
        })
    }

    pub fn write(&mut self, record: &TraceRecord) -> Result<()> {
        record
            .write_to(&mut self.out)
            .map_err(|e| Error::io(&self.path, e))?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads records one at a time, reporting the byte offset of any damage.
pub struct TraceReader<R: Read> {
    input: R,
    path: PathBuf,
    offset: u64,
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(TraceReader::new(BufReader::with_capacity(1 << 20, file), path))
    }
}

impl<R: Read> TraceReader<R> {
    pub fn new(input: R, path: &Path) -> Self {
        TraceReader {
            input,
            path: path.to_path_buf(),
            offset: 0,
        }
    }

    /// Fills `buf` completely; returns how many bytes were available.
    fn fill(&mut self, buf: &mut [u8]) -> Result<usize> {
        let mut got = 0;
        while got < buf.len() {
            match self.input.read(&mut buf[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io(&self.path, e)),
            }
        }
        Ok(got)
    }

    fn truncated(&self, what: &str, expected: u64, got: usize) -> Error {
        Error::Format {
            offset: self.offset + got as u64,
            message: format!(
                "truncated {what}: expected {expected} bytes, found {got} ({})",
                self.path.display()
            ),
        }
    }

    /// The next record, or `None` at a clean end of file.
    pub fn next_record(&mut self) -> Result<Option<TraceRecord>> {
        let mut head = [0u8; HEADER_LEN as usize];
        let got = self.fill(&mut head)?;
        if got == 0 {
            return Ok(None);
        }
        if got < head.len() {
            return Err(self.truncated("record header", HEADER_LEN, got));
        }
        let bad = |at: u64, message: String| Error::Format {
            offset: self.offset + at,
            message,
        };
        if head[0..4] != MAGIC {
            return Err(bad(0, format!("bad magic {:?}, expected \"CCOT\"", &head[0..4])));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != VERSION {
            return Err(bad(4, format!("unsupported version {version}, expected {VERSION}")));
        }
        let code = u16::from_le_bytes([head[6], head[7]]);
        let kind = RecordKind::from_code(code)
            .ok_or_else(|| bad(6, format!("unknown record kind {code}")))?;
        let f = |at: usize| f64::from_le_bytes(head[at..at + 8].try_into().expect("8 bytes"));
        let count = u64::from_le_bytes(head[40..48].try_into().expect("8 bytes"));
        let payload = count
            .checked_mul(2 * SAMPLE_BYTES)
            .filter(|&b| b <= 1 << 40)
            .ok_or_else(|| bad(40, format!("implausible sample count {count}")))?;
        let mut record = TraceRecord {
            kind,
            timestamp: f(8),
            sample_rate: f(16),
            position_step: f(24),
            origin: f(32),
            x: Vec::new(),
            y: Vec::new(),
        };
        self.offset += HEADER_LEN;
        let mut data = vec![0u8; payload as usize];
        let got = self.fill(&mut data)?;
        if got < data.len() {
            return Err(self.truncated("sample payload", payload, got));
        }
        self.offset += payload;
        let mut samples = data.chunks_exact(8).map(|c| {
            Complex32::new(
                f32::from_le_bytes(c[0..4].try_into().expect("4 bytes")),
                f32::from_le_bytes(c[4..8].try_into().expect("4 bytes")),
            )
        });
        record.x = samples.by_ref().take(count as usize).collect();
        record.y = samples.collect();
        Ok(Some(record))
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }
}

/// Reads every record of a trace file.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut reader = TraceReader::open(path)?;
    let mut out = Vec::new();
    while let Some(r) = reader.next_record()? {
        out.push(r);
    }
    Ok(out)
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut w = TraceWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub const CSV_HEADER: &str = "record,index,axis,x_re,x_im,y_re,y_im";

/// Renders records as CSV. Every record starts with a `#` metadata line;
/// floats use the shortest text that parses back to the same value.
pub fn write_csv(out: &mut impl Write, records: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for (n, r) in records.iter().enumerate() {
        writeln!(
            out,
            "# record={n} kind={} timestamp={} sample_rate={} position_step={} origin={} count={}",
            r.kind.name(),
            r.timestamp,
            r.sample_rate,
            r.position_step,
            r.origin,
            r.len()
        )?;
        for (i, (x, y)) in r.x.iter().zip(&r.y).enumerate() {
            writeln!(
                out,
                "{n},{i},{},{},{},{},{}",
                r.axis(i),
                x.re,
                x.im,
                y.re,
                y.im
            )?;
        }
    }
    Ok(())
}

/// Parses the output of [`write_csv`] back into records.
pub fn read_csv(input: impl BufRead) -> Result<Vec<TraceRecord>> {
    let mut records: Vec<(TraceRecord, usize)> = Vec::new();
    let bad = |line: usize, message: String| Error::Format {
        offset: line as u64,
        message: format!("csv line {line}: {message}"),
    };
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<csv>", e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 {
            if line != CSV_HEADER {
                return Err(bad(line_no, format!("expected header `{CSV_HEADER}`")));
            }
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let mut kind = None;
            let mut nums = [f64::NAN; 4];
            let mut count = None;
            for field in meta.split_whitespace() {
                let (k, v) = field
                    .split_once('=')
                    .ok_or_else(|| bad(line_no, format!("malformed field `{field}`")))?;
                let num = || {
                    v.parse::<f64>()
                        .map_err(|e| bad(line_no, format!("{k}: {e}")))
                };
                match k {
                    "record" => {}
                    "kind" => {
                        kind = Some(
                            RecordKind::from_name(v)
                                .ok_or_else(|| bad(line_no, format!("unknown kind `{v}`")))?,
                        )
                    }
                    "timestamp" => nums[0] = num()?,
                    "sample_rate" => nums[1] = num()?,
                    "position_step" => nums[2] = num()?,
                    "origin" => nums[3] = num()?,
                    "count" => {
                        count = Some(
                            v.parse::<usize>()
                                .map_err(|e| bad(line_no, format!("count: {e}")))?,
                        )
                    }
                    _ => return Err(bad(line_no, format!("unknown field `{k}`"))),
                }
            }
            let kind = kind.ok_or_else(|| bad(line_no, "missing kind".into()))?;
            let count = count.ok_or_else(|| bad(line_no, "missing count".into()))?;
            if nums.iter().any(|v| v.is_nan()) {
                return Err(bad(line_no, "missing record metadata".into()));
            }
            records.push((
                TraceRecord {
                    kind,
                    timestamp: nums[0],
                    sample_rate: nums[1],
                    position_step: nums[2],
                    origin: nums[3],
                    x: Vec::with_capacity(count),
                    y: Vec::with_capacity(count),
                },
                count,
            ));
            continue;
        }
        let (record, _) = records
            .last_mut()
            .ok_or_else(|| bad(line_no, "sample row before any record header".into()))?;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(bad(line_no, format!("expected 7 columns, found {}", cols.len())));
        }
        let v: Vec<f32> = cols[3..]
            .iter()
            .map(|c| c.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(line_no, e.to_string()))?;
        record.x.push(Complex32::new(v[0], v[1]));
        record.y.push(Complex32::new(v[2], v[3]));
    }
    records
        .into_iter()
        .enumerate()
        .map(|(n, (r, count))| {
            if r.len() == count {
                Ok(r)
            } else {
                Err(Error::Format {
                    offset: 0,
                    message: format!("csv record {n}: expected {count} rows, found {}", r.len()),
                })
            }
        })
        .collect()
}
