//! Reading and writing the numpy `.npy` array format.
//!
//! Only the subset this toolkit exchanges is supported: format versions 1.0
//! and 2.0, little-endian, C order, with element types `f4`, `f8`, `i4` and
//! `i8`. Fortran-order and big-endian files are rejected as malformed; any
//! other element type is reported as unsupported.
//!
//! Format reference: <https://numpy.org/doc/stable/reference/generated/numpy.lib.format.html>

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// Element storage after widening: floats become `f64`, integers `i64`.
#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
    I4,
    I8,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self> {
        let (order, code) = descr.split_at(descr.len().min(1));
        match order {
            "<" | "|" => {}
            ">" => {
                return Err(Error::MalformedFile(format!(
                    "big-endian dtype {descr:?} is not supported"
                )))
            }
            _ => return Err(Error::UnsupportedDtype(descr.to_string())),
        }
        match code {
            "f4" => Ok(Dtype::F4),
            "f8" => Ok(Dtype::F8),
            "i4" => Ok(Dtype::I4),
            "i8" => Ok(Dtype::I8),
            _ => Err(Error::UnsupportedDtype(descr.to_string())),
        }
    }

    fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::I4 => "<i4",
            Dtype::I8 => "<i8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F4 | Dtype::I4 => 4,
            Dtype::F8 | Dtype::I8 => 8,
        }
    }
}

/// An array as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    /// Element type stored in the file, before widening.
    pub dtype: Dtype,
    pub data: NpyData,
}

impl NpyArray {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Float payload. Integer arrays are rejected.
    pub fn into_f64(self) -> Result<Vec<f64>> {
        match self.data {
            NpyData::F64(v) => Ok(v),
            NpyData::I64(_) => Err(Error::UnsupportedDtype(format!(
                "{} (expected a float array)",
                self.dtype.descr()
            ))),
        }
    }

    /// Integer payload. Float arrays are rejected.
    pub fn into_i64(self) -> Result<Vec<i64>> {
        match self.data {
            NpyData::I64(v) => Ok(v),
            NpyData::F64(_) => Err(Error::UnsupportedDtype(format!(
                "{} (expected an integer array)",
                self.dtype.descr()
            ))),
        }
    }
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

pub fn read_npy<R: Read>(reader: &mut R) -> Result<NpyArray> {
    let mut magic = [0u8; 8];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::MalformedFile("file too short for npy magic".into()))?;
    if &magic[..6] != MAGIC {
        return Err(Error::MalformedFile("bad npy magic".into()));
    }
    let header_len = match magic[6] {
        1 => {
            let mut b = [0u8; 2];
            reader
                .read_exact(&mut b)
                .map_err(|_| Error::MalformedFile("truncated header length".into()))?;
            u16::from_le_bytes(b) as usize
        }
        2 => {
            let mut b = [0u8; 4];
            reader
                .read_exact(&mut b)
                .map_err(|_| Error::MalformedFile("truncated header length".into()))?;
            u32::from_le_bytes(b) as usize
        }
        v => {
            return Err(Error::MalformedFile(format!(
                "unsupported npy version {v}.{}",
                magic[7]
            )))
        }
    };
    let mut raw = vec![0u8; header_len];
    reader
        .read_exact(&mut raw)
        .map_err(|_| Error::MalformedFile("truncated header".into()))?;
    let text = std::str::from_utf8(&raw).map_err(|_| Error::MalformedFile("header is not valid text".into()))?;
    let header = parse_header(text)?;
    if header.fortran_order {
        return Err(Error::MalformedFile("Fortran-order arrays are not supported".into()));
    }
    let dtype = Dtype::parse(&header.descr)?;
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::MalformedFile("shape overflows".into()))?;

    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let expected = count * dtype.size();
    if body.len() != expected {
        return Err(Error::MalformedFile(format!(
            "payload has {} bytes, shape {:?} of {} needs {expected}",
            body.len(),
            header.shape,
            dtype.descr()
        )));
    }

    let data = match dtype {
        Dtype::F4 => NpyData::F64(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        ),
        Dtype::F8 => NpyData::F64(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::I4 => NpyData::I64(
            body.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
                .collect(),
        ),
        Dtype::I8 => NpyData::I64(
            body.chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(NpyArray {
        shape: header.shape,
        dtype,
        data,
    })
}

pub fn write_f64<W: Write>(writer: &mut W, shape: &[usize], values: &[f64]) -> Result<()> {
    check_len(shape, values.len())?;
    write_header(writer, Dtype::F8, shape)?;
    for v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_i64<W: Write>(writer: &mut W, shape: &[usize], values: &[i64]) -> Result<()> {
    check_len(shape, values.len())?;
    write_header(writer, Dtype::I8, shape)?;
    for v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_npy(path: &Path) -> Result<NpyArray> {
    let file = File::open(path)?;
    read_npy(&mut BufReader::new(file)).map_err(|e| with_path(e, path))
}

pub fn save_f64(path: &Path, shape: &[usize], values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_f64(&mut w, shape, values)?;
    w.flush()?;
    Ok(())
}

pub fn save_i64(path: &Path, shape: &[usize], values: &[i64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_i64(&mut w, shape, values)?;
    w.flush()?;
    Ok(())
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::MalformedFile(m) => Error::MalformedFile(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::ShapeMismatch(format!(
            "shape {shape:?} holds {n} elements, got {len}"
        )));
    }
    Ok(())
}

fn write_header<W: Write>(writer: &mut W, dtype: Dtype, shape: &[usize]) -> Result<()> {
    let shape_str = match shape {
        [d] => format!("({d},)"),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    );
    // magic + version + length field, then the dict padded with spaces and a
    // trailing newline so the payload starts on an ALIGN boundary.
    let (version, len_bytes) = if dict.len() + 1 + 10 <= u16::MAX as usize {
        (1u8, 2usize)
    } else {
        (2u8, 4usize)
    };
    let unpadded = MAGIC.len() + 2 + len_bytes + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    writer.write_all(MAGIC)?;
    writer.write_all(&[version, 0])?;
    if version == 1 {
        writer.write_all(&(dict.len() as u16).to_le_bytes())?;
    } else {
        writer.write_all(&(dict.len() as u32).to_le_bytes())?;
    }
    writer.write_all(dict.as_bytes())?;
    Ok(())
}

#[derive(Debug, PartialEq)]
enum Literal {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

/// Parses the python dict literal in an npy header.
fn parse_header(text: &str) -> Result<Header> {
    let bad = |m: &str| Error::MalformedFile(format!("header: {m}"));
    let mut p = Cursor {
        s: text.trim_end().as_bytes(),
        i: 0,
    };
    p.skip_ws();
    p.expect(b'{').map_err(|_| bad("expected '{'"))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    loop {
        p.skip_ws();
        if p.peek() == Some(b'}') {
            p.i += 1;
            break;
        }
        let key = p.string().ok_or_else(|| bad("expected key string"))?;
        p.skip_ws();
        p.expect(b':').map_err(|_| bad("expected ':'"))?;
        p.skip_ws();
        let value = p.literal().ok_or_else(|| bad("bad value"))?;
        match (key.as_str(), value) {
            ("descr", Literal::Str(s)) => descr = Some(s),
            ("fortran_order", Literal::Bool(b)) => fortran = Some(b),
            ("shape", Literal::Tuple(t)) => shape = Some(t),
            (k, _) => return Err(bad(&format!("unexpected entry {k:?}"))),
        }
        p.skip_ws();
        match p.peek() {
            Some(b',') => p.i += 1,
            Some(b'}') => {}
            _ => return Err(bad("expected ',' or '}'")),
        }
    }
    p.skip_ws();
    if p.i != p.s.len() {
        return Err(bad("trailing characters"));
    }
    Ok(Header {
        descr: descr.ok_or_else(|| bad("missing descr"))?,
        fortran_order: fortran.ok_or_else(|| bad("missing fortran_order"))?,
        shape: shape.ok_or_else(|| bad("missing shape"))?,
    })
}

struct Cursor<'a> {
    s: &'a [u8],
    i: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.i).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.i += 1;
        }
    }

    fn expect(&mut self, c: u8) -> std::result::Result<(), ()> {
        if self.peek() == Some(c) {
            self.i += 1;
            Ok(())
        } else {
            Err(())
        }
    }

    fn string(&mut self) -> Option<String> {
        let quote = self.peek().filter(|q| *q == b'\'' || *q == b'"')?;
        self.i += 1;
        let start = self.i;
        while self.peek()? != quote {
            self.i += 1;
        }
        let s = std::str::from_utf8(&self.s[start..self.i]).ok()?.to_string();
        self.i += 1;
        Some(s)
    }

    fn literal(&mut self) -> Option<Literal> {
        match self.peek()? {
            b'\'' | b'"' => self.string().map(Literal::Str),
            b'T' if self.s[self.i..].starts_with(b"True") => {
                self.i += 4;
                Some(Literal::Bool(true))
            }
            b'F' if self.s[self.i..].starts_with(b"False") => {
                self.i += 5;
                Some(Literal::Bool(false))
            }
            b'(' => {
                self.i += 1;
                let mut dims = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek()? {
                        b')' => {
                            self.i += 1;
                            return Some(Literal::Tuple(dims));
                        }
                        b',' => self.i += 1,
                        b'0'..=b'9' => {
                            let start = self.i;
                            while matches!(self.peek(), Some(b'0'..=b'9')) {
                                self.i += 1;
                            }
                            let text = std::str::from_utf8(&self.s[start..self.i]).ok()?;
                            dims.push(text.parse().ok()?);
                            // python 2 longs
                            if self.peek() == Some(b'L') {
                                self.i += 1;
                            }
                        }
                        _ => return None,
                    }
                }
            }
            _ => None,
        }
    }
}
