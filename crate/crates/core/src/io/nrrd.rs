//! A small, strict subset of the NRRD format.
//!
//! Supported: `dimension: 3`; types `short`, `ushort`, `uchar`, `float`
//! (with their standard aliases); encodings `raw` and `gzip` (the latter
//! behind the `gzip` feature); either endianness; `spacings` or
//! `space directions`; attached payloads or a single detached `data file`.
//! Comment lines and `key:=value` pairs are skipped; other unknown fields
//! are logged and ignored.
//!
//! NRRD lists axes fastest-first, so `sizes: W H D` becomes internal
//! extents `(D, H, W)`. The voxel order itself needs no permutation.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalarType {
    Short,
    UShort,
    UChar,
    Float,
}

impl ScalarType {
    pub const ALL: [ScalarType; 4] = [ScalarType::Short, ScalarType::UShort, ScalarType::UChar, ScalarType::Float];

    pub fn width(self) -> usize {
        match self {
            ScalarType::UChar => 1,
            ScalarType::Short | ScalarType::UShort => 2,
            ScalarType::Float => 4,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            ScalarType::Short => "short",
            ScalarType::UShort => "ushort",
            ScalarType::UChar => "uchar",
            ScalarType::Float => "float",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "short" | "short int" | "signed short" | "signed short int" | "int16" | "int16_t" => ScalarType::Short,
            "ushort" | "unsigned short" | "unsigned short int" | "uint16" | "uint16_t" => ScalarType::UShort,
            "uchar" | "unsigned char" | "uint8" | "uint8_t" => ScalarType::UChar,
            "float" => ScalarType::Float,
            _ => return None,
        })
    }

    /// Whether `v` survives a write/read cycle through this type unchanged.
    pub fn represents(self, v: f64) -> bool {
        match self {
            ScalarType::Short => v.fract() == 0.0 && (i16::MIN as f64..=i16::MAX as f64).contains(&v),
            ScalarType::UShort => v.fract() == 0.0 && (0.0..=u16::MAX as f64).contains(&v),
            ScalarType::UChar => v.fract() == 0.0 && (0.0..=u8::MAX as f64).contains(&v),
            ScalarType::Float => (v as f32) as f64 == v || v.is_nan(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    Raw,
    Gzip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NrrdHeader {
    pub dimension: usize,
    /// Axis sizes in file order (fastest first).
    pub sizes: Vec<usize>,
    pub scalar: ScalarType,
    pub encoding: Encoding,
    pub endian: Endian,
    /// Per-axis spacing in file order, when present.
    pub spacings: Option<Vec<f64>>,
    pub data_file: Option<String>,
    /// Byte offset of an attached payload (just past the blank line).
    pub header_len: usize,
}

impl NrrdHeader {
    /// `(D, H, W)` extents.
    pub fn extents(&self) -> [usize; 3] {
        [self.sizes[2], self.sizes[1], self.sizes[0]]
    }

    /// `(D, H, W)` spacing; unit spacing when the header has none.
    pub fn spacing(&self) -> [f64; 3] {
        match &self.spacings {
            Some(s) => [s[2], s[1], s[0]],
            None => [1.0; 3],
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.sizes.iter().product()
    }
}

const SUPPORTED_TYPES: &str = "short, ushort, uchar, float";

fn header_error(msg: impl Into<String>) -> Error {
    Error::InvalidValue(format!("NRRD header: {}", msg.into()))
}

fn parse_vector(s: &str) -> Option<Vec<f64>> {
    let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
    inner.split(',').map(|t| t.trim().parse::<f64>().ok()).collect()
}

/// Splits the `space directions` value `(a,b,c) (d,e,f) none ..` into items.
fn split_directions(value: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = value.trim();
    while !rest.is_empty() {
        if rest.starts_with('(') {
            let end = rest.find(')').map_or(rest.len(), |i| i + 1);
            out.push(&rest[..end]);
            rest = rest[end..].trim_start();
        } else {
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            out.push(&rest[..end]);
            rest = rest[end..].trim_start();
        }
    }
    out
}

/// Parses the header at the start of `bytes`. The header ends at the first
/// blank line or, for a detached header file, at end of input.
pub fn parse_nrrd_header(bytes: &[u8]) -> Result<NrrdHeader> {
    let magic_ok = bytes.len() >= 8 && &bytes[..7] == b"NRRD000" && (b'1'..=b'9').contains(&bytes[7]);
    if !magic_ok {
        return Err(header_error("missing NRRD000x magic"));
    }
    let mut pos = 0;
    let mut lines = Vec::new();
    let mut header_len = bytes.len();
    while pos < bytes.len() {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| pos + i);
        let mut line = &bytes[pos..end];
        if line.last() == Some(&b'\r') {
            line = &line[..line.len() - 1];
        }
        pos = (end + 1).min(bytes.len());
        if line.is_empty() {
            header_len = pos;
            break;
        }
        lines.push(line);
    }

    let mut dimension = None;
    let mut sizes: Option<Vec<usize>> = None;
    let mut scalar = None;
    let mut encoding = None;
    let mut endian = None;
    let mut spacings: Option<Vec<f64>> = None;
    let mut data_file = None;

    for raw in &lines[1..] {
        let line = std::str::from_utf8(raw).map_err(|_| header_error("header line is not valid UTF-8"))?;
        if line.starts_with('#') {
            continue;
        }
        if line.contains(":=") {
            continue;
        }
        let Some((field, value)) = line.split_once(": ") else {
            return Err(header_error(format!("malformed line '{line}' (expected 'field: value')")));
        };
        let value = value.trim();
        match field.trim() {
            "dimension" => {
                dimension = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| header_error(format!("dimension '{value}' is not an integer")))?,
                )
            }
            "sizes" => {
                sizes = Some(
                    value
                        .split_whitespace()
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| header_error(format!("sizes '{value}' are not integers")))?,
                )
            }
            "type" => {
                scalar = Some(ScalarType::parse(value).ok_or_else(|| {
                    header_error(format!("unsupported type '{value}' (supported: {SUPPORTED_TYPES})"))
                })?)
            }
            "encoding" => {
                encoding = Some(match value {
                    "raw" => Encoding::Raw,
                    "gzip" | "gz" => Encoding::Gzip,
                    other => {
                        return Err(header_error(format!("unsupported encoding '{other}' (supported: raw, gzip)")))
                    }
                })
            }
            "endian" => {
                endian = Some(match value {
                    "little" => Endian::Little,
                    "big" => Endian::Big,
                    other => return Err(header_error(format!("endian must be little or big, got '{other}'"))),
                })
            }
            "spacings" => {
                spacings = Some(
                    value
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| header_error(format!("spacings '{value}' are not numbers")))?,
                )
            }
            "space directions" => {
                let dirs = split_directions(value)
                    .into_iter()
                    .map(|item| {
                        if item == "none" {
                            return Ok(1.0);
                        }
                        let v = parse_vector(item)
                            .ok_or_else(|| header_error(format!("bad space direction '{item}'")))?;
                        Ok(v.iter().map(|c| c * c).sum::<f64>().sqrt())
                    })
                    .collect::<Result<Vec<_>>>()?;
                spacings = Some(dirs);
            }
            "data file" | "datafile" => {
                if value.starts_with("LIST") || value.split_whitespace().count() > 1 {
                    return Err(header_error("only a single detached data file is supported"));
                }
                data_file = Some(value.to_string());
            }
            other => log::warn!("ignoring unsupported NRRD field '{other}'"),
        }
    }

    let dimension = dimension.ok_or_else(|| header_error("missing required field 'dimension'"))?;
    let sizes = sizes.ok_or_else(|| header_error("missing required field 'sizes'"))?;
    let scalar = scalar.ok_or_else(|| header_error("missing required field 'type'"))?;
    let encoding = encoding.ok_or_else(|| header_error("missing required field 'encoding'"))?;
    if dimension != 3 {
        return Err(header_error(format!("only dimension 3 is supported, got {dimension}")));
    }
    if sizes.len() != dimension {
        return Err(header_error(format!(
            "sizes lists {} axes but dimension is {dimension}",
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(header_error("sizes must be >= 1"));
    }
    if sizes.iter().try_fold(scalar.width(), |acc, &s| acc.checked_mul(s)).is_none() {
        return Err(header_error("sizes overflow"));
    }
    if let Some(s) = &spacings {
        if s.len() != dimension {
            return Err(header_error(format!("spacing lists {} axes but dimension is {dimension}", s.len())));
        }
        if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(header_error(format!("spacings must be positive, got {s:?}")));
        }
    }
    let endian = match endian {
        Some(e) => e,
        None if scalar.width() == 1 => Endian::Little,
        None => {
            return Err(header_error(format!(
                "missing required field 'endian' (type {} is multi-byte)",
                scalar.token()
            )))
        }
    };
    Ok(NrrdHeader {
        dimension,
        sizes,
        scalar,
        encoding,
        endian,
        spacings,
        data_file,
        header_len,
    })
}

fn decompress(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    #[cfg(feature = "gzip")]
    {
        use std::io::Read;
        let mut out = Vec::new();
        flate2::read::MultiGzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip payload: {e}")))?;
        Ok(out)
    }
    #[cfg(not(feature = "gzip"))]
    {
        let _ = bytes;
        Err(Error::Unsupported(format!(
            "{}: gzip encoding needs the 'gzip' feature",
            path.display()
        )))
    }
}

fn decode_scalars(header: &NrrdHeader, payload: &[u8]) -> Vec<f64> {
    let w = header.scalar.width();
    let le = header.endian == Endian::Little;
    payload
        .chunks_exact(w)
        .map(|c| match header.scalar {
            ScalarType::UChar => c[0] as f64,
            ScalarType::Short => {
                let b = [c[0], c[1]];
                (if le { i16::from_le_bytes(b) } else { i16::from_be_bytes(b) }) as f64
            }
            ScalarType::UShort => {
                let b = [c[0], c[1]];
                (if le { u16::from_le_bytes(b) } else { u16::from_be_bytes(b) }) as f64
            }
            ScalarType::Float => {
                let b = [c[0], c[1], c[2], c[3]];
                (if le { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
            }
        })
        .collect()
}

/// Header and decoded voxel values of an NRRD file.
pub fn read_raw(path: impl AsRef<Path>) -> Result<(NrrdHeader, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_nrrd_header(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let (payload_path, stored): (PathBuf, Vec<u8>) = match &header.data_file {
        Some(name) => {
            let p = path.parent().unwrap_or_else(|| Path::new(".")).join(name);
            let data = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            (p, data)
        }
        None => (path.to_path_buf(), bytes[header.header_len..].to_vec()),
    };
    let payload = match header.encoding {
        Encoding::Raw => stored,
        Encoding::Gzip => decompress(&payload_path, &stored)?,
    };
    let expected = header.voxel_count() * header.scalar.width();
    if payload.len() != expected {
        return Err(Error::format(
            &payload_path,
            format!(
                "payload has {} bytes, expected {expected} ({} voxels of {})",
                payload.len(),
                header.voxel_count(),
                header.scalar.token()
            ),
        ));
    }
    let values = decode_scalars(&header, &payload);
    Ok((header, values))
}

/// Reads a volume; `kind == Mask` enforces binary values.
pub fn read_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<Volume> {
    let path = path.as_ref();
    let (header, values) = read_raw(path)?;
    Volume::new(header.extents(), header.spacing(), values, kind).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WriteOptions {
    pub scalar: ScalarType,
    pub encoding: Encoding,
}

impl WriteOptions {
    /// `uchar` for masks, `float` for intensities; raw encoding.
    pub fn for_kind(kind: VolumeKind) -> Self {
        WriteOptions {
            scalar: match kind {
                VolumeKind::Mask => ScalarType::UChar,
                VolumeKind::Intensity => ScalarType::Float,
            },
            encoding: Encoding::Raw,
        }
    }
}

/// Serializes `v` as an attached NRRD (little-endian). Integer types
/// require every voxel to be representable; `float` rounds to single
/// precision.
pub fn encode_volume(v: &Volume, opts: WriteOptions) -> Result<Vec<u8>> {
    if opts.scalar != ScalarType::Float {
        if let Some(i) = v.data().iter().position(|&x| !opts.scalar.represents(x)) {
            return Err(Error::InvalidValue(format!(
                "voxel {i} value {} does not fit NRRD type {}",
                v.data()[i],
                opts.scalar.token()
            )));
        }
    }
    let [d, h, w] = v.extents();
    let [sd, sh, sw] = v.spacing();
    let encoding = match opts.encoding {
        Encoding::Raw => "raw",
        Encoding::Gzip => "gzip",
    };
    let mut out = format!(
        "NRRD0004\n# written by unetdr\ntype: {}\ndimension: 3\nsizes: {w} {h} {d}\nspacings: {sw} {sh} {sd}\nencoding: {encoding}\nendian: little\n\n",
        opts.scalar.token()
    )
    .into_bytes();
    let mut payload = Vec::with_capacity(v.len() * opts.scalar.width());
    for &x in v.data() {
        match opts.scalar {
            ScalarType::UChar => payload.push(x as u8),
            ScalarType::Short => payload.extend_from_slice(&(x as i16).to_le_bytes()),
            ScalarType::UShort => payload.extend_from_slice(&(x as u16).to_le_bytes()),
            ScalarType::Float => payload.extend_from_slice(&(x as f32).to_le_bytes()),
        }
    }
    match opts.encoding {
        Encoding::Raw => out.extend_from_slice(&payload),
        Encoding::Gzip => out.extend_from_slice(&compress(&payload)?),
    }
    Ok(out)
}

fn compress(payload: &[u8]) -> Result<Vec<u8>> {
    #[cfg(feature = "gzip")]
    {
        use std::io::Write;
        let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(payload).expect("in-memory write");
        Ok(gz.finish().expect("in-memory write"))
    }
    #[cfg(not(feature = "gzip"))]
    {
        let _ = payload;
        Err(Error::Unsupported("gzip encoding needs the 'gzip' feature".into()))
    }
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume, opts: WriteOptions) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(v, opts).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "NRRD0004\ndimension: 3\nsizes: 640 640 88\ntype: short\nencoding: raw\nendian: little\n\n";

    #[test]
    fn parses_example_header() {
        let h = parse_nrrd_header(HEADER.as_bytes()).unwrap();
        assert_eq!(h.sizes, vec![640, 640, 88]);
        assert_eq!(h.extents(), [88, 640, 640]);
        assert_eq!(h.scalar, ScalarType::Short);
        assert_eq!(h.header_len, HEADER.len());
    }

    #[test]
    fn header_errors() {
        assert!(parse_nrrd_header(b"P6\n").unwrap_err().to_string().contains("magic"));
        let short = HEADER.replace("sizes: 640 640 88", "sizes: 88 640");
        assert!(parse_nrrd_header(short.as_bytes()).unwrap_err().to_string().contains("sizes"));
        let no_type = HEADER.replace("type: short\n", "");
        assert!(parse_nrrd_header(no_type.as_bytes()).unwrap_err().to_string().contains("'type'"));
        let bad_type = HEADER.replace("type: short", "type: double");
        let e = parse_nrrd_header(bad_type.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("short, ushort, uchar, float"), "{e}");
    }

    #[test]
    fn space_directions_give_spacing() {
        let text = HEADER.replace(
            "endian: little\n",
            "endian: little\nspace directions: (0.625,0,0) (0,0.5,0) (0,0,2.5)\n",
        );
        let h = parse_nrrd_header(text.as_bytes()).unwrap();
        assert_eq!(h.spacing(), [2.5, 0.5, 0.625]);
    }
}
