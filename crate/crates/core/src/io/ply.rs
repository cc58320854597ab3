use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

/// Vertices, extra per-vertex scalar properties and (fan-triangulated) faces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyData {
    pub points: Vec<Point3>,
    pub scalars: BTreeMap<String, Vec<f64>>,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads one value from the body, ASCII or binary.
struct Body<'a> {
    encoding: PlyEncoding,
    bytes: &'a [u8],
    pos: usize,
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl Body<'_> {
    fn next(&mut self, ty: Scalar) -> Option<f64> {
        if self.encoding == PlyEncoding::Ascii {
            return self.tokens.next()?.parse().ok();
        }
        let raw = self.bytes.get(self.pos..self.pos + ty.size())?;
        self.pos += ty.size();
        let le = self.encoding == PlyEncoding::BinaryLittleEndian;
        macro_rules! num {
            ($t:ty) => {{
                let arr = raw.try_into().ok()?;
                (if le { <$t>::from_le_bytes(arr) } else { <$t>::from_be_bytes(arr) }) as f64
            }};
        }
        Some(match ty {
            Scalar::I8 => num!(i8),
            Scalar::U8 => num!(u8),
            Scalar::I16 => num!(i16),
            Scalar::U16 => num!(u16),
            Scalar::I32 => num!(i32),
            Scalar::U32 => num!(u32),
            Scalar::F32 => num!(f32),
            Scalar::F64 => num!(f64),
        })
    }
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes).map_err(|d| Error::format(path, d))
}

fn parse_ply(bytes: &[u8]) -> std::result::Result<PlyData, String> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or("missing end_header")?;
    let mut body_start = end + END.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| "header is not UTF-8")?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err("missing ply magic".into());
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", f, _] => {
                encoding = Some(match *f {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    "binary_big_endian" => PlyEncoding::BinaryBigEndian,
                    other => return Err(format!("unknown format {other}")),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| format!("bad element count {count}"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                let c = Scalar::parse(c).ok_or_else(|| format!("unknown type {c}"))?;
                let i = Scalar::parse(i).ok_or_else(|| format!("unknown type {i}"))?;
                el.props.push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                let ty = Scalar::parse(ty).ok_or_else(|| format!("unknown type {ty}"))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(format!("unrecognised header line '{line}'")),
        }
    }
    let encoding = encoding.ok_or("missing format line")?;
    let text = if encoding == PlyEncoding::Ascii {
        std::str::from_utf8(&bytes[body_start..]).map_err(|_| "ASCII body is not UTF-8")?
    } else {
        ""
    };
    let mut body = Body {
        encoding,
        bytes,
        pos: body_start,
        tokens: text.split_ascii_whitespace(),
    };

    let mut out = PlyData::default();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); el.props.len()];
        for row in 0..el.count {
            for (pi, prop) in el.props.iter().enumerate() {
                let short = || format!("{} {row} is truncated", el.name);
                match prop {
                    Property::Scalar(_, ty) => columns[pi].push(body.next(*ty).ok_or_else(short)?),
                    Property::List(name, cty, ity) => {
                        let n = body.next(*cty).ok_or_else(short)?;
                        if !(n >= 0.0) || n.fract() != 0.0 {
                            return Err(format!("{} {row}: bad list length {n}", el.name));
                        }
                        let mut idx = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            idx.push(body.next(*ity).ok_or_else(short)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            if idx.len() < 3 {
                                return Err(format!("face {row} has fewer than three vertices"));
                            }
                            if idx.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                                return Err(format!("face {row} has an invalid index"));
                            }
                            for k in 1..idx.len() - 1 {
                                out.faces.push([idx[0] as usize, idx[k] as usize, idx[k + 1] as usize]);
                            }
                        }
                    }
                }
            }
        }
        if is_vertex {
            let col = |axis: &str| {
                el.props
                    .iter()
                    .position(|p| matches!(p, Property::Scalar(n, _) if n == axis))
                    .ok_or_else(|| format!("vertex element lacks property {axis}"))
            };
            let (xi, yi, zi) = (col("x")?, col("y")?, col("z")?);
            out.points = (0..el.count)
                .map(|r| [columns[xi][r], columns[yi][r], columns[zi][r]])
                .collect();
            for (pi, prop) in el.props.iter().enumerate() {
                if let Property::Scalar(name, _) = prop {
                    if !matches!(name.as_str(), "x" | "y" | "z") {
                        out.scalars.insert(name.clone(), std::mem::take(&mut columns[pi]));
                    }
                }
            }
        }
    }
    if encoding != PlyEncoding::Ascii && body.pos != bytes.len() {
        return Err("trailing bytes after last element".into());
    }
    let nv = out.points.len();
    if let Some(f) = out.faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
        return Err(format!("face {f:?} references a missing vertex"));
    }
    Ok(out)
}

/// Writes vertices as doubles, each extra scalar property as a double column
/// and faces as `uchar`/`int` lists.
pub fn write_ply(path: &Path, data: &PlyData, encoding: PlyEncoding) -> Result<()> {
    for (name, col) in &data.scalars {
        if col.len() != data.points.len() {
            return Err(Error::InvalidInput(format!(
                "scalar {name} has {} values for {} points",
                col.len(),
                data.points.len()
            )));
        }
    }
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
        PlyEncoding::BinaryBigEndian => "binary_big_endian",
    };
    let mut header = format!(
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        data.points.len()
    );
    for name in data.scalars.keys() {
        header.push_str(&format!("property double {name}\n"));
    }
    if !data.faces.is_empty() {
        header.push_str(&format!(
            "element face {}\nproperty list uchar int vertex_indices\n",
            data.faces.len()
        ));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    let columns: Vec<&Vec<f64>> = data.scalars.values().collect();
    let put = |v: f64, out: &mut Vec<u8>| match encoding {
        PlyEncoding::Ascii => out.extend_from_slice(format!("{v:?} ").as_bytes()),
        PlyEncoding::BinaryLittleEndian => out.extend_from_slice(&v.to_le_bytes()),
        PlyEncoding::BinaryBigEndian => out.extend_from_slice(&v.to_be_bytes()),
    };
    for (i, p) in data.points.iter().enumerate() {
        for &v in p.iter().chain(columns.iter().map(|c| &c[i])) {
            put(v, &mut out);
        }
        if encoding == PlyEncoding::Ascii {
            out.pop();
            out.push(b'\n');
        }
    }
    for f in &data.faces {
        match encoding {
            PlyEncoding::Ascii => out.extend_from_slice(format!("3 {} {} {}\n", f[0], f[1], f[2]).as_bytes()),
            _ => {
                out.push(3);
                for &i in f {
                    let i = i32::try_from(i).map_err(|_| Error::InvalidInput("face index exceeds i32".into()))?;
                    if encoding == PlyEncoding::BinaryLittleEndian {
                        out.extend_from_slice(&i.to_le_bytes());
                    } else {
                        out.extend_from_slice(&i.to_be_bytes());
                    }
                }
            }
        }
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PlyData {
        let mut scalars = BTreeMap::new();
        scalars.insert("saliency".to_string(), vec![0.5, -1e-9, 3.0, 0.0]);
        PlyData {
            points: vec![[0.1, 0.2, 0.3], [1.0 / 3.0, -4.0, 5e-300], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0]],
            scalars,
            faces: vec![[0, 1, 2], [1, 2, 3]],
        }
    }

    #[test]
    fn all_encodings_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian, PlyEncoding::BinaryBigEndian] {
            let p = dir.path().join(format!("{enc:?}.ply"));
            write_ply(&p, &sample(), enc).unwrap();
            assert_eq!(read_ply(&p).unwrap(), sample(), "{enc:?}");
        }
    }

    #[test]
    fn reads_foreign_float_ascii_with_quads() {
        let text = "ply\nformat ascii 1.0\ncomment made elsewhere\nelement vertex 4\nproperty float x\n\
                    property float y\nproperty float z\nproperty uchar red\nelement face 1\n\
                    property list uchar uint vertex_index\nend_header\n\
                    0 0 0 255\n1 0 0 0\n1 1 0 0\n0 1 0 0\n4 0 1 2 3\n";
        let d = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(d.points.len(), 4);
        assert_eq!(d.scalars["red"][0], 255.0);
        assert_eq!(d.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn reads_binary_float32() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        for v in [1.5f32, -2.0, 0.25, 3.0, 4.0, 5.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let d = parse_ply(&bytes).unwrap();
        assert_eq!(d.points, vec![[1.5, -2.0, 0.25], [3.0, 4.0, 5.0]]);
        assert!(parse_ply(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.ply");
        fs::write(&p, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n").unwrap();
        assert!(read_ply(&p).unwrap_err().to_string().contains("broken.ply"));
    }
}
