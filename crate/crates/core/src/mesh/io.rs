//! OBJ and PLY readers/writers. PLY binary output is little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::{CleanupReport, TriangleMesh};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::InvalidInput(format!(
                "cannot infer mesh format from {}",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

/// Loads a mesh, inferring the format from the extension when `format` is `None`.
pub fn load_mesh(path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<(TriangleMesh, CleanupReport)> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let raw = match format {
        MeshFormat::Obj => read_obj(&mut reader)?,
        MeshFormat::Ply => read_ply(&mut reader)?,
    };
    raw.into_mesh()
}

pub fn save_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => write_obj(mesh, path),
        MeshFormat::Ply => write_ply(mesh, path, PlyEncoding::BinaryLittleEndian),
    }
}

#[derive(Default)]
struct RawMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    colors: Option<Vec<[u8; 3]>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl RawMesh {
    fn into_mesh(self) -> Result<(TriangleMesh, CleanupReport)> {
        if self.vertices.is_empty() || self.triangles.is_empty() {
            return Err(Error::EmptyMesh("file contains no faces".into()));
        }
        let (mut mesh, report) = TriangleMesh::new(self.vertices, self.triangles)?;
        if let Some(c) = self.colors {
            mesh = mesh.with_colors(c)?;
        }
        if let Some(n) = self.normals {
            mesh = mesh.with_normals(n)?;
        }
        Ok((mesh, report))
    }
}

fn push_polygon(tris: &mut Vec<[usize; 3]>, poly: &[usize]) {
    for k in 1..poly.len().saturating_sub(1) {
        tris.push([poly[0], poly[k], poly[k + 1]]);
    }
}

fn read_obj(reader: &mut impl BufRead) -> Result<RawMesh> {
    let mut raw = RawMesh::default();
    let mut colors = Vec::new();
    let mut poly = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse("OBJ", e.to_string()))?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let nums: Vec<f64> = it
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse("OBJ", format!("line {}: {e}", lineno + 1)))?;
                if nums.len() < 3 {
                    return Err(Error::parse(
                        "OBJ",
                        format!("line {}: vertex needs 3 coordinates", lineno + 1),
                    ));
                }
                raw.vertices.push(Point3::new(nums[0], nums[1], nums[2]));
                if nums.len() >= 6 {
                    colors.push([nums[3], nums[4], nums[5]].map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
                }
            }
            Some("f") => {
                poly.clear();
                for tok in it {
                    let idx = tok.split('/').next().unwrap_or("");
                    let i: i64 = idx
                        .parse()
                        .map_err(|_| Error::parse("OBJ", format!("line {}: bad index '{tok}'", lineno + 1)))?;
                    let n = raw.vertices.len() as i64;
                    let resolved = if i > 0 { i - 1 } else { n + i };
                    if resolved < 0 {
                        return Err(Error::parse(
                            "OBJ",
                            format!("line {}: index {i} out of range", lineno + 1),
                        ));
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(Error::parse(
                        "OBJ",
                        format!("line {}: face with fewer than 3 vertices", lineno + 1),
                    ));
                }
                push_polygon(&mut raw.triangles, &poly);
            }
            _ => {}
        }
    }
    if !colors.is_empty() && colors.len() == raw.vertices.len() {
        raw.colors = Some(colors);
    }
    Ok(raw)
}

pub fn write_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        for (i, p) in mesh.vertices().iter().enumerate() {
            match mesh.colors() {
                Some(c) => {
                    let [r, g, b] = c[i].map(|x| x as f64 / 255.0);
                    writeln!(w, "v {:?} {:?} {:?} {r:.6} {g:.6} {b:.6}", p.x, p.y, p.z)?
                }
                None => writeln!(w, "v {:?} {:?} {:?}", p.x, p.y, p.z)?,
            }
        }
        for t in mesh.triangles() {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
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
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::parse("PLY", format!("unknown scalar type '{other}'"))),
        })
    }

    fn read_binary(self, r: &mut impl Read) -> std::io::Result<f64> {
        macro_rules! rd {
            ($t:ty) => {{
                let mut b = [0u8; std::mem::size_of::<$t>()];
                r.read_exact(&mut b)?;
                <$t>::from_le_bytes(b) as f64
            }};
        }
        Ok(match self {
            Scalar::I8 => rd!(i8),
            Scalar::U8 => rd!(u8),
            Scalar::I16 => rd!(i16),
            Scalar::U16 => rd!(u16),
            Scalar::I32 => rd!(i32),
            Scalar::U32 => rd!(u32),
            Scalar::F32 => rd!(f32),
            Scalar::F64 => rd!(f64),
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn read_header(reader: &mut impl BufRead) -> Result<(bool, Vec<Element>)> {
    let mut line = String::new();
    let next_line = |reader: &mut dyn BufRead, line: &mut String| -> Result<()> {
        line.clear();
        let n = reader.read_line(line).map_err(|e| Error::parse("PLY", e.to_string()))?;
        if n == 0 {
            return Err(Error::parse("PLY", "unexpected end of header"));
        }
        Ok(())
    };
    next_line(reader, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::parse("PLY", "missing 'ply' magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(reader, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(Error::parse("PLY", format!("unsupported format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse("PLY", format!("bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse("PLY", "property before element"))?
                .props
                .push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse("PLY", "property before element"))?
                .props
                .push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                }),
            ["end_header"] => break,
            _ => return Err(Error::parse("PLY", format!("bad header line '{}'", line.trim()))),
        }
    }
    let binary = binary.ok_or_else(|| Error::parse("PLY", "missing format line"))?;
    Ok((binary, elements))
}

/// Reads one element record as a flat list of (property index, values).
fn read_record(
    reader: &mut impl BufRead,
    binary: bool,
    el: &Element,
    tokens: &mut Vec<f64>,
    out: &mut Vec<Vec<f64>>,
) -> Result<()> {
    out.iter_mut().for_each(Vec::clear);
    out.resize_with(el.props.len(), Vec::new);
    if binary {
        let err = |e: std::io::Error| Error::parse("PLY", format!("truncated binary data: {e}"));
        for (k, p) in el.props.iter().enumerate() {
            match p {
                Property::Scalar { ty, .. } => out[k].push(ty.read_binary(reader).map_err(err)?),
                Property::List { count, item, .. } => {
                    let n = count.read_binary(reader).map_err(err)? as usize;
                    for _ in 0..n {
                        out[k].push(item.read_binary(reader).map_err(err)?);
                    }
                }
            }
        }
    } else {
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader
                .read_line(&mut line)
                .map_err(|e| Error::parse("PLY", e.to_string()))?;
            if n == 0 {
                return Err(Error::parse("PLY", "unexpected end of data"));
            }
            if !line.trim().is_empty() {
                break;
            }
        }
        tokens.clear();
        for t in line.split_whitespace() {
            tokens.push(
                t.parse()
                    .map_err(|_| Error::parse("PLY", format!("bad number '{t}'")))?,
            );
        }
        let mut pos = 0;
        let take = |pos: &mut usize| -> Result<f64> {
            let v = *tokens
                .get(*pos)
                .ok_or_else(|| Error::parse("PLY", "record too short"))?;
            *pos += 1;
            Ok(v)
        };
        for (k, p) in el.props.iter().enumerate() {
            match p {
                Property::Scalar { .. } => out[k].push(take(&mut pos)?),
                Property::List { .. } => {
                    let n = take(&mut pos)? as usize;
                    for _ in 0..n {
                        out[k].push(take(&mut pos)?);
                    }
                }
            }
        }
    }
    Ok(())
}

fn read_ply(reader: &mut impl BufRead) -> Result<RawMesh> {
    let (binary, elements) = read_header(reader)?;
    let mut raw = RawMesh::default();
    let mut tokens = Vec::new();
    let mut rec = Vec::new();
    for el in &elements {
        let find = |n: &str| {
            el.props.iter().position(|p| match p {
                Property::Scalar { name, .. } | Property::List { name, .. } => name == n,
            })
        };
        match el.name.as_str() {
            "vertex" => {
                let (x, y, z) = match (find("x"), find("y"), find("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(Error::parse("PLY", "vertex element lacks x/y/z")),
                };
                let normal = match (find("nx"), find("ny"), find("nz")) {
                    (Some(a), Some(b), Some(c)) => Some([a, b, c]),
                    _ => None,
                };
                let color = match (find("red"), find("green"), find("blue")) {
                    (Some(a), Some(b), Some(c)) => Some([a, b, c]),
                    _ => None,
                };
                let mut normals = Vec::new();
                let mut colors = Vec::new();
                for _ in 0..el.count {
                    read_record(reader, binary, el, &mut tokens, &mut rec)?;
                    raw.vertices.push(Point3::new(rec[x][0], rec[y][0], rec[z][0]));
                    if let Some([a, b, c]) = normal {
                        normals.push(Vector3::new(rec[a][0], rec[b][0], rec[c][0]));
                    }
                    if let Some(ch) = color {
                        colors.push(ch.map(|k| rec[k][0].clamp(0.0, 255.0) as u8));
                    }
                }
                if normal.is_some() {
                    raw.normals = Some(normals);
                }
                if color.is_some() {
                    raw.colors = Some(colors);
                }
            }
            "face" => {
                let idx = find("vertex_indices")
                    .or_else(|| find("vertex_index"))
                    .ok_or_else(|| Error::parse("PLY", "face element lacks vertex_indices"))?;
                let mut poly = Vec::new();
                for _ in 0..el.count {
                    read_record(reader, binary, el, &mut tokens, &mut rec)?;
                    poly.clear();
                    for &v in &rec[idx] {
                        if v < 0.0 {
                            return Err(Error::parse("PLY", "negative face index"));
                        }
                        poly.push(v as usize);
                    }
                    if poly.len() < 3 {
                        return Err(Error::parse("PLY", "face with fewer than 3 vertices"));
                    }
                    push_polygon(&mut raw.triangles, &poly);
                }
            }
            _ => {
                for _ in 0..el.count {
                    read_record(reader, binary, el, &mut tokens, &mut rec)?;
                }
            }
        }
    }
    Ok(raw)
}

/// Writes a mesh as PLY (positions as doubles, optional normals and colors).
pub fn write_ply(mesh: &TriangleMesh, path: impl AsRef<Path>, encoding: PlyEncoding) -> Result<()> {
    write_ply_parts(
        path.as_ref(),
        encoding,
        mesh.vertices(),
        mesh.normals(),
        mesh.colors(),
        mesh.triangles(),
    )
}

/// Writes a vertex-only PLY point cloud.
pub fn write_point_ply(
    points: &[Point3<f64>],
    colors: Option<&[[u8; 3]]>,
    path: impl AsRef<Path>,
    encoding: PlyEncoding,
) -> Result<()> {
    write_ply_parts(path.as_ref(), encoding, points, None, colors, &[])
}

fn write_ply_parts(
    path: &Path,
    encoding: PlyEncoding,
    vertices: &[Point3<f64>],
    normals: Option<&[Vector3<f64>]>,
    colors: Option<&[[u8; 3]]>,
    triangles: &[[usize; 3]],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "ply")?;
        match encoding {
            PlyEncoding::Ascii => writeln!(w, "format ascii 1.0")?,
            PlyEncoding::BinaryLittleEndian => writeln!(w, "format binary_little_endian 1.0")?,
        }
        writeln!(w, "element vertex {}", vertices.len())?;
        for c in ["x", "y", "z"] {
            writeln!(w, "property double {c}")?;
        }
        if normals.is_some() {
            for c in ["nx", "ny", "nz"] {
                writeln!(w, "property double {c}")?;
            }
        }
        if colors.is_some() {
            for c in ["red", "green", "blue"] {
                writeln!(w, "property uchar {c}")?;
            }
        }
        if !triangles.is_empty() {
            writeln!(w, "element face {}", triangles.len())?;
            writeln!(w, "property list uchar int vertex_indices")?;
        }
        writeln!(w, "end_header")?;
        for (i, p) in vertices.iter().enumerate() {
            let mut vals: Vec<f64> = vec![p.x, p.y, p.z];
            if let Some(n) = normals {
                vals.extend_from_slice(&[n[i].x, n[i].y, n[i].z]);
            }
            match encoding {
                PlyEncoding::Ascii => {
                    let mut s: Vec<String> = vals.iter().map(|v| format!("{v:?}")).collect();
                    if let Some(c) = colors {
                        s.extend(c[i].iter().map(u8::to_string));
                    }
                    writeln!(w, "{}", s.join(" "))?;
                }
                PlyEncoding::BinaryLittleEndian => {
                    for v in vals {
                        w.write_all(&v.to_le_bytes())?;
                    }
                    if let Some(c) = colors {
                        w.write_all(&c[i])?;
                    }
                }
            }
        }
        for t in triangles {
            match encoding {
                PlyEncoding::Ascii => writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?,
                PlyEncoding::BinaryLittleEndian => {
                    w.write_all(&[3u8])?;
                    for &i in t {
                        w.write_all(&(i as i32).to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Reads the vertex positions of a PLY file (faces, if any, are ignored).
pub fn read_point_ply(path: impl AsRef<Path>) -> Result<Vec<Point3<f64>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    Ok(read_ply(&mut reader)?.vertices)
}
