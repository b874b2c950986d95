//! Mesh file I/O: STL (ascii/binary), OBJ (v/f records), PLY (ascii and
//! binary little-endian, with an optional per-vertex integer `label`).
//!
//! STL stores a triangle soup, so loading welds duplicate vertices within
//! [`WELD_TOLERANCE`]. STL and OBJ are written in ascii with enough digits
//! for a lossless (within 1e-6 mm) round trip; PLY is written binary
//! little-endian with double-precision coordinates.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{point, Point3};

use crate::error::{Result, SldError};
use crate::mesh::TriMesh;

/// Vertex weld tolerance for STL soup input, in mm.
pub const WELD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Stl,
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<MeshFormat> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("stl") => Ok(MeshFormat::Stl),
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            other => Err(SldError::Parameter(format!(
                "cannot infer mesh format from extension {other:?}"
            ))),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> SldError {
    SldError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, offset: u64, message: impl Into<String>) -> SldError {
    SldError::Parse {
        path: path.display().to_string(),
        offset,
        message: message.into(),
    }
}

pub fn load_mesh(path: &Path, format: Option<MeshFormat>) -> Result<TriMesh> {
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mesh = match format {
        MeshFormat::Stl => load_stl(path, &bytes)?,
        MeshFormat::Obj => load_obj(path, &bytes)?,
        MeshFormat::Ply => load_ply(path, &bytes)?,
    };
    mesh.validate()?;
    Ok(mesh)
}

pub fn save_mesh(mesh: &TriMesh, path: &Path, format: Option<MeshFormat>) -> Result<()> {
    mesh.validate()?;
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let bytes = match format {
        MeshFormat::Stl => write_stl_ascii(mesh),
        MeshFormat::Obj => write_obj(mesh),
        MeshFormat::Ply => write_ply_binary(mesh),
    };
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&bytes).map_err(|e| io_err(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------- STL

/// Collects soup triangles into an indexed mesh, welding vertices that
/// quantize to the same cell at the weld tolerance.
struct Welder {
    vertices: Vec<Point3<f64>>,
    index: HashMap<(i64, i64, i64), usize>,
}

impl Welder {
    fn new() -> Self {
        Welder {
            vertices: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn add(&mut self, p: Point3<f64>) -> usize {
        let key = (
            (p.x / WELD_TOLERANCE).round() as i64,
            (p.y / WELD_TOLERANCE).round() as i64,
            (p.z / WELD_TOLERANCE).round() as i64,
        );
        *self.index.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            self.vertices.len() - 1
        })
    }
}

fn stl_is_binary(bytes: &[u8]) -> bool {
    if bytes.len() < 84 {
        return false;
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    bytes.len() == 84 + n * 50
}

fn load_stl(path: &Path, bytes: &[u8]) -> Result<TriMesh> {
    if stl_is_binary(bytes) {
        load_stl_binary(path, bytes)
    } else {
        load_stl_ascii(path, bytes)
    }
}

fn load_stl_binary(path: &Path, bytes: &[u8]) -> Result<TriMesh> {
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let mut welder = Welder::new();
    let mut faces = Vec::with_capacity(n);
    for t in 0..n {
        let base = 84 + t * 50;
        let mut ids = [0usize; 3];
        for (k, id) in ids.iter_mut().enumerate() {
            let off = base + 12 + k * 12;
            let read = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
            *id = welder.add(point![read(off), read(off + 4), read(off + 8)]);
        }
        if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
            faces.push(ids);
        }
    }
    if faces.is_empty() {
        return Err(SldError::Validation(format!(
            "STL {} contains no valid triangles",
            path.display()
        )));
    }
    TriMesh::new(welder.vertices, faces)
}

fn load_stl_ascii(path: &Path, bytes: &[u8]) -> Result<TriMesh> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| parse_err(path, e.valid_up_to() as u64, "STL is not valid UTF-8"))?;
    let mut welder = Welder::new();
    let mut faces = Vec::new();
    let mut tri: Vec<usize> = Vec::with_capacity(3);
    let mut offset = 0u64;
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("vertex") {
            let coords: Vec<f64> = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        parse_err(path, offset, format!("bad vertex coordinate {t:?}"))
                    })
                })
                .collect::<Result<_>>()?;
            if coords.len() != 3 {
                return Err(parse_err(path, offset, "vertex line needs 3 coordinates"));
            }
            tri.push(welder.add(point![coords[0], coords[1], coords[2]]));
            if tri.len() == 3 {
                let ids = [tri[0], tri[1], tri[2]];
                if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
                    faces.push(ids);
                }
                tri.clear();
            }
        } else if trimmed.starts_with("endsolid") {
            break;
        }
        offset += line.len() as u64 + 1;
    }
    if !tri.is_empty() {
        return Err(parse_err(
            path,
            offset,
            "truncated facet (dangling vertices)",
        ));
    }
    if faces.is_empty() {
        return Err(SldError::Validation(format!(
            "STL {} contains no valid triangles",
            path.display()
        )));
    }
    TriMesh::new(welder.vertices, faces)
}

fn write_stl_ascii(mesh: &TriMesh) -> Vec<u8> {
    let normals = mesh
        .face_normals()
        .unwrap_or_else(|_| vec![nalgebra::Vector3::zeros(); mesh.faces.len()]);
    let mut out = String::new();
    out.push_str("solid sld\n");
    for (fi, &[a, b, c]) in mesh.faces.iter().enumerate() {
        let n = normals[fi];
        out.push_str(&format!(
            "facet normal {:.9e} {:.9e} {:.9e}\n",
            n.x, n.y, n.z
        ));
        out.push_str("  outer loop\n");
        for &v in &[a, b, c] {
            let p = mesh.vertices[v];
            out.push_str(&format!("    vertex {:.9e} {:.9e} {:.9e}\n", p.x, p.y, p.z));
        }
        out.push_str("  endloop\nendfacet\n");
    }
    out.push_str("endsolid sld\n");
    out.into_bytes()
}

// ---------------------------------------------------------------- OBJ

fn load_obj(path: &Path, bytes: &[u8]) -> Result<TriMesh> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| parse_err(path, e.valid_up_to() as u64, "OBJ is not valid UTF-8"))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| {
                            parse_err(path, offset, format!("bad vertex coordinate {t:?}"))
                        })
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(parse_err(path, offset, "v line needs 3 coordinates"));
                }
                vertices.push(point![coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let ids: Vec<usize> = tokens
                    .map(|t| {
                        let idx_token = t.split('/').next().unwrap();
                        let idx: i64 = idx_token.parse().map_err(|_| {
                            parse_err(path, offset, format!("bad face index {t:?}"))
                        })?;
                        let resolved = if idx < 0 {
                            vertices.len() as i64 + idx
                        } else {
                            idx - 1
                        };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(parse_err(
                                path,
                                offset,
                                format!("face index {idx} out of range"),
                            ));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if ids.len() < 3 {
                    return Err(parse_err(path, offset, "face needs at least 3 indices"));
                }
                // fan-triangulate polygons
                for k in 1..ids.len() - 1 {
                    faces.push([ids[0], ids[k], ids[k + 1]]);
                }
            }
            _ => {} // other records ignored
        }
        offset += line.len() as u64 + 1;
    }
    if vertices.is_empty() || faces.is_empty() {
        return Err(SldError::Validation(format!(
            "OBJ {} has no geometry",
            path.display()
        )));
    }
    TriMesh::new(vertices, faces)
}

fn write_obj(mesh: &TriMesh) -> Vec<u8> {
    let mut out = String::new();
    for p in &mesh.vertices {
        out.push_str(&format!("v {:.9e} {:.9e} {:.9e}\n", p.x, p.y, p.z));
    }
    for &[a, b, c] in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", a + 1, b + 1, c + 1));
    }
    out.into_bytes()
}

// ---------------------------------------------------------------- PLY

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(token: &str) -> Option<PlyType> {
        Some(match token {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read_f64(self, bytes: &[u8]) -> f64 {
        match self {
            PlyType::I8 => bytes[0] as i8 as f64,
            PlyType::U8 => bytes[0] as f64,
            PlyType::I16 => i16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            PlyType::U16 => u16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            PlyType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct PlyProperty {
    name: String,
    ty: PlyType,
    list_count_ty: Option<PlyType>,
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

fn load_ply(path: &Path, bytes: &[u8]) -> Result<TriMesh> {
    // header is ascii regardless of body encoding
    let header_end = find_subsequence(bytes, b"end_header")
        .ok_or_else(|| parse_err(path, 0, "missing end_header"))?;
    let mut body_start = header_end + "end_header".len();
    while body_start < bytes.len() && (bytes[body_start] == b'\r' || bytes[body_start] == b'\n') {
        body_start += 1;
        if bytes[body_start - 1] == b'\n' {
            break;
        }
    }
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| {
        parse_err(
            path,
            e.valid_up_to() as u64,
            "PLY header is not valid UTF-8",
        )
    })?;

    let mut encoding = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for line in header.lines() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["ply"] | ["comment", ..] | [] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => {
                        return Err(parse_err(
                            path,
                            0,
                            format!("unsupported PLY format {other}"),
                        ))
                    }
                });
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| parse_err(path, 0, format!("bad element count {count:?}")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count_ty, item_ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, 0, "property before element"))?;
                element.properties.push(PlyProperty {
                    name: name.to_string(),
                    ty: PlyType::parse(item_ty)
                        .ok_or_else(|| parse_err(path, 0, format!("bad type {item_ty}")))?,
                    list_count_ty: Some(
                        PlyType::parse(count_ty)
                            .ok_or_else(|| parse_err(path, 0, format!("bad type {count_ty}")))?,
                    ),
                });
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, 0, "property before element"))?;
                element.properties.push(PlyProperty {
                    name: name.to_string(),
                    ty: PlyType::parse(ty)
                        .ok_or_else(|| parse_err(path, 0, format!("bad type {ty}")))?,
                    list_count_ty: None,
                });
            }
            _ => return Err(parse_err(path, 0, format!("bad header line {line:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| parse_err(path, 0, "missing format line"))?;

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut labels: Vec<i32> = Vec::new();
    let mut has_labels = false;
    let mut faces: Vec<[usize; 3]> = Vec::new();

    match encoding {
        PlyEncoding::Ascii => {
            let body = std::str::from_utf8(&bytes[body_start..]).map_err(|e| {
                parse_err(
                    path,
                    (body_start + e.valid_up_to()) as u64,
                    "PLY body not UTF-8",
                )
            })?;
            let mut lines = body.lines();
            for element in &elements {
                for _ in 0..element.count {
                    let line = lines
                        .next()
                        .ok_or_else(|| parse_err(path, bytes.len() as u64, "truncated PLY body"))?;
                    let mut tokens = line.split_whitespace();
                    let mut values: HashMap<&str, f64> = HashMap::new();
                    let mut list: Vec<usize> = Vec::new();
                    for prop in &element.properties {
                        if prop.list_count_ty.is_some() {
                            let n: usize = tokens
                                .next()
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| parse_err(path, 0, "bad list count"))?;
                            for _ in 0..n {
                                let v: usize = tokens
                                    .next()
                                    .and_then(|t| t.parse().ok())
                                    .ok_or_else(|| parse_err(path, 0, "bad list item"))?;
                                list.push(v);
                            }
                        } else {
                            let v: f64 = tokens
                                .next()
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| parse_err(path, 0, "bad property value"))?;
                            values.insert(prop.name.as_str(), v);
                        }
                    }
                    consume_ply_element(
                        path,
                        element,
                        &values,
                        &list,
                        &mut vertices,
                        &mut labels,
                        &mut has_labels,
                        &mut faces,
                    )?;
                }
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut pos = body_start;
            for element in &elements {
                for _ in 0..element.count {
                    let mut values: HashMap<&str, f64> = HashMap::new();
                    let mut list: Vec<usize> = Vec::new();
                    for prop in &element.properties {
                        if let Some(count_ty) = prop.list_count_ty {
                            ensure_len(path, bytes, pos + count_ty.size())?;
                            let n = count_ty.read_f64(&bytes[pos..]) as usize;
                            pos += count_ty.size();
                            for _ in 0..n {
                                ensure_len(path, bytes, pos + prop.ty.size())?;
                                list.push(prop.ty.read_f64(&bytes[pos..]) as usize);
                                pos += prop.ty.size();
                            }
                        } else {
                            ensure_len(path, bytes, pos + prop.ty.size())?;
                            values.insert(prop.name.as_str(), prop.ty.read_f64(&bytes[pos..]));
                            pos += prop.ty.size();
                        }
                    }
                    consume_ply_element(
                        path,
                        element,
                        &values,
                        &list,
                        &mut vertices,
                        &mut labels,
                        &mut has_labels,
                        &mut faces,
                    )?;
                }
            }
        }
    }

    if vertices.is_empty() || faces.is_empty() {
        return Err(SldError::Validation(format!(
            "PLY {} has no geometry",
            path.display()
        )));
    }
    let mesh = TriMesh::new(vertices, faces)?;
    if has_labels {
        mesh.with_labels(labels)
    } else {
        Ok(mesh)
    }
}

#[allow(clippy::too_many_arguments)]
fn consume_ply_element(
    path: &Path,
    element: &PlyElement,
    values: &HashMap<&str, f64>,
    list: &[usize],
    vertices: &mut Vec<Point3<f64>>,
    labels: &mut Vec<i32>,
    has_labels: &mut bool,
    faces: &mut Vec<[usize; 3]>,
) -> Result<()> {
    match element.name.as_str() {
        "vertex" => {
            let get = |k: &str| {
                values
                    .get(k)
                    .copied()
                    .ok_or_else(|| parse_err(path, 0, format!("vertex missing property {k}")))
            };
            vertices.push(point![get("x")?, get("y")?, get("z")?]);
            if let Some(&l) = values.get("label") {
                *has_labels = true;
                labels.push(l as i32);
            }
        }
        "face" => {
            if list.len() < 3 {
                return Err(parse_err(path, 0, "face with fewer than 3 indices"));
            }
            for k in 1..list.len() - 1 {
                faces.push([list[0], list[k], list[k + 1]]);
            }
        }
        _ => {} // other elements ignored
    }
    Ok(())
}

fn ensure_len(path: &Path, bytes: &[u8], needed: usize) -> Result<()> {
    if bytes.len() < needed {
        Err(parse_err(path, bytes.len() as u64, "truncated PLY body"))
    } else {
        Ok(())
    }
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn write_ply_binary(mesh: &TriMesh) -> Vec<u8> {
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", mesh.vertices.len()));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if mesh.labels.is_some() {
        header.push_str("property int label\n");
    }
    header.push_str(&format!("element face {}\n", mesh.faces.len()));
    header.push_str("property list uchar uint vertex_indices\n");
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    for (i, p) in mesh.vertices.iter().enumerate() {
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
        out.extend_from_slice(&p.z.to_le_bytes());
        if let Some(labels) = &mesh.labels {
            out.extend_from_slice(&labels[i].to_le_bytes());
        }
    }
    for &[a, b, c] in &mesh.faces {
        out.push(3);
        out.extend_from_slice(&(a as u32).to_le_bytes());
        out.extend_from_slice(&(b as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out
}
