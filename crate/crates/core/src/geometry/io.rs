//! OBJ and PLY (ASCII and binary little-endian) mesh IO.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{TriangleMesh, Vec3};
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
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::format(path, 0, "unknown mesh extension (expected .obj or .ply)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

/// What load-time cleaning did to a mesh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub degenerate_removed: usize,
    pub unreferenced: Vec<usize>,
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    let (mesh, report) = load_mesh_with_report(path, format)?;
    if report.degenerate_removed > 0 {
        log::warn!(
            "{}: dropped {} degenerate triangle(s)",
            path.display(),
            report.degenerate_removed
        );
    }
    if !report.unreferenced.is_empty() {
        log::warn!(
            "{}: {} vertex(es) not referenced by any triangle",
            path.display(),
            report.unreferenced.len()
        );
    }
    Ok(mesh)
}

pub fn load_mesh_with_report(path: &Path, format: MeshFormat) -> Result<(TriangleMesh, LoadReport)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (vertices, normals, triangles) = match format {
        MeshFormat::Obj => parse_obj(path, &bytes)?,
        MeshFormat::Ply => parse_ply(path, &bytes)?,
    };
    if vertices.is_empty() || triangles.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: mesh has {} vertices and {} triangles",
            path.display(),
            vertices.len(),
            triangles.len()
        )));
    }
    let mut mesh = TriangleMesh::new(vertices, triangles)?;
    let degenerate_removed = mesh.drop_degenerate();
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: all triangles are degenerate",
            path.display()
        )));
    }
    let unreferenced = mesh.unreferenced_vertices();
    mesh.compute_normals();
    // Normals stored in the file are kept only when they cover every vertex.
    if let Some(n) = normals.filter(|n| n.len() == mesh.vertices.len()) {
        mesh.vertex_normals = Some(n);
    }
    Ok((
        mesh,
        LoadReport {
            degenerate_removed,
            unreferenced,
        },
    ))
}

pub fn save_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<()> {
    save_mesh_with(mesh, path, format, PlyEncoding::Ascii)
}

pub fn save_mesh_with(
    mesh: &TriangleMesh,
    path: &Path,
    format: MeshFormat,
    encoding: PlyEncoding,
) -> Result<()> {
    if mesh.vertices.is_empty() || mesh.triangles.is_empty() {
        return Err(Error::EmptyInput(format!(
            "refusing to write {} with {} triangles",
            path.display(),
            mesh.triangles.len()
        )));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        MeshFormat::Obj => write_obj(mesh, &mut w),
        MeshFormat::Ply => write_ply(mesh, &mut w, encoding),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Plain decimal with 9 significant digits, trailing zeros trimmed.
pub fn format_coord(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { x.to_string() };
    }
    let sci = format!("{:.8e}", x);
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    let prec = (8 - exp).max(0) as usize;
    let mut s = format!("{:.*}", prec, x);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

type Parsed = (Vec<Vec3>, Option<Vec<Vec3>>, Vec<[usize; 3]>);

fn parse_f64(path: &Path, line: usize, tok: Option<&str>) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::format(path, line, "missing coordinate"))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::format(path, line, format!("invalid number '{tok}'")))?;
    if !v.is_finite() {
        return Err(Error::format(path, line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

fn parse_obj(path: &Path, bytes: &[u8]) -> Result<Parsed> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format(path, 0, "not UTF-8 text"))?;
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut triangles = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(path, line_no, toks.next())?;
                let y = parse_f64(path, line_no, toks.next())?;
                let z = parse_f64(path, line_no, toks.next())?;
                vertices.push(Vec3::new(x, y, z));
            }
            Some("vn") => {
                let x = parse_f64(path, line_no, toks.next())?;
                let y = parse_f64(path, line_no, toks.next())?;
                let z = parse_f64(path, line_no, toks.next())?;
                normals.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let idx = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|_| {
                            Error::format(path, line_no, format!("invalid face index '{t}'"))
                        })?;
                        let n = vertices.len() as i64;
                        let resolved = if i > 0 { i - 1 } else { n + i };
                        if i == 0 || resolved < 0 || resolved >= n {
                            return Err(Error::format(
                                path,
                                line_no,
                                format!("face index {i} out of range"),
                            ));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(Error::format(path, line_no, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let normals = (!normals.is_empty()).then_some(normals);
    Ok((vertices, normals, triangles))
}

fn write_obj(mesh: &TriangleMesh, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "# units: mm")?;
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", format_coord(v.x), format_coord(v.y), format_coord(v.z))?;
    }
    if let Some(normals) = &mesh.vertex_normals {
        for n in normals {
            writeln!(w, "vn {} {} {}", format_coord(n.x), format_coord(n.y), format_coord(n.z))?;
        }
        for [a, b, c] in &mesh.triangles {
            writeln!(w, "f {0}//{0} {1}//{1} {2}//{2}", a + 1, b + 1, c + 1)?;
        }
    } else {
        for [a, b, c] in &mesh.triangles {
            writeln!(w, "f {} {} {}", a + 1, b + 1, c + 1)?;
        }
    }
    Ok(())
}

fn write_ply(mesh: &TriangleMesh, w: &mut impl Write, encoding: PlyEncoding) -> std::io::Result<()> {
    let normals = mesh.vertex_normals.as_ref();
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let scalar = match encoding {
        PlyEncoding::Ascii => "float",
        PlyEncoding::BinaryLittleEndian => "double",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {fmt} 1.0")?;
    writeln!(w, "comment units: mm")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property {scalar} {p}")?;
    }
    if normals.is_some() {
        for p in ["nx", "ny", "nz"] {
            writeln!(w, "property {scalar} {p}")?;
        }
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    match encoding {
        PlyEncoding::Ascii => {
            for (i, v) in mesh.vertices.iter().enumerate() {
                write!(w, "{} {} {}", format_coord(v.x), format_coord(v.y), format_coord(v.z))?;
                if let Some(n) = normals {
                    let n = n[i];
                    write!(w, " {} {} {}", format_coord(n.x), format_coord(n.y), format_coord(n.z))?;
                }
                writeln!(w)?;
            }
            for [a, b, c] in &mesh.triangles {
                writeln!(w, "3 {a} {b} {c}")?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for (i, v) in mesh.vertices.iter().enumerate() {
                for x in v.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
                if let Some(n) = normals {
                    for x in n[i].iter() {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
            for tri in &mesh.triangles {
                w.write_all(&[3u8])?;
                for &i in tri {
                    w.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<Parsed> {
    // Header is ASCII up to and including the `end_header` line.
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|e| *pos + e)
            .unwrap_or(bytes.len());
        let line = String::from_utf8_lossy(&bytes[*pos..end]).trim().to_string();
        *pos = (end + 1).min(bytes.len());
        line_no += 1;
        Some((line_no, line))
    };

    let (ln, magic) = next_line(&mut pos).ok_or_else(|| Error::format(path, 1, "empty file"))?;
    if magic != "ply" {
        return Err(Error::format(path, ln, "missing 'ply' magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut last_line = ln;
    loop {
        let (ln, line) =
            next_line(&mut pos).ok_or_else(|| Error::format(path, last_line, "unterminated header"))?;
        last_line = ln;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => {
                return Err(Error::format(path, ln, format!("unsupported PLY format '{other}'")))
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::format(path, ln, "invalid element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let (Some(ct), Some(it)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return Err(Error::format(path, ln, "unknown list property type"));
                };
                elements
                    .last_mut()
                    .ok_or_else(|| Error::format(path, ln, "property before element"))?
                    .props
                    .push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::format(path, ln, format!("unknown property type '{ty}'")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::format(path, ln, "property before element"))?
                    .props
                    .push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| Error::format(path, last_line, "missing format line"))?;

    let mut vertices = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut has_normals = false;
    let mut triangles = Vec::new();

    let mut body = PlyBody {
        path,
        bytes,
        pos,
        binary,
        line: last_line,
        tokens: Vec::new(),
    };

    for el in &elements {
        let idx_of = |n: &str| {
            el.props.iter().position(|p| matches!(p, Property::Scalar(name, _) if name == n))
        };
        let xyz = [idx_of("x"), idx_of("y"), idx_of("z")];
        let nxyz = [idx_of("nx"), idx_of("ny"), idx_of("nz")];
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex && xyz.iter().any(Option::is_none) {
            return Err(Error::format(path, last_line, "vertex element lacks x/y/z"));
        }
        if is_vertex {
            has_normals = nxyz.iter().all(Option::is_some);
        }
        for _ in 0..el.count {
            body.begin_record()?;
            let mut scalars = vec![0.0; el.props.len()];
            let mut face: Option<Vec<usize>> = None;
            for (k, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar(_, ty) => scalars[k] = body.read(*ty)?,
                    Property::List(name, ct, it) => {
                        let n = body.read(*ct)?;
                        if n < 0.0 {
                            return Err(body.error("negative list length"));
                        }
                        let list = (0..n as usize)
                            .map(|_| body.read(*it))
                            .collect::<Result<Vec<f64>>>()?;
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            face = Some(
                                list.into_iter()
                                    .map(|x| {
                                        if x < 0.0 || x as usize >= vertices.len() && is_face {
                                            Err(body.error(format!("face index {x} out of range")))
                                        } else {
                                            Ok(x as usize)
                                        }
                                    })
                                    .collect::<Result<Vec<_>>>()?,
                            );
                        }
                    }
                }
            }
            if is_vertex {
                let get = |o: Option<usize>| o.map(|i| scalars[i]).unwrap_or(0.0);
                let v = Vec3::new(get(xyz[0]), get(xyz[1]), get(xyz[2]));
                if !v.iter().all(|c| c.is_finite()) {
                    return Err(body.error("non-finite vertex coordinate"));
                }
                vertices.push(v);
                if has_normals {
                    normals.push(Vec3::new(get(nxyz[0]), get(nxyz[1]), get(nxyz[2])));
                }
            }
            if let Some(f) = face {
                if f.len() < 3 {
                    return Err(body.error("face needs at least 3 vertices"));
                }
                for k in 1..f.len() - 1 {
                    triangles.push([f[0], f[k], f[k + 1]]);
                }
            }
            body.end_record()?;
        }
    }
    let normals = has_normals.then_some(normals);
    Ok((vertices, normals, triangles))
}

struct PlyBody<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    binary: bool,
    line: usize,
    tokens: Vec<String>,
}

impl PlyBody<'_> {
    fn error(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, self.line, msg)
    }

    fn begin_record(&mut self) -> Result<()> {
        if self.binary {
            return Ok(());
        }
        loop {
            if self.pos >= self.bytes.len() {
                return Err(self.error("unexpected end of file"));
            }
            let end = self.bytes[self.pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|e| self.pos + e)
                .unwrap_or(self.bytes.len());
            let line = String::from_utf8_lossy(&self.bytes[self.pos..end]).to_string();
            self.pos = end + 1;
            self.line += 1;
            let toks: Vec<String> = line.split_whitespace().rev().map(str::to_string).collect();
            if !toks.is_empty() {
                self.tokens = toks;
                return Ok(());
            }
        }
    }

    fn end_record(&mut self) -> Result<()> {
        Ok(())
    }

    fn read(&mut self, ty: Scalar) -> Result<f64> {
        if self.binary {
            let n = ty.size();
            if self.pos + n > self.bytes.len() {
                return Err(self.error("unexpected end of binary data"));
            }
            let v = ty.read_le(&self.bytes[self.pos..self.pos + n]);
            self.pos += n;
            Ok(v)
        } else {
            let tok = self.tokens.pop().ok_or_else(|| self.error("too few values in record"))?;
            tok.parse::<f64>()
                .map_err(|_| self.error(format!("invalid number '{tok}'")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::uv_sphere;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    fn tetra() -> TriangleMesh {
        TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
            vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
        )
        .unwrap()
    }

    #[test]
    fn minimal_obj() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
        let m = load_mesh(&p, MeshFormat::Obj).unwrap();
        assert_eq!((m.vertex_count(), m.triangle_count()), (3, 1));
    }

    #[test]
    fn zero_area_face_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.obj",
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n",
        );
        let (m, report) = load_mesh_with_report(&p, MeshFormat::Obj).unwrap();
        assert_eq!(report.degenerate_removed, 1);
        assert_eq!(report.unreferenced, vec![3]);
        assert_eq!(m.vertex_count(), 4);
        assert_eq!(m.triangle_count(), 1);
    }

    #[test]
    fn parse_error_carries_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.obj", "v 0 0 0\nv 1 zero 0\n");
        match load_mesh(&p, MeshFormat::Obj) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_mesh_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.obj", "# nothing\n");
        assert!(matches!(load_mesh(&p, MeshFormat::Obj), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn quads_are_fanned() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "q.obj",
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1 -1/1\n",
        );
        let m = load_mesh(&p, MeshFormat::Obj).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn tetra_round_trip_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = tetra().with_normals();
        for (name, fmt, enc) in [
            ("t.obj", MeshFormat::Obj, PlyEncoding::Ascii),
            ("t.ply", MeshFormat::Ply, PlyEncoding::Ascii),
            ("tb.ply", MeshFormat::Ply, PlyEncoding::BinaryLittleEndian),
        ] {
            let p = dir.path().join(name);
            save_mesh_with(&mesh, &p, fmt, enc).unwrap();
            let back = load_mesh(&p, fmt).unwrap();
            assert_eq!(back.vertices, mesh.vertices);
            assert_eq!(back.triangles, mesh.triangles);
        }
    }

    #[test]
    fn ply_with_normals_has_normal_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.ply");
        save_mesh(&tetra().with_normals(), &p, MeshFormat::Ply).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("property float nx"));
        assert!(text.contains("property float nz"));
    }

    #[test]
    fn save_empty_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TriangleMesh::new(vec![Vec3::zeros()], vec![]).unwrap();
        let err = save_mesh(&mesh, &dir.path().join("e.obj"), MeshFormat::Obj).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = save_mesh(&tetra(), Path::new("/nonexistent/dir/x.obj"), MeshFormat::Obj)
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_coord(0.0), "0");
        assert_eq!(format_coord(1.0), "1");
        assert_eq!(format_coord(-0.5), "-0.5");
        assert_eq!(format_coord(123.456789012345), "123.456789");
        assert_eq!(format_coord(9.9999999999), "10");
        assert_eq!(format_coord(1.23456789012e-5), "0.0000123456789");
    }

    #[test]
    fn save_load_is_idempotent_bitwise() {
        // load ∘ save ∘ load reproduces the first load exactly.
        let dir = tempfile::tempdir().unwrap();
        let mut sphere = uv_sphere(10, 13);
        for v in &mut sphere.vertices {
            *v *= 123.456789123;
        }
        let p1 = dir.path().join("s1.obj");
        save_mesh(&sphere, &p1, MeshFormat::Obj).unwrap();
        let first = load_mesh(&p1, MeshFormat::Obj).unwrap();
        let p2 = dir.path().join("s2.obj");
        save_mesh(&first, &p2, MeshFormat::Obj).unwrap();
        let second = load_mesh(&p2, MeshFormat::Obj).unwrap();
        assert_eq!(first.vertices, second.vertices);
        assert_eq!(first.triangles, second.triangles);
    }
}
