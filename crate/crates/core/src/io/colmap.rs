//! COLMAP text model files: `cameras.txt`, `images.txt`, `points3D.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scene::{Intrinsics, Pose, SparsePoints};

/// One `images.txt` entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub image_id: u32,
    /// `(w, x, y, z)`, world to camera.
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
    pub camera_id: u32,
    pub name: String,
}

impl ImageEntry {
    pub fn pose(&self) -> Result<Pose> {
        Pose::from_quat_translation(self.quaternion, self.translation)
    }
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { file: file.to_string(), line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(tok: &str, file: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| parse_err(file, line, format!("bad {what} '{tok}'")))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
}

/// Parses `cameras.txt`; only `PINHOLE` and `SIMPLE_PINHOLE` are accepted.
pub fn parse_cameras(text: &str) -> Result<BTreeMap<u32, Intrinsics>> {
    const FILE: &str = "cameras.txt";
    let mut out = BTreeMap::new();
    for (ln, line) in content_lines(text) {
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 4 {
            return Err(parse_err(FILE, ln, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]"));
        }
        let id: u32 = num(t[0], FILE, ln, "camera id")?;
        let width: usize = num(t[2], FILE, ln, "width")?;
        let height: usize = num(t[3], FILE, ln, "height")?;
        let params: Vec<f64> = t[4..].iter().map(|s| num(s, FILE, ln, "parameter")).collect::<Result<_>>()?;
        let (fx, fy, cx, cy) = match (t[1], params.as_slice()) {
            ("PINHOLE", [fx, fy, cx, cy]) => (*fx, *fy, *cx, *cy),
            ("SIMPLE_PINHOLE", [f, cx, cy]) => (*f, *f, *cx, *cy),
            ("PINHOLE" | "SIMPLE_PINHOLE", _) => {
                return Err(parse_err(FILE, ln, format!("wrong parameter count for {}", t[1])))
            }
            (model, _) => return Err(Error::UnsupportedModel(model.to_string())),
        };
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        if out.insert(id, k).is_some() {
            return Err(parse_err(FILE, ln, format!("duplicate camera id {id}")));
        }
    }
    Ok(out)
}

/// Parses `images.txt`: a pose line followed by a (possibly empty) 2D point
/// line per image.
pub fn parse_images(text: &str) -> Result<Vec<ImageEntry>> {
    const FILE: &str = "images.txt";
    let mut out = Vec::new();
    let mut lines = content_lines(text);
    while let Some((ln, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 10 {
            return Err(parse_err(FILE, ln, "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"));
        }
        let f = |i: usize, what: &str| num::<f64>(t[i], FILE, ln, what);
        out.push(ImageEntry {
            image_id: num(t[0], FILE, ln, "image id")?,
            quaternion: [f(1, "qw")?, f(2, "qx")?, f(3, "qy")?, f(4, "qz")?],
            translation: [f(5, "tx")?, f(6, "ty")?, f(7, "tz")?],
            camera_id: num(t[8], FILE, ln, "camera id")?,
            name: t[9..].join(" "),
        });
        lines.next();
    }
    Ok(out)
}

/// Parses `points3D.txt`, keeping positions and colours.
pub fn parse_points(text: &str) -> Result<SparsePoints> {
    const FILE: &str = "points3D.txt";
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    for (ln, line) in content_lines(text) {
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 7 {
            return Err(parse_err(FILE, ln, "expected POINT3D_ID X Y Z R G B ..."));
        }
        positions.push([num(t[1], FILE, ln, "x")?, num(t[2], FILE, ln, "y")?, num(t[3], FILE, ln, "z")?]);
        colors.push([num(t[4], FILE, ln, "r")?, num(t[5], FILE, ln, "g")?, num(t[6], FILE, ln, "b")?]);
    }
    Ok(SparsePoints { positions, colors: Some(colors) })
}

pub fn write_cameras(cameras: &BTreeMap<u32, Intrinsics>) -> String {
    let mut s = String::from("# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    for (id, k) in cameras {
        let _ = writeln!(s, "{id} PINHOLE {} {} {} {} {} {}", k.width, k.height, k.fx, k.fy, k.cx, k.cy);
    }
    s
}

pub fn write_images(images: &[ImageEntry]) -> String {
    let mut s = String::from("# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for e in images {
        let [qw, qx, qy, qz] = e.quaternion;
        let [tx, ty, tz] = e.translation;
        let _ = writeln!(s, "{} {qw} {qx} {qy} {qz} {tx} {ty} {tz} {} {}\n", e.image_id, e.camera_id, e.name);
    }
    s
}

pub fn write_points(points: &SparsePoints) -> String {
    let mut s = String::from("# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n");
    for (i, p) in points.positions.iter().enumerate() {
        let c = points.colors.as_ref().and_then(|c| c.get(i)).copied().unwrap_or([128, 128, 128]);
        let _ = writeln!(s, "{} {} {} {} {} {} {} 0", i + 1, p[0], p[1], p[2], c[0], c[1], c[2]);
    }
    s
}
