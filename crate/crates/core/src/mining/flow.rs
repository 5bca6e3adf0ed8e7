//! Dense displacement fields and pose transfer along a shot.
//!
//! A field stores one displacement per pixel center, with pixel `(i, j)` at
//! coordinates `(i, j)`. Sampling between centers is bilinear; outside the
//! grid the border cells are extended linearly, which keeps affine motion
//! (pans, zooms, small rotations) exact everywhere.
//!
//! Accumulation is forward: a point in the first frame is pushed through each
//! field in order, so the composed field maps the first frame onto the last.

use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::dataset::{in_frame, AffordanceRecord, Source};
use crate::error::{Error, Result};
use crate::pose::{Point, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

const FLOW_MAGIC: &[u8; 4] = b"AFFL";

impl FlowField {
    pub fn new(width: u32, height: u32, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        let n = width as usize * height as usize;
        if width < 2 || height < 2 {
            return Err(Error::Shape(format!("flow field {width}x{height} is smaller than 2x2")));
        }
        if dx.len() != n || dy.len() != n {
            return Err(Error::Shape(format!("{width}x{height} field needs {n} displacements per axis")));
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature("non-finite flow displacement".into()));
        }
        Ok(Self { width, height, dx, dy })
    }

    pub fn zeros(width: u32, height: u32) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::new(width, height, vec![0.0; n], vec![0.0; n])
    }

    /// Field whose displacement at pixel center `p` is `f(p)`.
    pub fn from_fn(width: u32, height: u32, f: impl Fn(Point) -> (f64, f64)) -> Result<Self> {
        let n = width as usize * height as usize;
        let (mut dx, mut dy) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for j in 0..height {
            for i in 0..width {
                let (a, b) = f(Point::new(f64::from(i), f64::from(j)));
                dx.push(a);
                dy.push(b);
            }
        }
        Self::new(width, height, dx, dy)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Displacement stored at pixel center `(i, j)`.
    pub fn at(&self, i: u32, j: u32) -> (f64, f64) {
        let k = j as usize * self.width as usize + i as usize;
        (self.dx[k], self.dy[k])
    }

    /// Bilinear displacement at `p`, linearly extrapolated past the border.
    pub fn sample(&self, p: Point) -> (f64, f64) {
        let cell = |v: f64, n: u32| {
            let i0 = v.floor().clamp(0.0, f64::from(n - 2));
            (i0 as u32, v - i0)
        };
        let (i, tx) = cell(p.x, self.width);
        let (j, ty) = cell(p.y, self.height);
        let lerp = |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        let top = lerp(self.at(i, j), self.at(i + 1, j), tx);
        let bottom = lerp(self.at(i, j + 1), self.at(i + 1, j + 1), tx);
        lerp(top, bottom, ty)
    }

    pub fn warp(&self, p: Point) -> Point {
        let (dx, dy) = self.sample(p);
        Point::new(p.x + dx, p.y + dy)
    }

    /// Layout (little-endian): magic `AFFL`, u32 version (1), u32 width,
    /// u32 height, then width*height (dx, dy) pairs of f32 in row-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.dx.len() * 8);
        out.extend_from_slice(FLOW_MAGIC);
        out.write_u32::<LittleEndian>(1).unwrap();
        out.write_u32::<LittleEndian>(self.width).unwrap();
        out.write_u32::<LittleEndian>(self.height).unwrap();
        for (a, b) in self.dx.iter().zip(&self.dy) {
            out.write_f32::<LittleEndian>(*a as f32).unwrap();
            out.write_f32::<LittleEndian>(*b as f32).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(path, 0, m);
        if bytes.len() < 16 || &bytes[..4] != FLOW_MAGIC {
            return Err(bad("not a flow file".into()));
        }
        let mut r = &bytes[4..];
        let version = r.read_u32::<LittleEndian>().unwrap();
        if version != 1 {
            return Err(bad(format!("unsupported flow version {version}")));
        }
        let width = r.read_u32::<LittleEndian>().unwrap();
        let height = r.read_u32::<LittleEndian>().unwrap();
        let n = width as usize * height as usize;
        if r.len() != n * 8 {
            return Err(bad(format!("{width}x{height} field needs {} bytes, found {}", n * 8, r.len())));
        }
        let (mut dx, mut dy) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            dx.push(f64::from(r.read_f32::<LittleEndian>().unwrap()));
            dy.push(f64::from(r.read_f32::<LittleEndian>().unwrap()));
        }
        Self::new(width, height, dx, dy).map_err(|e| bad(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Composes `flows` in order: the result maps each pixel center of the first
/// frame to where it lands after every field has been applied.
pub fn accumulate_flow(flows: &[FlowField]) -> Result<FlowField> {
    let first = flows.first().ok_or(Error::EmptyInput("flow sequence"))?;
    let (w, h) = (first.width, first.height);
    if let Some(f) = flows.iter().find(|f| (f.width, f.height) != (w, h)) {
        return Err(Error::Shape(format!("flow {}x{} in a {w}x{h} sequence", f.width, f.height)));
    }
    FlowField::from_fn(w, h, |p| {
        let q = flows.iter().fold(p, |q, f| f.warp(q));
        (q.x - p.x, q.y - p.y)
    })
}

/// Where a transferred pose lands.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFrame {
    pub scene_id: String,
    pub show: String,
    pub image: String,
    pub width: u32,
    pub height: u32,
}

/// Moves every joint through `field` and builds a hypothesis in `target`
/// anchored at the warped bbox center. Joints that leave the frame set the
/// `out_of_frame` flag instead of failing.
pub fn transfer_pose(pose: &Pose, field: &FlowField, target: &TargetFrame, source: Source, id: u64) -> Result<AffordanceRecord> {
    let warped = Pose::new(pose.joints().iter().map(|&p| field.warp(p)).collect())?;
    let mut r = AffordanceRecord::hypothesis(
        id,
        &target.scene_id,
        &target.show,
        &target.image,
        [target.width, target.height],
        warped,
        source,
    );
    r.out_of_frame = !in_frame(&r.pose, target.width, target.height);
    Ok(r)
}
