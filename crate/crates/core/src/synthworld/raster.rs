//! Z-buffered perspective rasterizer with flat per-face colors.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::mesh::{cross, dot, normalize, sub, Texture, TriMesh, CHECKER_SHADE};
use crate::error::{ensure, Error, Result};

/// Color of pixels the mesh does not cover in reference renders.
pub const NEUTRAL_GRAY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Degrees, stored modulo 360.
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub fov: f64,
}

impl CameraPose {
    pub fn new(azimuth: f64, elevation: f64, distance: f64, fov: f64) -> Result<Self> {
        let pose = CameraPose {
            azimuth: azimuth.rem_euclid(360.0),
            elevation,
            distance,
            fov,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..360.0).contains(&self.azimuth),
            "azimuth {} outside [0,360)",
            self.azimuth
        );
        ensure!(
            (-89.0..=89.0).contains(&self.elevation),
            "elevation {} outside [-89,89]",
            self.elevation
        );
        ensure!(self.distance > 0.0 && self.distance.is_finite(), "camera distance must be positive");
        ensure!(self.fov > 0.0 && self.fov < 180.0, "fov {} outside (0,180)", self.fov);
        Ok(())
    }

    /// Camera centre in world coordinates; azimuth 0 looks down −z from +z.
    pub fn position(&self) -> [f64; 3] {
        let (az, el) = (self.azimuth.to_radians(), self.elevation.to_radians());
        [
            self.distance * el.cos() * az.sin(),
            self.distance * el.sin(),
            self.distance * el.cos() * az.cos(),
        ]
    }

    /// Unit vector from the camera towards the origin.
    pub fn forward(&self) -> [f64; 3] {
        let p = self.position();
        normalize([-p[0], -p[1], -p[2]])
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Centred intrinsics for a field of view spanning the image width.
    pub fn from_fov(fov_degrees: f64, size: (usize, usize)) -> Self {
        let (h, w) = size;
        Intrinsics {
            focal: (w as f64 / 2.0) / (fov_degrees.to_radians() / 2.0).tan(),
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    /// `h×w×3`, background pixels at [`NEUTRAL_GRAY`].
    pub image: Array3<f64>,
    /// Normalised nearness in `[0,1]` (1 = nearest point of the bounding sphere), 0 off-mesh.
    pub depth: Array2<f64>,
    pub coverage: Array2<bool>,
    /// Index of the triangle visible at each pixel.
    pub triangle: Array2<Option<usize>>,
}

/// Renders `mesh` from `pose` at centred intrinsics derived from `pose.fov`.
pub fn render_view(mesh: &TriMesh, pose: &CameraPose, size: (usize, usize)) -> Result<RenderOutput> {
    render_with(mesh, pose, Intrinsics::from_fov(pose.fov, size), size)
}

/// Renders with explicit intrinsics (used to place the object inside a frame).
pub fn render_with(
    mesh: &TriMesh,
    pose: &CameraPose,
    intr: Intrinsics,
    size: (usize, usize),
) -> Result<RenderOutput> {
    pose.validate()?;
    let (h, w) = size;
    ensure!(h >= 8 && w >= 8, "render size {h}x{w} below 8x8");
    ensure!(!mesh.triangles.is_empty(), "cannot render an empty mesh");
    let radius = mesh.bounding_radius();
    if pose.distance <= radius {
        return Err(Error::invalid(format!(
            "camera at distance {} is inside the bounding sphere (radius {radius})",
            pose.distance
        )));
    }

    let eye = pose.position();
    let fwd = pose.forward();
    let right = normalize(cross(fwd, [0.0, 1.0, 0.0]));
    let up = cross(right, fwd);
    let near = pose.distance - radius;
    let far = pose.distance + radius;

    let project = |p: [f64; 3]| {
        let q = sub(p, eye);
        let (xc, yc, zc) = (dot(q, right), dot(q, up), dot(q, fwd));
        (intr.cx + intr.focal * xc / zc, intr.cy - intr.focal * yc / zc, zc)
    };

    let mut image = Array3::from_elem((h, w, 3), NEUTRAL_GRAY);
    let mut depth = Array2::zeros((h, w));
    let mut coverage = Array2::from_elem((h, w), false);
    let mut triangle = Array2::from_elem((h, w), None);
    let mut zbuf = Array2::from_elem((h, w), f64::INFINITY);

    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let n = mesh.face_normal(tri);
        let centroid = {
            let [a, b, c] = tri.vertices.map(|i| mesh.vertices[i]);
            [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0]
        };
        if dot(n, sub(eye, centroid)) <= 0.0 {
            continue;
        }
        let v = tri.vertices.map(|i| project(mesh.vertices[i]));
        let area = edge(v[0], v[1], (v[2].0, v[2].1));
        if area.abs() < 1e-12 {
            continue;
        }
        let xmin = v.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let ymin = v.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let xmax = v.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil();
        let ymax = v.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
        if xmax < 0.0 || ymax < 0.0 {
            continue;
        }
        let xmax = (xmax as usize).min(w - 1);
        let ymax = (ymax as usize).min(h - 1);
        for y in ymin..=ymax {
            for x in xmin..=xmax {
                let pt = (x as f64 + 0.5, y as f64 + 0.5);
                let w0 = edge(v[1], v[2], pt) / area;
                let w1 = edge(v[2], v[0], pt) / area;
                let w2 = edge(v[0], v[1], pt) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // Perspective-correct interpolation through 1/z.
                let inv = [w0 / v[0].2, w1 / v[1].2, w2 / v[2].2];
                let inv_z = inv[0] + inv[1] + inv[2];
                let z = 1.0 / inv_z;
                if z >= zbuf[[y, x]] {
                    continue;
                }
                zbuf[[y, x]] = z;
                let mut color = tri.color;
                if let Texture::Checker { cell_size } = mesh.texture {
                    let u = (inv[0] * tri.uv[0][0] + inv[1] * tri.uv[1][0] + inv[2] * tri.uv[2][0]) * z
                        + mesh.texture_phase[0];
                    let vv = (inv[0] * tri.uv[0][1] + inv[1] * tri.uv[1][1] + inv[2] * tri.uv[2][1]) * z
                        + mesh.texture_phase[1];
                    let cell = cell_size as f64;
                    let parity = ((u / cell).floor() + (vv / cell).floor()) as i64;
                    if parity.rem_euclid(2) == 1 {
                        color = color.map(|c| c * CHECKER_SHADE);
                    }
                }
                for c in 0..3 {
                    image[[y, x, c]] = color[c];
                }
                depth[[y, x]] = ((far - z) / (far - near)).clamp(0.0, 1.0);
                coverage[[y, x]] = true;
                triangle[[y, x]] = Some(ti);
            }
        }
    }
    Ok(RenderOutput {
        image,
        depth,
        coverage,
        triangle,
    })
}

fn edge(a: (f64, f64, f64), b: (f64, f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}
