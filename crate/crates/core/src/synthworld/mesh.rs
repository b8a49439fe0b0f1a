//! Procedural textured primitives.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub type Rgb = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Cuboid { half_extents: [f64; 3] },
    UvSphere { radius: f64, rings: usize, sectors: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Flat,
    Checker { cell_size: u32 },
}

/// Texels along one side of a face's texture square.
pub const TEXELS_PER_FACE: f64 = 8.0;

/// Brightness factor applied to the odd cells of a checker texture.
pub const CHECKER_SHADE: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub shape: Shape,
    /// Cuboid: one color per face in the order +z, +x, −z, −x, +y, −y (cycled if
    /// shorter). Sphere: colors are spread over longitudinal sector bands.
    pub face_colors: Vec<Rgb>,
    pub texture: Texture,
}

impl MeshSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.face_colors.is_empty(), "mesh needs at least one face color");
        for c in &self.face_colors {
            ensure!(
                c.iter().all(|v| (0.0..=1.0).contains(v)),
                "face color {c:?} outside [0,1]"
            );
        }
        match &self.shape {
            Shape::Cuboid { half_extents } => ensure!(
                half_extents.iter().all(|&e| e > 0.0 && e.is_finite()),
                "cuboid half extents must be positive, got {half_extents:?}"
            ),
            Shape::UvSphere { radius, rings, sectors } => {
                ensure!(*radius > 0.0 && radius.is_finite(), "sphere radius must be positive, got {radius}");
                ensure!(*rings >= 2 && *sectors >= 3, "sphere needs rings >= 2 and sectors >= 3");
            }
        }
        if let Texture::Checker { cell_size } = self.texture {
            ensure!(cell_size >= 1, "checker cell size must be at least one texel");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triangle {
    pub vertices: [usize; 3],
    pub color: Rgb,
    /// Per-corner texture coordinates in texels.
    pub uv: [[f64; 2]; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<Triangle>,
    pub texture: Texture,
    /// Offset added to texel coordinates before the checker test.
    pub texture_phase: [f64; 2],
}

impl TriMesh {
    /// Radius of the smallest origin-centred sphere containing every vertex.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Outward normal of a triangle (counter-clockwise winding seen from outside).
    pub fn face_normal(&self, tri: &Triangle) -> [f64; 3] {
        let [a, b, c] = tri.vertices.map(|i| self.vertices[i]);
        let e1 = sub(b, a);
        let e2 = sub(c, a);
        normalize(cross(e1, e2))
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Builds the triangle mesh for `spec`. `seed` only shifts the checker phase,
/// so topology depends on `spec` alone.
pub fn make_object(spec: &MeshSpec, seed: u64) -> Result<TriMesh> {
    spec.validate()?;
    let phase = [
        (seed % 7) as f64 * 0.5,
        ((seed / 7) % 7) as f64 * 0.5,
    ];
    let mut mesh = match &spec.shape {
        Shape::Cuboid { half_extents } => cuboid(*half_extents, &spec.face_colors),
        Shape::UvSphere { radius, rings, sectors } => {
            uv_sphere(*radius, *rings, *sectors, &spec.face_colors)
        }
    };
    mesh.texture = spec.texture;
    mesh.texture_phase = phase;
    Ok(mesh)
}

fn cuboid(h: [f64; 3], colors: &[Rgb]) -> TriMesh {
    let [hx, hy, hz] = h;
    let vertices = vec![
        [-hx, -hy, -hz],
        [hx, -hy, -hz],
        [hx, hy, -hz],
        [-hx, hy, -hz],
        [-hx, -hy, hz],
        [hx, -hy, hz],
        [hx, hy, hz],
        [-hx, hy, hz],
    ];
    // Quads listed counter-clockwise from outside: +z, +x, −z, −x, +y, −y.
    let quads: [[usize; 4]; 6] = [
        [4, 5, 6, 7],
        [5, 1, 2, 6],
        [1, 0, 3, 2],
        [0, 4, 7, 3],
        [7, 6, 2, 3],
        [0, 1, 5, 4],
    ];
    let t = TEXELS_PER_FACE;
    let quad_uv = [[0.0, 0.0], [t, 0.0], [t, t], [0.0, t]];
    let mut triangles = Vec::with_capacity(12);
    for (face, q) in quads.iter().enumerate() {
        let color = colors[face % colors.len()];
        triangles.push(Triangle {
            vertices: [q[0], q[1], q[2]],
            color,
            uv: [quad_uv[0], quad_uv[1], quad_uv[2]],
        });
        triangles.push(Triangle {
            vertices: [q[0], q[2], q[3]],
            color,
            uv: [quad_uv[0], quad_uv[2], quad_uv[3]],
        });
    }
    TriMesh {
        vertices,
        triangles,
        texture: Texture::Flat,
        texture_phase: [0.0, 0.0],
    }
}

/// Number of vertices of a UV sphere: two poles plus `rings − 1` latitude circles.
pub fn uv_sphere_vertex_count(rings: usize, sectors: usize) -> usize {
    2 + (rings - 1) * sectors
}

fn uv_sphere(radius: f64, rings: usize, sectors: usize, colors: &[Rgb]) -> TriMesh {
    use std::f64::consts::PI;
    let mut vertices = vec![[0.0, radius, 0.0]];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..sectors {
            let phi = 2.0 * PI * s as f64 / sectors as f64;
            vertices.push([
                radius * theta.sin() * phi.sin(),
                radius * theta.cos(),
                radius * theta.sin() * phi.cos(),
            ]);
        }
    }
    vertices.push([0.0, -radius, 0.0]);
    let south = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * sectors + (s % sectors);
    let color_of = |s: usize| colors[s * colors.len() / sectors];
    let tex = TEXELS_PER_FACE * 4.0;
    let uv_of = |r: usize, s: usize| [tex * s as f64 / sectors as f64, tex * r as f64 / rings as f64];

    let mut triangles = Vec::new();
    for s in 0..sectors {
        // North cap, outward winding.
        triangles.push(Triangle {
            vertices: [0, ring(1, s), ring(1, s + 1)],
            color: color_of(s),
            uv: [uv_of(0, s), uv_of(1, s), uv_of(1, s + 1)],
        });
        for r in 1..rings - 1 {
            let (a, b, c, d) = (ring(r, s), ring(r + 1, s), ring(r + 1, s + 1), ring(r, s + 1));
            triangles.push(Triangle {
                vertices: [a, b, c],
                color: color_of(s),
                uv: [uv_of(r, s), uv_of(r + 1, s), uv_of(r + 1, s + 1)],
            });
            triangles.push(Triangle {
                vertices: [a, c, d],
                color: color_of(s),
                uv: [uv_of(r, s), uv_of(r + 1, s + 1), uv_of(r, s + 1)],
            });
        }
        triangles.push(Triangle {
            vertices: [south, ring(rings - 1, s + 1), ring(rings - 1, s)],
            color: color_of(s),
            uv: [uv_of(rings, s), uv_of(rings - 1, s + 1), uv_of(rings - 1, s)],
        });
    }
    TriMesh {
        vertices,
        triangles,
        texture: Texture::Flat,
        texture_phase: [0.0, 0.0],
    }
}
