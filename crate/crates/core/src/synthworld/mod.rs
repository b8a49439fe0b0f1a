//! Procedural world: textured primitives, a software rasterizer, video clips
//! with exact masks, boxes and depth, multi-view reference renders and their
//! corruption.

mod background;
mod corrupt;
mod dataset;
mod mesh;
mod prompt;
mod raster;

use ndarray::{s, Array2, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use background::Background;
pub use corrupt::{corrupt_views, fill_hole, gaussian_blur, sample_bilinear, sinusoid_warp, CorruptionConfig};
pub use dataset::{random_scene, write_frames, Dataset, DatasetItem, WorldConfig};
pub(crate) use dataset::{read_json, write_json};
pub use mesh::{make_object, uv_sphere_vertex_count, MeshSpec, CHECKER_SHADE, Rgb, Shape, Texture, TriMesh, Triangle};
pub use prompt::{color_name, prompt_for, PALETTE};
pub use raster::{render_view, render_with, CameraPose, Intrinsics, RenderOutput, NEUTRAL_GRAY};

use crate::error::{ensure, Error, Result};

/// Nearness assigned to background pixels in clip depth maps.
pub const BACKGROUND_DEPTH: f64 = 0.1;
/// Object nearness spans `[OBJECT_NEAR_MIN, OBJECT_NEAR_MAX]` in clip depth maps.
pub const OBJECT_NEAR_MIN: f64 = 0.3;
pub const OBJECT_NEAR_MAX: f64 = 0.7;
/// Nearness of the object's centre; occluders must be nearer than this.
pub const OBJECT_CENTER_NEARNESS: f64 = 0.5;

/// Camera distance for clip frames and reference renders.
pub const CAMERA_DISTANCE: f64 = 4.0;
/// Field of view of reference renders.
pub const REFERENCE_FOV: f64 = 50.0;

/// Inclusive pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    /// Tight bounding box of the set pixels, `None` for an empty mask.
    pub fn of_mask(mask: ndarray::ArrayView2<bool>) -> Option<BBox> {
        let mut b: Option<BBox> = None;
        for ((y, x), &m) in mask.indexed_iter() {
            if !m {
                continue;
            }
            b = Some(match b {
                None => BBox { x_min: x, y_min: y, x_max: x, y_max: y },
                Some(b) => BBox {
                    x_min: b.x_min.min(x),
                    y_min: b.y_min.min(y),
                    x_max: b.x_max.max(x),
                    y_max: b.y_max.max(y),
                },
            });
        }
        b
    }

    pub fn area(&self) -> usize {
        (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)
    }

    pub fn intersection_area(&self, other: &BBox) -> usize {
        let x0 = self.x_min.max(other.x_min);
        let y0 = self.y_min.max(other.y_min);
        let x1 = self.x_max.min(other.x_max);
        let y1 = self.y_max.min(other.y_max);
        if x0 > x1 || y0 > y1 {
            0
        } else {
            (x1 - x0 + 1) * (y1 - y0 + 1)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Pixel coordinates `(x, y)` of the object centre.
    pub center: [f64; 2],
    /// Focal length in units of the frame width.
    pub scale: f64,
    pub azimuth: f64,
}

/// A static vertical band drawn in front of (or behind) the object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub x_min: usize,
    pub x_max: usize,
    pub color: Rgb,
    /// Nearness in depth-map units (1 = nearest).
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub background: Background,
    pub object: MeshSpec,
    #[serde(default)]
    pub mesh_seed: u64,
    pub trajectory: Vec<TrajectoryPoint>,
    /// `(H, W)`
    pub frame_size: (usize, usize),
    pub frame_count: usize,
    #[serde(default)]
    pub occluder: Option<Occluder>,
    #[serde(default = "default_elevation")]
    pub elevation: f64,
    #[serde(default = "default_views")]
    pub n_views: usize,
}

fn default_elevation() -> f64 {
    15.0
}

fn default_views() -> usize {
    4
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.object.validate()?;
        let (h, w) = self.frame_size;
        ensure!(h >= 8 && w >= 8, "frame size {h}x{w} below 8x8");
        ensure!(self.frame_count >= 2, "a clip needs at least two frames");
        ensure!(
            self.trajectory.len() == self.frame_count,
            "trajectory has {} points for {} frames",
            self.trajectory.len(),
            self.frame_count
        );
        for (t, p) in self.trajectory.iter().enumerate() {
            ensure!(
                p.center[0] >= 0.0 && p.center[0] < w as f64 && p.center[1] >= 0.0 && p.center[1] < h as f64,
                "trajectory leaves the frame at t = {t}: centre {:?}",
                p.center
            );
            ensure!(p.scale > 0.0 && p.scale.is_finite(), "scale must be positive at t = {t}");
        }
        if let Some(o) = &self.occluder {
            ensure!(o.x_min <= o.x_max && o.x_max < w, "occluder band outside the frame");
            ensure!(
                o.depth > OBJECT_CENTER_NEARNESS && o.depth <= 1.0,
                "occluder nearness {} must exceed the object's {OBJECT_CENTER_NEARNESS}",
                o.depth
            );
            ensure!(o.color.iter().all(|c| (0.0..=1.0).contains(c)), "occluder color outside [0,1]");
        }
        ensure!(self.n_views >= 1, "n_views must be at least 1");
        ensure!((-89.0..=89.0).contains(&self.elevation), "elevation outside [-89,89]");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    /// `T×H×W×3` in `[0,1]`.
    pub frames: Array4<f64>,
    /// `T×H×W`, set where the object is the front-most surface.
    pub masks: Array3<bool>,
    pub boxes: Vec<BBox>,
    /// `T×H×W` nearness in `[0,1]`.
    pub depth: Array3<f64>,
    pub prompt: String,
}

impl VideoClip {
    pub fn frame_count(&self) -> usize {
        self.frames.dim().0
    }

    pub fn frame_size(&self) -> (usize, usize) {
        let (_, h, w, _) = self.frames.dim();
        (h, w)
    }

    pub fn masks_f64(&self) -> Array3<f64> {
        self.masks.mapv(|m| m as u8 as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewReferenceSet {
    /// `N×h×w×3` in `[0,1]`.
    pub images: Array4<f64>,
    pub azimuths: Vec<f64>,
    pub corrupted_flags: Vec<bool>,
}

impl MultiViewReferenceSet {
    pub fn len(&self) -> usize {
        self.azimuths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.azimuths.is_empty()
    }

    pub fn view(&self, i: usize) -> Array3<f64> {
        self.images.slice(s![i, .., .., ..]).to_owned()
    }

    pub fn set_view(&mut self, i: usize, img: &Array3<f64>) {
        self.images.slice_mut(s![i, .., .., ..]).assign(img);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.images.dim().0;
        ensure!(n >= 1, "a reference set needs at least one view");
        ensure!(
            self.azimuths.len() == n && self.corrupted_flags.len() == n,
            "reference set has {n} images, {} azimuths, {} flags",
            self.azimuths.len(),
            self.corrupted_flags.len()
        );
        ensure!(
            self.azimuths.iter().all(|a| (0.0..360.0).contains(a)),
            "azimuths must lie in [0,360)"
        );
        ensure!(
            self.azimuths.windows(2).all(|w| w[0] < w[1]),
            "azimuths must be strictly increasing"
        );
        ensure!(self.images.iter().all(|v| v.is_finite()), "reference images must be finite");
        Ok(())
    }
}

/// Uniform panoramic azimuths `k·360/n`.
pub fn panoramic_azimuths(n_views: usize) -> Result<Vec<f64>> {
    ensure!(n_views >= 1, "n_views must be at least 1");
    Ok((0..n_views).map(|k| k as f64 * 360.0 / n_views as f64).collect())
}

/// Renders `n_views` references at azimuths `k·360/n` on a neutral background.
pub fn render_multiview(
    mesh: &TriMesh,
    n_views: usize,
    elevation: f64,
    distance: f64,
    size: (usize, usize),
) -> Result<MultiViewReferenceSet> {
    render_multiview_from(mesh, 0.0, n_views, elevation, distance, size)
}

/// As [`render_multiview`] with azimuths measured from `base_azimuth`: view
/// `k` is rendered at `base + k·360/n` and labelled `k·360/n`.
pub fn render_multiview_from(
    mesh: &TriMesh,
    base_azimuth: f64,
    n_views: usize,
    elevation: f64,
    distance: f64,
    size: (usize, usize),
) -> Result<MultiViewReferenceSet> {
    let azimuths = panoramic_azimuths(n_views)?;
    let (h, w) = size;
    let mut images = Array4::zeros((n_views, h, w, 3));
    for (k, &az) in azimuths.iter().enumerate() {
        let pose = CameraPose::new(base_azimuth + az, elevation, distance, REFERENCE_FOV)?;
        let out = render_view(mesh, &pose, size)?;
        images.slice_mut(s![k, .., .., ..]).assign(&out.image);
    }
    Ok(MultiViewReferenceSet {
        images,
        azimuths,
        corrupted_flags: vec![false; n_views],
    })
}

/// Reference frame index: the frame farthest in time from frame 0.
pub fn select_reference_frame(clip: &VideoClip) -> Result<usize> {
    reference_frame_index(clip.frame_count())
}

pub fn reference_frame_index(frame_count: usize) -> Result<usize> {
    ensure!(frame_count >= 1, "cannot select a reference frame from an empty clip");
    Ok(frame_count - 1)
}

/// Output of [`synth_clip`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub clip: VideoClip,
    /// Panoramic references around the object's orientation in the reference frame.
    pub references: MultiViewReferenceSet,
    /// The object-free video (background and occluder only).
    pub background: Array4<f64>,
}

/// Per-frame render of the object alone, before compositing.
pub struct ObjectLayer {
    pub image: Array3<f64>,
    pub nearness: Array2<f64>,
    pub coverage: Array2<bool>,
}

pub fn render_object_layer(mesh: &TriMesh, scene: &SceneConfig, t: usize) -> Result<ObjectLayer> {
    let (h, w) = scene.frame_size;
    let p = scene.trajectory[t];
    let pose = CameraPose::new(p.azimuth, scene.elevation, CAMERA_DISTANCE, 40.0)?;
    let intr = Intrinsics {
        focal: p.scale * w as f64,
        cx: p.center[0],
        cy: p.center[1],
    };
    let out = render_with(mesh, &pose, intr, (h, w))?;
    let nearness = out
        .depth
        .mapv(|d| OBJECT_NEAR_MIN + (OBJECT_NEAR_MAX - OBJECT_NEAR_MIN) * d);
    Ok(ObjectLayer {
        image: out.image,
        nearness,
        coverage: out.coverage,
    })
}

/// Renders a clip: the object at each trajectory pose, z-composited against
/// the background and the optional occluder.
pub fn synth_clip<R: Rng>(scene: &SceneConfig, rng: &mut R) -> Result<SynthClip> {
    scene.validate()?;
    let (h, w) = scene.frame_size;
    let t_count = scene.frame_count;
    let mesh = make_object(&scene.object, scene.mesh_seed)?;
    let bg = scene.background.render(scene.frame_size);

    let mut frames = Array4::zeros((t_count, h, w, 3));
    let mut background = Array4::zeros((t_count, h, w, 3));
    let mut masks = Array3::from_elem((t_count, h, w), false);
    let mut depth = Array3::zeros((t_count, h, w));
    let mut boxes = Vec::with_capacity(t_count);

    for t in 0..t_count {
        let layer = render_object_layer(&mesh, scene, t)?;
        for y in 0..h {
            for x in 0..w {
                let mut color = [bg[[y, x, 0]], bg[[y, x, 1]], bg[[y, x, 2]]];
                let mut near = BACKGROUND_DEPTH;
                if let Some(o) = &scene.occluder {
                    if (o.x_min..=o.x_max).contains(&x) {
                        color = o.color;
                        near = o.depth;
                    }
                }
                for c in 0..3 {
                    background[[t, y, x, c]] = color[c];
                }
                if layer.coverage[[y, x]] && layer.nearness[[y, x]] > near {
                    color = [0, 1, 2].map(|c| layer.image[[y, x, c]]);
                    near = layer.nearness[[y, x]];
                    masks[[t, y, x]] = true;
                }
                for c in 0..3 {
                    frames[[t, y, x, c]] = color[c];
                }
                depth[[t, y, x]] = near;
            }
        }
        let b = BBox::of_mask(masks.slice(s![t, .., ..])).ok_or_else(|| {
            Error::invalid(format!("object is not visible in frame {t}"))
        })?;
        boxes.push(b);
    }

    let ref_t = reference_frame_index(t_count)?;
    let references = render_multiview_from(
        &mesh,
        scene.trajectory[ref_t].azimuth,
        scene.n_views,
        scene.elevation,
        CAMERA_DISTANCE,
        scene.frame_size,
    )?;
    let prompt = prompt_for(&scene.object, rng);
    Ok(SynthClip {
        clip: VideoClip {
            frames,
            masks,
            boxes,
            depth,
            prompt,
        },
        references,
        background,
    })
}
