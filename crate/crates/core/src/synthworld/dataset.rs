//! Random scene sampling and the on-disk dataset layout.
//!
//! ```text
//! DIR/dataset.json
//! DIR/clip_0000/frames/0000.png      RGB8
//! DIR/clip_0000/masks/0000.png       L8, 0 or 255
//! DIR/clip_0000/depth/0000.png       L16, nearness · 65535
//! DIR/clip_0000/background/0000.png  RGB8, object-free video
//! DIR/clip_0000/views/0.png          RGB8
//! DIR/clip_0000/meta.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    synth_clip, Background, BBox, MeshSpec, MultiViewReferenceSet, Occluder, SceneConfig, Shape, SynthClip,
    Texture, TrajectoryPoint, VideoClip, PALETTE,
};
use crate::error::{ensure, Error, Result};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub clips: usize,
    pub frames: usize,
    /// `(H, W)`
    pub frame_size: (usize, usize),
    pub n_views: usize,
    /// Object rotation per frame in degrees.
    pub spin_per_frame: f64,
    pub occluder_prob: f64,
    pub elevation: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            clips: 512,
            frames: 9,
            frame_size: (16, 16),
            n_views: 4,
            spin_per_frame: 15.0,
            occluder_prob: 0.3,
            elevation: 15.0,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.frames >= 2, "clips need at least two frames");
        ensure!(self.frame_size.0 >= 8 && self.frame_size.1 >= 8, "frames must be at least 8x8");
        ensure!(self.n_views >= 1, "n_views must be at least 1");
        ensure!((0.0..=1.0).contains(&self.occluder_prob), "occluder_prob must be a probability");
        Ok(())
    }
}

fn muted<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6)]
}

/// Samples a scene: a two- or three-tone primitive that rotates at a fixed
/// rate while drifting across a random background.
pub fn random_scene<R: Rng>(world: &WorldConfig, rng: &mut R) -> SceneConfig {
    let (h, w) = world.frame_size;
    let t_count = world.frames;
    let mut idx: Vec<usize> = (0..PALETTE.len()).collect();
    idx.shuffle(rng);
    let [c0, c1, c2] = [idx[0], idx[1], idx[2]].map(|i| PALETTE[i].1);
    let (shape, face_colors) = if rng.gen_bool(0.5) {
        let e = [rng.gen_range(0.75..1.0), rng.gen_range(0.75..1.0), rng.gen_range(0.75..1.0)];
        (Shape::Cuboid { half_extents: e }, vec![c0, c1, c2, c1, c0, c2])
    } else {
        (Shape::UvSphere { radius: 1.0, rings: 8, sectors: 8 }, vec![c0, c1, c2, c1])
    };
    let texture = if rng.gen_bool(0.5) {
        Texture::Flat
    } else {
        Texture::Checker { cell_size: if rng.gen_bool(0.5) { 2 } else { 4 } }
    };
    let object = MeshSpec { shape, face_colors, texture };

    let margin_x = 0.3 * w as f64;
    let margin_y = 0.3 * h as f64;
    let mut point = || [rng.gen_range(margin_x..w as f64 - margin_x), rng.gen_range(margin_y..h as f64 - margin_y)];
    let (start, end) = (point(), point());
    let scale = rng.gen_range(0.55..0.7);
    let ref_azimuth: f64 = rng.gen_range(0.0..360.0);
    let trajectory = (0..t_count)
        .map(|t| {
            let f = t as f64 / (t_count - 1) as f64;
            TrajectoryPoint {
                center: [start[0] + (end[0] - start[0]) * f, start[1] + (end[1] - start[1]) * f],
                scale,
                azimuth: (ref_azimuth + world.spin_per_frame * (t as f64 - (t_count - 1) as f64)).rem_euclid(360.0),
            }
        })
        .collect();

    let background = match rng.gen_range(0..3) {
        0 => Background::Gradient { from: muted(rng), to: muted(rng), vertical: rng.gen_bool(0.5) },
        1 => Background::Stripes {
            a: muted(rng),
            b: muted(rng),
            period: rng.gen_range(2..5),
            vertical: rng.gen_bool(0.5),
        },
        _ => Background::NoiseTexture { seed: rng.gen(), base: muted(rng), amplitude: 0.4, cell: 4 },
    };
    let occluder = if rng.gen_bool(world.occluder_prob) {
        let x_min = rng.gen_range(0..w - 2);
        Some(Occluder {
            x_min,
            x_max: x_min + 1,
            color: [0.1, 0.1, 0.1].map(|c: f64| c + rng.gen_range(0.0..0.1)),
            depth: rng.gen_range(0.75..0.95),
        })
    } else {
        None
    };
    SceneConfig {
        background,
        object,
        mesh_seed: rng.gen_range(0..1000),
        trajectory,
        frame_size: world.frame_size,
        frame_count: t_count,
        occluder,
        elevation: world.elevation,
        n_views: world.n_views,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub seed: u64,
    pub scene: SceneConfig,
    pub clip: VideoClip,
    pub references: MultiViewReferenceSet,
    pub background: Array4<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub world: WorldConfig,
    pub items: Vec<DatasetItem>,
}

#[derive(Serialize, Deserialize)]
struct ClipMeta {
    seed: u64,
    prompt: String,
    boxes: Vec<BBox>,
    azimuths: Vec<f64>,
    corrupted_flags: Vec<bool>,
    patch_size: usize,
    scene: SceneConfig,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    world: WorldConfig,
    clips: Vec<String>,
}

impl Dataset {
    /// Generates `world.clips` clips; clip `i` depends only on `(world.seed, i)`.
    pub fn generate(world: &WorldConfig) -> Result<Dataset> {
        world.validate()?;
        let items = (0..world.clips)
            .map(|i| generate_item(world, i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { world: world.clone(), items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn save(&self, dir: &Path, patch_size: usize) -> Result<()> {
        mkdir(dir)?;
        let mut names = Vec::new();
        for (i, item) in self.items.iter().enumerate() {
            let name = format!("clip_{i:04}");
            save_item(&dir.join(&name), item, patch_size)?;
            names.push(name);
        }
        let manifest = DatasetManifest { world: self.world.clone(), clips: names };
        write_json(&dir.join("dataset.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: DatasetManifest = read_json(&dir.join("dataset.json"))?;
        let items = manifest
            .clips
            .iter()
            .map(|name| load_item(&dir.join(name)))
            .collect::<Result<Vec<_>>>()?;
        for item in &items {
            item.scene.validate()?;
            item.references.validate()?;
            for (t, b) in item.clip.boxes.iter().enumerate() {
                ensure!(
                    BBox::of_mask(item.clip.masks.slice(s![t, .., ..])) == Some(*b),
                    "stored box does not bound the stored mask (seed {}, frame {t})",
                    item.seed
                );
            }
        }
        Ok(Dataset { world: manifest.world, items })
    }
}

impl DatasetItem {
    /// Synthesizes the clip for a fixed scene.
    pub fn from_scene(scene: SceneConfig, seed: u64) -> Result<DatasetItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let SynthClip { clip, references, background } = synth_clip(&scene, &mut rng)?;
        Ok(DatasetItem { seed, scene, clip, references, background })
    }
}

/// Writes frame `t` of `video` to `dir/tttt.png`.
pub fn write_frames(dir: &Path, video: &Array4<f64>) -> Result<()> {
    mkdir(dir)?;
    for t in 0..video.dim().0 {
        save_rgb(&dir.join(format!("{t:04}.png")), video.slice(s![t, .., .., ..]))?;
    }
    Ok(())
}

fn generate_item(world: &WorldConfig, index: u64) -> Result<DatasetItem> {
    let seed = derive_seed(world.seed, &[index]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..64 {
        let scene = random_scene(world, &mut rng);
        match synth_clip(&scene, &mut rng) {
            Ok(SynthClip { clip, references, background }) => {
                return Ok(DatasetItem { seed, scene, clip, references, background })
            }
            // Fully occluded frames are resampled.
            Err(Error::Invalid(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::invalid(format!("could not sample a visible scene for clip {index}")))
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn save_rgb(path: &Path, img: ndarray::ArrayView3<f64>) -> Result<()> {
    let (h, w, _) = img.dim();
    let buf = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| to_u8(img[[y as usize, x as usize, c]])))
    });
    buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub(crate) fn load_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    }))
}

fn save_item(dir: &Path, item: &DatasetItem, patch_size: usize) -> Result<()> {
    let clip = &item.clip;
    let (t_count, h, w, _) = clip.frames.dim();
    for sub in ["frames", "masks", "depth", "background", "views"] {
        mkdir(&dir.join(sub))?;
    }
    for t in 0..t_count {
        save_rgb(&dir.join(format!("frames/{t:04}.png")), clip.frames.slice(s![t, .., .., ..]))?;
        save_rgb(&dir.join(format!("background/{t:04}.png")), item.background.slice(s![t, .., .., ..]))?;
        let mask = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([if clip.masks[[t, y as usize, x as usize]] { 255 } else { 0 }])
        });
        let p = dir.join(format!("masks/{t:04}.png"));
        mask.save(&p).map_err(|source| Error::Image { path: p.clone(), source })?;
        let depth = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([(clip.depth[[t, y as usize, x as usize]].clamp(0.0, 1.0) * 65535.0).round() as u16])
        });
        let p = dir.join(format!("depth/{t:04}.png"));
        depth.save(&p).map_err(|source| Error::Image { path: p.clone(), source })?;
    }
    for v in 0..item.references.len() {
        save_rgb(&dir.join(format!("views/{v}.png")), item.references.images.slice(s![v, .., .., ..]))?;
    }
    let meta = ClipMeta {
        seed: item.seed,
        prompt: clip.prompt.clone(),
        boxes: clip.boxes.clone(),
        azimuths: item.references.azimuths.clone(),
        corrupted_flags: item.references.corrupted_flags.clone(),
        patch_size,
        scene: item.scene.clone(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

fn load_item(dir: &Path) -> Result<DatasetItem> {
    let meta: ClipMeta = read_json(&dir.join("meta.json"))?;
    let t_count = meta.scene.frame_count;
    let (h, w) = meta.scene.frame_size;
    let mut frames = Array4::zeros((t_count, h, w, 3));
    let mut background = Array4::zeros((t_count, h, w, 3));
    let mut masks = Array3::from_elem((t_count, h, w), false);
    let mut depth = Array3::zeros((t_count, h, w));
    let open = |p: PathBuf| image::open(&p).map_err(|source| Error::Image { path: p.clone(), source });
    for t in 0..t_count {
        let f = load_rgb(&dir.join(format!("frames/{t:04}.png")))?;
        ensure!(f.dim() == (h, w, 3), "frame {t} has shape {:?}", f.dim());
        frames.slice_mut(s![t, .., .., ..]).assign(&f);
        background
            .slice_mut(s![t, .., .., ..])
            .assign(&load_rgb(&dir.join(format!("background/{t:04}.png")))?);
        let m = open(dir.join(format!("masks/{t:04}.png")))?.to_luma8();
        let d = open(dir.join(format!("depth/{t:04}.png")))?.to_luma16();
        for y in 0..h {
            for x in 0..w {
                masks[[t, y, x]] = m.get_pixel(x as u32, y as u32)[0] > 127;
                depth[[t, y, x]] = d.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0;
            }
        }
    }
    let n = meta.azimuths.len();
    let mut images = Array4::zeros((n, h, w, 3));
    for v in 0..n {
        images.slice_mut(s![v, .., .., ..]).assign(&load_rgb(&dir.join(format!("views/{v}.png")))?);
    }
    Ok(DatasetItem {
        seed: meta.seed,
        clip: VideoClip { frames, masks, boxes: meta.boxes, depth, prompt: meta.prompt },
        references: MultiViewReferenceSet {
            images,
            azimuths: meta.azimuths,
            corrupted_flags: meta.corrupted_flags,
        },
        background,
        scene: meta.scene,
    })
}
