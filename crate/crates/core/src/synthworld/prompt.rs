//! Template captions over shape and color words.

use rand::Rng;

use super::mesh::{MeshSpec, Rgb, Shape, Texture};

/// Named colors used by the procedural world and the toy text embedding.
pub const PALETTE: [(&str, Rgb); 8] = [
    ("red", [0.90, 0.15, 0.10]),
    ("green", [0.15, 0.75, 0.20]),
    ("blue", [0.15, 0.30, 0.90]),
    ("yellow", [0.95, 0.85, 0.10]),
    ("cyan", [0.10, 0.80, 0.85]),
    ("magenta", [0.85, 0.20, 0.80]),
    ("orange", [0.95, 0.55, 0.10]),
    ("purple", [0.45, 0.15, 0.70]),
];

/// Name of the palette entry nearest to `rgb`.
pub fn color_name(rgb: Rgb) -> &'static str {
    PALETTE
        .iter()
        .min_by(|a, b| {
            let da: f64 = (0..3).map(|c| (a.1[c] - rgb[c]).powi(2)).sum();
            let db: f64 = (0..3).map(|c| (b.1[c] - rgb[c]).powi(2)).sum();
            da.total_cmp(&db)
        })
        .map(|p| p.0)
        .expect("palette is non-empty")
}

fn shape_word(spec: &MeshSpec) -> &'static str {
    match spec.shape {
        Shape::Cuboid { half_extents: [a, b, c] } if a == b && b == c => "cube",
        Shape::Cuboid { .. } => "box",
        Shape::UvSphere { .. } => "ball",
    }
}

/// A coarse (`a red cube`) or fine caption, chosen uniformly.
pub fn prompt_for<R: Rng>(spec: &MeshSpec, rng: &mut R) -> String {
    let primary = color_name(spec.face_colors[0]);
    let shape = shape_word(spec);
    if rng.gen_bool(0.5) {
        return format!("a {primary} {shape}");
    }
    let secondary = spec
        .face_colors
        .iter()
        .map(|c| color_name(*c))
        .find(|n| *n != primary)
        .unwrap_or(primary);
    let surface = match spec.texture {
        Texture::Flat => "plain",
        Texture::Checker { .. } => "checkered",
    };
    format!("a {primary} {shape} with {secondary} sides and a {surface} surface")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_round_trip_through_palette() {
        for (name, rgb) in PALETTE {
            assert_eq!(color_name(rgb), name);
        }
    }

    #[test]
    fn both_granularities_occur() {
        let spec = MeshSpec {
            shape: Shape::Cuboid { half_extents: [1.0; 3] },
            face_colors: vec![PALETTE[0].1, PALETTE[2].1],
            texture: Texture::Checker { cell_size: 2 },
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let prompts: std::collections::BTreeSet<String> = (0..32).map(|_| prompt_for(&spec, &mut rng)).collect();
        assert!(prompts.contains("a red cube"));
        assert!(prompts.contains("a red cube with blue sides and a checkered surface"));
        assert_eq!(prompts.len(), 2);
    }
}
