use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{extract_edges, saliency_blob, MapKind, SpatialMap, DEFAULT_EDGE_THRESHOLD};
use crate::tensor::Tensor;

pub const DEFAULT_CLASSES: [&str; 4] = ["circle", "square", "triangle", "cross"];
pub const MIN_IMAGE_SIZE: usize = 16;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    pub classes: Vec<String>,
    /// Also produce displaced-stroke sketches of each edge map.
    pub hand_drawn: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            size: 32,
            seed: 0,
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            hand_drawn: true,
        }
    }
}

/// Geometry of one generated shape, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub cy: f32,
    pub cx: f32,
    pub radius: f32,
    pub angle: f32,
    pub intensity: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeItem {
    /// `[1, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub class: usize,
    pub edges: SpatialMap,
    pub saliency: Option<SpatialMap>,
    pub sketch: Option<SpatialMap>,
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapesCorpus {
    pub config: DatasetConfig,
    pub items: Vec<ShapeItem>,
}

impl ShapesCorpus {
    pub fn class_names(&self) -> &[String] {
        &self.config.classes
    }

    pub fn class_id(&self, name: &str) -> Result<usize> {
        self.config
            .classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Input(format!("unknown class `{name}`")))
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.config.classes.len()];
        for item in &self.items {
            h[item.class] += 1;
        }
        h
    }
}

fn inside(shape: &str, dy: f32, dx: f32, r: f32, angle: f32) -> Result<bool> {
    let (s, c) = angle.sin_cos();
    let (y, x) = (c * dy - s * dx, s * dy + c * dx);
    Ok(match shape {
        "circle" => dy * dy + dx * dx <= r * r,
        "square" => {
            let half = 0.8 * r;
            y.abs() <= half && x.abs() <= half
        }
        "triangle" => {
            // Equilateral triangle with circumradius r, apex up before rotation.
            let verts: [(f32, f32); 3] = [0, 1, 2].map(|k| {
                let a = -PI / 2.0 + k as f32 * 2.0 * PI / 3.0;
                (r * a.sin(), r * a.cos())
            });
            let sign = |p: (f32, f32), a: (f32, f32), b: (f32, f32)| {
                (p.1 - b.1) * (a.0 - b.0) - (a.1 - b.1) * (p.0 - b.0)
            };
            let p = (y, x);
            let d = [
                sign(p, verts[0], verts[1]),
                sign(p, verts[1], verts[2]),
                sign(p, verts[2], verts[0]),
            ];
            !(d.iter().any(|&v| v < 0.0) && d.iter().any(|&v| v > 0.0))
        }
        "cross" => {
            let arm = 0.3 * r;
            (x.abs() <= r && y.abs() <= arm) || (y.abs() <= r && x.abs() <= arm)
        }
        other => return Err(Error::Config(format!("no renderer for class `{other}`"))),
    })
}

/// Renders a filled shape with anti-aliased borders.
pub fn render_shape(shape: &str, size: usize, p: &Placement) -> Result<Tensor<f32>> {
    let mut data = vec![0.0f32; size * size];
    let sub = 1.0 / SUPERSAMPLE as f32;
    for i in 0..size {
        for j in 0..size {
            let mut hits = 0;
            for a in 0..SUPERSAMPLE {
                for b in 0..SUPERSAMPLE {
                    let y = i as f32 + (a as f32 + 0.5) * sub - 0.5;
                    let x = j as f32 + (b as f32 + 0.5) * sub - 0.5;
                    if inside(shape, y - p.cy, x - p.cx, p.radius, p.angle)? {
                        hits += 1;
                    }
                }
            }
            data[i * size + j] = p.intensity * hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
        }
    }
    Tensor::new([1, size, size], data)
}

/// Displaces edge strokes by a smooth random field of up to `amplitude`
/// pixels, emulating an imprecise free-hand sketch.
pub fn jitter_edges<R: Rng>(edges: &SpatialMap, amplitude: f32, rng: &mut R) -> Result<SpatialMap> {
    let (h, w) = (edges.height(), edges.width());
    let mut waves = Vec::new();
    for _ in 0..3 {
        let fy: f32 = rng.random_range(0.5..2.0) * 2.0 * PI / h as f32;
        let fx: f32 = rng.random_range(0.5..2.0) * 2.0 * PI / w as f32;
        let phase: f32 = rng.random_range(0.0..2.0 * PI);
        let dir: f32 = rng.random_range(0.0..2.0 * PI);
        waves.push((fy, fx, phase, dir));
    }
    let src = edges.data().data();
    let mut out = vec![0.0f32; h * w];
    for i in 0..h {
        for j in 0..w {
            let (mut dy, mut dx) = (0.0f32, 0.0f32);
            for &(fy, fx, phase, dir) in &waves {
                let s = (fy * i as f32 + fx * j as f32 + phase).sin() * amplitude / waves.len() as f32;
                dy += s * dir.sin();
                dx += s * dir.cos();
            }
            let si = (i as f32 + dy).round().clamp(0.0, h as f32 - 1.0) as usize;
            let sj = (j as f32 + dx).round().clamp(0.0, w as f32 - 1.0) as usize;
            out[i * w + j] = src[si * w + sj];
        }
    }
    SpatialMap::new(Tensor::new([1, h, w], out)?, MapKind::Edges)
}

/// Procedural shapes with random position, scale, rotation and intensity.
/// Classes are assigned round-robin.
pub fn gen_dataset(config: &DatasetConfig) -> Result<ShapesCorpus> {
    if config.n == 0 {
        return Err(Error::Config("gen_dataset: n must be at least 1".into()));
    }
    if config.size < MIN_IMAGE_SIZE {
        return Err(Error::Config(format!(
            "gen_dataset: size {} below the minimum of {MIN_IMAGE_SIZE}",
            config.size
        )));
    }
    if config.classes.is_empty() {
        return Err(Error::Config("gen_dataset: no classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = config.size as f32;
    let mut items = Vec::with_capacity(config.n);
    for k in 0..config.n {
        let class = k % config.classes.len();
        let radius = rng.random_range(0.22..0.34) * size;
        let margin = radius + 1.5;
        let placement = Placement {
            cy: rng.random_range(margin..size - margin),
            cx: rng.random_range(margin..size - margin),
            radius,
            angle: rng.random_range(0.0..2.0 * PI),
            intensity: rng.random_range(0.75..1.0),
        };
        let image = render_shape(&config.classes[class], config.size, &placement)?;
        let edges = extract_edges(&image, DEFAULT_EDGE_THRESHOLD)?;
        let saliency = Some(saliency_blob(
            config.size,
            config.size,
            placement.cy,
            placement.cx,
            0.6 * radius,
        )?);
        let sketch = if config.hand_drawn {
            Some(jitter_edges(&edges, 1.5, &mut rng)?)
        } else {
            None
        };
        items.push(ShapeItem {
            image,
            class,
            edges,
            saliency,
            sketch,
            placement,
        });
    }
    Ok(ShapesCorpus {
        config: config.clone(),
        items,
    })
}

/// Maps `[0, 1]` images to the `[-1, 1]` range the denoiser works in.
pub fn to_model_space(image: &Tensor<f32>) -> Tensor<f32> {
    image.map(|v| 2.0 * v - 1.0)
}

/// Inverse of [`to_model_space`], clamped to `[0, 1]`.
pub fn from_model_space(z: &Tensor<f32>) -> Tensor<f32> {
    z.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}
