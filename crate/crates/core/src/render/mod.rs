//! Procedural low-resolution renderer and the domain-randomization sampler.
//!
//! Every pixel casts one ray from the camera. The nearest gate frame hit
//! wins over the floor plane, and the background is indexed by ray
//! direction. Shading per entity is `clamp(ambient · albedo + emissive)`.
//! Gate frames are widened to about one pixel at long range.

mod texture;

pub use texture::{Texture, TextureFamily};

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, ImagePoint};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Pose, Track, Vec3};
use crate::rng::RngStream;

pub const TRAIN_ENVIRONMENT_TEXTURES: Range<u32> = 0..30;
pub const TEST_ENVIRONMENT_TEXTURES: Range<u32> = 100..110;
pub const TRAIN_GATE_TEXTURES: Range<u32> = 0..10;
pub const TEST_GATE_TEXTURE: u32 = 10;
pub const TRAIN_GATE_SHAPES: Range<u32> = 0..5;
pub const TEST_GATE_SHAPE: u32 = 5;
pub const GATE_SHAPE_COUNT: u32 = 6;
pub const MAX_EMISSIVE: f64 = 0.3;

/// Light response of one entity class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lighting {
    pub ambient: f64,
    pub emissive: f64,
}

impl Lighting {
    fn shade(&self, albedo: [f64; 3]) -> [u8; 3] {
        albedo.map(|a| to_byte((self.ambient * a + self.emissive).clamp(0.0, 1.0)))
    }

    fn valid(&self) -> bool {
        (0.0..=1.0).contains(&self.ambient) && (0.0..=MAX_EMISSIVE).contains(&self.emissive)
    }
}

impl Default for Lighting {
    fn default() -> Self {
        Self {
            ambient: 0.8,
            emissive: 0.1,
        }
    }
}

fn to_byte(v: f64) -> u8 {
    (v * 255.0).round() as u8
}

/// Visual appearance of a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub background_texture_id: u32,
    pub floor_texture_id: u32,
    pub gate_texture_id: u32,
    pub gate_shape_id: u32,
    pub background: Lighting,
    pub floor: Lighting,
    pub gates: Lighting,
}

impl Default for SceneConfig {
    /// The single fixed scene used for non-randomized training.
    fn default() -> Self {
        Self {
            background_texture_id: 0,
            floor_texture_id: 3,
            gate_texture_id: 0,
            gate_shape_id: 0,
            background: Lighting::default(),
            floor: Lighting::default(),
            gates: Lighting::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if ![self.background, self.floor, self.gates].iter().all(Lighting::valid) {
            return Err(invalid("lighting outside ambient [0,1] / emissive [0,0.3]"));
        }
        if self.gate_shape_id >= GATE_SHAPE_COUNT {
            return Err(invalid(format!("unknown gate shape {}", self.gate_shape_id)));
        }
        Ok(())
    }

    /// Compact identifier recorded alongside dataset samples.
    pub fn scene_id(&self) -> u64 {
        let mut h = 0u64;
        for v in [
            self.background_texture_id as u64,
            self.floor_texture_id as u64,
            self.gate_texture_id as u64,
            self.gate_shape_id as u64,
            self.background.ambient.to_bits(),
            self.background.emissive.to_bits(),
            self.floor.ambient.to_bits(),
            self.floor.emissive.to_bits(),
            self.gates.ambient.to_bits(),
            self.gates.emissive.to_bits(),
        ] {
            h = texture::splitmix64(h ^ v);
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneMode {
    Train,
    Test,
}

/// Draws a randomized scene: texture and shape ids from the mode's pools,
/// lighting per entity from `U[0,1]` (ambient) and `U[0,0.3]` (emissive).
pub fn sample_scene(rng: &mut RngStream, mode: SceneMode) -> SceneConfig {
    let mut pick = |r: Range<u32>| r.start + rng.index((r.end - r.start) as usize) as u32;
    let (background_texture_id, floor_texture_id, gate_texture_id, gate_shape_id) = match mode {
        SceneMode::Train => (
            pick(TRAIN_ENVIRONMENT_TEXTURES),
            pick(TRAIN_ENVIRONMENT_TEXTURES),
            pick(TRAIN_GATE_TEXTURES),
            pick(TRAIN_GATE_SHAPES),
        ),
        SceneMode::Test => (
            pick(TEST_ENVIRONMENT_TEXTURES),
            pick(TEST_ENVIRONMENT_TEXTURES),
            TEST_GATE_TEXTURE,
            TEST_GATE_SHAPE,
        ),
    };
    let mut light = || Lighting {
        ambient: rng.uniform(0.0, 1.0),
        emissive: rng.uniform(0.0, MAX_EMISSIVE),
    };
    let (background, floor, gates) = (light(), light(), light());
    SceneConfig {
        background_texture_id,
        floor_texture_id,
        gate_texture_id,
        gate_shape_id,
        background,
        floor,
        gates,
    }
}

/// Row-major 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub const CHANNELS: u32 = 3;

    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; (width * height * Self::CHANNELS) as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != (width * height * Self::CHANNELS) as usize {
            return Err(invalid("pixel buffer length does not match raster size"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn pixel(&self, col: u32, row: u32) -> [u8; 3] {
        let i = ((row * self.width + col) * Self::CHANNELS) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Binary PPM (P6).
    pub fn write_ppm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn read_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Format("not a binary PPM".into());
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
        }
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad());
        }
        let width: u32 = fields[1].parse().map_err(|_| bad())?;
        let height: u32 = fields[2].parse().map_err(|_| bad())?;
        Self::from_pixels(width, height, bytes.get(pos + 1..).ok_or_else(bad)?.to_vec())
    }
}

/// What a pixel shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelClass {
    Background,
    Floor,
    Gate(u32),
}

/// Gate outline polygons in units of the opening half-size, counter-clockwise.
fn shape_polygon(shape_id: u32) -> Vec<[f64; 2]> {
    let regular = |n: usize, radius: f64, phase: f64| -> Vec<[f64; 2]> {
        (0..n)
            .map(|k| {
                let a = phase + std::f64::consts::TAU * k as f64 / n as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect()
    };
    match shape_id {
        0 => vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]],
        1 => regular(8, 1.08, std::f64::consts::PI / 8.0),
        2 => regular(6, 1.12, 0.0),
        3 => vec![[-0.75, -1.25], [0.75, -1.25], [0.75, 1.25], [-0.75, 1.25]],
        4 => vec![[-1.25, -0.75], [1.25, -0.75], [1.25, 0.75], [-1.25, 0.75]],
        _ => vec![[0.0, -1.35], [1.35, 0.0], [0.0, 1.35], [-1.35, 0.0]],
    }
}

fn inside_convex(poly: &[[f64; 2]], sx: f64, sy: f64, u: f64, v: f64) -> bool {
    (0..poly.len()).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ax, ay, bx, by) = (a[0] * sx, a[1] * sy, b[0] * sx, b[1] * sy);
        (bx - ax) * (v - ay) - (by - ay) * (u - ax) >= 0.0
    })
}

struct GateGeometry {
    id: u32,
    center: Vec3,
    normal: Vec3,
    lateral: Vec3,
    half_w: f64,
    half_h: f64,
    frame: f64,
}

/// Renders `track` (gates displaced by `offsets`) from `cam_pose`.
pub fn render(track: &Track, offsets: &[Vec3], cam_pose: &Pose, cam: &CameraModel, scene: &SceneConfig) -> Raster {
    render_with_classes(track, offsets, cam_pose, cam, scene).0
}

/// [`render`] plus the per-pixel entity classes.
pub fn render_with_classes(
    track: &Track,
    offsets: &[Vec3],
    cam_pose: &Pose,
    cam: &CameraModel,
    scene: &SceneConfig,
) -> (Raster, Vec<PixelClass>) {
    let (w, h) = (cam.image_width, cam.image_height);
    let mut raster = Raster::new(w, h);
    let mut classes = Vec::with_capacity((w * h) as usize);

    let background = Texture::environment(scene.background_texture_id);
    let floor = Texture::environment(scene.floor_texture_id);
    let gate_tex = Texture::gate(scene.gate_texture_id);
    let shape = shape_polygon(scene.gate_shape_id);
    let gates: Vec<GateGeometry> = track
        .gates
        .iter()
        .enumerate()
        .map(|(i, g)| GateGeometry {
            id: g.id,
            center: g.center + offsets.get(i).copied().unwrap_or_else(Vec3::zeros),
            normal: g.normal(),
            lateral: g.lateral(),
            half_w: 0.5 * g.inner_width,
            half_h: 0.5 * g.inner_height,
            frame: g.frame_thickness,
        })
        .collect();
    let origin = cam_pose.position;
    // Frames narrower than a pixel would alias away at range; keep them at
    // least about one pixel wide.
    let pixel_angle = 1.2 * 2.0 * cam.tan_half_h() / w as f64;

    for row in 0..h {
        for col in 0..w {
            let x = ImagePoint::new(
                (col as f64 + 0.5) / w as f64 * 2.0 - 1.0,
                (row as f64 + 0.5) / h as f64 * 2.0 - 1.0,
            );
            let dir = cam_pose.attitude * cam.ray_camera(&x);

            let mut best: Option<(f64, PixelClass, [u8; 3])> = None;
            if dir.z < -1e-9 {
                let t = -origin.z / dir.z;
                if t > 0.0 {
                    let p = origin + t * dir;
                    best = Some((
                        t,
                        PixelClass::Floor,
                        scene.floor.shade(floor.sample(0.5 * p.x, 0.5 * p.y)),
                    ));
                }
            }
            for g in &gates {
                let denom = g.normal.dot(&dir);
                if denom.abs() < 1e-9 {
                    continue;
                }
                let t = g.normal.dot(&(g.center - origin)) / denom;
                if t <= 0.0 || best.as_ref().is_some_and(|b| b.0 <= t) {
                    continue;
                }
                let rel = origin + t * dir - g.center;
                let (u, v) = (g.lateral.dot(&rel), rel.z);
                let frame = g.frame.max(pixel_angle * t);
                let outer = inside_convex(&shape, g.half_w + frame, g.half_h + frame, u, v);
                if outer && !inside_convex(&shape, g.half_w, g.half_h, u, v) {
                    let albedo = gate_tex.sample(3.0 * u, 3.0 * v);
                    best = Some((t, PixelClass::Gate(g.id), scene.gates.shade(albedo)));
                }
            }
            let (class, rgb) = match best {
                Some((_, class, rgb)) => (class, rgb),
                None => {
                    let azimuth = dir.y.atan2(dir.x);
                    let elevation = dir.z.clamp(-1.0, 1.0).asin();
                    let albedo = background.sample(
                        azimuth / std::f64::consts::TAU * 12.0,
                        elevation / std::f64::consts::PI * 6.0,
                    );
                    (PixelClass::Background, scene.background.shade(albedo))
                }
            };
            let i = ((row * w + col) * Raster::CHANNELS) as usize;
            raster.pixels[i..i + 3].copy_from_slice(&rgb);
            classes.push(class);
        }
    }
    (raster, classes)
}
