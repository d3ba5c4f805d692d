//! Procedural texture families indexed by integer id.

use std::f64::consts::TAU;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_from(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic stream of unit draws derived from one key.
struct KeyedDraws(u64);

impl KeyedDraws {
    fn next(&mut self) -> f64 {
        self.0 = splitmix64(self.0);
        unit_from(self.0)
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureFamily {
    ValueNoise,
    Stripes,
    Checker,
    Gradient,
}

/// A two-color procedural pattern over the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    pub family: TextureFamily,
    color_a: [f64; 3],
    color_b: [f64; 3],
    scale: f64,
    angle: f64,
    key: u64,
}

impl Texture {
    /// Background and floor textures: any hue.
    pub fn environment(id: u32) -> Self {
        let key = splitmix64(0xB4C0_0000 ^ id as u64);
        let mut d = KeyedDraws(key);
        let hue = d.next();
        let color_a = hsv(hue, 0.2 + 0.7 * d.next(), 0.35 + 0.6 * d.next());
        let color_b = hsv(hue + 0.15 + 0.7 * d.next(), 0.1 + 0.8 * d.next(), 0.15 + 0.7 * d.next());
        Self::build(id, key, color_a, color_b, &mut d)
    }

    /// Gate textures: saturated red/orange hues.
    pub fn gate(id: u32) -> Self {
        let key = splitmix64(0x6A7E_0000 ^ id as u64);
        let mut d = KeyedDraws(key);
        let hue = 0.1 * d.next();
        let color_a = hsv(hue, 0.75 + 0.25 * d.next(), 0.75 + 0.25 * d.next());
        let color_b = hsv(hue + 0.03 * d.next(), 0.6 + 0.4 * d.next(), 0.45 + 0.3 * d.next());
        Self::build(id, key, color_a, color_b, &mut d)
    }

    fn build(id: u32, key: u64, color_a: [f64; 3], color_b: [f64; 3], d: &mut KeyedDraws) -> Self {
        let family = match id % 4 {
            0 => TextureFamily::ValueNoise,
            1 => TextureFamily::Stripes,
            2 => TextureFamily::Checker,
            _ => TextureFamily::Gradient,
        };
        Self {
            family,
            color_a,
            color_b,
            scale: 0.5 + 1.5 * d.next(),
            angle: TAU * d.next(),
            key,
        }
    }

    fn lattice(&self, i: i64, j: i64) -> f64 {
        let h = splitmix64(self.key ^ (i as u64).wrapping_mul(0x9E37_79B9) ^ (j as u64).wrapping_mul(0x85EB_CA6B) << 1);
        unit_from(h)
    }

    fn value_noise(&self, u: f64, v: f64) -> f64 {
        let (i, j) = (u.floor(), v.floor());
        let (fu, fv) = (u - i, v - j);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (su, sv) = (s(fu), s(fv));
        let (i, j) = (i as i64, j as i64);
        let a = self.lattice(i, j);
        let b = self.lattice(i + 1, j);
        let c = self.lattice(i, j + 1);
        let e = self.lattice(i + 1, j + 1);
        let top = a + (b - a) * su;
        let bottom = c + (e - c) * su;
        top + (bottom - top) * sv
    }

    /// Mixing weight in `[0, 1]` between the two colors at `(u, v)`.
    fn weight(&self, u: f64, v: f64) -> f64 {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let (ru, rv) = ((c * u - s * v) * self.scale, (s * u + c * v) * self.scale);
        match self.family {
            TextureFamily::ValueNoise => 0.65 * self.value_noise(ru, rv) + 0.35 * self.value_noise(3.1 * ru, 3.1 * rv),
            TextureFamily::Stripes => {
                if (2.0 * ru).rem_euclid(2.0) < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TextureFamily::Checker => {
                let k = (2.0 * ru).floor() as i64 + (2.0 * rv).floor() as i64;
                if k.rem_euclid(2) == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            TextureFamily::Gradient => 0.5 + 0.5 * (TAU * 0.25 * ru).sin(),
        }
    }

    /// Albedo at texture coordinates `(u, v)`, channels in `[0, 1]`.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let w = self.weight(u, v);
        [
            self.color_a[0] * w + self.color_b[0] * (1.0 - w),
            self.color_a[1] * w + self.color_b[1] * (1.0 - w),
            self.color_a[2] * w + self.color_b[2] * (1.0 - w),
        ]
    }
}
