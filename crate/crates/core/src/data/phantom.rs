//! Synthetic atrium phantoms: a bright ellipse on a smooth background with
//! thin, brighter scar arcs along its rim. Masks come straight from the
//! analytic geometry, so they are exact at every pixel centre.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::preprocess::resize_bilinear;
use crate::pipeline::sample::{Sample, SampleMeta};
use crate::tensor::Tensor;

/// Minimum clearance between the ellipse and the canvas edge, in pixels.
pub const MIN_MARGIN: f64 = 10.0;
/// Scar pixels lie within this distance of the ellipse boundary.
pub const RIM_BAND: f64 = 5.0;

const BACKGROUND: f64 = 0.2;
const ATRIUM: f64 = 0.5;
const SCAR: f64 = 0.9;

/// Acquisition look: two contrast variants and two resolution variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    HighContrast,
    LowContrast,
    HighRes,
    LowRes,
}

impl Style {
    pub const ALL: [Style; 4] = [Style::HighContrast, Style::LowContrast, Style::HighRes, Style::LowRes];

    pub fn name(self) -> &'static str {
        match self {
            Style::HighContrast => "high_contrast",
            Style::LowContrast => "low_contrast",
            Style::HighRes => "high_res",
            Style::LowRes => "low_res",
        }
    }

    fn gamma(self) -> f64 {
        match self {
            Style::LowContrast => 0.55,
            _ => 1.0,
        }
    }

    /// Factor of the internal rendering grid relative to the canvas.
    fn render_scale(self) -> f64 {
        match self {
            Style::HighRes => 2.0,
            Style::LowRes => 0.5,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Style::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown style '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_y: f64,
    pub center_x: f64,
    pub semi_y: f64,
    pub semi_x: f64,
    /// Rotation in radians.
    pub angle: f64,
}

impl Ellipse {
    /// Normalized radius and parametric angle of point `(y, x)`.
    fn polar(&self, y: f64, x: f64) -> (f64, f64) {
        let (dy, dx) = (y - self.center_y, x - self.center_x);
        let (s, c) = self.angle.sin_cos();
        let u = (c * dx + s * dy) / self.semi_x;
        let v = (-s * dx + c * dy) / self.semi_y;
        ((u * u + v * v).sqrt(), v.atan2(u).rem_euclid(TAU))
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        self.polar(y, x).0 <= 1.0
    }

    /// Distance along the ray from the centre between `(y, x)` and the
    /// boundary. Bounds the true distance to the boundary from above.
    fn radial_gap(&self, y: f64, x: f64) -> f64 {
        let (rho, _) = self.polar(y, x);
        let d = (y - self.center_y).hypot(x - self.center_x);
        if rho == 0.0 {
            return self.semi_x.min(self.semi_y);
        }
        d * (1.0 - 1.0 / rho).abs()
    }

    /// Half extents of the axis-aligned bounding box.
    fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let hy = ((self.semi_x * s).powi(2) + (self.semi_y * c).powi(2)).sqrt();
        let hx = ((self.semi_x * c).powi(2) + (self.semi_y * s).powi(2)).sqrt();
        (hy, hx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScarArc {
    /// Parametric start angle in radians.
    pub start: f64,
    /// Angular extent in radians.
    pub span: f64,
    /// Rim thickness in pixels.
    pub thickness: f64,
}

impl ScarArc {
    fn covers(&self, phi: f64) -> bool {
        (phi - self.start).rem_euclid(TAU) <= self.span
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub style: Style,
    pub ellipse: Ellipse,
    pub arcs: Vec<ScarArc>,
    pub noise_sigma: f64,
    /// Phase of the smooth background shading.
    pub shading: [f64; 2],
}

impl PhantomSpec {
    /// Geometry drawn from `seed` alone; the style changes only intensities.
    pub fn random(seed: u64, height: usize, width: usize, style: Style) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = height.min(width) as f64;
        let semi_y = rng.random_range(0.14..0.26) * side;
        let semi_x = rng.random_range(0.14..0.26) * side;
        let angle = rng.random_range(0.0..PI);
        let mut ellipse = Ellipse { center_y: 0.0, center_x: 0.0, semi_y, semi_x, angle };
        let (hy, hx) = ellipse.half_extents();
        let pad_y = hy + MIN_MARGIN + 1.0;
        let pad_x = hx + MIN_MARGIN + 1.0;
        ellipse.center_y = rng.random_range(pad_y..(height as f64 - 1.0 - pad_y).max(pad_y + 1e-9));
        ellipse.center_x = rng.random_range(pad_x..(width as f64 - 1.0 - pad_x).max(pad_x + 1e-9));
        let count = rng.random_range(1..=3);
        let arcs = (0..count)
            .map(|_| ScarArc {
                start: rng.random_range(0.0..TAU),
                span: rng.random_range(0.5..1.6),
                thickness: rng.random_range(2.0..=4.0),
            })
            .collect();
        let shading = [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)];
        Self { seed, height, width, style, ellipse, arcs, noise_sigma: 0.03, shading }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::SpecOutOfBounds(msg));
        if self.height < 48 || self.width < 48 {
            return bad(format!("canvas {}x{} smaller than 48", self.height, self.width));
        }
        let e = &self.ellipse;
        if !(e.semi_x > 0.0 && e.semi_y > 0.0 && e.center_x.is_finite() && e.center_y.is_finite()) {
            return bad(format!("degenerate ellipse {e:?}"));
        }
        let (hy, hx) = e.half_extents();
        let fits = e.center_y - hy >= MIN_MARGIN
            && e.center_x - hx >= MIN_MARGIN
            && e.center_y + hy <= self.height as f64 - 1.0 - MIN_MARGIN
            && e.center_x + hx <= self.width as f64 - 1.0 - MIN_MARGIN;
        if !fits {
            return bad(format!("ellipse {e:?} closer than {MIN_MARGIN} px to the edge"));
        }
        if !(1..=3).contains(&self.arcs.len()) {
            return bad(format!("{} scar arcs, expected 1 to 3", self.arcs.len()));
        }
        for a in &self.arcs {
            if !(2.0..=4.0).contains(&a.thickness) || !(a.span > 0.0 && a.span <= TAU) {
                return bad(format!("scar arc {a:?}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {}", self.noise_sigma));
        }
        Ok(())
    }

    fn is_scar(&self, y: f64, x: f64) -> bool {
        let (_, phi) = self.ellipse.polar(y, x);
        let gap = self.ellipse.radial_gap(y, x);
        self.arcs.iter().any(|a| a.covers(phi) && gap <= a.thickness / 2.0)
    }

    /// Noise-free intensity at canvas coordinate `(y, x)`.
    fn intensity(&self, y: f64, x: f64) -> f64 {
        if self.is_scar(y, x) {
            SCAR
        } else if self.ellipse.contains(y, x) {
            ATRIUM
        } else {
            let (fy, fx) = (y / self.height as f64, x / self.width as f64);
            BACKGROUND + 0.05 * (TAU * fy + self.shading[0]).sin() * (PI * fx + self.shading[1]).cos()
        }
    }

    fn masks(&self) -> (Tensor, Tensor) {
        let (h, w) = (self.height, self.width);
        let la = Tensor::from_fn(&[h, w], |i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            if self.ellipse.contains(y, x) { 1.0 } else { 0.0 }
        });
        let scar = Tensor::from_fn(&[h, w], |i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            if self.is_scar(y, x) { 1.0 } else { 0.0 }
        });
        (la, scar)
    }

    fn render(&self) -> Result<Tensor> {
        let scale = self.style.render_scale();
        let rh = ((self.height as f64 * scale).round() as usize).max(1);
        let rw = ((self.width as f64 * scale).round() as usize).max(1);
        let (sy, sx) = (self.height as f64 / rh as f64, self.width as f64 / rw as f64);
        let grid = Tensor::from_fn(&[rh, rw], |i| {
            let y = ((i / rw) as f64 + 0.5) * sy - 0.5;
            let x = ((i % rw) as f64 + 0.5) * sx - 0.5;
            self.intensity(y, x) as f32
        });
        if (rh, rw) == (self.height, self.width) {
            Ok(grid)
        } else {
            resize_bilinear(&grid, self.height, self.width)
        }
    }
}

fn style_stream(seed: u64, style: Style) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (style as u64 + 1)
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Sample> {
    spec.validate()?;
    let clean = spec.render()?;
    let mut rng = ChaCha8Rng::seed_from_u64(style_stream(spec.seed, spec.style));
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::SpecOutOfBounds(e.to_string()))?;
    let gamma = spec.style.gamma();
    let image = Tensor::from_fn(clean.dims(), |i| {
        let shaded = (clean.data()[i] as f64).powf(gamma) + noise.sample(&mut rng);
        shaded.clamp(0.0, 1.0) as f32
    });
    let (la, scar) = spec.masks();
    let meta = SampleMeta {
        seed: spec.seed,
        style: spec.style.name().to_string(),
        original_size: (spec.height, spec.width),
    };
    Sample::new(image.reshape(&[1, spec.height, spec.width])?, Some(la), Some(scar), meta)
}

/// Distance from pixel centre `(y, x)` to the nearest boundary sample of
/// the ellipse, found by dense parametric sampling.
pub fn boundary_distance(e: &Ellipse, y: f64, x: f64) -> f64 {
    let (s, c) = e.angle.sin_cos();
    (0..4096)
        .map(|k| {
            let t = TAU * k as f64 / 4096.0;
            let (u, v) = (e.semi_x * t.cos(), e.semi_y * t.sin());
            let by = e.center_y + s * u + c * v;
            let bx = e.center_x + c * u - s * v;
            (by - y).hypot(bx - x)
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_style_independent_masks() {
        let a = generate_phantom(&PhantomSpec::random(5, 64, 64, Style::HighContrast)).unwrap();
        let b = generate_phantom(&PhantomSpec::random(5, 64, 64, Style::HighContrast)).unwrap();
        assert_eq!(a, b);
        for style in [Style::LowContrast, Style::HighRes, Style::LowRes] {
            let c = generate_phantom(&PhantomSpec::random(5, 64, 64, style)).unwrap();
            assert_eq!(a.la_mask, c.la_mask);
            assert_eq!(a.scar_mask, c.scar_mask);
            assert_ne!(a.image, c.image);
        }
    }

    #[test]
    fn scar_hugs_the_rim() {
        for seed in 0..5 {
            let spec = PhantomSpec::random(seed, 96, 96, Style::HighContrast);
            let s = generate_phantom(&spec).unwrap();
            let scar = s.scar_mask.unwrap();
            assert!(scar.sum() > 0.0);
            for (i, &v) in scar.data().iter().enumerate() {
                if v == 1.0 {
                    let d = boundary_distance(&spec.ellipse, (i / 96) as f64, (i % 96) as f64);
                    assert!(d <= RIM_BAND, "seed {seed}: scar pixel {d} px from rim");
                }
            }
        }
    }

    #[test]
    fn rejects_ellipse_near_edge() {
        let mut spec = PhantomSpec::random(1, 64, 64, Style::HighContrast);
        spec.ellipse.center_x = 5.0;
        assert!(matches!(generate_phantom(&spec), Err(Error::SpecOutOfBounds(_))));
    }
}
