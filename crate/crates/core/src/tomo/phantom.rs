//! Shepp-Logan head phantom.

use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// One ellipse of an additive phantom, in world coordinates on `[-1, 1]^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    /// Counter-clockwise rotation in radians.
    pub rotation: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.semi_x).powi(2) + (v / self.semi_y).powi(2) <= 1.0
    }

    /// Exact length of the chord cut by the line `{p : <p, (cos t, sin t)> = l}`.
    pub fn chord(&self, theta: f64, l: f64) -> f64 {
        // move to the ellipse frame
        let (st, ct) = theta.sin_cos();
        let l = l - (self.center_x * ct + self.center_y * st);
        let phi = theta - self.rotation;
        let (sp, cp) = phi.sin_cos();
        let r2 = (self.semi_x * cp).powi(2) + (self.semi_y * sp).powi(2);
        if l * l >= r2 {
            0.0
        } else {
            2.0 * self.semi_x * self.semi_y * (r2 - l * l).sqrt() / r2
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PhantomVariant {
    /// Original intensities (skull 2.0, brain 1.02).
    Standard,
    /// Contrast-enhanced table (skull 1.0, brain 0.2).
    #[default]
    Modified,
}

impl std::str::FromStr for PhantomVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(PhantomVariant::Standard),
            "modified" | "high-contrast" => Ok(PhantomVariant::Modified),
            other => Err(Error::InvalidParams(format!(
                "unknown phantom variant `{other}`"
            ))),
        }
    }
}

/// A sum of ellipse indicator functions.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub ellipses: Vec<Ellipse>,
}

// (semi_x, semi_y, center_x, center_y, rotation in degrees)
const SHEPP_LOGAN_GEOMETRY: [(f64, f64, f64, f64, f64); 10] = [
    (0.69, 0.92, 0.0, 0.0, 0.0),
    (0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (0.1100, 0.3100, 0.22, 0.0, -18.0),
    (0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.0230, 0.0460, 0.06, -0.605, 0.0),
];

const STANDARD_INTENSITY: [f64; 10] =
    [2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01];
const MODIFIED_INTENSITY: [f64; 10] = [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];

/// Minimum sub-samples per pixel side when rasterizing.
pub const SUPERSAMPLE: usize = 4;

/// Sub-samples per side for an `n x n` raster: at least [`SUPERSAMPLE`], and
/// fine enough that coarse grids still resolve the small ellipses.
pub fn supersample(n: usize) -> usize {
    SUPERSAMPLE.max(256usize.div_ceil(n))
}

impl Phantom {
    pub fn shepp_logan(variant: PhantomVariant) -> Self {
        let intensity = match variant {
            PhantomVariant::Standard => STANDARD_INTENSITY,
            PhantomVariant::Modified => MODIFIED_INTENSITY,
        };
        let ellipses = SHEPP_LOGAN_GEOMETRY
            .iter()
            .zip(intensity)
            .map(|(&(a, b, x, y, deg), i)| Ellipse {
                intensity: i,
                semi_x: a,
                semi_y: b,
                center_x: x,
                center_y: y,
                rotation: deg.to_radians(),
            })
            .collect();
        Phantom { ellipses }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum()
    }

    /// The same phantom rotated counter-clockwise by `angle` about the origin.
    pub fn rotated(&self, angle: f64) -> Phantom {
        let (s, c) = angle.sin_cos();
        let ellipses = self
            .ellipses
            .iter()
            .map(|e| Ellipse {
                center_x: c * e.center_x - s * e.center_y,
                center_y: s * e.center_x + c * e.center_y,
                rotation: e.rotation + angle,
                ..*e
            })
            .collect();
        Phantom { ellipses }
    }

    /// Exact line integral along `<p, (cos t, sin t)> = l`.
    pub fn line_integral(&self, theta: f64, l: f64) -> f64 {
        self.ellipses
            .iter()
            .map(|e| e.intensity * e.chord(theta, l))
            .sum()
    }

    /// `n x n` rasterization over `[-1, 1]^2`, each pixel the mean of a
    /// [`supersample`]`(n)^2` grid of point samples. Column `j1` is `x`, row `j2` is
    /// `y` running from top (`y = 1`) to bottom.
    pub fn rasterize(&self, n: usize) -> ScalarField {
        let mut f = ScalarField::zeros(n, n);
        let px = 2.0 / n as f64;
        let ss = supersample(n);
        let sub = px / ss as f64;
        let norm = 1.0 / (ss * ss) as f64;
        for j2 in 0..n {
            let y_top = 1.0 - j2 as f64 * px;
            for j1 in 0..n {
                let x_left = -1.0 + j1 as f64 * px;
                let mut acc = 0.0;
                for a in 0..ss {
                    let y = y_top - (a as f64 + 0.5) * sub;
                    for b in 0..ss {
                        acc += self.value(x_left + (b as f64 + 0.5) * sub, y);
                    }
                }
                f.set(j1, j2, acc * norm);
            }
        }
        f
    }
}

/// World coordinates `(x, y)` of pixel centre `(j1, j2)` in an `n x n` image.
pub fn pixel_center(n: usize, j1: usize, j2: usize) -> (f64, f64) {
    let px = 2.0 / n as f64;
    (-1.0 + (j1 as f64 + 0.5) * px, 1.0 - (j2 as f64 + 0.5) * px)
}

/// Rasterized Shepp-Logan phantom of size `n x n`.
pub fn shepp_logan(n: usize, variant: PhantomVariant) -> Result<ScalarField> {
    if n < 16 {
        return Err(Error::InvalidParams(format!(
            "phantom size must be at least 16, got {n}"
        )));
    }
    Ok(Phantom::shepp_logan(variant).rasterize(n))
}
