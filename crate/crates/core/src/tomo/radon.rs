//! Parallel-beam Radon transform by ray sampling with bilinear interpolation,
//! and the angular-perturbation measurement model.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// Radon data: `X1` indexes the beam angle, `X2` the signed detector offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    field: ScalarField,
    angles: Vec<f64>,
    offset_spacing: f64,
}

impl Sinogram {
    /// Angles must be strictly increasing, lie in `[0, pi)`, and match `field.n1()`.
    pub fn new(field: ScalarField, angles: Vec<f64>, offset_spacing: f64) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::InvalidParams("empty angle list".into()));
        }
        if angles.len() != field.n1() {
            return Err(Error::InvalidParams(format!(
                "{} angles for a sinogram with {} angle samples",
                angles.len(),
                field.n1()
            )));
        }
        check_angles(&angles)?;
        if !(offset_spacing > 0.0) {
            return Err(Error::InvalidParams(format!(
                "offset spacing must be positive, got {offset_spacing}"
            )));
        }
        let dtheta = angle_spacing(&angles);
        let field = field.with_spacing(dtheta, offset_spacing);
        Ok(Sinogram {
            field,
            angles,
            offset_spacing,
        })
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn into_field(self) -> ScalarField {
        self.field
    }

    /// Same geometry, new values (e.g. after filtering along the angle axis).
    pub fn with_values(&self, field: ScalarField) -> Result<Self> {
        self.field.ensure_same_shape(&field)?;
        Sinogram::new(field, self.angles.clone(), self.offset_spacing)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn offset_spacing(&self) -> f64 {
        self.offset_spacing
    }

    pub fn n_angles(&self) -> usize {
        self.field.n1()
    }

    pub fn n_offsets(&self) -> usize {
        self.field.n2()
    }

    /// Signed offset of detector bin `k`; bins are centred on `l = 0`.
    pub fn offset(&self, k: usize) -> f64 {
        offset_at(k, self.n_offsets(), self.offset_spacing)
    }

    /// The projection recorded at angle index `j`.
    pub fn projection(&self, j: usize) -> Vec<f64> {
        (0..self.n_offsets())
            .map(|k| self.field.get(j, k))
            .collect()
    }
}

fn angle_spacing(angles: &[f64]) -> f64 {
    if angles.len() > 1 {
        (angles[angles.len() - 1] - angles[0]) / (angles.len() - 1) as f64
    } else {
        PI
    }
}

fn check_angles(angles: &[f64]) -> Result<()> {
    if let Some(a) = angles.iter().find(|a| !(0.0..PI).contains(*a)) {
        return Err(Error::InvalidParams(format!("angle {a} outside [0, pi)")));
    }
    if angles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams(
            "angles must be strictly increasing".into(),
        ));
    }
    Ok(())
}

pub(crate) fn offset_at(k: usize, n_offsets: usize, spacing: f64) -> f64 {
    (k as f64 - (n_offsets as f64 - 1.0) / 2.0) * spacing
}

/// `count` angles `j * pi / count`.
pub fn uniform_angles(count: usize) -> Vec<f64> {
    (0..count).map(|j| j as f64 * PI / count as f64).collect()
}

/// Uniform angles in `[0, pi)` with the given step (rounded to a whole count).
pub fn angles_with_step(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < PI) {
        return Err(Error::InvalidParams(format!(
            "angle step must lie in (0, pi), got {step}"
        )));
    }
    Ok(uniform_angles((PI / step).round() as usize))
}

/// Detector bins covering the diagonal of an `n x n` image (odd, so `l = 0` is a bin centre).
pub fn default_offsets(n: usize) -> usize {
    let m = (n as f64 * SQRT_2).ceil() as usize + 1;
    if m % 2 == 0 {
        m + 1
    } else {
        m
    }
}

/// Bilinear sample of an image on `[-1, 1]^2` at world point `(x, y)`, zero outside.
fn sample(f: &ScalarField, x: f64, y: f64) -> f64 {
    let n = f.n1();
    let px = 2.0 / n as f64;
    let c = (x + 1.0) / px - 0.5;
    let r = (1.0 - y) / px - 0.5;
    let c0 = c.floor();
    let r0 = r.floor();
    let (tc, tr) = (c - c0, r - r0);
    let (c0, r0) = (c0 as isize, r0 as isize);
    let at = |ci: isize, ri: isize| -> f64 {
        if ci < 0 || ri < 0 || ci >= n as isize || ri >= f.n2() as isize {
            0.0
        } else {
            f.get(ci as usize, ri as usize)
        }
    };
    (1.0 - tr) * ((1.0 - tc) * at(c0, r0) + tc * at(c0 + 1, r0))
        + tr * ((1.0 - tc) * at(c0, r0 + 1) + tc * at(c0 + 1, r0 + 1))
}

/// Line integrals of a square image along `<p, (cos t, sin t)> = l` for one
/// (unrestricted) angle `t`. The image covers `[-1, 1]^2`; rays are sampled
/// every half pixel.
pub fn project_angle(f: &ScalarField, theta: f64, n_offsets: usize) -> Vec<f64> {
    let n = f.n1();
    let px = 2.0 / n as f64;
    let ds = 0.5 * px;
    let half = SQRT_2;
    let steps = (2.0 * half / ds).ceil() as usize;
    let (st, ct) = theta.sin_cos();
    (0..n_offsets)
        .map(|k| {
            let l = offset_at(k, n_offsets, px);
            let (bx, by) = (l * ct, l * st);
            let mut acc = 0.0;
            for i in 0..steps {
                let s = (i as f64 + 0.5 - 0.5 * steps as f64) * ds;
                acc += sample(f, bx - s * st, by + s * ct);
            }
            acc * ds
        })
        .collect()
}

fn ensure_square(f: &ScalarField) -> Result<()> {
    if f.n1() != f.n2() {
        return Err(Error::InvalidParams(format!(
            "image must be square, got {}x{}",
            f.n1(),
            f.n2()
        )));
    }
    Ok(())
}

fn assemble(rays: Vec<Vec<f64>>, angles: &[f64], n: usize, n_offsets: usize) -> Result<Sinogram> {
    let mut values = vec![0.0; angles.len() * n_offsets];
    for (j, proj) in rays.iter().enumerate() {
        for (k, v) in proj.iter().enumerate() {
            values[k * angles.len() + j] = *v;
        }
    }
    let field = ScalarField::from_values(angles.len(), n_offsets, values)?;
    Sinogram::new(field, angles.to_vec(), 2.0 / n as f64)
}

/// Radon transform at the given angles; the detector spacing equals the pixel size.
pub fn radon(f: &ScalarField, angles: &[f64], n_offsets: usize) -> Result<Sinogram> {
    ensure_square(f)?;
    if angles.is_empty() {
        return Err(Error::InvalidParams("empty angle list".into()));
    }
    check_angles(angles)?;
    let rays: Vec<Vec<f64>> = angles
        .par_iter()
        .map(|&t| project_angle(f, t, n_offsets))
        .collect();
    assemble(rays, angles, f.n1(), n_offsets)
}

/// Per-angle beam-direction errors `d(theta_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularPerturbation {
    pub displacements: Vec<f64>,
    /// Every displacement lies in `[0, bound]`.
    pub bound: f64,
    pub seed: u64,
}

impl AngularPerturbation {
    pub fn zero(count: usize) -> Self {
        AngularPerturbation {
            displacements: vec![0.0; count],
            bound: 0.0,
            seed: 0,
        }
    }
}

/// One generator per seed; stream 0 draws the displacements, stream 1 the noise.
fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// i.i.d. `Uniform[0, bound]` displacements, one per angle.
pub fn sample_uniform_displacement(
    angles: &[f64],
    bound: f64,
    seed: u64,
) -> Result<AngularPerturbation> {
    if !(bound >= 0.0 && bound.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "perturbation bound must be non-negative, got {bound}"
        )));
    }
    let mut rng = rng_for(seed, 0);
    let displacements = angles
        .iter()
        .map(|_| {
            if bound == 0.0 {
                0.0
            } else {
                rng.random_range(0.0..=bound)
            }
        })
        .collect();
    Ok(AngularPerturbation {
        displacements,
        bound,
        seed,
    })
}

/// Measures the rays at `theta_j + d_j` but labels them `theta_j`, then adds
/// i.i.d. Gaussian noise with standard deviation `noise_sigma`.
pub fn radon_perturbed(
    f: &ScalarField,
    angles: &[f64],
    n_offsets: usize,
    pert: &AngularPerturbation,
    noise_sigma: f64,
) -> Result<Sinogram> {
    ensure_square(f)?;
    if angles.is_empty() {
        return Err(Error::InvalidParams("empty angle list".into()));
    }
    check_angles(angles)?;
    if pert.displacements.len() != angles.len() {
        return Err(Error::InvalidParams(format!(
            "{} displacements for {} angles",
            pert.displacements.len(),
            angles.len()
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "noise sigma must be non-negative, got {noise_sigma}"
        )));
    }
    let rays: Vec<Vec<f64>> = angles
        .par_iter()
        .zip(&pert.displacements)
        .map(|(&t, &d)| project_angle(f, t + d, n_offsets))
        .collect();
    let mut sino = assemble(rays, angles, f.n1(), n_offsets)?;
    if noise_sigma > 0.0 {
        add_gaussian_noise(&mut sino.field, noise_sigma, pert.seed);
    }
    Ok(sino)
}

pub(crate) fn add_gaussian_noise(field: &mut ScalarField, sigma: f64, seed: u64) {
    let mut rng = rng_for(seed, 1);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    field
        .values_mut()
        .iter_mut()
        .for_each(|v| *v += normal.sample(&mut rng));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomo::phantom::{shepp_logan, PhantomVariant};

    fn disk(n: usize, r: f64) -> ScalarField {
        // 8x8 supersampled indicator of a centred disk
        let px = 2.0 / n as f64;
        let mut f = ScalarField::zeros(n, n);
        for j2 in 0..n {
            for j1 in 0..n {
                let mut hits = 0;
                for a in 0..8 {
                    for b in 0..8 {
                        let x = -1.0 + (j1 as f64 + (b as f64 + 0.5) / 8.0) * px;
                        let y = 1.0 - (j2 as f64 + (a as f64 + 0.5) / 8.0) * px;
                        if x * x + y * y <= r * r {
                            hits += 1;
                        }
                    }
                }
                f.set(j1, j2, hits as f64 / 64.0);
            }
        }
        f
    }

    #[test]
    fn zero_image_zero_sinogram() {
        let s = radon(&ScalarField::zeros(32, 32), &uniform_angles(10), 47).unwrap();
        assert_eq!(s.field().max(), 0.0);
        assert_eq!(s.field().min(), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = ScalarField::zeros(16, 16);
        assert!(radon(&f, &[], 23).is_err());
        assert!(radon(&f, &[0.0, 4.0], 23).is_err());
        assert!(radon(&ScalarField::zeros(16, 12), &[0.0], 23).is_err());
        assert!(sample_uniform_displacement(&[0.0], -0.1, 1).is_err());
    }

    #[test]
    fn disk_chords_small_grid() {
        let n = 64;
        let r = 0.5;
        let f = disk(n, r);
        let s = radon(&f, &uniform_angles(12), default_offsets(n)).unwrap();
        for j in 0..12 {
            for k in 0..s.n_offsets() {
                let l = s.offset(k);
                // the bilinear footprint blurs the rim over a couple of pixels
                if (l.abs() - r).abs() < 2.0 * s.offset_spacing() {
                    continue;
                }
                let exact = if l.abs() < r {
                    2.0 * (r * r - l * l).sqrt()
                } else {
                    0.0
                };
                assert!(
                    (s.field().get(j, k) - exact).abs() < 0.03 * 2.0 * r,
                    "j={j} l={l}"
                );
            }
        }
    }

    #[test]
    fn is_linear() {
        let f = shepp_logan(32, PhantomVariant::Modified).unwrap();
        let g = ScalarField::from_fn(32, 32, |x1, x2| (5.0 * x1).sin() * x2);
        let angles = uniform_angles(15);
        let m = default_offsets(32);
        let sum = radon(&f.zip_map(&g, |a, b| a + 2.0 * b), &angles, m).unwrap();
        let a = radon(&f, &angles, m).unwrap();
        let b = radon(&g, &angles, m).unwrap();
        let combo = a.field().zip_map(b.field(), |x, y| x + 2.0 * y);
        let err = crate::grid::norm_linf(&sum.field().sub(&combo));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn every_projection_sees_the_total_mass() {
        let n = 64;
        let f = shepp_logan(n, PhantomVariant::Modified).unwrap();
        let px = 2.0 / n as f64;
        let mass = f.sum() * px * px;
        let s = radon(&f, &uniform_angles(30), default_offsets(n)).unwrap();
        for j in 0..30 {
            let m: f64 = s.projection(j).iter().sum::<f64>() * s.offset_spacing();
            assert!((m - mass).abs() < 0.01 * mass, "angle {j}: {m} vs {mass}");
        }
    }

    #[test]
    fn transform_is_even() {
        let n = 48;
        let f = shepp_logan(n, PhantomVariant::Modified).unwrap();
        let m = default_offsets(n);
        for &t in &[0.0, 0.4, 1.3, 2.9] {
            let a = project_angle(&f, t, m);
            let b = project_angle(&f, t + PI, m);
            for k in 0..m {
                assert!(
                    (a[k] - b[m - 1 - k]).abs() < 1e-9,
                    "t={t} k={k} {} {}",
                    a[k],
                    b[m - 1 - k]
                );
            }
        }
    }

    #[test]
    fn displacement_sampling() {
        let angles = uniform_angles(90);
        let zero = sample_uniform_displacement(&angles, 0.0, 3).unwrap();
        assert!(zero.displacements.iter().all(|&d| d == 0.0));

        let a = PI / 30.0;
        let p = sample_uniform_displacement(&angles, a, 7).unwrap();
        assert!(p.displacements.iter().all(|&d| (0.0..=a).contains(&d)));
        let mean = p.displacements.iter().sum::<f64>() / 90.0;
        let std_err = a / 12f64.sqrt() / 90f64.sqrt();
        assert!((mean - a / 2.0).abs() < 3.0 * std_err);
        assert_eq!(p, sample_uniform_displacement(&angles, a, 7).unwrap());
        assert_ne!(p, sample_uniform_displacement(&angles, a, 8).unwrap());
    }

    #[test]
    fn zero_perturbation_matches_radon() {
        let f = shepp_logan(32, PhantomVariant::Modified).unwrap();
        let angles = uniform_angles(20);
        let m = default_offsets(32);
        let clean = radon(&f, &angles, m).unwrap();
        let pert = radon_perturbed(&f, &angles, m, &AngularPerturbation::zero(20), 0.0).unwrap();
        assert_eq!(clean, pert);
    }

    #[test]
    fn noise_is_seeded() {
        let f = shepp_logan(32, PhantomVariant::Modified).unwrap();
        let angles = uniform_angles(20);
        let m = default_offsets(32);
        let p = sample_uniform_displacement(&angles, 0.1, 42).unwrap();
        let a = radon_perturbed(&f, &angles, m, &p, 0.01).unwrap();
        let b = radon_perturbed(&f, &angles, m, &p, 0.01).unwrap();
        assert_eq!(a, b);
        let clean = radon_perturbed(&f, &angles, m, &p, 0.0).unwrap();
        let noise = a.field().sub(clean.field());
        let n = noise.values().len() as f64;
        let sd = (noise.values().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        assert!((sd - 0.01).abs() < 0.001, "{sd}");
    }
}
