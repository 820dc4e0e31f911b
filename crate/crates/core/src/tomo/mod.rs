//! Parallel-beam tomography: phantom, forward projection with angular
//! perturbation, and filtered backprojection.

pub mod fbp;
pub mod phantom;
pub mod radon;

pub use fbp::{fbp, Filter};
pub use phantom::{shepp_logan, Phantom, PhantomVariant};
pub use radon::{
    angles_with_step, default_offsets, radon, radon_perturbed, sample_uniform_displacement,
    uniform_angles, AngularPerturbation, Sinogram,
};
