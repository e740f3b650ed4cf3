//! Whole-outline morphometrics: real-unit outline normalisation, elliptic
//! Fourier descriptors and a PCA shape space.

mod efd;
mod outline;
mod pca;

pub use efd::{efd, efd_reconstruct, EfdCoefficients, EfdError, DEFAULT_HARMONICS};
pub use outline::{normalize_outline, resample_closed, Outline, OUTLINE_POINTS};
pub use pca::{pca_project, symmetric_eigen, PcaError, PcaModel};
