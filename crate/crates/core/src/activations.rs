use alloc::vec::Vec;

use crate::conv::{self, ConvPolicy};
use crate::error::Result;
use crate::tensor::{DenseTensor, KruskalTensor};

/// An activation tensor that can be convolved with an atom and correlated
/// against a residual, whatever its storage. Lets the dictionary step run
/// unchanged on Kruskal activations and on the dense baseline's.
pub trait ActivationSource {
    /// Activation extents `(m_1..m_p)`.
    fn act_shape(&self) -> Vec<usize>;

    /// Full convolution `atom ⋆ Z`.
    fn convolve(&self, atom: &DenseTensor) -> Result<DenseTensor>;

    /// Valid correlation of `residual` with `Z`; has the atom's shape.
    fn correlate(&self, residual: &DenseTensor) -> Result<DenseTensor>;

    fn is_zero(&self) -> bool;
}

impl ActivationSource for KruskalTensor {
    fn act_shape(&self) -> Vec<usize> {
        self.shape()
    }

    fn convolve(&self, atom: &DenseTensor) -> Result<DenseTensor> {
        conv::conv_separable(atom, self)
    }

    fn correlate(&self, residual: &DenseTensor) -> Result<DenseTensor> {
        conv::correlate_separable(residual, self)
    }

    fn is_zero(&self) -> bool {
        (0..self.rank()).all(|r| {
            self.factors()
                .iter()
                .any(|f| f.column(r).iter().all(|v| *v == 0.0))
        })
    }
}

impl ActivationSource for DenseTensor {
    fn act_shape(&self) -> Vec<usize> {
        self.shape().to_vec()
    }

    fn convolve(&self, atom: &DenseTensor) -> Result<DenseTensor> {
        conv::conv_auto(atom, self, ConvPolicy::default())
    }

    fn correlate(&self, residual: &DenseTensor) -> Result<DenseTensor> {
        conv::correlate_auto(residual, self, ConvPolicy::default())
    }

    fn is_zero(&self) -> bool {
        self.as_slice().iter().all(|v| *v == 0.0)
    }
}
