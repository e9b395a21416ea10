//! Complex-valued network substrate: tensors, reverse-mode tape, complex
//! convolutions, complex batch normalization and initialisation.

pub mod batchnorm;
pub mod complex;
pub mod conv;
pub mod gradcheck;
pub mod init;
mod ops;
pub mod tape;
pub mod tensor;

pub use batchnorm::{
    complex_batch_norm, complex_whiten, BatchNormVars, ChannelStats, ComplexBatchNorm,
};
pub use complex::{apply_mask, estimate_mask, ComplexVar, MASK_EPS};
pub use conv::{complex_conv2d, complex_conv_transpose2d, ComplexConvLayer, Conv2dGeometry};
pub use init::init_complex_weights;
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::{ComplexTensor, Tensor};

/// Leaky CReLU on a value-level complex tensor.
pub fn lecrelu<S: crate::real::Real>(x: &ComplexTensor<S>, slope: f64) -> ComplexTensor<S> {
    let s = S::lit(slope);
    let f = move |v: S| if v >= S::zero() { v } else { s * v };
    ComplexTensor {
        re: x.re.map(f),
        im: x.im.map(f),
    }
}
