//! Dense tensors with define-by-run reverse-mode automatic differentiation,
//! plus the 3D convolution, transposed convolution, batch-norm and activation
//! kernels the video GAN is built from.
//!
//! ```
//! use mdgan_tensor::Tensor;
//!
//! let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap().with_grad(true);
//! let y = x.mul(&x).unwrap().sum_all();
//! y.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
//! ```

mod element;
mod error;
pub mod gradcheck;
pub mod nn;
mod ops;
pub mod serialize;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use gradcheck::{check_gradient, grad_check, GradCheck, GradCheckReport};
pub use ops::{BinaryKind, ReduceKind};
pub use serialize::{Payload, RawTensor};
pub use tensor::Tensor;
