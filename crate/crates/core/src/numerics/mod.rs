//! Dense tensors and differentiable primitives.
//!
//! Every primitive returns a [`Dual`]: the forward value together with a
//! closure that maps an upstream gradient (shaped like the output) to one
//! gradient per input. The encoder composes these closures explicitly; there
//! is no tape.

mod gradcheck;
mod ops;
mod tensor;

pub use gradcheck::{check_dual, grad_check, relative_error, GradCheckReport, InputCheck};
pub use ops::{
    add, add_row_bias, cross_entropy_soft, gather_rows, gelu, layer_norm, linear, matmul,
    mse, mul_const, scale, softmax_rows, tanh, LAYER_NORM_EPS,
};
pub use tensor::Tensor;

type BackwardFn<G> = Box<dyn Fn(&Tensor) -> G + Send + Sync>;

/// Forward output paired with its reverse-mode map.
pub struct Dual<G = Vec<Tensor>> {
    pub output: Tensor,
    backward: BackwardFn<G>,
}

impl<G> Dual<G> {
    pub fn new(output: Tensor, backward: impl Fn(&Tensor) -> G + Send + Sync + 'static) -> Self {
        Dual {
            output,
            backward: Box::new(backward),
        }
    }

    /// Pulls `upstream` (d loss / d output) back to the inputs.
    ///
    /// Panics if `upstream` is not shaped like the output; that is a wiring
    /// bug in the caller, not a data error.
    pub fn backward(&self, upstream: &Tensor) -> G {
        assert_eq!(
            upstream.shape(),
            self.output.shape(),
            "upstream gradient shape must match output shape"
        );
        (self.backward)(upstream)
    }
}

impl<G> std::fmt::Debug for Dual<G> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dual").field("output", &self.output).finish_non_exhaustive()
    }
}
