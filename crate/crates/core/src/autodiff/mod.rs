//! Forward-mode duals, a reverse-mode scalar tape, and the helpers that
//! combine them into exact parameter gradients of losses containing input
//! gradients.

mod dual;
pub(crate) mod scalar;
mod tape;

pub use dual::Dual;
pub use scalar::Scalar;
pub use tape::{Gradient, Tape, Var};

/// Value and gradient of `f` at `params`, by recording `f` on a fresh tape.
///
/// Writing `f` over `Dual<Var>` gives exact parameter gradients of
/// expressions that contain input derivatives.
pub fn value_and_grad<F>(params: &[f64], f: F) -> (f64, Vec<f64>)
where
    F: for<'t> FnOnce(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::with_capacity(params.len() * 8);
    let vars: Vec<Var<'_>> = params.iter().map(|&p| tape.var(p)).collect();
    let out = f(&vars);
    tape.freeze();
    let g = tape.gradient(out);
    (out.value(), vars.iter().map(|&v| g.wrt(v)).collect())
}
