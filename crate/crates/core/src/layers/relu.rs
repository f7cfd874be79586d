use crate::error::Result;
use crate::layers::tape::{LayerId, Saved, Tape};
use crate::tensor::{Real, Tensor4};

pub fn relu_fwd<T: Real>(x: &Tensor4<T>, id: LayerId, tape: Option<&mut Tape<T>>) -> Tensor4<T> {
    let y = x.map(|v| v.max(T::zero()));
    if let Some(tape) = tape {
        tape.push(id, Saved::Relu { input: x.clone() });
    }
    y
}

/// Passes the gradient where the input was strictly positive; the
/// subgradient at exactly zero is zero.
pub fn relu_bwd<T: Real>(
    grad_out: &Tensor4<T>,
    id: LayerId,
    tape: &mut Tape<T>,
) -> Result<Tensor4<T>> {
    let x = match tape.pop(id, "relu")? {
        Saved::Relu { input } => input,
        _ => unreachable!("kind checked by Tape::pop"),
    };
    x.same_shape(grad_out)?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(x.shape(), data)
}
