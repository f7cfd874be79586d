use crate::error::{Error, Result};
use crate::tensor::{randn, Real, Rng, Tensor4};

/// He-normal weights `N(0, 2 / fan_in)` with `fan_in = in_c·kh·kw`.
pub fn he_init<T: Real>(rng: &mut Rng, shape: [usize; 4]) -> Result<Tensor4<T>> {
    let fan_in = shape[1] * shape[2] * shape[3];
    if fan_in == 0 {
        return Err(Error::InvalidArgument(
            "He init needs a positive fan-in".into(),
        ));
    }
    randn(rng, shape[0], shape[1], shape[2], shape[3], he_std(fan_in))
}

pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}
