use crate::tensor::{cst, Real};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh form.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let inner = cst::<T>(SQRT_2_OVER_PI) * (x + cst::<T>(GELU_CUBIC) * x * x * x);
    cst::<T>(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let k = cst::<T>(SQRT_2_OVER_PI);
    let a = cst::<T>(GELU_CUBIC);
    let t = (k * (x + a * x * x * x)).tanh();
    let half = cst::<T>(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + cst::<T>(3.0) * a * x * x)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
