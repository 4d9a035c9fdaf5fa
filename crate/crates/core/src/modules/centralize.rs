use crate::tensor::{add_scalar, Real, Tensor};

/// Offset subtracted from `[0, 1]` images before the core network.
pub const CENTER: f64 = 0.5;

pub fn centralize<T: Real>(image: &Tensor<T>) -> Tensor<T> {
    add_scalar(image, T::of(-CENTER))
}

pub fn decentralize<T: Real>(core_output: &Tensor<T>) -> Tensor<T> {
    add_scalar(core_output, T::of(CENTER))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_grey_centers_to_zero() {
        let x = Tensor::<f32>::full([1, 3, 2, 2], 0.5);
        assert!(centralize(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 3], vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(decentralize(&centralize(&x)), x);
    }
}
