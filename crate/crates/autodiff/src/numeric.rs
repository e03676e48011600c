use crate::tensor::Tensor;

/// Central-difference gradient estimate of `f` at `point`.
pub fn finite_difference(f: impl Fn(&Tensor) -> f64, point: &Tensor, epsilon: f64) -> Tensor {
    assert!(epsilon > 0.0, "finite_difference: epsilon must be positive");
    let mut x = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + epsilon;
        let up = f(&x);
        x.data_mut()[i] = orig - epsilon;
        let down = f(&x);
        x.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * epsilon);
    }
    grad
}
