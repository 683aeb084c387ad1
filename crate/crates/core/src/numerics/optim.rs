use super::Tensor;

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        AdamState {
            step_count: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update over `params` using their accumulated gradients.
/// Parameters without a gradient slot are treated as having zero gradient.
pub fn adam_step(params: &mut [Tensor], state: &mut AdamState) {
    assert_eq!(
        params.len(),
        state.first_moment.len(),
        "optimizer/parameter count mismatch"
    );
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.learning_rate, state.epsilon);
    for (i, p) in params.iter_mut().enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let (grad, data) = p.grad_and_data_mut();
        match grad {
            Some(g) => {
                for (((x, &gj), mj), vj) in data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mj = b1 * *mj + (1.0 - b1) * gj;
                    *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                    *x -= lr * (*mj / c1) / ((*vj / c2).sqrt() + eps);
                }
            }
            None => {
                for ((x, mj), vj) in data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mj *= b1;
                    *vj *= b2;
                    *x -= lr * (*mj / c1) / ((*vj / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `threshold`.
/// Returns the norm measured before clipping.
pub fn clip_global_norm(params: &mut [Tensor], threshold: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > threshold {
        let s = threshold / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}
