use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INPUTS: usize = 6;

/// Residual perceptron `6 -> H -> H -> 1` with SiLU activations. The output
/// layer starts at zero, so a fresh net is the identity on disparity.
///
/// Parameters live in one flat vector laid out as
/// `[W1 (H x 6), b1 (H), W2 (H x H), b2 (H), w3 (H), b3]`, matrices
/// column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementNet {
    hidden: usize,
    params: Vec<f64>,
}

/// Intermediate values of a batched forward pass, kept for backprop.
pub(crate) struct Activations {
    inputs: DMatrix<f64>,
    z1: DMatrix<f64>,
    s1: DMatrix<f64>,
    a1: DMatrix<f64>,
    z2: DMatrix<f64>,
    s2: DMatrix<f64>,
    a2: DMatrix<f64>,
    pub(crate) out: DVector<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// SiLU derivative from the pre-activation and its sigmoid.
fn silu_prime(z: f64, s: f64) -> f64 {
    s * (1.0 + z * (1.0 - s))
}

impl RefinementNet {
    pub fn param_count(hidden: usize) -> usize {
        hidden * INPUTS + hidden + hidden * hidden + hidden + hidden + 1
    }

    /// Glorot-uniform hidden layers, zero biases, zero output layer.
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; Self::param_count(hidden)];
        let h = hidden;
        let b1 = 6.0f64.sqrt() / ((INPUTS + h) as f64).sqrt();
        for p in &mut params[..h * INPUTS] {
            *p = rng.gen_range(-b1..b1);
        }
        let b2 = 6.0f64.sqrt() / ((2 * h) as f64).sqrt();
        let w2 = h * INPUTS + h;
        for p in &mut params[w2..w2 + h * h] {
            *p = rng.gen_range(-b2..b2);
        }
        Self { hidden, params }
    }

    pub fn from_params(hidden: usize, params: Vec<f64>) -> Option<Self> {
        (params.len() == Self::param_count(hidden) && params.iter().all(|p| p.is_finite()))
            .then_some(Self { hidden, params })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 6] {
        let h = self.hidden;
        let w1 = 0;
        let b1 = w1 + h * INPUTS;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h;
        [w1, b1, w2, b2, w3, b3]
    }

    fn views(&self) -> (DMatrixView<'_, f64>, DVectorView<'_, f64>, DMatrixView<'_, f64>, DVectorView<'_, f64>, DVectorView<'_, f64>, f64) {
        let h = self.hidden;
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let p = &self.params;
        (
            DMatrixView::from_slice(&p[w1..b1], h, INPUTS),
            DVectorView::from_slice(&p[b1..w2], h),
            DMatrixView::from_slice(&p[w2..b2], h, h),
            DVectorView::from_slice(&p[b2..w3], h),
            DVectorView::from_slice(&p[w3..b3], h),
            p[b3],
        )
    }

    /// Residual output for each column of `inputs` (6 x B).
    pub(crate) fn forward(&self, inputs: DMatrix<f64>) -> Activations {
        let (w1, b1, w2, b2, w3, b3) = self.views();
        let mut z1 = w1 * &inputs;
        for mut col in z1.column_iter_mut() {
            col += b1;
        }
        let s1 = z1.map(sigmoid);
        let a1 = z1.component_mul(&s1);
        let mut z2 = w2 * &a1;
        for mut col in z2.column_iter_mut() {
            col += b2;
        }
        let s2 = z2.map(sigmoid);
        let a2 = z2.component_mul(&s2);
        // explicit transposes keep these on the blocked matrix product path
        let out = (w3.transpose() * &a2).transpose().add_scalar(b3);
        Activations {
            inputs,
            z1,
            s1,
            a1,
            z2,
            s2,
            a2,
            out,
        }
    }

    /// Accumulate `d(loss)/d(params)` into `grad` given `d(loss)/d(out)`.
    pub(crate) fn backward(&self, act: &Activations, d_out: &DVector<f64>, grad: &mut [f64]) {
        let (_, _, w2, _, w3, _) = self.views();
        let [w1o, b1o, w2o, b2o, w3o, b3o] = self.offsets();

        let mut d_z2 = w3 * d_out.transpose();
        d_z2.zip_zip_apply(&act.z2, &act.s2, |d, z, s| *d *= silu_prime(z, s));
        let mut d_z1 = w2.transpose() * &d_z2;
        d_z1.zip_zip_apply(&act.z1, &act.s1, |d, z, s| *d *= silu_prime(z, s));

        let g_w3 = &act.a2 * d_out;
        let g_w2 = &d_z2 * act.a1.transpose();
        let g_w1 = &d_z1 * act.inputs.transpose();
        let add = |dst: &mut [f64], src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        };
        add(&mut grad[w1o..b1o], g_w1.as_slice());
        add(&mut grad[b1o..w2o], d_z1.column_sum().as_slice());
        add(&mut grad[w2o..b2o], g_w2.as_slice());
        add(&mut grad[b2o..w3o], d_z2.column_sum().as_slice());
        add(&mut grad[w3o..b3o], g_w3.as_slice());
        grad[b3o] += d_out.sum();
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
