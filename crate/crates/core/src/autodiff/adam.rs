use super::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Adam {
        let (m, v) = params
            .into_iter()
            .map(|p| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())))
            .unzip();
        Adam { config, step: 0, m, v }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update. `params` and `grads` must line up with the tensors
    /// given to [`Adam::new`].
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Matrix>, grads: &[Matrix]) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let mut count = 0;
        for (k, p) in params.into_iter().enumerate() {
            let g = &grads[k];
            assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {k}");
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            count += 1;
        }
        assert_eq!(count, self.m.len(), "parameter count changed between steps");
    }
}
