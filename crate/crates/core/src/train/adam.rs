use funcnet_tensor::{Element, Tensor};

use crate::error::{Error, Result};

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Element> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<_> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().clone()))
            .collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    /// One bias-corrected Adam update. Arithmetic is carried out in f64 and
    /// rounded once per stored value.
    pub fn update(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Tensor<T>],
        lr: f64,
        h: AdamHyper,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Config(format!(
                "optimizer holds {} moments for {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            params[i].expect_same_shape(g, "adam")?;
            if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    iteration: self.step,
                    reason: format!("non-finite gradient in parameter tensor {i} at element {j}"),
                });
            }
        }
        self.step += 1;
        let c1 = 1.0 - h.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - h.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let gj = gj.as_f64();
                let mj = h.beta1 * m[j].as_f64() + (1.0 - h.beta1) * gj;
                let vj = h.beta2 * v[j].as_f64() + (1.0 - h.beta2) * gj * gj;
                m[j] = T::from_f64_lossy(mj);
                v[j] = T::from_f64_lossy(vj);
                let step = lr * (mj / c1) / ((vj / c2).sqrt() + h.eps);
                p[j] = T::from_f64_lossy(p[j].as_f64() - step);
            }
        }
        Ok(())
    }
}
