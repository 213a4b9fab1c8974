//! Softmax classifiers used as local losses: multinomial logistic regression
//! and a one-hidden-layer sigmoid network.
//!
//! Parameter layout (row-major throughout):
//! - logistic: `W (k x d)`, `b (k)`
//! - MLP: `W1 (h x d)`, `b1 (h)`, `W2 (k x h)`, `b2 (k)`

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::vector::ModelVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelShape {
    Logistic { d: usize, k: usize },
    Mlp { d: usize, h: usize, k: usize },
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn view2<'a>(params: &'a [f64], offset: usize, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), &params[offset..offset + rows * cols]).unwrap()
}

fn view1(params: &[f64], offset: usize, len: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&params[offset..offset + len])
}

/// Turns logits into probabilities in place (row-wise softmax) and returns the
/// summed cross-entropy.
fn softmax_xent(logits: &mut Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (mut row, &y) in logits.axis_iter_mut(Axis(0)).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z: f64 = row.sum();
        total += z.ln() - row[y].ln();
        row /= z;
    }
    total
}

impl ModelShape {
    pub fn dim(&self) -> usize {
        match *self {
            ModelShape::Logistic { d, k } => k * d + k,
            ModelShape::Mlp { d, h, k } => h * d + h + k * h + k,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            ModelShape::Logistic { k, .. } | ModelShape::Mlp { k, .. } => k,
        }
    }

    pub fn features(&self) -> usize {
        match *self {
            ModelShape::Logistic { d, .. } | ModelShape::Mlp { d, .. } => d,
        }
    }

    fn logits_and_hidden(&self, params: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, Option<Array2<f64>>) {
        match *self {
            ModelShape::Logistic { d, k } => {
                let w = view2(params, 0, k, d);
                let b = view1(params, k * d, k);
                (x.dot(&w.t()) + b, None)
            }
            ModelShape::Mlp { d, h, k } => {
                let w1 = view2(params, 0, h, d);
                let b1 = view1(params, h * d, h);
                let w2 = view2(params, h * d + h, k, h);
                let b2 = view1(params, h * d + h + k * h, k);
                let hidden = (x.dot(&w1.t()) + b1).mapv_into(sigmoid);
                let logits = hidden.dot(&w2.t()) + b2;
                (logits, Some(hidden))
            }
        }
    }

    /// Mean cross-entropy over the rows of `x` and, if asked, its gradient.
    pub fn loss_grad(
        &self,
        params: &ModelVector,
        x: ArrayView2<f64>,
        labels: &[usize],
        want_grad: bool,
    ) -> (f64, Option<ModelVector>) {
        let params = params.as_slice().expect("contiguous parameters");
        let rows = x.nrows();
        let inv = 1.0 / rows as f64;
        let (mut probs, hidden) = self.logits_and_hidden(params, x);
        let loss = softmax_xent(&mut probs, labels) * inv;
        if !want_grad {
            return (loss, None);
        }
        // dL/dlogits = (P - onehot) / B
        for (mut row, &y) in probs.axis_iter_mut(Axis(0)).zip(labels) {
            row[y] -= 1.0;
        }
        probs *= inv;
        let dlogits = probs;
        let mut grad = Array1::zeros(self.dim());
        match *self {
            ModelShape::Logistic { d, k } => {
                let gw = dlogits.t().dot(&x);
                grad.slice_mut(s![..k * d])
                    .assign(&Array1::from_iter(gw.iter().copied()));
                grad.slice_mut(s![k * d..]).assign(&dlogits.sum_axis(Axis(0)));
            }
            ModelShape::Mlp { d, h, k } => {
                let hidden = hidden.expect("mlp hidden layer");
                let w2 = view2(params, h * d + h, k, h);
                let gw2 = dlogits.t().dot(&hidden);
                let gb2 = dlogits.sum_axis(Axis(0));
                let mut dpre = dlogits.dot(&w2);
                dpre.zip_mut_with(&hidden, |g, &a| *g *= a * (1.0 - a));
                let gw1 = dpre.t().dot(&x);
                let gb1 = dpre.sum_axis(Axis(0));
                let o1 = h * d;
                let o2 = o1 + h;
                let o3 = o2 + k * h;
                grad.slice_mut(s![..o1]).assign(&Array1::from_iter(gw1.iter().copied()));
                grad.slice_mut(s![o1..o2]).assign(&gb1);
                grad.slice_mut(s![o2..o3])
                    .assign(&Array1::from_iter(gw2.iter().copied()));
                grad.slice_mut(s![o3..]).assign(&gb2);
            }
        }
        (loss, Some(grad))
    }

    pub fn predict(&self, params: &ModelVector, x: ArrayView2<f64>) -> Vec<usize> {
        let params = params.as_slice().expect("contiguous parameters");
        let (logits, _) = self.logits_and_hidden(params, x);
        logits
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                    )
                    .0
            })
            .collect()
    }
}
