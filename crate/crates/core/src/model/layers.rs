//! Instance-level layers: multi-value pooling, the inner-product
//! representation, the MLP classifier and its reverse pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CLAMP;
use crate::tensor::{axpy, dot, Mat};

/// Mean of the slot's vectors; an empty slot gives the zero vector.
pub fn pool_multivalued(slot: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if slot.is_empty() {
        return out;
    }
    let w = 1.0 / slot.len() as f64;
    for v in slot {
        axpy(w, v, &mut out);
    }
    out
}

/// Concatenated field vectors followed by every pairwise inner product
/// `<E_i, E_j>`, `i < j`, in lexicographic pair order.
pub fn inner_product_layer(bundle: &[Vec<f64>]) -> Result<Vec<f64>> {
    let f = bundle.len();
    if f < 2 {
        return Err(Error::InvalidArgument(format!(
            "inner product layer needs at least 2 fields, got {f}"
        )));
    }
    let d = bundle[0].len();
    if let Some(bad) = bundle.iter().find(|v| v.len() != d) {
        return Err(Error::Dimension {
            context: "field vector",
            expected: d,
            got: bad.len(),
        });
    }
    let mut out = Vec::with_capacity(f * d + f * (f - 1) / 2);
    for v in bundle {
        out.extend_from_slice(v);
    }
    for i in 0..f {
        for j in i + 1..f {
            out.push(dot(&bundle[i], &bundle[j]));
        }
    }
    Ok(out)
}

pub fn representation_len(fields: usize, dim: usize) -> usize {
    fields * dim + fields * (fields - 1) / 2
}

/// Gradient with respect to each field vector given `dr`.
pub fn inner_product_backward(bundle: &[Vec<f64>], dr: &[f64]) -> Vec<Vec<f64>> {
    let f = bundle.len();
    let d = bundle[0].len();
    let mut out: Vec<Vec<f64>> = (0..f).map(|i| dr[i * d..(i + 1) * d].to_vec()).collect();
    let mut k = f * d;
    for i in 0..f {
        for j in i + 1..f {
            let g = dr[k];
            k += 1;
            if g != 0.0 {
                axpy(g, &bundle[j], &mut out[i]);
                axpy(g, &bundle[i], &mut out[j]);
            }
        }
    }
    out
}

/// Fully connected layer `W x + b`, `W` is out x in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Dense {
    /// Xavier-uniform weights, zero bias.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Dense {
            w: Mat::from_vec(
                output,
                input,
                (0..input * output)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            ),
            b: vec![0.0; output],
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Mat::zeros(output, input),
            b: vec![0.0; output],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.w.cols(), self.w.rows())
    }

    pub fn input(&self) -> usize {
        self.w.cols()
    }

    pub fn output(&self) -> usize {
        self.w.rows()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Forward state of one MLP evaluation.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// Input of every layer (`inputs[0]` is the representation).
    pub inputs: Vec<Vec<f64>>,
    /// Hidden pre-activations.
    pub pre: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers per hidden layer (empty when off).
    pub masks: Vec<Vec<f64>>,
    pub logit: f64,
    /// Clamped sigmoid output.
    pub prob: f64,
}

pub fn check_mlp(layers: &[Dense], input: usize) -> Result<()> {
    let mut width = input;
    for l in layers {
        if l.input() != width {
            return Err(Error::Dimension {
                context: "mlp layer input",
                expected: width,
                got: l.input(),
            });
        }
        width = l.output();
    }
    if width != 1 || layers.is_empty() {
        return Err(Error::Dimension {
            context: "mlp output width",
            expected: 1,
            got: width,
        });
    }
    Ok(())
}

/// ReLU hidden layers, sigmoid output clamped to `[1e-7, 1 - 1e-7]`.
/// Dropout (inverted) is applied to hidden activations when `dropout` is given.
pub fn mlp_forward<R: Rng>(
    x: &[f64],
    layers: &[Dense],
    dropout: Option<(f64, &mut R)>,
) -> MlpTrace {
    let mut inputs = vec![x.to_vec()];
    let mut pre = Vec::new();
    let mut masks = Vec::new();
    let mut dropout = dropout.filter(|(rate, _)| *rate > 0.0);
    for (li, layer) in layers.iter().enumerate() {
        let mut z = layer.b.clone();
        layer.w.matvec_acc(inputs.last().unwrap(), &mut z);
        if li + 1 == layers.len() {
            let logit = z[0];
            return MlpTrace {
                inputs,
                pre,
                masks,
                logit,
                prob: sigmoid(logit).clamp(CLAMP, 1.0 - CLAMP),
            };
        }
        let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
        if let Some((rate, rng)) = dropout.as_mut() {
            let keep = 1.0 - *rate;
            let mask: Vec<f64> = (0..a.len())
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect();
            a.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            masks.push(mask);
        }
        pre.push(z);
        inputs.push(a);
    }
    unreachable!("mlp has at least one layer")
}

/// Gradient of the clamped-sigmoid logloss with respect to the logit. Zero
/// where the clamp is active, matching the loss that is actually computed.
pub fn logit_grad(trace: &MlpTrace, label: u8) -> f64 {
    let p = sigmoid(trace.logit);
    if !(CLAMP..=1.0 - CLAMP).contains(&p) {
        return 0.0;
    }
    p - label as f64
}

/// Loss of one clamped prediction.
pub fn instance_loss(prob: f64, label: u8) -> f64 {
    if label == 1 {
        -prob.ln()
    } else {
        -(1.0 - prob).ln()
    }
}

/// Reverse pass: accumulates layer gradients scaled by `dlogit` and returns
/// the gradient with respect to the MLP input.
pub fn mlp_backward(
    trace: &MlpTrace,
    layers: &[Dense],
    dlogit: f64,
    grads: &mut [Dense],
) -> Vec<f64> {
    let mut g = vec![dlogit];
    for li in (0..layers.len()).rev() {
        let input = &trace.inputs[li];
        grads[li].w.outer_acc(&g, input);
        axpy(1.0, &g, &mut grads[li].b);
        let mut dx = vec![0.0; layers[li].input()];
        layers[li].w.matvec_t_acc(&g, &mut dx);
        if li > 0 {
            let h = li - 1;
            if let Some(mask) = trace.masks.get(h) {
                dx.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            dx.iter_mut().zip(&trace.pre[h]).for_each(|(v, &z)| {
                if z <= 0.0 {
                    *v = 0.0
                }
            });
        }
        g = dx;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    #[test]
    fn pooling_examples() {
        assert_eq!(pool_multivalued(&[&[1.0, 2.0]], 2), vec![1.0, 2.0]);
        assert_eq!(
            pool_multivalued(&[&[1.0, 0.0], &[0.0, 1.0]], 2),
            vec![0.5, 0.5]
        );
        assert_eq!(pool_multivalued(&[], 3), vec![0.0; 3]);
    }

    #[test]
    fn inner_product_examples() {
        assert_eq!(
            inner_product_layer(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![1.0, 0.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(
            inner_product_layer(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(),
            vec![1.0, 1.0, 1.0, 1.0, 2.0]
        );
        assert!(inner_product_layer(&[vec![1.0]]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let r = inner_product_layer(&b).unwrap();
        assert_eq!(r.len(), 15);
        let mut k = 12;
        for i in 0..3 {
            for j in 0..3 {
                if i < j {
                    let mut s = 0.0;
                    for t in 0..4 {
                        s += b[i][t] * b[j][t];
                    }
                    assert!((r[k] - s).abs() < 1e-15);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn mlp_examples() {
        let zero = vec![Dense::zeros(3, 2), Dense::zeros(2, 1)];
        assert_eq!(
            mlp_forward::<NoRng>(&[1.0, 2.0, 3.0], &zero, None).prob,
            0.5
        );

        let mut big = zero.clone();
        big[1].b[0] = 50.0;
        assert_eq!(
            mlp_forward::<NoRng>(&[1.0, 2.0, 3.0], &big, None).prob,
            1.0 - 1e-7
        );

        // hand-set: hidden = relu([1 -1; 0 2] x + [0, -1]), out = [1, 0.5] h + 0.25
        let layers = vec![
            Dense {
                w: Mat::from_rows(&[vec![1.0, -1.0], vec![0.0, 2.0]]),
                b: vec![0.0, -1.0],
            },
            Dense {
                w: Mat::from_rows(&[vec![1.0, 0.5]]),
                b: vec![0.25],
            },
        ];
        let t = mlp_forward::<NoRng>(&[3.0, 1.0], &layers, None);
        // hidden = relu([2, 1]) = [2, 1]; logit = 2 + 0.5 + 0.25
        assert!((t.logit - 2.75).abs() < 1e-12);
        assert!((t.prob - 1.0 / (1.0 + (-2.75f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn balanced_zero_model_has_zero_bias_gradient() {
        let layers = vec![Dense::zeros(2, 3), Dense::zeros(3, 1)];
        let mut grads = vec![layers[0].zeros_like(), layers[1].zeros_like()];
        for (x, y) in [([1.0, 2.0], 1u8), ([0.5, -1.0], 0u8)] {
            let t = mlp_forward::<NoRng>(&x, &layers, None);
            mlp_backward(&t, &layers, logit_grad(&t, y) / 2.0, &mut grads);
        }
        assert_eq!(grads[1].b[0], 0.0);
    }

    #[test]
    fn zero_dropout_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layers = vec![Dense::init(4, 5, &mut rng), Dense::init(5, 1, &mut rng)];
        let x = [0.1, -0.3, 0.7, 0.2];
        let a = mlp_forward::<NoRng>(&x, &layers, None);
        let b = mlp_forward(&x, &layers, Some((0.0, &mut rng)));
        assert_eq!(a.logit, b.logit);
        let c = mlp_forward(&x, &layers, Some((0.5, &mut rng)));
        assert_eq!(c.masks.len(), 1);
    }

    #[test]
    fn reverse_pass_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bundle: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let layers = vec![Dense::init(15, 6, &mut rng), Dense::init(6, 1, &mut rng)];
        let loss = |b: &[Vec<f64>]| {
            let r = inner_product_layer(b).unwrap();
            instance_loss(mlp_forward::<NoRng>(&r, &layers, None).prob, 1)
        };
        let r = inner_product_layer(&bundle).unwrap();
        let t = mlp_forward::<NoRng>(&r, &layers, None);
        let mut grads = vec![layers[0].zeros_like(), layers[1].zeros_like()];
        let dr = mlp_backward(&t, &layers, logit_grad(&t, 1), &mut grads);
        let db = inner_product_backward(&bundle, &dr);
        for f in 0..3 {
            for k in 0..4 {
                let mut p = bundle.clone();
                p[f][k] += 1e-5;
                let mut m = bundle.clone();
                m[f][k] -= 1e-5;
                let fd = (loss(&p) - loss(&m)) / 2e-5;
                assert!((fd - db[f][k]).abs() < 1e-8, "{fd} vs {}", db[f][k]);
            }
        }
    }
}
