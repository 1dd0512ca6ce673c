use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

/// Two-stage tanh network `y = s_out * (W2 tanh(W1 (s_in x) + b1) + b2)`.
///
/// The weights live in a caller-provided parameter slice laid out as
/// `W1` (row-major, `hidden x input`), `b1`, `W2` (row-major,
/// `output x hidden`), `b2`. The input and output scales are fixed
/// hyperparameters and are never trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub input_scale: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub output_scale: f64,
}

/// Output of [`Mlp::eval_with_jacobians`].
#[derive(Clone, Debug)]
pub struct MlpEval {
    pub output: Vec<f64>,
    /// `output x input`
    pub d_input: DMatrix<f64>,
    /// `output x param_count`
    pub d_params: DMatrix<f64>,
}

/// Second-order information for a scalar-output network.
#[derive(Clone, Debug)]
pub struct ScalarMlpSecondOrder {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// `input x input`
    pub hessian: DMatrix<f64>,
    /// `input x param_count`: derivative of the input gradient w.r.t. the weights.
    pub gradient_d_params: DMatrix<f64>,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            input_scale: 1.0,
            output_scale: 1.0,
        }
    }

    pub fn with_scales(mut self, input_scale: f64, output_scale: f64) -> Self {
        self.input_scale = input_scale;
        self.output_scale = output_scale;
        self
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.output == 0 {
            return Err(Error::Structure(format!(
                "network sizes must be positive, got {}-{}-{}",
                self.input, self.hidden, self.output
            )));
        }
        if !(self.input_scale.is_finite() && self.output_scale.is_finite()) {
            return Err(Error::Structure("network scales must be finite".into()));
        }
        Ok(())
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per stage.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let s1 = 1.0 / (self.input as f64).sqrt();
        let s2 = 1.0 / (self.hidden as f64).sqrt();
        let n1 = self.hidden * self.input + self.hidden;
        (0..self.param_count())
            .map(|k| {
                let s = if k < n1 { s1 } else { s2 };
                rng.gen_range(-s..=s)
            })
            .collect()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }

    fn check(&self, input: &[f64], w: &[f64]) -> Result<()> {
        if input.len() != self.input {
            return Err(Error::dim("network input", self.input, input.len()));
        }
        if w.len() != self.param_count() {
            return Err(Error::dim("network parameters", self.param_count(), w.len()));
        }
        Ok(())
    }

    /// Hidden pre-activations.
    fn pre_activations(&self, input: &[f64], w: &[f64]) -> Vec<f64> {
        let (b1, _, _) = self.offsets();
        (0..self.hidden)
            .map(|h| {
                let row = &w[h * self.input..(h + 1) * self.input];
                let dot: f64 = row.iter().zip(input).map(|(a, x)| a * x).sum();
                self.input_scale * dot + w[b1 + h]
            })
            .collect()
    }

    pub fn eval(&self, input: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check(input, w)?;
        let mut out = vec![0.0; self.output];
        self.eval_into(input, w, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into a caller buffer.
    pub(crate) fn eval_into(&self, input: &[f64], w: &[f64], out: &mut [f64]) {
        let (_, w2, b2) = self.offsets();
        let act: Vec<f64> = self.pre_activations(input, w).into_iter().map(f64::tanh).collect();
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &w[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
            let dot: f64 = row.iter().zip(&act).map(|(a, t)| a * t).sum();
            *slot = self.output_scale * (dot + w[b2 + o]);
        }
    }

    pub fn eval_with_jacobians(&self, input: &[f64], w: &[f64]) -> Result<MlpEval> {
        self.check(input, w)?;
        Ok(self.eval_with_jacobians_unchecked(input, w))
    }

    pub(crate) fn eval_with_jacobians_unchecked(&self, input: &[f64], w: &[f64]) -> MlpEval {
        let (b1, w2, b2) = self.offsets();
        let (ni, nh, no) = (self.input, self.hidden, self.output);
        let (si, so) = (self.input_scale, self.output_scale);
        let act: Vec<f64> = self.pre_activations(input, w).into_iter().map(f64::tanh).collect();
        let sech2: Vec<f64> = act.iter().map(|t| 1.0 - t * t).collect();

        let mut output = vec![0.0; no];
        let mut d_input = DMatrix::zeros(no, ni);
        let mut d_params = DMatrix::zeros(no, self.param_count());
        for o in 0..no {
            let w2row = &w[w2 + o * nh..w2 + (o + 1) * nh];
            let mut y = w[b2 + o];
            for h in 0..nh {
                y += w2row[h] * act[h];
                let g = so * w2row[h] * sech2[h];
                if g != 0.0 {
                    for i in 0..ni {
                        d_input[(o, i)] += g * w[h * ni + i] * si;
                        d_params[(o, h * ni + i)] = g * si * input[i];
                    }
                    d_params[(o, b1 + h)] = g;
                }
                d_params[(o, w2 + o * nh + h)] = so * act[h];
            }
            d_params[(o, b2 + o)] = so;
            output[o] = so * y;
        }
        MlpEval {
            output,
            d_input,
            d_params,
        }
    }

    /// Value, input gradient, Hessian and mixed derivatives of a
    /// scalar-output network (used for neural energy functions).
    pub fn scalar_second_order(&self, input: &[f64], w: &[f64]) -> Result<ScalarMlpSecondOrder> {
        self.check(input, w)?;
        if self.output != 1 {
            return Err(Error::dim("scalar network output", 1, self.output));
        }
        let (b1, w2, b2) = self.offsets();
        let (ni, nh) = (self.input, self.hidden);
        let (si, so) = (self.input_scale, self.output_scale);
        let act: Vec<f64> = self.pre_activations(input, w).into_iter().map(f64::tanh).collect();

        let mut value = w[b2];
        let mut gradient = vec![0.0; ni];
        let mut hessian = DMatrix::zeros(ni, ni);
        let mut mixed = DMatrix::zeros(ni, self.param_count());
        for h in 0..nh {
            let t = act[h];
            let s = 1.0 - t * t;
            let ds = -2.0 * t * s;
            let v = w[w2 + h];
            value += v * t;
            let row = &w[h * ni..(h + 1) * ni];
            for i in 0..ni {
                gradient[i] += so * si * v * s * row[i];
                for j in 0..ni {
                    hessian[(i, j)] += so * si * si * v * ds * row[i] * row[j];
                }
                // d/dW1[h][k] of so*si*v*s*W1[h][i]
                for k in 0..ni {
                    let mut d = so * si * v * ds * si * input[k] * row[i];
                    if k == i {
                        d += so * si * v * s;
                    }
                    mixed[(i, h * ni + k)] += d;
                }
                mixed[(i, b1 + h)] += so * si * v * ds * row[i];
                mixed[(i, w2 + h)] += so * si * s * row[i];
            }
        }
        Ok(ScalarMlpSecondOrder {
            value: so * value,
            gradient,
            hessian,
            gradient_d_params: mixed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1e-8 + a.abs().max(b.abs()))
    }

    // Central-difference oracle, independent of the analytic chain rule.
    fn fd_input(net: &Mlp, x: &[f64], w: &[f64], h: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(net.output, net.input);
        for i in 0..net.input {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let yp = net.eval(&xp, w).unwrap();
            let ym = net.eval(&xm, w).unwrap();
            for o in 0..net.output {
                m[(o, i)] = (yp[o] - ym[o]) / (2.0 * h);
            }
        }
        m
    }

    fn fd_params(net: &Mlp, x: &[f64], w: &[f64], h: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(net.output, w.len());
        for k in 0..w.len() {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[k] += h;
            wm[k] -= h;
            let yp = net.eval(x, &wp).unwrap();
            let ym = net.eval(x, &wm).unwrap();
            for o in 0..net.output {
                m[(o, k)] = (yp[o] - ym[o]) / (2.0 * h);
            }
        }
        m
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let scale = b.amax().max(1e-3);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() / scale <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn zero_network_has_zero_output_and_input_jacobian() {
        let net = Mlp::new(3, 4, 2);
        let w = vec![0.0; net.param_count()];
        let e = net.eval_with_jacobians(&[0.3, -1.0, 2.0], &w).unwrap();
        assert!(e.output.iter().all(|&y| y == 0.0));
        assert!(e.d_input.iter().all(|&d| d == 0.0));
        // Only W2 (tanh(0)=0) and b2 columns survive: b2 columns equal 1.
        assert_eq!(e.d_params[(0, net.param_count() - 2)], 1.0);
        assert_eq!(e.d_params[(1, net.param_count() - 1)], 1.0);
    }

    #[test]
    fn unit_scalar_network_at_origin() {
        let net = Mlp::new(1, 1, 1);
        let w = [1.0, 0.0, 1.0, 0.0];
        let e = net.eval_with_jacobians(&[0.0], &w).unwrap();
        assert_eq!(e.output[0], 0.0);
        assert!((e.d_input[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bias_only_output_for_zero_weights() {
        let net = Mlp::new(1, 3, 1);
        let mut w = vec![0.0; net.param_count()];
        *w.last_mut().unwrap() = 0.7;
        assert_eq!(net.eval(&[5.0], &w).unwrap(), vec![0.7]);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..10 {
            let net = Mlp::new(1 + trial % 3, 2 + trial % 5, 1 + trial % 2).with_scales(0.7, 1.3);
            let w = net.init_params(&mut rng);
            let x: Vec<f64> = (0..net.input).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let e = net.eval_with_jacobians(&x, &w).unwrap();
            assert_close(&e.d_input, &fd_input(&net, &x, &w, 1e-6), 1e-5);
            assert_close(&e.d_params, &fd_params(&net, &x, &w, 1e-6), 1e-5);
        }
    }

    #[test]
    fn scalar_second_order_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new(2, 5, 1).with_scales(0.8, 2.0);
        let w = net.init_params(&mut rng);
        let x = [0.4, -0.9];
        let so = net.scalar_second_order(&x, &w).unwrap();
        let first = net.eval_with_jacobians(&x, &w).unwrap();
        assert!(rel_err(so.value, first.output[0]) < 1e-14);
        for i in 0..2 {
            assert!(rel_err(so.gradient[i], first.d_input[(0, i)]) < 1e-12);
        }
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let gp = net.scalar_second_order(&xp, &w).unwrap().gradient;
            let gm = net.scalar_second_order(&xm, &w).unwrap().gradient;
            for i in 0..2 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((so.hessian[(i, j)] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
        for k in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += h;
            wm[k] -= h;
            let gp = net.scalar_second_order(&x, &wp).unwrap().gradient;
            let gm = net.scalar_second_order(&x, &wm).unwrap().gradient;
            for i in 0..2 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((so.gradient_d_params[(i, k)] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn param_count_formula_holds_for_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (i, h, o) = (rng.gen_range(1..10), rng.gen_range(1..60), rng.gen_range(1..6));
            let net = Mlp::new(i, h, o);
            assert_eq!(net.param_count(), h * i + h + o * h + o);
            assert_eq!(net.init_params(&mut rng).len(), net.param_count());
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Mlp::new(2, 3, 1);
        let w = vec![0.0; net.param_count()];
        assert!(matches!(net.eval(&[1.0], &w), Err(Error::Dimension { .. })));
        assert!(matches!(net.eval(&[1.0, 2.0], &w[1..]), Err(Error::Dimension { .. })));
    }
}
