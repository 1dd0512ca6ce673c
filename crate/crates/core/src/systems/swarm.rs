use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CsParams;
use crate::constructs::Mlp;
use crate::error::{Error, Result};
use crate::network::OdeSystem;

/// Hyperparameters of the learned particle model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmModelSpec {
    pub particles: usize,
    pub dim: usize,
    pub hidden: usize,
    pub input_scale: f64,
    pub output_scale: f64,
}

impl Default for SwarmModelSpec {
    fn default() -> Self {
        Self {
            particles: 10,
            dim: 2,
            hidden: 100,
            input_scale: 0.1,
            output_scale: 10.0,
        }
    }
}

/// Homogeneous interacting particles with unit masses:
/// `dq_i/dt = p_i`, `dp_i/dt = (1/N) sum_j F(p_j - p_i, q_j - q_i)` where the
/// pair force `F` is one network shared by all pairs and the `j = i` term is
/// kept. State layout: positions then momenta, each `N x dim` row-major.
#[derive(Clone, Debug)]
pub struct SwarmModel {
    pub particles: usize,
    pub dim: usize,
    pub net: Mlp,
}

impl SwarmModel {
    pub fn new(spec: &SwarmModelSpec) -> Result<Self> {
        if spec.particles == 0 || !(1..=3).contains(&spec.dim) || spec.hidden == 0 {
            return Err(Error::Structure(format!(
                "invalid swarm model: {} particles, dimension {}, hidden {}",
                spec.particles, spec.dim, spec.hidden
            )));
        }
        let net = Mlp::new(2 * spec.dim, spec.hidden, spec.dim).with_scales(spec.input_scale, spec.output_scale);
        net.validate()?;
        Ok(Self {
            particles: spec.particles,
            dim: spec.dim,
            net,
        })
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.net.init_params(rng)
    }

    /// Pair force `F(dp, dq)`.
    pub fn pair_force(&self, dp: &[f64], dq: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        if dp.len() != self.dim || dq.len() != self.dim {
            return Err(Error::dim("pair input", self.dim, dp.len().max(dq.len())));
        }
        let input: Vec<f64> = dp.iter().chain(dq).copied().collect();
        self.net.eval(&input, w)
    }

    fn pair_input(&self, x: &[f64], i: usize, j: usize, buf: &mut [f64]) {
        let d = self.dim;
        let half = self.particles * d;
        for k in 0..d {
            buf[k] = x[half + j * d + k] - x[half + i * d + k];
            buf[d + k] = x[j * d + k] - x[i * d + k];
        }
    }
}

impl OdeSystem for SwarmModel {
    fn state_dim(&self) -> usize {
        2 * self.particles * self.dim
    }

    fn param_dim(&self) -> usize {
        self.net.param_count()
    }

    fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], w: &[f64], dx: &mut [f64]) {
        let (n, d) = (self.particles, self.dim);
        let half = n * d;
        let inv_n = 1.0 / n as f64;
        dx[..half].copy_from_slice(&x[half..]);
        dx[half..].iter_mut().for_each(|v| *v = 0.0);
        let mut input = vec![0.0; 2 * d];
        let mut f = vec![0.0; d];
        for i in 0..n {
            for j in 0..n {
                self.pair_input(x, i, j, &mut input);
                self.net.eval_into(&input, w, &mut f);
                for k in 0..d {
                    dx[half + i * d + k] += inv_n * f[k];
                }
            }
        }
    }

    fn rhs_partials(
        &self,
        _t: f64,
        x: &[f64],
        _u: &[f64],
        w: &[f64],
        dx: &mut [f64],
        dfdx: &mut DMatrix<f64>,
        dfdw: &mut DMatrix<f64>,
    ) {
        let (n, d) = (self.particles, self.dim);
        let half = n * d;
        let inv_n = 1.0 / n as f64;
        let net = &self.net;
        let (ni, nh) = (net.input, net.hidden);
        let so = net.output_scale * inv_n;
        let b1 = nh * ni;
        let w2 = b1 + nh;
        let b2 = w2 + d * nh;

        dx[..half].copy_from_slice(&x[half..]);
        dx[half..].iter_mut().for_each(|v| *v = 0.0);
        dfdx.fill(0.0);
        dfdw.fill(0.0);
        for r in 0..half {
            dfdx[(r, half + r)] = 1.0;
        }

        let mut input = vec![0.0; ni];
        let mut act = vec![0.0; nh];
        let mut jac = vec![0.0; d * ni];
        for i in 0..n {
            for j in 0..n {
                self.pair_input(x, i, j, &mut input);
                for h in 0..nh {
                    let row = &w[h * ni..(h + 1) * ni];
                    let dot: f64 = row.iter().zip(&input).map(|(a, b)| a * b).sum();
                    act[h] = (net.input_scale * dot + w[b1 + h]).tanh();
                }
                jac.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..d {
                    let r = half + i * d + o;
                    let w2row = &w[w2 + o * nh..w2 + (o + 1) * nh];
                    let mut y = w[b2 + o];
                    for h in 0..nh {
                        y += w2row[h] * act[h];
                        let gh = so * w2row[h] * (1.0 - act[h] * act[h]);
                        dfdw[(r, w2 + o * nh + h)] += so * act[h];
                        dfdw[(r, b1 + h)] += gh;
                        for (c, inp) in input.iter().enumerate() {
                            dfdw[(r, h * ni + c)] += gh * net.input_scale * inp;
                            jac[o * ni + c] += gh * w[h * ni + c];
                        }
                    }
                    dfdw[(r, b2 + o)] += so;
                    dx[r] += so * y;
                }
                if i == j {
                    continue;
                }
                // input = (p_j - p_i, q_j - q_i)
                for o in 0..d {
                    let r = half + i * d + o;
                    for k in 0..d {
                        let jp = jac[o * ni + k] * net.input_scale;
                        let jq = jac[o * ni + d + k] * net.input_scale;
                        dfdx[(r, half + j * d + k)] += jp;
                        dfdx[(r, half + i * d + k)] -= jp;
                        dfdx[(r, j * d + k)] += jq;
                        dfdx[(r, i * d + k)] -= jq;
                    }
                }
            }
        }
    }
}

/// Learned pair force along the first axis at zero relative velocity,
/// `F(0, q e_1)`, next to the reference `U'(|q|) sign(q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialCurve {
    pub q: Vec<f64>,
    pub learned: Vec<f64>,
    pub reference: Vec<f64>,
}

impl PotentialCurve {
    /// Fraction of grid points with `lo <= |q| <= hi` where both curves share a sign.
    pub fn sign_agreement(&self, lo: f64, hi: f64) -> f64 {
        let mut total = 0usize;
        let mut agree = 0usize;
        for k in 0..self.q.len() {
            let a = self.q[k].abs();
            if a < lo || a > hi {
                continue;
            }
            total += 1;
            if self.learned[k].signum() == self.reference[k].signum() {
                agree += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            agree as f64 / total as f64
        }
    }
}

/// `q` from -10 to 10 in steps of 0.1 (201 points).
pub fn default_q_grid() -> Vec<f64> {
    (0..=200).map(|k| -10.0 + 0.1 * k as f64).collect()
}

pub fn recover_potential_curve(
    model: &SwarmModel,
    w: &[f64],
    grid: &[f64],
    params: &CsParams,
) -> Result<PotentialCurve> {
    let d = model.dim;
    let mut learned = Vec::with_capacity(grid.len());
    let mut dq = vec![0.0; d];
    for &q in grid {
        dq[0] = q;
        learned.push(model.pair_force(&vec![0.0; d], &dq, w)?[0]);
    }
    Ok(PotentialCurve {
        q: grid.to_vec(),
        learned,
        reference: grid.iter().map(|&q| params.potential_grad_signed(q)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (SwarmModel, Vec<f64>, Vec<f64>) {
        let spec = SwarmModelSpec {
            particles: 5,
            dim: 2,
            hidden: 7,
            input_scale: 0.3,
            output_scale: 2.0,
        };
        let model = SwarmModel::new(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = model.init_params(&mut rng);
        let x: Vec<f64> = (0..model.state_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        (model, w, x)
    }

    #[test]
    fn zero_network_moves_in_straight_lines() {
        let (model, w, x) = small();
        let zero = vec![0.0; w.len()];
        let mut dx = vec![0.0; x.len()];
        model.rhs(0.0, &x, &[], &zero, &mut dx);
        let half = x.len() / 2;
        assert_eq!(&dx[..half], &x[half..]);
        assert!(dx[half..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn permutation_equivariance() {
        let (model, w, x) = small();
        let (n, d) = (model.particles, model.dim);
        let perm = [3, 0, 4, 1, 2];
        let mut y = x.clone();
        for (new, &old) in perm.iter().enumerate() {
            for k in 0..d {
                y[new * d + k] = x[old * d + k];
                y[n * d + new * d + k] = x[n * d + old * d + k];
            }
        }
        let (mut dx, mut dy) = (vec![0.0; x.len()], vec![0.0; x.len()]);
        model.rhs(0.0, &x, &[], &w, &mut dx);
        model.rhs(0.0, &y, &[], &w, &mut dy);
        for (new, &old) in perm.iter().enumerate() {
            for k in 0..d {
                assert!((dy[n * d + new * d + k] - dx[n * d + old * d + k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let (model, w, x) = small();
        let half = x.len() / 2;
        let mut y = x.clone();
        for v in &mut y[..half] {
            *v += 4.5;
        }
        let (mut dx, mut dy) = (vec![0.0; x.len()], vec![0.0; x.len()]);
        model.rhs(0.0, &x, &[], &w, &mut dx);
        model.rhs(0.0, &y, &[], &w, &mut dy);
        for k in half..x.len() {
            assert!((dx[k] - dy[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let (model, w, x) = small();
        let (n, m) = (model.state_dim(), model.param_dim());
        let mut dx = vec![0.0; n];
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        model.rhs_partials(0.0, &x, &[], &w, &mut dx, &mut a, &mut b);
        let mut plain = vec![0.0; n];
        model.rhs(0.0, &x, &[], &w, &mut plain);
        for k in 0..n {
            assert!((plain[k] - dx[k]).abs() < 1e-12);
        }
        let eps = 1e-6;
        let fd = |xp: &[f64], wp: &[f64]| {
            let mut out = vec![0.0; n];
            model.rhs(0.0, xp, &[], wp, &mut out);
            out
        };
        for c in 0..n {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += eps;
            xm[c] -= eps;
            let (fp, fm) = (fd(&xp, &w), fd(&xm, &w));
            for r in 0..n {
                let num = (fp[r] - fm[r]) / (2.0 * eps);
                assert!((num - a[(r, c)]).abs() <= 1e-6 * (1.0 + num.abs()), "x {r},{c}");
            }
        }
        for c in 0..m {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[c] += eps;
            wm[c] -= eps;
            let (fp, fm) = (fd(&x, &wp), fd(&x, &wm));
            for r in 0..n {
                let num = (fp[r] - fm[r]) / (2.0 * eps);
                assert!((num - b[(r, c)]).abs() <= 1e-6 * (1.0 + num.abs()), "w {r},{c}");
            }
        }
    }

    #[test]
    fn curve_of_zero_model_is_flat() {
        let model = SwarmModel::new(&SwarmModelSpec::default()).unwrap();
        let w = vec![0.0; model.param_dim()];
        let grid = default_q_grid();
        let curve = recover_potential_curve(&model, &w, &grid, &CsParams::reference()).unwrap();
        assert_eq!(curve.q.len(), 201);
        assert!(curve.learned.iter().all(|v| v.abs() <= 1e-12));
        let at_one = curve.q.iter().position(|q| (q - 1.0).abs() < 1e-9).unwrap();
        assert!((curve.reference[at_one] + 149.6).abs() < 0.1);
    }
}
