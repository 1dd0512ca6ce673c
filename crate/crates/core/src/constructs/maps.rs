use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::params::{positive, positive_deriv, positive_raw};
use crate::error::{Error, Result};
use crate::systems::CsParams;

/// How a quadratic energy uses its coefficient `c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadraticForm {
    /// `H = c |x|^2 / 2` (springs, compliances given as stiffness)
    Stiffness,
    /// `H = |x|^2 / (2 c)` (masses, inductances, capacitances)
    Inertia,
}

/// Parametrized stored-energy function `H(x; w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnergyMap {
    /// One stored value `r`, effective coefficient `c = r^2`.
    Quadratic { form: QuadraticForm },
    /// `H = sum_i a_i |x|^(2i)` with `a_i = r_i^2`.
    EvenPolynomial { degree: usize },
    /// Scalar-output tanh network.
    Neural { net: Mlp },
    /// `H = 0`: a zero-stiffness element whose state just integrates its effort.
    Null,
    /// Fixed pair potential `H = scale * U(|x|)` of the Cucker-Smale model.
    CsPairPotential { params: CsParams, scale: f64 },
}

/// Derivatives of a scalar constitutive output with respect to its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarLocal {
    pub value: f64,
    /// derivative w.r.t. the input variable (state for energies, port variable for maps)
    pub d_input: f64,
    /// derivative w.r.t. the construct's own parameter slice
    pub d_params: Vec<f64>,
    /// derivative w.r.t. a modulating state, if any
    pub d_modulator: f64,
}

pub const DEFAULT_POLY_DEGREE: usize = 3;

impl EnergyMap {
    pub fn param_count(&self) -> usize {
        match self {
            EnergyMap::Quadratic { .. } => 1,
            EnergyMap::EvenPolynomial { degree } => *degree,
            EnergyMap::Neural { net } => net.param_count(),
            EnergyMap::Null | EnergyMap::CsPairPotential { .. } => 0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            EnergyMap::EvenPolynomial { degree } if *degree == 0 => {
                Err(Error::Structure("even polynomial energy needs degree >= 1".into()))
            }
            EnergyMap::Neural { net } => {
                net.validate()?;
                if net.input != dim {
                    return Err(Error::dim("neural energy input", dim, net.input));
                }
                if net.output != 1 {
                    return Err(Error::dim("neural energy output", 1, net.output));
                }
                Ok(())
            }
            EnergyMap::CsPairPotential { .. } if dim != 1 => {
                Err(Error::dim("pair potential state", 1, dim))
            }
            _ => Ok(()),
        }
    }

    /// Initial stored parameters. `coefficient` seeds quadratic energies
    /// (effective value), polynomial coefficients and is ignored by the rest.
    pub fn init_params<R: Rng + ?Sized>(&self, coefficient: f64, rng: &mut R) -> Vec<f64> {
        match self {
            EnergyMap::Quadratic { .. } => vec![positive_raw(coefficient)],
            EnergyMap::EvenPolynomial { degree } => {
                let mut v = vec![0.0; *degree];
                v[0] = positive_raw(coefficient);
                v
            }
            EnergyMap::Neural { net } => net.init_params(rng),
            EnergyMap::Null | EnergyMap::CsPairPotential { .. } => Vec::new(),
        }
    }

    fn check(&self, x: &[f64], w: &[f64]) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::dim("energy parameters", self.param_count(), w.len()));
        }
        match self {
            EnergyMap::Neural { net } if x.len() != net.input => {
                Err(Error::dim("energy state", net.input, x.len()))
            }
            EnergyMap::CsPairPotential { .. } if x.len() != 1 => {
                Err(Error::dim("energy state", 1, x.len()))
            }
            _ if x.iter().any(|v| !v.is_finite()) => {
                Err(Error::Structure("non-finite energy state".into()))
            }
            _ => Ok(()),
        }
    }

    /// Stored energy `H(x; w)`.
    pub fn energy(&self, x: &[f64], w: &[f64]) -> Result<f64> {
        self.check(x, w)?;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Ok(match self {
            EnergyMap::Quadratic { form: QuadraticForm::Stiffness } => 0.5 * positive(w[0]) * r2,
            EnergyMap::Quadratic { form: QuadraticForm::Inertia } => r2 / (2.0 * positive(w[0])),
            EnergyMap::EvenPolynomial { .. } => {
                let mut pow = 1.0;
                w.iter()
                    .map(|&a| {
                        pow *= r2;
                        positive(a) * pow
                    })
                    .sum()
            }
            EnergyMap::Neural { net } => net.eval(x, w)?[0],
            EnergyMap::Null => 0.0,
            EnergyMap::CsPairPotential { params, scale } => scale * params.potential(x[0].abs()),
        })
    }

    /// Co-energy variable `dH/dx`.
    pub fn gradient(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check(x, w)?;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Ok(match self {
            EnergyMap::Quadratic { form: QuadraticForm::Stiffness } => {
                let c = positive(w[0]);
                x.iter().map(|v| c * v).collect()
            }
            EnergyMap::Quadratic { form: QuadraticForm::Inertia } => {
                let c = positive(w[0]);
                x.iter().map(|v| v / c).collect()
            }
            EnergyMap::EvenPolynomial { .. } => {
                // d/dx sum a_i r^(2i) = sum 2 i a_i r^(2i-2) x
                let mut pow = 1.0;
                let mut s = 0.0;
                for (i, &a) in w.iter().enumerate() {
                    s += 2.0 * (i + 1) as f64 * positive(a) * pow;
                    pow *= r2;
                }
                x.iter().map(|v| s * v).collect()
            }
            EnergyMap::Neural { net } => net.eval_with_jacobians(x, w)?.d_input.row(0).iter().copied().collect(),
            EnergyMap::Null => vec![0.0; x.len()],
            EnergyMap::CsPairPotential { params, scale } => vec![scale * params.potential_grad_signed(x[0])],
        })
    }

    /// Scalar co-energy `dH/dx` with its state and parameter derivatives.
    pub(crate) fn local(&self, x: f64, w: &[f64]) -> ScalarLocal {
        let mut d_params = vec![0.0; w.len()];
        let (value, d_input) = match self {
            EnergyMap::Quadratic { form: QuadraticForm::Stiffness } => {
                let c = positive(w[0]);
                d_params[0] = positive_deriv(w[0]) * x;
                (c * x, c)
            }
            EnergyMap::Quadratic { form: QuadraticForm::Inertia } => {
                let c = positive(w[0]);
                d_params[0] = -x * positive_deriv(w[0]) / (c * c);
                (x / c, 1.0 / c)
            }
            EnergyMap::EvenPolynomial { .. } => {
                // g(x) = sum 2 i a_i x^(2i-1)
                let mut value = 0.0;
                let mut slope = 0.0;
                for (i, &a) in w.iter().enumerate() {
                    let k = (i + 1) as f64;
                    let odd = x.powi(2 * i as i32 + 1);
                    value += 2.0 * k * positive(a) * odd;
                    slope += 2.0 * k * (2.0 * k - 1.0) * positive(a) * x.powi(2 * i as i32);
                    d_params[i] = 2.0 * k * positive_deriv(a) * odd;
                }
                (value, slope)
            }
            EnergyMap::Neural { net } => {
                let so = net
                    .scalar_second_order(&[x], w)
                    .expect("neural energy validated at assembly");
                d_params.copy_from_slice(so.gradient_d_params.row(0).transpose().as_slice());
                (so.gradient[0], so.hessian[(0, 0)])
            }
            EnergyMap::Null => (0.0, 0.0),
            EnergyMap::CsPairPotential { params, scale } => (
                scale * params.potential_grad_signed(x),
                if x == 0.0 { 0.0 } else { scale * params.potential_second(x.abs()) },
            ),
        };
        ScalarLocal {
            value,
            d_input,
            d_params,
            d_modulator: 0.0,
        }
    }
}

/// Explicit resistive relation `out = R(in; w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResistiveMap {
    /// `out = d * in` with `d = r^2`.
    Linear,
    Neural { net: Mlp },
    /// `out = scale * G(|q|) * in`, where `q` is the state of the named store.
    CsAlignment {
        params: CsParams,
        scale: f64,
        modulator: String,
    },
}

impl ResistiveMap {
    pub fn param_count(&self) -> usize {
        match self {
            ResistiveMap::Linear => 1,
            ResistiveMap::Neural { net } => net.param_count(),
            ResistiveMap::CsAlignment { .. } => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ResistiveMap::Neural { net } => {
                net.validate()?;
                if net.input != net.output {
                    return Err(Error::dim("neural resistive output", net.input, net.output));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn modulator(&self) -> Option<&str> {
        match self {
            ResistiveMap::CsAlignment { modulator, .. } => Some(modulator),
            _ => None,
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, coefficient: f64, rng: &mut R) -> Vec<f64> {
        match self {
            ResistiveMap::Linear => vec![positive_raw(coefficient)],
            ResistiveMap::Neural { net } => net.init_params(rng),
            ResistiveMap::CsAlignment { .. } => Vec::new(),
        }
    }

    /// Evaluates an unmodulated map.
    pub fn eval(&self, input: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.param_count() {
            return Err(Error::dim("resistive parameters", self.param_count(), w.len()));
        }
        match self {
            ResistiveMap::Linear => Ok(input.iter().map(|e| positive(w[0]) * e).collect()),
            ResistiveMap::Neural { net } => net.eval(input, w),
            ResistiveMap::CsAlignment { modulator, .. } => Err(Error::Structure(format!(
                "modulated resistive map needs the state of `{modulator}`"
            ))),
        }
    }

    /// Evaluates a map modulated by the scalar state `q`.
    pub fn eval_modulated(&self, input: &[f64], q: f64, w: &[f64]) -> Result<Vec<f64>> {
        match self {
            ResistiveMap::CsAlignment { params, scale, .. } => {
                let g = scale * params.interaction(q.abs());
                Ok(input.iter().map(|e| g * e).collect())
            }
            _ => self.eval(input, w),
        }
    }

    pub(crate) fn local(&self, input: f64, modulator: f64, w: &[f64]) -> ScalarLocal {
        match self {
            ResistiveMap::Linear => ScalarLocal {
                value: positive(w[0]) * input,
                d_input: positive(w[0]),
                d_params: vec![positive_deriv(w[0]) * input],
                d_modulator: 0.0,
            },
            ResistiveMap::Neural { net } => {
                let e = net.eval_with_jacobians_unchecked(&[input], w);
                ScalarLocal {
                    value: e.output[0],
                    d_input: e.d_input[(0, 0)],
                    d_params: e.d_params.row(0).iter().copied().collect(),
                    d_modulator: 0.0,
                }
            }
            ResistiveMap::CsAlignment { params, scale, .. } => {
                let r = modulator.abs();
                let g = scale * params.interaction(r);
                let dg = scale * params.interaction_deriv(r) * modulator.signum_or_zero();
                ScalarLocal {
                    value: g * input,
                    d_input: g,
                    d_params: Vec::new(),
                    d_modulator: dg * input,
                }
            }
        }
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

/// Instantaneous power `e . f` delivered through a port.
pub fn instantaneous_power(e: &[f64], f: &[f64]) -> Result<f64> {
    if e.len() != f.len() {
        return Err(Error::dim("port variables", e.len(), f.len()));
    }
    Ok(e.iter().zip(f).map(|(a, b)| a * b).sum())
}
