//! Fully-connected networks with smooth activations.
//!
//! A [`Network`] is the layered map
//! `z(l) = W(l) a(l-1) + b(l)`, `a(l) = σ(z(l))` for the hidden layers and a
//! purely affine last layer. [`ScalarNetwork`] is the single-output case used
//! by every bound engine; it optionally carries an exact linear term `wᵀx`
//! that sits beside the network (closed-loop objectives use it for `cᵀA x`).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Smooth scalar activation applied element-wise in hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
    Identity,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => logistic(x),
            // log(1 + e^x) without overflow
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = logistic(x);
                s * (1.0 - s)
            }
            Activation::Softplus => logistic(x),
            Activation::Identity => 1.0,
        }
    }

    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = logistic(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Softplus => {
                let s = logistic(x);
                s * (1.0 - s)
            }
            Activation::Identity => 0.0,
        }
    }

    /// Global slope interval `[α, β]` of the activation over all of ℝ.
    pub fn global_slope(self) -> (f64, f64) {
        match self {
            Activation::Tanh => (0.0, 1.0),
            Activation::Sigmoid => (0.0, 0.25),
            Activation::Softplus => (0.0, 1.0),
            Activation::Identity => (1.0, 1.0),
        }
    }

    /// Global curvature interval `[α′, β′]` (range of the second derivative).
    pub fn global_curvature(self) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let h = 4.0 / (3.0 * 3f64.sqrt());
                (-h, h)
            }
            Activation::Sigmoid => {
                let h = 1.0 / (6.0 * 3f64.sqrt());
                (-h, h)
            }
            Activation::Softplus => (0.0, 0.25),
            Activation::Identity => (0.0, 0.0),
        }
    }

    fn apply(self, z: &DVector<f64>) -> DVector<f64> {
        z.map(|t| self.value(t))
    }
}

/// One affine stage, followed by an activation on every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Option<Activation>,
}

impl Layer {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>, activation: Option<Activation>) -> Self {
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// An `L`-layer fully-connected network. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Validates the dimension chain and the activation layout.
    ///
    /// A hidden layer without an activation is treated as the identity; the
    /// last layer must not carry one.
    pub fn new(mut layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network has no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.nrows() == 0 || layer.weight.ncols() == 0 {
                return Err(Error::InvalidInput(format!("layer {i} has an empty weight")));
            }
            check_dim("layer bias", layer.out_dim(), layer.bias.len())?;
            if i > 0 {
                check_dim("layer chain", layers[i - 1].out_dim(), layer.in_dim())?;
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {i} has non-finite parameters")));
            }
        }
        let last = layers.len() - 1;
        if layers[last].activation.is_some() {
            return Err(Error::InvalidInput(
                "the last layer must be affine (activation null)".into(),
            ));
        }
        for layer in &mut layers[..last] {
            layer.activation.get_or_insert(Activation::Identity);
        }
        Ok(Self { layers })
    }

    /// Random network with Xavier-uniform weights and small uniform biases.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-s..s));
                let bias = DVector::from_fn(fan_out, |_, _| rng.gen_range(-0.1..0.1));
                let act = (i + 1 < n).then_some(activation);
                Layer::new(weight, bias, act)
            })
            .collect();
        Self::new(layers).expect("random network dims are consistent")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of affine stages `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Activation of hidden layer `l` (0-based over the hidden layers).
    pub fn hidden_activation(&self, l: usize) -> Activation {
        self.layers[l].activation.unwrap_or(Activation::Identity)
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut a = x.clone();
        for layer in &self.layers {
            let z = &layer.weight * &a + &layer.bias;
            a = match layer.activation {
                Some(act) => act.apply(&z),
                None => z,
            };
        }
        a
    }

    /// All preactivations `z(1), …, z(L)`; the last entry is the output.
    pub fn preactivations(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = &layer.weight * &a + &layer.bias;
            a = match layer.activation {
                Some(act) => act.apply(&z),
                None => z.clone(),
            };
            out.push(z);
        }
        Ok(out)
    }

    /// Collapses the output against direction `c`: `x ↦ cᵀ f(x)`.
    pub fn scalarize(&self, c: &DVector<f64>) -> Result<ScalarNetwork> {
        check_dim("scalarize direction", self.output_dim(), c.len())?;
        let mut layers = self.layers.clone();
        let last = layers.last_mut().expect("nonempty");
        let v = last.weight.tr_mul(c);
        last.weight = DMatrix::from_row_slice(1, v.len(), v.as_slice());
        last.bias = DVector::from_element(1, c.dot(&last.bias));
        Ok(ScalarNetwork {
            net: Network { layers },
            linear: None,
        })
    }

    /// Composes with the affine map `z ↦ G z + x_c`, merged into the first layer.
    pub fn prepend_affine(&self, g: &DMatrix<f64>, x_c: &DVector<f64>) -> Result<Network> {
        check_dim("prepend_affine generator rows", self.input_dim(), g.nrows())?;
        check_dim("prepend_affine center", self.input_dim(), x_c.len())?;
        let mut layers = self.layers.clone();
        let first = &mut layers[0];
        first.bias = &first.weight * x_c + &first.bias;
        first.weight = &first.weight * g;
        Ok(Network { layers })
    }

    pub fn from_json_str(s: &str, origin: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s).map_err(|source| Error::Json {
            path: origin.to_string(),
            source,
        })?;
        file.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn to_file(&self) -> NetworkFile {
        let n = self.layers.len();
        NetworkFile {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| LayerFile {
                    weight: l.weight.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    bias: l.bias.iter().copied().collect(),
                    activation: if i + 1 == n { None } else { l.activation },
                })
                .collect(),
        }
    }
}

/// Serialized network: row-major weights, one entry per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    #[serde(default)]
    pub activation: Option<Activation>,
}

impl TryFrom<NetworkFile> for Network {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let rows = l.weight.len();
                let cols = l.weight.first().map_or(0, Vec::len);
                if l.weight.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidInput(format!("layer {i}: ragged weight rows")));
                }
                let weight = DMatrix::from_fn(rows, cols, |r, c| l.weight[r][c]);
                Ok(Layer::new(weight, DVector::from_vec(l.bias), l.activation))
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }
}

/// Single-output network `J(x) = net(x) + wᵀx`, the objective of every bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarNetwork {
    net: Network,
    linear: Option<DVector<f64>>,
}

impl ScalarNetwork {
    pub fn new(net: Network) -> Result<Self> {
        check_dim("scalar network output", 1, net.output_dim())?;
        Ok(Self { net, linear: None })
    }

    /// Adds an exact linear term `wᵀx` evaluated beside the network.
    pub fn with_linear_term(mut self, w: DVector<f64>) -> Result<Self> {
        check_dim("linear term", self.net.input_dim(), w.len())?;
        self.linear = Some(w);
        Ok(self)
    }

    /// Adds a constant to the output by shifting the last bias.
    pub fn with_offset(mut self, offset: f64) -> Self {
        let last = self.net.layers.last_mut().expect("nonempty");
        last.bias[0] += offset;
        self
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn linear_term(&self) -> Option<&DVector<f64>> {
        self.linear.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn depth(&self) -> usize {
        self.net.depth()
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("network input", self.input_dim(), x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &DVector<f64>) -> f64 {
        let v = self.net.eval_unchecked(x)[0];
        match &self.linear {
            Some(w) => v + w.dot(x),
            None => v,
        }
    }

    /// Reverse-mode gradient `∇J(x)`.
    pub fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.value_and_grad(x)?.1)
    }

    pub fn value_and_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let zs = self.net.preactivations(x)?;
        let layers = self.net.layers();
        let depth = layers.len();
        let mut g = layers[depth - 1].weight.row(0).transpose();
        for l in (0..depth - 1).rev() {
            let act = self.net.hidden_activation(l);
            let scaled = g.zip_map(&zs[l], |gi, zi| gi * act.derivative(zi));
            g = layers[l].weight.tr_mul(&scaled);
        }
        let mut value = zs[depth - 1][0];
        if let Some(w) = &self.linear {
            value += w.dot(x);
            g += w;
        }
        Ok((value, g))
    }

    /// `z ↦ J(G z + x_c)`; the linear term is carried through exactly.
    pub fn prepend_affine(&self, g: &DMatrix<f64>, x_c: &DVector<f64>) -> Result<ScalarNetwork> {
        let mut net = self.net.prepend_affine(g, x_c)?;
        let linear = match &self.linear {
            Some(w) => {
                let last = net.layers.last_mut().expect("nonempty");
                last.bias[0] += w.dot(x_c);
                Some(g.tr_mul(w))
            }
            None => None,
        };
        Ok(ScalarNetwork { net, linear })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn identity_network_returns_its_input() {
        let net = Network::new(vec![Layer::new(DMatrix::identity(2, 2), dv(&[0.0, 0.0]), None)])
            .unwrap();
        assert_eq!(net.eval(&dv(&[1.0, 2.0])).unwrap(), dv(&[1.0, 2.0]));
    }

    #[test]
    fn tanh_net_maps_origin_to_origin() {
        let net = Network::new(vec![
            Layer::new(mat(2, 2, &[1.0, 2.0, 1.0, 2.0]), dv(&[0.0, 0.0]), Some(Activation::Tanh)),
            Layer::new(mat(2, 2, &[1.0, 1.0, 1.0, 2.0]), dv(&[0.0, 0.0]), None),
        ])
        .unwrap();
        assert_eq!(net.eval(&dv(&[0.0, 0.0])).unwrap(), dv(&[0.0, 0.0]));
    }

    #[test]
    fn eval_rejects_wrong_dimension() {
        let net = Network::new(vec![Layer::new(DMatrix::identity(2, 2), dv(&[0.0, 0.0]), None)])
            .unwrap();
        assert!(matches!(net.eval(&dv(&[1.0])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn last_layer_activation_is_rejected() {
        let r = Network::new(vec![Layer::new(
            DMatrix::identity(2, 2),
            dv(&[0.0, 0.0]),
            Some(Activation::Tanh),
        )]);
        assert!(r.is_err());
    }

    #[test]
    fn broken_chain_is_rejected() {
        let r = Network::new(vec![
            Layer::new(DMatrix::identity(3, 2), dv(&[0.0; 3]), Some(Activation::Tanh)),
            Layer::new(DMatrix::identity(1, 2), dv(&[0.0]), None),
        ]);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn linear_gradient_is_constant() {
        let net = Network::new(vec![Layer::new(mat(1, 2, &[3.0, 4.0]), dv(&[0.0]), None)]).unwrap();
        let j = net.scalarize(&dv(&[1.0])).unwrap();
        for x in [dv(&[0.0, 0.0]), dv(&[-5.0, 2.0])] {
            assert_eq!(j.grad(&x).unwrap(), dv(&[3.0, 4.0]));
        }
    }

    #[test]
    fn tanh_slope_at_zero_is_one() {
        let net = Network::new(vec![
            Layer::new(mat(1, 1, &[1.0]), dv(&[0.0]), Some(Activation::Tanh)),
            Layer::new(mat(1, 1, &[1.0]), dv(&[0.0]), None),
        ])
        .unwrap();
        let j = ScalarNetwork::new(net).unwrap();
        assert!((j.grad(&dv(&[0.0])).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Softplus] {
            for _ in 0..20 {
                let net = Network::random(&[2, 10, 1], act, &mut rng);
                let j = ScalarNetwork::new(net).unwrap();
                let x = dv(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
                let g = j.grad(&x).unwrap();
                let h = 1e-5;
                for i in 0..2 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (j.eval(&xp).unwrap() - j.eval(&xm).unwrap()) / (2.0 * h);
                    assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "{fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn scalarize_with_unit_direction_projects() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::random(&[3, 5, 2], Activation::Tanh, &mut rng);
        let j = net.scalarize(&dv(&[1.0, 0.0])).unwrap();
        let x = dv(&[0.3, -0.2, 0.9]);
        assert_eq!(j.eval(&x).unwrap(), net.eval(&x).unwrap()[0]);
    }

    #[test]
    fn zero_direction_gives_constant_zero() {
        let net = Network::new(vec![
            Layer::new(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]), dv(&[0.0, 0.0]), Some(Activation::Tanh)),
            Layer::new(mat(2, 2, &[1.0, 1.0, 1.0, 2.0]), dv(&[0.0, 0.0]), None),
        ])
        .unwrap();
        let j = net.scalarize(&dv(&[0.0, 0.0])).unwrap();
        assert_eq!(j.eval(&dv(&[0.7, -3.0])).unwrap(), 0.0);
    }

    #[test]
    fn prepend_identity_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::random(&[2, 4, 2], Activation::Sigmoid, &mut rng);
        let g = net.prepend_affine(&DMatrix::identity(2, 2), &dv(&[0.0, 0.0])).unwrap();
        let x = dv(&[0.4, -1.1]);
        assert!((g.eval(&x).unwrap() - net.eval(&x).unwrap()).norm() < 1e-15);
    }

    #[test]
    fn prepend_scaling_doubles_linear_map() {
        let w = mat(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let net = Network::new(vec![Layer::new(w.clone(), dv(&[0.0, 0.0]), None)]).unwrap();
        let g = net.prepend_affine(&(DMatrix::identity(2, 2) * 2.0), &dv(&[0.0, 0.0])).unwrap();
        let z = dv(&[0.25, -0.5]);
        assert!((g.eval(&z).unwrap() - 2.0 * &w * &z).norm() < 1e-15);
    }

    #[test]
    fn linear_term_follows_prepend() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::random(&[2, 6, 1], Activation::Tanh, &mut rng);
        let j = ScalarNetwork::new(net).unwrap().with_linear_term(dv(&[1.5, -0.5])).unwrap();
        let g = mat(2, 3, &[0.1, 0.1, 0.1, -0.1, 0.0, 0.1]);
        let xc = dv(&[2.5, 0.0]);
        let jz = j.prepend_affine(&g, &xc).unwrap();
        let z = dv(&[0.3, -0.7, 1.0]);
        let x = &g * &z + &xc;
        assert!((jz.eval(&z).unwrap() - j.eval(&x).unwrap()).abs() < 1e-14);
        let gz = jz.grad(&z).unwrap();
        let gx = j.grad(&x).unwrap();
        assert!((gz - g.tr_mul(&gx)).norm() < 1e-14);
    }

    #[test]
    fn json_round_trip_preserves_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::random(&[2, 3, 3, 1], Activation::Softplus, &mut rng);
        let text = serde_json::to_string(&net.to_file()).unwrap();
        let back = Network::from_json_str(&text, "mem").unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn json_errors_carry_position() {
        let err = Network::from_json_str("{\"layers\": [ {\"weight\": [[1.0]], ", "net.json")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("net.json") && msg.contains("line"), "{msg}");
    }
}
