use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;

/// Affine map `x W + b` with parameters `{name}.w` (in x out) and `{name}.b` (1 x out).
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Registers freshly initialized weights, uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        store.insert(format!("{name}.w"), Tensor::from_vec(fan_in, fan_out, w));
        store.insert(format!("{name}.b"), Tensor::from_vec(1, fan_out, b));
        Self::bind(name, fan_in, fan_out)
    }

    /// Refers to weights that already exist in a store.
    pub fn bind(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            name: name.to_string(),
            fan_in,
            fan_out,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(&self.weight_name());
        let b = g.param(&self.bias_name());
        let xw = g.matmul(x, w);
        g.add_bias(xw, b)
    }

    /// Zero both weight and bias.
    pub fn zero(&self, store: &mut ParamStore) {
        for n in [self.weight_name(), self.bias_name()] {
            if let Some(t) = store.get_mut(&n) {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// Stack of [`Linear`] layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first: `[3, 16, 16]` is two layers.
    pub fn init<R: Rng>(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn bind(name: &str, widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::bind(&format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("empty MLP")
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, h);
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_shapes_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let m = Mlp::init(&mut s, "m", &[3, 5, 2], &mut rng);
        assert_eq!(s.len(), 4);
        assert!(s.get("m.0.w").unwrap().data.iter().all(|v| v.abs() <= 1.0 / 3f64.sqrt()));
        let mut g = Graph::with_params(&s);
        let x = g.constant(Tensor::zeros(7, 3));
        let y = m.forward(&mut g, x);
        assert_eq!(g.shape(y), (7, 2));
    }
}
