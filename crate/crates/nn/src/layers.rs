//! Parameterized building blocks. Each layer owns [`ParamId`]s into a
//! [`ParamStore`] and records its forward pass on a [`Graph`].

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{InitScheme, Initializer, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init.init(&[outputs, inputs], InitScheme::UniformFanIn),
        );
        let bias = store.add(format!("{name}.bias"), init.init(&[outputs], InitScheme::Zeros));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, Some(b))
    }
}

/// Dense layers with ReLU between them and no activation after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths` lists every layer width including input and output, e.g.
    /// `[384, 256, 256]` for two dense layers.
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(NnError::Config(format!("mlp {name} needs at least two widths")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, init, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, cin: usize, cout: usize) -> Self {
        let kernel = store.add(
            format!("{name}.kernel"),
            init.init(&[cout, cin, 3, 3], InitScheme::UniformFanIn),
        );
        let bias = store.add(format!("{name}.bias"), init.init(&[cout], InitScheme::Zeros));
        Self { kernel, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let k = g.param(self.kernel);
        let b = g.param(self.bias);
        g.conv2d(x, k, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, d: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), init.init(&[d], InitScheme::Ones));
        let shift = store.add(format!("{name}.shift"), init.init(&[d], InitScheme::Zeros));
        Self { gain, shift }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let shift = g.param(self.shift);
        g.layer_norm(x, gain, shift)
    }
}

/// Multi-head self-attention with learned Q/K/V/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(NnError::Config(format!("width {d} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Dense::new(store, init, &format!("{name}.query"), d, d),
            key: Dense::new(store, init, &format!("{name}.key"), d, d),
            value: Dense::new(store, init, &format!("{name}.value"), d, d),
            output: Dense::new(store, init, &format!("{name}.output"), d, d),
            heads,
        })
    }

    /// `x` is `[batch * seq, d]`.
    pub fn forward(&self, g: &mut Graph, x: Var, seq: usize) -> Result<Var> {
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, x)?;
        let v = self.value.forward(g, x)?;
        let a = g.attention(q, k, v, seq, self.heads)?;
        self.output.forward(g, a)
    }
}

/// Pre-norm encoder block: `h = x + attn(ln(x))`, `out = h + ff(ln(h))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: Mlp,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm_attn: LayerNorm::new(store, init, &format!("{name}.ln1"), d),
            attn: MultiHeadAttention::new(store, init, &format!("{name}.attn"), d, heads)?,
            norm_ff: LayerNorm::new(store, init, &format!("{name}.ln2"), d),
            ff: Mlp::new(store, init, &format!("{name}.ff"), &[d, 4 * d, d])?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, seq: usize) -> Result<Var> {
        let n = self.norm_attn.forward(g, x)?;
        let a = self.attn.forward(g, n, seq)?;
        let h = g.add(x, a)?;
        let n = self.norm_ff.forward(g, h)?;
        let f = self.ff.forward(g, n)?;
        g.add(h, f)
    }
}

#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    pub blocks: Vec<TransformerBlock>,
}

impl TransformerEncoder {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        d: usize,
        heads: usize,
        depth: usize,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| TransformerBlock::new(store, init, &format!("{name}.{i}"), d, heads))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, seq: usize) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(g, h, seq)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn dense_identity_and_bias_only() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(0);
        let d = Dense::new(&mut store, &mut init, "d", 3, 3);
        let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        store.get_mut(d.weight).value = eye;
        let x = Tensor::from_vec(vec![0.5, -1.0, 2.0]);
        {
            let mut g = Graph::new(&store);
            let xv = g.input(x.clone());
            let y = d.forward(&mut g, xv).unwrap();
            assert_eq!(g.value(y), x.data());
        }
        store.get_mut(d.weight).value = Tensor::zeros(&[3, 3]);
        store.get_mut(d.bias).value = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let mut g = Graph::new(&store);
        let xv = g.input(x);
        let y = d.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn dense_shape_mismatch() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(0);
        let d = Dense::new(&mut store, &mut init, "d", 3, 2);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::zeros(&[4]));
        assert!(matches!(d.forward(&mut g, x), Err(NnError::Shape { .. })));
    }

    #[test]
    fn attention_heads_must_divide_width() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(0);
        let r = MultiHeadAttention::new(&mut store, &mut init, "a", 10, 4);
        assert!(matches!(r, Err(NnError::Config(_))));
    }

    #[test]
    fn single_position_attention_is_projection_chain() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(5);
        let attn = MultiHeadAttention::new(&mut store, &mut init, "a", 8, 2).unwrap();
        let x = crate::params::seeded_init(&[1, 8], InitScheme::UniformFanIn, 9);
        let mut g = Graph::new(&store);
        let xv = g.input(x);
        let full = attn.forward(&mut g, xv, 1).unwrap();
        let v = attn.value.forward(&mut g, xv).unwrap();
        let chain = attn.output.forward(&mut g, v).unwrap();
        assert_eq!(g.value(full), g.value(chain));
    }

    #[test]
    fn identical_rows_attend_uniformly() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(11);
        let attn = MultiHeadAttention::new(&mut store, &mut init, "a", 8, 4).unwrap();
        let row = crate::params::seeded_init(&[1, 8], InitScheme::UniformFanIn, 3);
        let seq = 5;
        let data: Vec<f64> = (0..seq).flat_map(|_| row.data().to_vec()).collect();
        let mut g = Graph::new(&store);
        let xv = g.input(Tensor::new(vec![seq, 8], data).unwrap());
        let q = attn.query.forward(&mut g, xv).unwrap();
        let k = attn.key.forward(&mut g, xv).unwrap();
        let v = attn.value.forward(&mut g, xv).unwrap();
        let a = g.attention(q, k, v, seq, 4).unwrap();
        for w in g.attention_weights(a).unwrap() {
            assert!((w - 1.0 / seq as f64).abs() < 1e-12);
        }
        let out = attn.output.forward(&mut g, a).unwrap();
        let o = g.value(out);
        for r in 1..seq {
            assert_eq!(&o[r * 8..(r + 1) * 8], &o[..8]);
        }
    }

    #[test]
    fn transformer_preserves_shape() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(1);
        let enc = TransformerEncoder::new(&mut store, &mut init, "t", 16, 4, 2).unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(crate::params::seeded_init(&[3 * 6, 16], InitScheme::UniformFanIn, 2));
        let y = enc.forward(&mut g, x, 6).unwrap();
        assert_eq!(g.shape(y), &[18, 16]);
    }
}
