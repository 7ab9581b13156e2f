use termcast_nn::{
    positional_encoding, Conv2d, Dense, Graph, InitScheme, Initializer, Mlp, ParamId, ParamStore, Tensor,
    TransformerEncoder, Var,
};

use super::config::{FusionMode, ModelConfig};
use crate::components::{Component, InputInstance, CLOSENESS_LEN};
use crate::error::{Error, Result};
use crate::flow_grid::FlowTensor;

/// Norm floor used by the consistency term's cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct RelationVector(pub Vec<f64>);

/// Model inputs for a batch of instances, laid out as graph-ready tensors.
/// Flow tensors are flattened to rows of `2 * H * W`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    /// Six `[B, 2HW]` tensors, oldest first.
    pub closeness: Vec<Tensor>,
    /// `[B * 6, 2HW]`, rows ordered (instance, slot), for the six relation slots.
    pub slot_closeness: Tensor,
    pub slot_period: Tensor,
    pub slot_trend: Tensor,
    /// Period / trend observations at the target slot, `[B, 2HW]`.
    pub target_period: Tensor,
    pub target_trend: Tensor,
    pub extra: Tensor,
    pub target: Tensor,
    pub positions: Vec<[usize; CLOSENESS_LEN]>,
}

fn stack(rows: &[&FlowTensor]) -> Tensor {
    let width = rows[0].values.len();
    let data = rows.iter().flat_map(|t| t.values.iter().copied()).collect();
    Tensor::new(vec![rows.len(), width], data).expect("flow tensors share a shape")
}

impl Batch {
    pub fn from_instances(instances: &[&InputInstance]) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let slot_rows = |which: Component| -> Tensor {
            let rows: Vec<&FlowTensor> = instances
                .iter()
                .flat_map(|inst| (0..CLOSENESS_LEN).map(move |t| inst.component_tensor(which, t)))
                .collect();
            stack(&rows)
        };
        let extra_width = instances[0].extra.vector.len();
        let extra = Tensor::new(
            vec![instances.len(), extra_width],
            instances.iter().flat_map(|i| i.extra.vector.iter().copied()).collect(),
        )
        .map_err(|e| Error::Shape(e.to_string()))?;
        let last = CLOSENESS_LEN;
        Ok(Self {
            size: instances.len(),
            closeness: (0..CLOSENESS_LEN)
                .map(|t| stack(&instances.iter().map(|i| i.closeness_tensor(t)).collect::<Vec<_>>()))
                .collect(),
            slot_closeness: slot_rows(Component::Closeness),
            slot_period: slot_rows(Component::Period),
            slot_trend: slot_rows(Component::Trend),
            target_period: stack(&instances.iter().map(|i| i.period_tensor(last)).collect::<Vec<_>>()),
            target_trend: stack(&instances.iter().map(|i| i.trend_tensor(last)).collect::<Vec<_>>()),
            extra,
            target: stack(&instances.iter().map(|i| i.target_tensor()).collect::<Vec<_>>()),
            positions: instances.iter().map(|i| i.closeness_positions()).collect(),
        })
    }
}

/// Graph handles for one batched forward pass. Fields a variant does not
/// compute are `None`.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub prediction: Var,
    pub initial: Option<Var>,
    pub relation_decode: Option<Var>,
    pub extra_influence: Var,
    pub predicted_relation: Option<Var>,
    pub inferred_relation: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub prediction: FlowTensor,
    pub initial: Option<FlowTensor>,
    pub relation_decode: Option<FlowTensor>,
    pub extra_influence: FlowTensor,
    pub predicted_relation: Option<RelationVector>,
    pub inferred_relation: Option<RelationVector>,
}

/// Residual short-term unit: stacked 3x3 convolutions over the concatenated
/// closeness tensors plus a skip from the most recent one.
#[derive(Clone, Debug)]
struct ShortTermUnit {
    hidden: Vec<Conv2d>,
    output: Conv2d,
}

/// Weighted fusion of the short-term, relation-decoded and extra-influence
/// tensors. Absent terms (removed by an ablation variant) are dropped.
///
/// `weights` are the per-element tensors `W1, W2, W3`; in C5 they are logits
/// and the effective weights are their softmax across the present terms.
pub fn fuse(g: &mut Graph, terms: [Option<Var>; 3], weights: [Var; 3], mode: FusionMode) -> Result<Var> {
    let present: Vec<usize> = (0..3).filter(|&k| terms[k].is_some()).collect();
    if present.is_empty() {
        return Err(Error::Config("fusion needs at least one term".into()));
    }
    let weighted: Vec<Var> = if mode == FusionMode::C5 {
        let n = g.value(weights[0]).len();
        let logits: Vec<Var> = present
            .iter()
            .map(|&k| g.reshape(weights[k], &[1, n]))
            .collect::<std::result::Result<_, _>>()?;
        let stacked = g.concat(&logits)?;
        let stacked = g.reshape(stacked, &[present.len(), n])?;
        let soft = g.softmax(stacked, 0)?;
        present
            .iter()
            .enumerate()
            .map(|(row, &k)| {
                let w = g.gather_rows(soft, &[row])?;
                Ok(g.mul_row(terms[k].unwrap(), w)?)
            })
            .collect::<Result<_>>()?
    } else {
        present
            .iter()
            .map(|&k| {
                let x = terms[k].unwrap();
                if mode.weight_enabled(k) {
                    Ok(g.mul_row(x, weights[k])?)
                } else {
                    Ok(x)
                }
            })
            .collect::<Result<_>>()?
    };
    let mut acc = weighted[0];
    for &w in &weighted[1..] {
        acc = g.add(acc, w)?;
    }
    Ok(acc)
}

/// `alpha * MSE(prediction, target) + beta * mean(1 - cos(inferred, predicted))`.
/// The consistency term is skipped when either relation is absent.
pub fn loss(
    g: &mut Graph,
    prediction: Var,
    target: Var,
    relations: Option<(Var, Var)>,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    let diff = g.sub(prediction, target)?;
    let sq = g.mul(diff, diff)?;
    let mse = g.mean(sq);
    let mut total = g.scale(mse, alpha);
    if let Some((inferred, predicted)) = relations {
        let cos = g.cosine_rows(inferred, predicted, COSINE_EPS)?;
        let mean_cos = g.mean(cos);
        let neg = g.scale(mean_cos, -beta);
        let consistency = g.add_const(neg, beta);
        total = g.add(total, consistency)?;
    }
    Ok(total)
}

/// The forecaster: parameters plus the layer structure over them.
#[derive(Clone, Debug)]
pub struct TermCast {
    pub config: ModelConfig,
    pub params: ParamStore,
    short_term: ShortTermUnit,
    relation_g: Mlp,
    transformer: TransformerEncoder,
    readout: Dense,
    relation_decoder: Mlp,
    extra_mlp: Mlp,
    fusion_weights: [ParamId; 3],
}

impl TermCast {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let (h, w) = (config.height, config.width);
        let flow = config.flow_len();
        let d = config.relation_dim;

        let mut hidden = Vec::with_capacity(config.conv_layers);
        let mut cin = 2 * CLOSENESS_LEN;
        for i in 0..config.conv_layers {
            hidden.push(Conv2d::new(&mut store, &mut init, &format!("short_term.conv{i}"), cin, config.conv_filters));
            cin = config.conv_filters;
        }
        let output = Conv2d::new(&mut store, &mut init, "short_term.out", cin, 2);

        let widths = |input: usize, hidden: &[usize], out: usize| {
            std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(out)).collect::<Vec<_>>()
        };
        let relation_g = Mlp::new(&mut store, &mut init, "relation_g", &widths(3 * flow, &config.g_hidden, d))?;
        let transformer = TransformerEncoder::new(
            &mut store,
            &mut init,
            "transformer",
            d,
            config.heads,
            config.transformer_depth,
        )?;
        let readout = Dense::new(&mut store, &mut init, "readout", d, d);
        let relation_decoder = Mlp::new(
            &mut store,
            &mut init,
            "relation_decoder",
            &widths(d, &config.mlp_r_hidden, flow),
        )?;
        let extra_mlp = Mlp::new(
            &mut store,
            &mut init,
            "extra",
            &widths(config.extra_len(), &config.mlp_extra_hidden, flow),
        )?;

        let weight_init = if config.fusion == FusionMode::C5 {
            InitScheme::Zeros
        } else {
            InitScheme::Ones
        };
        let fusion_weights = [0, 1, 2].map(|k| {
            let id = store.add(format!("fusion.w{}", k + 1), init.init(&[2, h, w], weight_init));
            store.set_trainable(id, config.fusion.weight_enabled(k));
            id
        });

        Ok(Self {
            config,
            params: store,
            short_term: ShortTermUnit { hidden, output },
            relation_g,
            transformer,
            readout,
            relation_decoder,
            extra_mlp,
            fusion_weights,
        })
    }

    pub fn fusion_weights(&self) -> [ParamId; 3] {
        self.fusion_weights
    }

    /// Sets every parameter value to zero.
    pub fn zero_parameters(&mut self) {
        for p in self.params.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
    }

    /// Zeroes only the parameters of the relation MLP `g`.
    pub fn zero_relation_g(&mut self) {
        for layer in &self.relation_g.layers {
            self.params.get_mut(layer.weight).value.data_mut().fill(0.0);
            self.params.get_mut(layer.bias).value.data_mut().fill(0.0);
        }
    }

    fn check_flow(&self, g: &Graph, x: Var, what: &str) -> Result<()> {
        let flow = self.config.flow_len();
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != flow {
            return Err(Error::Shape(format!("{what}: expected [batch, {flow}], got {shape:?}")));
        }
        Ok(())
    }

    /// Initial prediction from the six closeness tensors (`[B, 2HW]` each).
    pub fn short_term_predict(&self, g: &mut Graph, closeness: &[Var]) -> Result<Var> {
        if closeness.len() != CLOSENESS_LEN {
            return Err(Error::Shape(format!(
                "short-term unit takes {CLOSENESS_LEN} closeness tensors, got {}",
                closeness.len()
            )));
        }
        for &c in closeness {
            self.check_flow(g, c, "closeness")?;
        }
        let batch = g.shape(closeness[0])[0];
        let (h, w) = (self.config.height, self.config.width);
        let stacked = g.concat(closeness)?;
        let mut x = g.reshape(stacked, &[batch, 2 * CLOSENESS_LEN, h, w])?;
        for conv in &self.short_term.hidden {
            x = conv.forward(g, x)?;
            x = g.relu(x);
        }
        let out = self.short_term.output.forward(g, x)?;
        let out = g.reshape(out, &[batch, 2 * h * w])?;
        Ok(g.add(out, closeness[CLOSENESS_LEN - 1])?)
    }

    /// Relation vector `g(x_c ++ x_p ++ x_q)` for each row of the batch.
    pub fn relation_encode(&self, g: &mut Graph, xc: Var, xp: Var, xq: Var) -> Result<Var> {
        for (v, what) in [(xc, "closeness"), (xp, "period"), (xq, "trend")] {
            self.check_flow(g, v, what)?;
        }
        let joined = g.concat(&[xc, xp, xq])?;
        Ok(self.relation_g.forward(g, joined)?)
    }

    /// Relation inferred from a predicted flow tensor; same `g` as [`Self::relation_encode`].
    pub fn infer_relation(&self, g: &mut Graph, prediction: Var, xp: Var, xq: Var) -> Result<Var> {
        self.relation_encode(g, prediction, xp, xq)
    }

    /// Predicts the next relation from `[B * 6, d]` relation rows. `positions`
    /// holds each instance's six absolute slot positions; they are reduced
    /// modulo the day length before encoding.
    pub fn relation_predict(&self, g: &mut Graph, relations: Var, positions: &[[usize; CLOSENESS_LEN]]) -> Result<Var> {
        let d = self.config.relation_dim;
        let shape = g.shape(relations).to_vec();
        if shape.len() != 2 || shape[1] != d || shape[0] != positions.len() * CLOSENESS_LEN {
            return Err(Error::Shape(format!(
                "relation sequence {shape:?} for {} instances of length {CLOSENESS_LEN}",
                positions.len()
            )));
        }
        let per_day = self.config.intervals_per_day;
        let slots: Vec<usize> = positions.iter().flat_map(|p| p.iter().map(|s| s % per_day)).collect();
        let pe = g.input(positional_encoding(&slots, d)?);
        let x = g.add(relations, pe)?;
        let encoded = self.transformer.forward(g, x, CLOSENESS_LEN)?;
        let last: Vec<usize> = (0..positions.len()).map(|b| b * CLOSENESS_LEN + CLOSENESS_LEN - 1).collect();
        let last = g.gather_rows(encoded, &last)?;
        Ok(self.readout.forward(g, last)?)
    }

    pub fn relation_decode(&self, g: &mut Graph, relation: Var) -> Result<Var> {
        Ok(self.relation_decoder.forward(g, relation)?)
    }

    pub fn extra_influence(&self, g: &mut Graph, extra: Var) -> Result<Var> {
        Ok(self.extra_mlp.forward(g, extra)?)
    }

    pub fn fuse(&self, g: &mut Graph, terms: [Option<Var>; 3]) -> Result<Var> {
        let weights = self.fusion_weights.map(|id| g.param(id));
        fuse(g, terms, weights, self.config.fusion)
    }

    pub fn forward_batch(&self, g: &mut Graph, batch: &Batch) -> Result<ForwardVars> {
        let variant = self.config.variant;
        let extra = g.input(batch.extra.clone());
        let extra_influence = self.extra_influence(g, extra)?;

        let initial = if variant.uses_short_term() {
            let closeness: Vec<Var> = batch.closeness.iter().map(|t| g.input(t.clone())).collect();
            Some(self.short_term_predict(g, &closeness)?)
        } else {
            None
        };

        let (relation_decode, predicted_relation, target_period, target_trend) = if variant.uses_relations() {
            let xc = g.input(batch.slot_closeness.clone());
            let xp = g.input(batch.slot_period.clone());
            let xq = g.input(batch.slot_trend.clone());
            let relations = self.relation_encode(g, xc, xp, xq)?;
            let predicted = self.relation_predict(g, relations, &batch.positions)?;
            let decoded = self.relation_decode(g, predicted)?;
            let tp = g.input(batch.target_period.clone());
            let tq = g.input(batch.target_trend.clone());
            (Some(decoded), Some(predicted), Some(tp), Some(tq))
        } else {
            (None, None, None, None)
        };

        let prediction = self.fuse(g, [initial, relation_decode, Some(extra_influence)])?;
        let inferred_relation = match (target_period, target_trend) {
            (Some(tp), Some(tq)) => Some(self.infer_relation(g, prediction, tp, tq)?),
            _ => None,
        };
        Ok(ForwardVars {
            prediction,
            initial,
            relation_decode,
            extra_influence,
            predicted_relation,
            inferred_relation,
        })
    }

    /// Training loss for a batch. The consistency weight is zero for V2 and V3.
    pub fn batch_loss(&self, g: &mut Graph, out: &ForwardVars, target: Var) -> Result<Var> {
        let relations = match (out.inferred_relation, out.predicted_relation) {
            (Some(i), Some(p)) if self.config.variant.uses_consistency() => Some((i, p)),
            _ => None,
        };
        loss(g, out.prediction, target, relations, self.config.alpha, self.config.beta)
    }

    pub fn forward(&self, instance: &InputInstance) -> Result<ForwardOutput> {
        let batch = Batch::from_instances(&[instance])?;
        let mut g = Graph::new(&self.params);
        let out = self.forward_batch(&mut g, &batch)?;
        if let Some(op) = g.non_finite_op() {
            return Err(Error::Numerics(format!("non-finite value produced by {op}")));
        }
        let (h, w) = (self.config.height, self.config.width);
        let idx = instance.target;
        let flow = |v: Var| FlowTensor {
            height: h,
            width: w,
            values: g.value(v).to_vec(),
            interval_index: idx,
        };
        let rel = |v: Var| RelationVector(g.value(v).to_vec());
        Ok(ForwardOutput {
            prediction: flow(out.prediction),
            initial: out.initial.map(flow),
            relation_decode: out.relation_decode.map(flow),
            extra_influence: flow(out.extra_influence),
            predicted_relation: out.predicted_relation.map(rel),
            inferred_relation: out.inferred_relation.map(rel),
        })
    }

    /// Predictions (in normalized units) for every instance, in order.
    pub fn predict(&self, instances: &[InputInstance], batch_size: usize) -> Result<Vec<FlowTensor>> {
        let (h, w) = (self.config.height, self.config.width);
        let flow = self.config.flow_len();
        let mut out = Vec::with_capacity(instances.len());
        for chunk in instances.chunks(batch_size.max(1)) {
            let refs: Vec<&InputInstance> = chunk.iter().collect();
            let batch = Batch::from_instances(&refs)?;
            let mut g = Graph::new(&self.params);
            let vars = self.forward_batch(&mut g, &batch)?;
            if let Some(op) = g.non_finite_op() {
                return Err(Error::Numerics(format!("non-finite value produced by {op}")));
            }
            for (inst, values) in chunk.iter().zip(g.value(vars.prediction).chunks(flow)) {
                out.push(FlowTensor::from_values(h, w, values.to_vec(), inst.target)?);
            }
        }
        Ok(out)
    }
}
