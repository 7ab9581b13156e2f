//! Finite-difference checks for the model's differentiable stages, built on
//! the primitive checker in `termcast_nn`.

use termcast_nn::gradcheck::{check_gradients, primitive_suite, probe_loss, GradCheckOptions, GradCheckResult};
use termcast_nn::{seeded_init, InitScheme, ParamId, ParamStore, Tensor};

use crate::components::{build_instances, InputInstance};
use crate::error::Result;
use crate::flow_grid::{FlowSeries, FlowTensor};
use crate::model::{fuse, loss, Batch, FusionMode, ModelConfig, TermCast, Variant};

/// Grid and width settings for one round of model checks.
#[derive(Clone, Copy, Debug)]
struct Shape {
    height: usize,
    width: usize,
    relation_dim: usize,
    batch: usize,
}

const SHAPES: [Shape; 3] = [
    Shape { height: 2, width: 2, relation_dim: 8, batch: 1 },
    Shape { height: 2, width: 3, relation_dim: 8, batch: 2 },
    Shape { height: 3, width: 2, relation_dim: 12, batch: 3 },
];

/// Six-hour intervals keep the extra-feature width small.
const INTERVAL: u32 = 6 * 3600;
const PER_DAY: usize = 4;

fn small_config(height: usize, width: usize, relation_dim: usize) -> ModelConfig {
    let mut c = ModelConfig::new(height, width, PER_DAY).with_relation_dim(relation_dim);
    c.conv_filters = 3;
    c.conv_layers = 2;
    c.g_hidden = vec![relation_dim];
    c.mlp_r_hidden = vec![2 * relation_dim];
    c.mlp_extra_hidden = vec![6];
    c.alpha = 1.3;
    c.beta = 0.7;
    c
}

/// Moves every parameter off its initial value so zero-initialized biases and
/// fusion logits do not sit at special points.
fn jitter(store: &mut ParamStore, seed: u64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        let noise = seeded_init(&shape, InitScheme::UniformFanIn, seed ^ ((id.index() as u64 + 1) * 7919));
        let v = &mut store.get_mut(id).value;
        for (x, n) in v.data_mut().iter_mut().zip(noise.data()) {
            *x += 0.3 * n;
        }
    }
}

fn input(store: &mut ParamStore, name: &str, shape: &[usize], seed: u64) -> ParamId {
    let t = seeded_init(shape, InitScheme::UniformFanIn, seed);
    let scale = (shape[1..].iter().product::<usize>() as f64).sqrt();
    store.add(name, Tensor::new(shape.to_vec(), t.data().iter().map(|v| v * scale).collect()).expect("shape"))
}

fn probe(g: &mut termcast_nn::Graph, y: termcast_nn::Var, seed: u64) -> Result<termcast_nn::Var> {
    Ok(probe_loss(g, y, seed)?)
}

/// Splits the model from its parameters so the checker can perturb them.
fn detach(cfg: ModelConfig, seed: u64) -> Result<(TermCast, ParamStore)> {
    let mut model = TermCast::new(cfg, seed)?;
    let mut store = std::mem::take(&mut model.params);
    jitter(&mut store, seed);
    Ok((model, store))
}

fn toy_series(height: usize, width: usize, seed: u64) -> Result<FlowSeries> {
    let len = 6 + 7 * PER_DAY + 4;
    let raw = seeded_init(&[len, 2 * height * width], InitScheme::UniformFanIn, seed);
    let tensors = raw
        .data()
        .chunks(2 * height * width)
        .enumerate()
        .map(|(i, c)| FlowTensor::from_values(height, width, c.iter().map(|v| v.abs()).collect(), i))
        .collect::<Result<Vec<_>>>()?;
    FlowSeries::new(height, width, INTERVAL, 1_704_067_200, tensors)
}

fn stage_checks(shape: Shape, seed: u64, opts: &GradCheckOptions) -> Result<Vec<GradCheckResult>> {
    let Shape { height, width, relation_dim: d, batch: b } = shape;
    let flow = 2 * height * width;
    let tag = format!("{height}x{width} d{d} b{b} seed {seed}");
    let mut out = Vec::new();

    let (model, mut store) = detach(small_config(height, width, d), seed)?;
    let xs: Vec<ParamId> = (0..6).map(|k| input(&mut store, &format!("in.c{k}"), &[b, flow], seed + k)).collect();
    let rel = input(&mut store, "in.rel", &[b * 6, d], seed + 10);
    let dvec = input(&mut store, "in.d", &[b, d], seed + 11);
    let extra = input(&mut store, "in.extra", &[b, PER_DAY + 7], seed + 12);
    let positions: Vec<[usize; 6]> = (0..b).map(|i| std::array::from_fn(|k| 3 * i + k + seed as usize)).collect();

    out.push(check_gradients(
        &format!("short_term_predict {tag}"),
        &mut store,
        |g| {
            let c: Vec<_> = xs.iter().map(|&x| g.param(x)).collect();
            let y = model.short_term_predict(g, &c)?;
            probe(g, y, seed)
        },
        opts,
    )?);
    out.push(check_gradients(
        &format!("relation_encode {tag}"),
        &mut store,
        |g| {
            let (c, p, q) = (g.param(xs[0]), g.param(xs[1]), g.param(xs[2]));
            let y = model.relation_encode(g, c, p, q)?;
            probe(g, y, seed)
        },
        opts,
    )?);
    out.push(check_gradients(
        &format!("relation_predict {tag}"),
        &mut store,
        |g| {
            let r = g.param(rel);
            let y = model.relation_predict(g, r, &positions)?;
            probe(g, y, seed)
        },
        opts,
    )?);
    out.push(check_gradients(
        &format!("relation_decode {tag}"),
        &mut store,
        |g| {
            let r = g.param(dvec);
            let y = model.relation_decode(g, r)?;
            probe(g, y, seed)
        },
        opts,
    )?);
    out.push(check_gradients(
        &format!("extra_influence {tag}"),
        &mut store,
        |g| {
            let e = g.param(extra);
            let y = model.extra_influence(g, e)?;
            probe(g, y, seed)
        },
        opts,
    )?);

    for mode in FusionMode::ALL {
        let mut fs = ParamStore::new();
        let terms: Vec<ParamId> = (0..3).map(|k| input(&mut fs, &format!("term{k}"), &[b, flow], seed + 20 + k)).collect();
        let weights: Vec<ParamId> = (0..3)
            .map(|k| input(&mut fs, &format!("w{k}"), &[2, height, width], seed + 30 + k))
            .collect();
        for (k, &w) in weights.iter().enumerate() {
            fs.set_trainable(w, mode.weight_enabled(k));
        }
        out.push(check_gradients(
            &format!("fuse {mode} {tag}"),
            &mut fs,
            |g| {
                let t = [0, 1, 2].map(|k| Some(g.param(terms[k])));
                let w = [0, 1, 2].map(|k| g.param(weights[k]));
                let y = fuse(g, t, w, mode)?;
                probe(g, y, seed)
            },
            opts,
        )?);
    }

    let mut ls = ParamStore::new();
    let pred = input(&mut ls, "pred", &[b, flow], seed + 40);
    let target = input(&mut ls, "target", &[b, flow], seed + 41);
    let inferred = input(&mut ls, "inferred", &[b, d], seed + 42);
    let predicted = input(&mut ls, "predicted", &[b, d], seed + 43);
    out.push(check_gradients(
        &format!("loss {tag}"),
        &mut ls,
        |g| {
            let (p, t) = (g.param(pred), g.param(target));
            let (i, r) = (g.param(inferred), g.param(predicted));
            loss(g, p, t, Some((i, r)), 1.3, 0.7)
        },
        opts,
    )?);
    Ok(out)
}

/// Full batch loss on a 2x4x4 toy instance, with respect to every parameter.
fn end_to_end(variant: Variant, fusion: FusionMode, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckResult> {
    let mut cfg = small_config(4, 4, 8);
    cfg.variant = variant;
    cfg.fusion = fusion;
    let (model, mut store) = detach(cfg, seed)?;
    let series = toy_series(4, 4, seed)?;
    let instances = build_instances(&series);
    let refs: Vec<&InputInstance> = instances.iter().take(2).collect();
    let batch = Batch::from_instances(&refs)?;
    check_gradients(
        &format!("end_to_end {variant}/{fusion} seed {seed}"),
        &mut store,
        |g| {
            let out = model.forward_batch(g, &batch)?;
            let t = g.input(batch.target.clone());
            model.batch_loss(g, &out, t)
        },
        opts,
    )
}

/// Primitive layers plus every model stage, over `seeds` and three shapes each,
/// and the end-to-end loss for each ablation variant.
pub fn full_suite(seeds: &[u64], opts: &GradCheckOptions) -> Result<Vec<GradCheckResult>> {
    let mut out = primitive_suite(seeds, opts)?;
    for &seed in seeds {
        let opts = GradCheckOptions { seed, ..opts.clone() };
        for shape in SHAPES {
            out.extend(stage_checks(shape, seed, &opts)?);
        }
        for variant in Variant::ALL {
            out.push(end_to_end(variant, FusionMode::C5, seed, &opts)?);
        }
        out.push(end_to_end(Variant::Full, FusionMode::C0, seed, &opts)?);
    }
    Ok(out)
}
