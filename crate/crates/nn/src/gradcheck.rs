//! Central finite-difference gradient checking.
//!
//! The check only ever evaluates the forward pass, so it stays independent of
//! the backward formulas it is validating.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Conv2d, Dense, LayerNorm, Mlp, MultiHeadAttention};
use crate::params::{InitScheme, Initializer, ParamStore};
use crate::tensor::Tensor;

const ROUNDOFF_ULPS: f64 = 64.0;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter tensor; smaller tensors are checked fully.
    pub max_coords: usize,
    /// Norms below this are treated as "both gradients vanish".
    pub norm_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords: 24,
            norm_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub coords: usize,
    pub passed: bool,
}

/// Compares analytic gradients of `build`'s scalar output against central
/// differences for every trainable parameter in `store`.
///
/// Relative error per parameter tensor is `|a - n| / max(|a| + |n|, floor)`
/// over the sampled coordinates; the reported value is the maximum. `floor`
/// is `norm_floor` or the finite-difference round-off level divided by the
/// tolerance, whichever is larger.
pub fn check_gradients<F, E>(
    name: &str,
    store: &mut ParamStore,
    build: F,
    opts: &GradCheckOptions,
) -> std::result::Result<GradCheckResult, E>
where
    F: Fn(&mut Graph) -> std::result::Result<Var, E>,
    E: From<NnError>,
{
    let (base_loss, analytic): (f64, Vec<Vec<f64>>) = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        let base = g.scalar(loss);
        let grads = g.backward(loss)?;
        let analytic = store
            .ids()
            .map(|id| {
                grads
                    .param(id)
                    .map(|s| s.to_vec())
                    .unwrap_or_else(|| vec![0.0; store.value(id).numel()])
            })
            .collect();
        (base, analytic)
    };
    let eval = |store: &ParamStore| -> std::result::Result<f64, E> {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        Ok(g.scalar(loss))
    };
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(opts.seed);
    let mut max_rel = 0.0f64;
    let mut coords = 0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        let n = store.value(id).numel();
        let picks: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.max_coords).into_vec();
            v.sort_unstable();
            v
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &i in &picks {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - opts.step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[id.index()][i];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        coords += picks.len();
        // A loss evaluated through a few hundred ops carries round-off of
        // tens of ulps, which a central difference divides by the step.
        // Gradients below the norm where that alone reaches the tolerance
        // count as vanishing.
        let roundoff = ROUNDOFF_ULPS * f64::EPSILON * base_loss.abs().max(1.0) / opts.step * (picks.len() as f64).sqrt();
        let floor = opts.norm_floor.max(roundoff / opts.tolerance);
        let rel = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(floor);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckResult {
        name: name.to_string(),
        max_rel_error: max_rel,
        coords,
        passed: max_rel < opts.tolerance,
    })
}

/// Adds a fixed random probe and returns `sum(out * probe)`, so every output
/// element gets a distinct upstream gradient.
pub fn probe_loss(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let mut probe = Initializer::new(seed ^ 0x9e37_79b9_7f4a_7c15).init(&shape, InitScheme::UniformFanIn);
    let scale = (shape[1..].iter().product::<usize>().max(1) as f64).sqrt();
    probe.data_mut().iter_mut().for_each(|v| *v *= scale);
    let p = g.input(probe);
    let prod = g.mul(out, p)?;
    Ok(g.sum(prod))
}

fn random_input(store: &mut ParamStore, init: &mut Initializer, name: &str, shape: &[usize]) -> crate::params::ParamId {
    let mut t = init.init(shape, InitScheme::UniformFanIn);
    let scale = (shape[1..].iter().product::<usize>().max(1) as f64).sqrt();
    t.data_mut().iter_mut().for_each(|v| *v *= scale);
    store.add(name, t)
}

/// Gradient checks for every differentiable primitive layer, over the given
/// seeds and three shapes per operation.
pub fn primitive_suite(seeds: &[u64], opts: &GradCheckOptions) -> Result<Vec<GradCheckResult>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let o = GradCheckOptions { seed, ..opts.clone() };
        for (si, &(b, cin, cout, h, w)) in [(1, 1, 2, 3, 3), (2, 3, 2, 4, 5), (1, 2, 4, 5, 4)].iter().enumerate() {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed * 31 + si as u64);
            let x = random_input(&mut store, &mut init, "x", &[b, cin, h, w]);
            let conv = Conv2d::new(&mut store, &mut init, "conv", cin, cout);
            store.get_mut(conv.bias).value = init.init(&[cout], InitScheme::UniformFanIn);
            out.push(check_gradients(
                &format!("conv2d[{b}x{cin}x{h}x{w}->{cout}]/seed{seed}"),
                &mut store,
                |g| {
                    let xv = g.param(x);
                    let y = conv.forward(g, xv)?;
                    probe_loss(g, y, seed)
                },
                &o,
            )?);
        }
        for (si, &(rows, n, m)) in [(1, 3, 2), (4, 5, 3), (3, 2, 6)].iter().enumerate() {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed * 37 + si as u64);
            let x = random_input(&mut store, &mut init, "x", &[rows, n]);
            let dense = Dense::new(&mut store, &mut init, "dense", n, m);
            store.get_mut(dense.bias).value = init.init(&[m], InitScheme::UniformFanIn);
            out.push(check_gradients(
                &format!("dense[{rows}x{n}->{m}]/seed{seed}"),
                &mut store,
                |g| {
                    let xv = g.param(x);
                    let y = dense.forward(g, xv)?;
                    probe_loss(g, y, seed)
                },
                &o,
            )?);
        }
        for (si, widths) in [vec![3, 4, 2], vec![5, 8, 8, 3], vec![2, 6, 1]].iter().enumerate() {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed * 41 + si as u64);
            let x = random_input(&mut store, &mut init, "x", &[3, widths[0]]);
            let mlp = Mlp::new(&mut store, &mut init, "mlp", widths)?;
            out.push(check_gradients(
                &format!("mlp+relu{widths:?}/seed{seed}"),
                &mut store,
                |g| {
                    let xv = g.param(x);
                    let y = mlp.forward(g, xv)?;
                    probe_loss(g, y, seed)
                },
                &o,
            )?);
        }
        for (si, shape) in [vec![5], vec![3, 4], vec![2, 3, 4]].iter().enumerate() {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed * 43 + si as u64);
            let x = random_input(&mut store, &mut init, "x", shape);
            out.push(check_gradients(
                &format!("relu{shape:?}/seed{seed}"),
                &mut store,
                |g| {
                    let xv = g.param(x);
                    let y = g.relu(xv);
                    probe_loss(g, y, seed)
                },
                &o,
            )?);
        }
        for (si, (shape, axis)) in [(vec![4], 0), (vec![3, 5], 1), (vec![3, 2, 4], 0)].iter().enumerate() {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed * 47 + si as u64);
            let x = random_input(&mut store, &mut init, "x", shape);
            out.push(check_gradients(
                &format!("softmax{shape:?}@{axis}/seed{seed}"),
                &mut store,
                |g| {
                    let xv = g.param(x);
                    let y = g.softmax(xv, *axis)?;
                    probe_loss(g, y, seed)
                },
                &o,
            )?);
        }
        for (si, &(rows, d)) in [(1, 4), (3, 6), (5, 2)].iter().enumerate() {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed * 53 + si as u64);
            let x = random_input(&mut store, &mut init, "x", &[rows, d]);
            let ln = LayerNorm::new(&mut store, &mut init, "ln", d);
            store.get_mut(ln.gain).value = init.init(&[d], InitScheme::UniformFanIn);
            store.get_mut(ln.shift).value = init.init(&[d], InitScheme::UniformFanIn);
            out.push(check_gradients(
                &format!("layer_norm[{rows}x{d}]/seed{seed}"),
                &mut store,
                |g| {
                    let xv = g.param(x);
                    let y = ln.forward(g, xv)?;
                    probe_loss(g, y, seed)
                },
                &o,
            )?);
        }
        for (si, &(batch, seq, d, heads)) in [(1, 1, 4, 2), (2, 3, 4, 1), (2, 4, 8, 4)].iter().enumerate() {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed * 59 + si as u64);
            let x = random_input(&mut store, &mut init, "x", &[batch * seq, d]);
            let attn = MultiHeadAttention::new(&mut store, &mut init, "attn", d, heads)?;
            out.push(check_gradients(
                &format!("attention[b{batch},L{seq},d{d},h{heads}]/seed{seed}"),
                &mut store,
                |g| {
                    let xv = g.param(x);
                    let y = attn.forward(g, xv, seq)?;
                    probe_loss(g, y, seed)
                },
                &o,
            )?);
        }
        for (si, &(rows, d)) in [(1, 3), (2, 5), (4, 2)].iter().enumerate() {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed * 61 + si as u64);
            let a = random_input(&mut store, &mut init, "a", &[rows, d]);
            let b = random_input(&mut store, &mut init, "b", &[rows, d]);
            out.push(check_gradients(
                &format!("cosine[{rows}x{d}]/seed{seed}"),
                &mut store,
                |g| {
                    let av = g.param(a);
                    let bv = g.param(b);
                    let c = g.cosine_rows(av, bv, 1e-8)?;
                    probe_loss(g, c, seed)
                },
                &o,
            )?);
        }
        for (si, shape) in [vec![6], vec![2, 3], vec![2, 2, 2]].iter().enumerate() {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed * 67 + si as u64);
            let a = random_input(&mut store, &mut init, "a", shape);
            let b = random_input(&mut store, &mut init, "b", shape);
            let row = random_input(&mut store, &mut init, "row", &[*shape.last().unwrap()]);
            out.push(check_gradients(
                &format!("elementwise{shape:?}/seed{seed}"),
                &mut store,
                |g| {
                    let av = g.param(a);
                    let bv = g.param(b);
                    let rv = g.param(row);
                    let d = g.sub(av, bv)?;
                    let sq = g.mul(d, d)?;
                    let m = g.mul_row(sq, rv)?;
                    let s = g.add_row(m, rv)?;
                    let c = g.concat(&[s, av])?;
                    let gathered = g.gather_rows(c, &[0])?;
                    let total = g.mean(c);
                    let extra = g.sum(gathered);
                    let t = g.add(total, extra)?;
                    let scaled = g.scale(t, 0.5);
                    Ok(g.add_const(scaled, 1.0))
                },
                &o,
            )?);
        }
    }
    Ok(out)
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    Initializer::new(seed).init(shape, InitScheme::UniformFanIn)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass_one_seed() {
        let results = primitive_suite(&[3], &GradCheckOptions::default()).unwrap();
        for r in &results {
            assert!(r.passed, "{} rel err {:e}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::from_vec(vec![0.3, 0.7]));
        let opts = GradCheckOptions::default();
        // Re-entering the parameter as a constant input blocks the analytic
        // gradient (0) while the numeric one is 1.
        let r = check_gradients(
            "blocked",
            &mut store,
            |g| {
                let v = g.store().value(x).clone();
                let c = g.input(v);
                Ok::<_, NnError>(g.sum(c))
            },
            &opts,
        )
        .unwrap();
        assert!(!r.passed);
    }
}
