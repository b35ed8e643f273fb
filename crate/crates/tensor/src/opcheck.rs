//! Randomised micro-graphs exercising each operator, used to compare
//! analytic gradients with central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::finite_diff_check;
use crate::graph::{Graph, GraphConfig, Precision, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Random projection of `x` to a scalar so every output entry carries a
/// distinct weight.
fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_tensor(&mut rng, g.shape(x), 0.2, 1.0);
    let w = g.constant(w);
    let y = g.mul(x, w)?;
    g.sum(y)
}

fn graph(train: bool) -> Graph {
    Graph::new(GraphConfig {
        precision: Precision::Double,
        train,
        seed: 11,
        step: 3,
    })
}

type Builder = Box<dyn Fn(&ParamStore, &[ParamId]) -> Result<(Graph, Var)>>;

struct Case {
    name: &'static str,
    params: Vec<Tensor>,
    build: Builder,
}

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out: Vec<Case> = Vec::new();
    let s = seed;

    macro_rules! case {
        ($name:expr, [$($p:expr),*], |$g:ident, $v:ident| $body:block) => {
            out.push(Case {
                name: $name,
                params: vec![$($p),*],
                build: Box::new(move |store: &ParamStore, ids: &[ParamId]| {
                    #[allow(unused_mut)]
                    let mut $g = graph($name == "dropout");
                    let $v: Vec<Var> = ids.iter().map(|&id| $g.param(store, id)).collect();
                    let y: Var = $body;
                    let l = project(&mut $g, y, s)?;
                    Ok(($g, l))
                }),
            });
        };
    }

    case!("matmul", [rand_tensor(r, &[3, 4], 0.1, 1.0), rand_tensor(r, &[4, 2], 0.1, 1.0)], |g, v| {
        g.matmul(v[0], v[1])?
    });
    case!("add", [rand_tensor(r, &[2, 3], 0.1, 1.0), rand_tensor(r, &[2, 3], 0.1, 1.0)], |g, v| {
        g.add(v[0], v[1])?
    });
    case!("sub", [rand_tensor(r, &[2, 3], 0.1, 1.0), rand_tensor(r, &[2, 3], 0.1, 1.0)], |g, v| {
        g.sub(v[0], v[1])?
    });
    case!("mul", [rand_tensor(r, &[2, 3], 0.1, 1.0), rand_tensor(r, &[2, 3], 0.1, 1.0)], |g, v| {
        g.mul(v[0], v[1])?
    });
    case!("add_row", [rand_tensor(r, &[3, 4], 0.1, 1.0), rand_tensor(r, &[4], 0.1, 1.0)], |g, v| {
        g.add_row(v[0], v[1])?
    });
    case!("scale", [rand_tensor(r, &[2, 3], 0.1, 1.0)], |g, v| { g.scale(v[0], -1.7)? });
    case!("sigmoid", [rand_tensor(r, &[2, 3], 0.1, 2.0)], |g, v| { g.sigmoid(v[0])? });
    case!("tanh", [rand_tensor(r, &[2, 3], 0.1, 2.0)], |g, v| { g.tanh(v[0])? });
    case!("relu", [rand_tensor(r, &[3, 3], 0.1, 2.0)], |g, v| { g.relu(v[0])? });
    case!("softmax", [rand_tensor(r, &[3, 5], 0.1, 2.0)], |g, v| { g.softmax(v[0])? });
    case!(
        "layer_norm",
        [rand_tensor(r, &[3, 5], 0.1, 2.0), rand_tensor(r, &[5], 0.5, 1.5), rand_tensor(r, &[5], 0.1, 1.0)],
        |g, v| { g.layer_norm(v[0], v[1], v[2], 1e-5)? }
    );
    case!("dropout", [rand_tensor(r, &[4, 5], 0.1, 1.0)], |g, v| { g.dropout(v[0], 0.3)? });
    case!(
        "conv1d",
        [rand_tensor(r, &[6, 3], 0.1, 1.0), rand_tensor(r, &[3, 3, 2], 0.1, 1.0), rand_tensor(r, &[2], 0.1, 1.0)],
        |g, v| { g.conv1d(v[0], v[1], Some(v[2]))? }
    );
    case!("gather_rows", [rand_tensor(r, &[4, 3], 0.1, 1.0)], |g, v| {
        g.gather_rows(v[0], &[2, 0, 2, 2, 3])?
    });
    case!("lstm_cell", [rand_tensor(r, &[2, 12], 0.1, 1.5), rand_tensor(r, &[2, 3], 0.1, 1.0)], |g, v| {
        g.lstm_cell(v[0], v[1])?
    });
    case!(
        "lstm_unrolled_3",
        [rand_tensor(r, &[3, 2], 0.1, 1.0), rand_tensor(r, &[2, 8], 0.1, 0.8), rand_tensor(r, &[2, 8], 0.1, 0.8), rand_tensor(r, &[8], 0.1, 0.5)],
        |g, v| {
            let mut h = g.constant(Tensor::zeros(&[1, 2]));
            let mut c = h;
            let mut hs = Vec::new();
            for t in 0..3 {
                let x = g.slice_rows(v[0], t, t + 1)?;
                let xw = g.matmul(x, v[1])?;
                let hw = g.matmul(h, v[2])?;
                let gates = g.add(xw, hw)?;
                let gates = g.add_row(gates, v[3])?;
                let hc = g.lstm_cell(gates, c)?;
                h = g.slice_cols(hc, 0, 2)?;
                c = g.slice_cols(hc, 2, 4)?;
                hs.push(h);
            }
            g.concat_rows(&hs)?
        }
    );
    case!(
        "multi_head_attention",
        [rand_tensor(r, &[3, 4], 0.1, 1.0), rand_tensor(r, &[5, 4], 0.1, 1.0), rand_tensor(r, &[5, 4], 0.1, 1.0)],
        |g, v| { g.multi_head_attention(v[0], v[1], v[2], 2)? }
    );
    case!(
        "additive_scores",
        [rand_tensor(r, &[5, 3], 0.1, 1.0), rand_tensor(r, &[1, 3], 0.1, 1.0), rand_tensor(r, &[5, 3], 0.1, 1.0), rand_tensor(r, &[3, 1], 0.1, 1.0)],
        |g, v| { g.additive_scores(v[0], v[1], v[2], v[3])? }
    );
    let target = rand_tensor(r, &[3, 2], 0.1, 1.0);
    case!("mse", [rand_tensor(r, &[3, 2], 0.1, 1.0)], |g, v| { g.mse(v[0], &target)? });
    case!("cross_entropy", [rand_tensor(r, &[4, 5], 0.1, 2.0)], |g, v| {
        g.cross_entropy(v[0], &[1, 4, 0, 1])?
    });
    case!("mean_rows", [rand_tensor(r, &[4, 3], 0.1, 1.0)], |g, v| { g.mean_rows(v[0])? });
    case!("sum", [rand_tensor(r, &[2, 3], 0.1, 1.0)], |g, v| {
        let sq = g.mul(v[0], v[0])?;
        g.sum(sq)?
    });
    case!("mean", [rand_tensor(r, &[2, 3], 0.1, 1.0)], |g, v| {
        let sq = g.mul(v[0], v[0])?;
        g.mean(sq)?
    });
    case!("concat_cols", [rand_tensor(r, &[2, 3], 0.1, 1.0), rand_tensor(r, &[2, 2], 0.1, 1.0)], |g, v| {
        g.concat_cols(&[v[0], v[1]])?
    });
    case!("slice_cols", [rand_tensor(r, &[3, 5], 0.1, 1.0)], |g, v| { g.slice_cols(v[0], 1, 4)? });
    case!("concat_rows", [rand_tensor(r, &[2, 3], 0.1, 1.0), rand_tensor(r, &[1, 3], 0.1, 1.0)], |g, v| {
        g.concat_rows(&[v[0], v[1]])?
    });
    case!("slice_rows", [rand_tensor(r, &[4, 3], 0.1, 1.0)], |g, v| { g.slice_rows(v[0], 1, 3)? });
    case!("reshape", [rand_tensor(r, &[2, 6], 0.1, 1.0)], |g, v| {
        let x = g.reshape(v[0], &[3, 4])?;
        let w = g.constant(Tensor::identity(4));
        let y = g.matmul(x, w)?;
        g.tanh(y)?
    });
    let target = rand_tensor(r, &[4, 2], 0.1, 1.0);
    case!(
        "linear_mse",
        [rand_tensor(r, &[4, 3], 0.1, 1.0), rand_tensor(r, &[3, 2], 0.1, 1.0), rand_tensor(r, &[2], 0.1, 1.0)],
        |g, v| {
            let y = g.matmul(v[0], v[1])?;
            let y = g.add_row(y, v[2])?;
            g.mse(y, &target)?
        }
    );
    out
}

/// Maximum relative finite-difference error per operator micro-graph.
pub fn operator_gradient_errors(seed: u64, step: f64) -> Result<Vec<(&'static str, f64)>> {
    let mut results = Vec::new();
    for case in cases(seed) {
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = case
            .params
            .iter()
            .enumerate()
            .map(|(i, t)| store.add(format!("p{i}"), t.clone()))
            .collect();
        let build = &case.build;
        let err = finite_diff_check(&mut store, step, |s| build(s, &ids))?;
        results.push((case.name, err));
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_operator_matches_finite_differences() {
        for seed in 0..3 {
            for (name, err) in operator_gradient_errors(seed, 1e-5).unwrap() {
                assert!(err < 1e-4, "{name} (seed {seed}): relative error {err:e}");
            }
        }
    }
}
