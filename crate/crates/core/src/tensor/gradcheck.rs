//! Central finite-difference checks of tape gradients.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Segment, Tape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero entries from
/// dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("positive shape")
}

/// Check d(Σ w ⊙ f(inputs))/d(inputs) for a fixed random projection `w`.
pub fn check_inputs<F>(inputs: &[Tensor], f: F, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_inputs_on(Tape::new, inputs, f, seed)
}

/// As [`check_inputs`], with every evaluation on a tape from `new_tape`
/// (e.g. a dropout tape with a fixed seed, so each pass draws the same mask).
pub fn check_inputs_on<T, F>(new_tape: T, inputs: &[Tensor], f: F, seed: u64) -> Result<GradCheck>
where
    T: Fn() -> Tape,
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = new_tape();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(tape.value(out).shape(), &mut rng);
    let weighted = tape.mul_const(out, &w)?;
    let proj = tape.sum(weighted);
    let grads = tape.backward(proj)?;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = new_tape();
        let vs: Vec<Var> = xs.iter().map(|x| t.input(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o)
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| a * b)
            .sum())
    };
    let mut worst: f64 = 0.0;
    let mut n = 0;
    let mut xs = inputs.to_vec();
    for (vi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[vi].shape()));
        for e in 0..inputs[vi].numel() {
            let orig = inputs[vi].data()[e];
            xs[vi].data_mut()[e] = orig + DEFAULT_STEP;
            let plus = eval(&xs)?;
            xs[vi].data_mut()[e] = orig - DEFAULT_STEP;
            let minus = eval(&xs)?;
            xs[vi].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * DEFAULT_STEP);
            worst = worst.max(relative_error(analytic.data()[e], numeric));
            n += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        entries_checked: n,
    })
}

/// Check the gradient of a scalar loss with respect to every entry of the
/// selected parameters (all when `only` is `None`).
pub fn check_params<F>(
    store: &mut ParamStore,
    loss: F,
    only: Option<&[ParamId]>,
) -> Result<GradCheck>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(store, &mut tape)?;
    let mut grads = store.clone();
    grads.zero_grads();
    tape.backward_into(l, &mut grads)?;
    drop(tape);
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for id in ids {
        for k in 0..store.value(id).numel() {
            let orig = store.value(id).data()[k];
            let mut at = |x: f64| -> Result<f64> {
                store.value_mut(id).data_mut()[k] = x;
                let mut t = Tape::new();
                let l = loss(store, &mut t)?;
                Ok(t.value(l).item())
            };
            let numeric =
                (at(orig + DEFAULT_STEP)? - at(orig - DEFAULT_STEP)?) / (2.0 * DEFAULT_STEP);
            store.value_mut(id).data_mut()[k] = orig;
            worst = worst.max(relative_error(grads.grad(id).data()[k], numeric));
            n += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        entries_checked: n,
    })
}

pub type OpFn = fn(&mut Tape, &[Var]) -> Result<Var>;

/// One case per differentiable tape operation: name, input shapes, and the
/// op applied to those inputs. `r` must be at least 2.
pub fn primitive_cases(r: usize, c: usize) -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("matmul", vec![vec![r, c], vec![c, 3]], |t, v| {
            t.matmul(v[0], v[1])
        }),
        ("add", vec![vec![r, c], vec![r, c]], |t, v| {
            t.add(v[0], v[1])
        }),
        ("mul", vec![vec![r, c], vec![r, c]], |t, v| {
            t.mul(v[0], v[1])
        }),
        ("add_row", vec![vec![r, c], vec![c]], |t, v| {
            t.add_row(v[0], v[1])
        }),
        ("scale", vec![vec![r, c]], |t, v| Ok(t.scale(v[0], -1.7))),
        ("add_const", vec![vec![r, c]], |t, v| {
            let k = Tensor::full(t.value(v[0]).shape(), 0.3);
            t.add_const(v[0], &k)
        }),
        ("mul_const", vec![vec![r, c]], |t, v| {
            let k = Tensor::full(t.value(v[0]).shape(), -0.6);
            t.mul_const(v[0], &k)
        }),
        ("gelu", vec![vec![r, c]], |t, v| Ok(t.gelu(v[0]))),
        ("layer_norm", vec![vec![r, c], vec![c], vec![c]], |t, v| {
            t.layer_norm(v[0], v[1], v[2], 1e-5)
        }),
        ("softmax", vec![vec![r, c]], |t, v| t.softmax(v[0], 1)),
        ("log_softmax", vec![vec![r, c]], |t, v| t.log_softmax(v[0])),
        ("gather", vec![vec![r, c]], |t, v| {
            let n = t.value(v[0]).rows();
            let ids: Vec<usize> = (0..2 * n).map(|i| (i * 7) % n).collect();
            t.gather(v[0], &ids)
        }),
        ("select_rows", vec![vec![r, c]], |t, v| {
            let n = t.value(v[0]).rows();
            t.select_rows(v[0], &[n - 1, 0, n / 2])
        }),
        (
            "attention",
            vec![vec![r, 2 * c], vec![r, 2 * c], vec![r, 2 * c]],
            |t, v| {
                let n = t.value(v[0]).rows();
                let segs = [
                    Segment {
                        start: 0,
                        len: n / 2,
                    },
                    Segment {
                        start: n / 2,
                        len: n - n / 2,
                    },
                ];
                t.attention(v[0], v[1], v[2], &segs, 2)
            },
        ),
        ("pick", vec![vec![r, c]], |t, v| {
            let (n, m) = (t.value(v[0]).rows(), t.value(v[0]).cols());
            let cols: Vec<usize> = (0..n).map(|i| i % m).collect();
            t.pick(v[0], &cols)
        }),
        ("row_dot", vec![vec![r, c]], |t, v| {
            let w = Tensor::full(t.value(v[0]).shape(), 0.25);
            t.row_dot(v[0], &w)
        }),
        ("sum", vec![vec![r, c]], |t, v| Ok(t.sum(v[0]))),
        ("mean", vec![vec![r, c]], |t, v| Ok(t.mean(v[0]))),
        ("dropout", vec![vec![r, c]], |t, v| t.dropout(v[0], 0.3)),
    ]
}

/// Run [`check_inputs`] on every case of [`primitive_cases`] with random
/// inputs. Dropout runs on a tape with a fixed mask seed.
pub fn check_primitives(r: usize, c: usize, seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    primitive_cases(r, c)
        .into_iter()
        .map(|(name, shapes, f)| {
            let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
            let res = if name == "dropout" {
                check_inputs_on(|| Tape::with_dropout(seed ^ 11), &inputs, f, seed)
            } else {
                check_inputs(&inputs, f, seed)
            }?;
            Ok((name, res))
        })
        .collect()
}
