use super::{case, check_graph, GradCase, DEFAULT_STEP};
use crate::diff::{gru_cell, rng::purpose, Graph, GruVars, RngStream, Tensor, Var};
use crate::distributions::{graph as dist, BetaSampler};
use crate::error::Result;

const PRIMITIVE_TOL: f64 = 1e-4;
const COMPOSITE_TOL: f64 = 1e-3;

fn normal(rng: &mut RngStream, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, rng.normals(r * c)).expect("positive shape")
}

fn positive(rng: &mut RngStream, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(r, c, rng.uniforms(r * c).into_iter().map(|u| lo + (hi - lo) * u).collect()).expect("positive shape")
}

/// Contracts a tensor-valued node to a scalar with fixed random weights so
/// every output entry gets a distinct adjoint.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let [r, c] = g.value(y).shape();
    let w = normal(&mut RngStream::new(seed), r, c);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn unary(f: fn(&mut Graph, Var) -> Var) -> Build {
    Box::new(move |g, v| {
        let y = f(g, v[0]);
        project(g, y, 99)
    })
}

fn binary(f: fn(&mut Graph, Var, Var) -> Result<Var>) -> Build {
    Box::new(move |g, v| {
        let y = f(g, v[0], v[1])?;
        project(g, y, 99)
    })
}

fn primitive_cases(rng: &mut RngStream) -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let mut cases: Vec<(&'static str, Vec<Tensor>, Build)> = Vec::new();
    cases.push(("add", vec![normal(rng, 3, 4), normal(rng, 3, 4)], binary(Graph::add)));
    cases.push(("add_row_broadcast", vec![normal(rng, 3, 4), normal(rng, 1, 4)], binary(Graph::add)));
    cases.push(("sub_col_broadcast", vec![normal(rng, 3, 4), normal(rng, 3, 1)], binary(Graph::sub)));
    cases.push(("mul", vec![normal(rng, 3, 4), normal(rng, 3, 4)], binary(Graph::mul)));
    cases.push(("mul_scalar_broadcast", vec![normal(rng, 3, 4), normal(rng, 1, 1)], binary(Graph::mul)));
    cases.push(("matmul", vec![normal(rng, 3, 5), normal(rng, 5, 2)], binary(Graph::matmul)));
    cases.push((
        "sum_matmul",
        vec![normal(rng, 4, 3), normal(rng, 3, 4)],
        Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            Ok(g.sum(y))
        }),
    ));
    cases.push(("affine", vec![normal(rng, 2, 3)], Box::new(|g, v| {
        let y = g.affine(v[0], -1.7, 0.3);
        project(g, y, 99)
    })));
    cases.push((
        "concat",
        vec![normal(rng, 2, 3), normal(rng, 2, 2)],
        Box::new(|g, v| {
            let y = g.concat(&[v[0], v[1]])?;
            project(g, y, 99)
        }),
    ));
    cases.push(("slice", vec![normal(rng, 2, 6)], Box::new(|g, v| {
        let y = g.slice(v[0], 1, 4)?;
        project(g, y, 99)
    })));
    cases.push(("mean", vec![normal(rng, 3, 3)], Box::new(|g, v| {
        let e = g.exp(v[0]);
        Ok(g.mean(e))
    })));
    cases.push(("exp", vec![normal(rng, 2, 4)], unary(Graph::exp)));
    cases.push(("log", vec![positive(rng, 2, 4, 0.3, 3.0)], unary(Graph::log)));
    cases.push(("sigmoid", vec![normal(rng, 2, 4)], unary(Graph::sigmoid)));
    cases.push(("tanh", vec![normal(rng, 2, 4)], unary(Graph::tanh)));
    cases.push(("softplus", vec![normal(rng, 2, 4)], unary(Graph::softplus)));
    cases.push(("lgamma", vec![positive(rng, 2, 4, 0.2, 6.0)], unary(Graph::lgamma)));
    cases.push(("digamma", vec![positive(rng, 2, 4, 0.2, 6.0)], unary(Graph::digamma)));
    cases.push(("log_softmax", vec![normal(rng, 3, 5)], unary(Graph::log_softmax)));
    cases.push(("log_add_exp", vec![normal(rng, 2, 3), normal(rng, 2, 3)], binary(Graph::log_add_exp)));
    cases.push(("sq_dist", vec![normal(rng, 3, 2), normal(rng, 4, 2)], binary(Graph::sq_dist)));
    // Inputs kept away from the kinks so central differences do not straddle them.
    let away = |t: Tensor| t.map(|x| if x.abs() < 0.05 { x + 0.2 } else { x });
    cases.push(("leaky_relu", vec![away(normal(rng, 2, 4))], Box::new(|g, v| {
        let y = g.leaky_relu(v[0], 0.01);
        project(g, y, 99)
    })));
    cases.push(("clamp", vec![away(normal(rng, 2, 4))], Box::new(|g, v| {
        let y = g.clamp(v[0], -0.5, 0.8);
        project(g, y, 99)
    })));
    cases.push((
        "softmax_cross_entropy",
        vec![normal(rng, 4, 5)],
        Box::new(|g, v| g.softmax_cross_entropy(v[0], &[0, 3, 1, 4], &[1.0, 0.5, 0.0, 2.0])),
    ));
    cases.push(("pick", vec![normal(rng, 3, 4)], Box::new(|g, v| {
        let e = g.exp(v[0]);
        g.pick(e, &[1, 0, 3], &[1.0, -2.0, 0.5])
    })));
    cases.push((
        "embedding",
        vec![normal(rng, 5, 3)],
        Box::new(|g, v| {
            let y = g.embedding(v[0], &[4, 1, 1, 0])?;
            project(g, y, 99)
        }),
    ));
    cases
}

fn gru_inputs(rng: &mut RngStream, e: usize, h: usize, steps: usize) -> Vec<Tensor> {
    let scale = |t: Tensor| t.map(|x| 0.5 * x);
    let mut v = vec![
        scale(normal(rng, e, 3 * h)),
        scale(normal(rng, h, 3 * h)),
        scale(normal(rng, 1, 3 * h)),
        scale(normal(rng, 1, 3 * h)),
        normal(rng, 1, h),
    ];
    for _ in 0..steps {
        v.push(normal(rng, 1, e));
    }
    v
}

fn gru_unrolled(g: &mut Graph, v: &[Var]) -> Result<Var> {
    let p = GruVars { w_ih: v[0], w_hh: v[1], b_ih: v[2], b_hh: v[3] };
    let mut h = v[4];
    for &x in &v[5..] {
        h = gru_cell(g, &p, x, h)?;
    }
    project(g, h, 7)
}

fn sampler_cases(rng: &mut RngStream) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    let u = rng.uniforms(3);
    out.push(case(
        "binary_concrete",
        PRIMITIVE_TOL,
        check_graph(
            &[Tensor::row_vector(vec![0.3, 0.55, 0.8])?],
            |g, v| {
                let b = dist::binary_concrete(g, v[0], 0.5, &u)?;
                project(g, b, 3)
            },
            DEFAULT_STEP,
        ),
    )?);
    let beta_seed = rng.seed() ^ 0xBE7A;
    out.push(case(
        "beta_pathwise",
        COMPOSITE_TOL,
        check_graph(
            &[Tensor::row_vector(vec![2.0, 0.7, 5.0])?, Tensor::row_vector(vec![2.0, 1.5, 0.9])?],
            |g, v| {
                let mut r = RngStream::new(beta_seed);
                let (z, _) = dist::beta_sample(g, v[0], v[1], BetaSampler::InverseCdf, &mut r)?;
                project(g, z, 5)
            },
            1e-5,
        ),
    )?);
    let ss_seed = rng.seed() ^ 0x55;
    out.push(case(
        "spike_slab_sample",
        COMPOSITE_TOL,
        check_graph(
            &[
                Tensor::row_vector(vec![0.2, 0.6, 0.9])?,
                Tensor::row_vector(vec![0.5, -1.0, 2.0])?,
                Tensor::row_vector(vec![0.8, 1.2, 0.3])?,
            ],
            |g, v| {
                let mut r = RngStream::new(ss_seed);
                let z = dist::spike_slab_sample(g, v[0], v[1], v[2], 1e-2, 0.5, &mut r)?;
                let zz = g.mul(z, z)?;
                Ok(g.mean(zz))
            },
            DEFAULT_STEP,
        ),
    )?);
    out.push(case(
        "beta_kl",
        PRIMITIVE_TOL,
        check_graph(
            &[Tensor::row_vector(vec![2.0, 0.7, 5.0])?, Tensor::row_vector(vec![3.0, 1.3, 1.0])?],
            |g, v| {
                let kl = dist::beta_kl(g, v[0], v[1], 2.0, 8.0)?;
                Ok(g.sum(kl))
            },
            DEFAULT_STEP,
        ),
    )?);
    out.push(case(
        "gaussian_kl",
        PRIMITIVE_TOL,
        check_graph(
            &[Tensor::row_vector(vec![0.5, -1.0])?, Tensor::row_vector(vec![0.3, 2.0])?],
            |g, v| {
                let kl = dist::gaussian_kl_standard(g, v[0], v[1])?;
                Ok(g.sum(kl))
            },
            DEFAULT_STEP,
        ),
    )?);
    Ok(out)
}

/// Runs every gradient check; `seed` fixes all random inputs and noise.
pub fn run_suite(seed: u64) -> Result<Vec<GradCase>> {
    let root = RngStream::new(seed);
    let mut rng = root.derive(purpose::INIT, 0);
    let mut out = Vec::new();
    for (name, inputs, build) in primitive_cases(&mut rng) {
        out.push(case(name, PRIMITIVE_TOL, check_graph(&inputs, &build, DEFAULT_STEP))?);
    }
    let one = gru_inputs(&mut rng, 3, 4, 1);
    out.push(case("gru_1_step", PRIMITIVE_TOL, check_graph(&one, gru_unrolled, DEFAULT_STEP))?);
    let five = gru_inputs(&mut rng, 3, 4, 5);
    out.push(case("gru_5_step", COMPOSITE_TOL, check_graph(&five, gru_unrolled, DEFAULT_STEP))?);
    out.extend(sampler_cases(&mut root.derive(purpose::STEP, 0))?);
    out.extend(crate::model::gradcheck_cases(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_square() {
        let (_, grads) = crate::diff::forward_backward(&[Tensor::scalar(3.0)], |g, v| g.mul(v[0], v[0])).unwrap();
        assert_eq!(grads[0].item(), 6.0);
    }

    #[test]
    fn every_primitive_passes() {
        let mut rng = RngStream::new(2024);
        for (name, inputs, build) in primitive_cases(&mut rng) {
            let report = check_graph(&inputs, &build, DEFAULT_STEP).unwrap();
            assert!(report.passes(PRIMITIVE_TOL), "{name}: {report:?}");
        }
    }

    #[test]
    fn primitives_pass_on_other_seeds() {
        for seed in [1, 77] {
            let mut rng = RngStream::new(seed);
            for (name, inputs, build) in primitive_cases(&mut rng) {
                let report = check_graph(&inputs, &build, DEFAULT_STEP).unwrap();
                assert!(report.passes(PRIMITIVE_TOL), "seed {seed} {name}: {report:?}");
            }
        }
    }

    #[test]
    fn gru_steps() {
        let mut rng = RngStream::new(5);
        let one = gru_inputs(&mut rng, 3, 4, 1);
        assert!(check_graph(&one, gru_unrolled, DEFAULT_STEP).unwrap().passes(PRIMITIVE_TOL));
        let five = gru_inputs(&mut rng, 3, 4, 5);
        assert!(check_graph(&five, gru_unrolled, DEFAULT_STEP).unwrap().passes(COMPOSITE_TOL));
    }

    #[test]
    fn gru_with_zero_everything_stays_zero() {
        let mut g = Graph::new();
        let p = GruVars {
            w_ih: g.param(Tensor::zeros(3, 12)),
            w_hh: g.param(Tensor::zeros(4, 12)),
            b_ih: g.param(Tensor::zeros(1, 12)),
            b_hh: g.param(Tensor::zeros(1, 12)),
        };
        let x = g.constant(Tensor::zeros(1, 3));
        let h = g.constant(Tensor::zeros(1, 4));
        let h1 = gru_cell(&mut g, &p, x, h).unwrap();
        assert!(g.value(h1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_shape_contract() {
        let mut g = Graph::new();
        let p = GruVars {
            w_ih: g.param(Tensor::zeros(3, 12)),
            w_hh: g.param(Tensor::zeros(4, 12)),
            b_ih: g.param(Tensor::zeros(1, 12)),
            b_hh: g.param(Tensor::zeros(1, 12)),
        };
        let x = g.constant(Tensor::zeros(1, 2));
        let h = g.constant(Tensor::zeros(1, 4));
        assert!(matches!(gru_cell(&mut g, &p, x, h), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn detached_branch_has_exactly_zero_gradient() {
        let (_, grads) = crate::diff::forward_backward(&[Tensor::row_vector(vec![0.3, -1.2]).unwrap()], |g, v| {
            let d = g.detach(v[0]);
            let e = g.exp(d);
            Ok(g.sum(e))
        })
        .unwrap();
        assert!(grads[0].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let r = crate::diff::forward_backward(&[Tensor::zeros(2, 3), Tensor::zeros(3, 2)], |g, v| g.add(v[0], v[1]));
        assert!(matches!(r, Err(crate::Error::Contract(_))));
    }

    #[test]
    fn nonfinite_reports_op() {
        let r = crate::diff::forward_backward(&[Tensor::scalar(-1.0)], |g, v| {
            let l = g.log(v[0]);
            Ok(g.sum(l))
        });
        match r {
            Err(crate::Error::Numeric(m)) => assert!(m.contains("log"), "{m}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn samplers_pass() {
        for c in sampler_cases(&mut RngStream::new(13)).unwrap() {
            assert!(c.passed(), "{}: {:?}", c.name, c.report);
        }
    }

    #[test]
    fn stochastic_graph_replays_bit_identically() {
        let run = || {
            let mut g = Graph::new();
            let gate = g.param(Tensor::row_vector(vec![0.3, 0.6]).unwrap());
            let m = g.param(Tensor::row_vector(vec![0.1, -0.2]).unwrap());
            let s = g.param(Tensor::row_vector(vec![1.0, 0.5]).unwrap());
            let mut r = RngStream::new(8);
            let z = dist::spike_slab_sample(&mut g, gate, m, s, 0.01, 0.5, &mut r).unwrap();
            g.value(z).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
