//! Finite-difference verification of every differentiable op, of composed
//! chains used by training, and of the double-backprop path.
//!
//! Each check builds a scalar from its inputs; the analytic gradient is
//! compared against central differences with relative error
//! `|a - n| / max(|a|, |n|, 1e-3)`. Second-order checks compare the
//! Hessian-vector product obtained by differentiating a recorded gradient
//! against finite differences of the numeric first-order gradient.

use serde::Serialize;

use crate::a3m::{attend, classify};
use crate::contrastive::{nt_xent, symmetric_kl};
use crate::rng::{self, Rng};
use crate::tensor::{Graph, Result, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const FIRST_ORDER_TOL: f64 = 1e-4;
pub const SECOND_ORDER_TOL: f64 = 1e-3;

type Build = fn(&mut Graph, &[Var]) -> Result<Var>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckOrder {
    First,
    Second,
}

/// How inputs are drawn.
#[derive(Clone, Copy, Debug)]
enum Domain {
    Normal,
    /// Magnitude in `[0.1, 1.1]` with a random sign, away from kinks.
    AwayFromZero,
    Positive,
}

pub struct Check {
    pub name: &'static str,
    pub order: CheckOrder,
    shapes: Vec<Vec<usize>>,
    domain: Domain,
    build: Build,
}

fn check(name: &'static str, order: CheckOrder, shapes: &[&[usize]], domain: Domain, build: Build) -> Check {
    Check {
        name,
        order,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        domain,
        build,
    }
}

/// Fixed pseudo-random weights used to reduce a tensor output to a scalar.
fn weights_like(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.45).collect();
    Tensor::new(shape.to_vec(), data).expect("matching length")
}

fn reduce(g: &mut Graph, out: Var) -> Result<Var> {
    if g.value(out).len() == 1 && g.shape(out).is_empty() {
        return Ok(out);
    }
    let w = g.constant(weights_like(g.shape(out)));
    let p = g.mul(out, w)?;
    g.sum_all(p)
}

use CheckOrder::{First, Second};
use Domain::{AwayFromZero, Normal, Positive};

fn attend_chain(g: &mut Graph, v: &[Var]) -> Result<Var> {
    // frames [2, 3, 4], action [2, 4], K [4, 3], V [4, 5], Q [4, 3], W [5, 3], b [3]
    let (_, h) = attend(g, v[0], v[1], v[2], v[3], v[4])?;
    let logits = classify(g, h, v[5], Some(v[6]))?;
    g.cross_entropy(logits, &[2, 0])
}

/// The default check list.
pub fn default_checks() -> Vec<Check> {
    vec![
        check("matmul", First, &[&[3, 4], &[4, 2]], Normal, |g, v| g.matmul(v[0], v[1])),
        check("add", First, &[&[3, 4], &[4]], Normal, |g, v| g.add(v[0], v[1])),
        check("sub", First, &[&[3, 1], &[3, 4]], Normal, |g, v| g.sub(v[0], v[1])),
        check("mul", First, &[&[2, 3], &[2, 3]], Normal, |g, v| g.mul(v[0], v[1])),
        check("scale", First, &[&[2, 3]], Normal, |g, v| g.scale(v[0], -1.7)),
        check("add_scalar", First, &[&[2, 3]], Normal, |g, v| g.add_scalar(v[0], 0.3)),
        check("recip", First, &[&[2, 3]], Positive, |g, v| g.recip(v[0])),
        check("relu", First, &[&[3, 4]], AwayFromZero, |g, v| g.relu(v[0])),
        check("exp", First, &[&[2, 3]], Normal, |g, v| g.exp(v[0])),
        check("log", First, &[&[2, 3]], Positive, |g, v| g.log(v[0])),
        check("softmax", First, &[&[3, 4]], Normal, |g, v| g.softmax(v[0])),
        check("log_softmax", First, &[&[3, 4]], Normal, |g, v| g.log_softmax(v[0])),
        check("sum_axis", First, &[&[2, 3, 2]], Normal, |g, v| g.sum_axis(v[0], 1)),
        check("mean_axis", First, &[&[2, 3]], Normal, |g, v| g.mean_axis(v[0], 0)),
        check("sum_all", First, &[&[2, 3]], Normal, |g, v| {
            let s = g.sum_all(v[0])?;
            g.mul(s, s)
        }),
        check("mean_all", First, &[&[2, 3]], Normal, |g, v| {
            let s = g.mean_all(v[0])?;
            g.mul(s, s)
        }),
        check("sum_to", First, &[&[2, 3, 4]], Normal, |g, v| g.sum_to(v[0], &[2, 1, 4])),
        check("broadcast_to", First, &[&[3, 1]], Normal, |g, v| g.broadcast_to(v[0], &[2, 3, 4])),
        check("transpose", First, &[&[2, 3]], Normal, |g, v| g.transpose(v[0])),
        check("reshape", First, &[&[2, 3]], Normal, |g, v| g.reshape(v[0], &[3, 2])),
        check("concat", First, &[&[2, 3], &[2, 2]], Normal, |g, v| g.concat(&[v[0], v[1]], 1)),
        check("row_norm", First, &[&[3, 4]], Normal, |g, v| g.row_norm(v[0])),
        check("l2_normalize", First, &[&[3, 4]], Normal, |g, v| g.l2_normalize(v[0])),
        check("cosine_sim", First, &[&[3, 4], &[3, 4]], Normal, |g, v| g.cosine_sim(v[0], v[1])),
        check("cross_entropy", First, &[&[3, 4]], Normal, |g, v| g.cross_entropy(v[0], &[1, 3, 0])),
        check("mlp_relu_chain", First, &[&[3, 4], &[4, 5], &[5], &[5, 2]], Normal, |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.add(h, v[2])?;
            let h = g.relu(h)?;
            g.matmul(h, v[3])
        }),
        check("attend_classify_ce", First, &[&[2, 3, 4], &[2, 4], &[4, 3], &[4, 5], &[4, 3], &[5, 3], &[3]], Normal, attend_chain),
        check("nt_xent", First, &[&[6, 5]], Normal, |g, v| nt_xent(g, v[0], 0.5)),
        check("symmetric_kl", First, &[&[3, 4], &[3, 4]], Normal, |g, v| {
            let p = g.softmax(v[0])?;
            let q = g.softmax(v[1])?;
            symmetric_kl(g, p, q)
        }),
        check("matmul", Second, &[&[3, 4], &[4, 2]], Normal, |g, v| {
            let m = g.matmul(v[0], v[1])?;
            let sq = g.mul(m, m)?;
            g.sum_all(sq)
        }),
        check("add_scale", Second, &[&[3, 4], &[4]], Normal, |g, v| {
            let a = g.add(v[0], v[1])?;
            let s = g.scale(a, 0.7)?;
            let sq = g.mul(s, s)?;
            g.sum_all(sq)
        }),
        check("l2_normalize", Second, &[&[3, 4], &[4, 2]], Normal, |g, v| {
            let n = g.l2_normalize(v[0])?;
            let m = g.matmul(n, v[1])?;
            let sq = g.mul(m, m)?;
            g.sum_all(sq)
        }),
        check("softmax", Second, &[&[3, 4]], Normal, |g, v| {
            let s = g.softmax(v[0])?;
            let sq = g.mul(s, s)?;
            g.sum_all(sq)
        }),
        check("cross_entropy", Second, &[&[3, 4]], Normal, |g, v| g.cross_entropy(v[0], &[0, 2, 3])),
        check("attend_classify_ce", Second, &[&[2, 3, 4], &[2, 4], &[4, 3], &[4, 5], &[4, 3], &[5, 3], &[3]], Normal, attend_chain),
    ]
}

fn draw(shape: &[usize], domain: Domain, r: &mut Rng) -> Tensor {
    use rand::Rng as _;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| match domain {
            Domain::Normal => r.gen_range(-1.5..1.5),
            Domain::AwayFromZero => {
                let m: f64 = r.gen_range(0.1..1.1);
                if r.gen_bool(0.5) { m } else { -m }
            }
            Domain::Positive => r.gen_range(0.5..2.0),
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("matching length")
}

fn scalar_of(build: Build, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let l = reduce(&mut g, out)?;
    g.value(l).item()
}

fn analytic(build: Build, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let l = reduce(&mut g, out)?;
    let grads = g.backward(l)?;
    Ok(vars.iter().map(|v| grads.wrt(*v).clone()).collect())
}

/// Fixed direction for Hessian-vector products.
fn directions(inputs: &[Tensor]) -> Vec<Tensor> {
    inputs.iter().map(|t| weights_like(t.shape()).map(|x| x + 0.1)).collect()
}

/// `∇(∇L · d)` through the recorded gradient graph.
fn hessian_vector(build: Build, inputs: &[Tensor], dirs: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let l = reduce(&mut g, out)?;
    let grads = g.grad_graph(l, &vars)?;
    let mut total: Option<Var> = None;
    for (gv, d) in grads.iter().zip(dirs) {
        let dv = g.constant(d.clone());
        let p = g.mul(*gv, dv)?;
        let s = g.sum_all(p)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = total.expect("at least one input");
    let hv = g.backward(total)?;
    Ok(vars.iter().map(|v| hv.wrt(*v).clone()).collect())
}

fn gradient_dot(build: Build, inputs: &[Tensor], dirs: &[Tensor]) -> Result<f64> {
    let grads = analytic(build, inputs)?;
    Ok(grads
        .iter()
        .zip(dirs)
        .map(|(a, d)| a.data().iter().zip(d.data()).map(|(x, y)| x * y).sum::<f64>())
        .sum())
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Central difference of `f` with respect to every element of `inputs`.
fn numeric(inputs: &[Tensor], mut f: impl FnMut(&[Tensor]) -> Result<f64>) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for p in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[p].shape());
        for i in 0..inputs[p].len() {
            let x0 = inputs[p].data()[i];
            work[p].data_mut()[i] = x0 + STEP;
            let up = f(&work)?;
            work[p].data_mut()[i] = x0 - STEP;
            let down = f(&work)?;
            work[p].data_mut()[i] = x0;
            grad.data_mut()[i] = (up - down) / (2.0 * STEP);
        }
        out.push(grad);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub order: CheckOrder,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let order = match r.order {
                CheckOrder::First => "grad",
                CheckOrder::Second => "grad-of-grad",
            };
            s.push_str(&format!(
                "{} {:<20} {:<13} max_rel_err={:.3e} tol={:.0e}{}\n",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                order,
                r.max_rel_error,
                r.tolerance,
                r.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default()
            ));
        }
        s
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckOptions {
    /// Number of random input draws per check.
    pub seeds: u64,
    pub base_seed: u64,
    /// Name of a check whose analytic gradient is deliberately corrupted.
    pub inject_fault: Option<String>,
    /// Restrict to checks with these names (all when empty).
    pub only: Vec<String>,
}

fn run_one(c: &Check, opts: &GradcheckOptions) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in 0..opts.seeds.max(1) {
        let mut r = rng::derive(opts.base_seed, &[0x4743_4b00, s]);
        let inputs: Vec<Tensor> = c.shapes.iter().map(|sh| draw(sh, c.domain, &mut r)).collect();
        let (mut ana, num) = match c.order {
            CheckOrder::First => (analytic(c.build, &inputs)?, numeric(&inputs, |x| scalar_of(c.build, x))?),
            CheckOrder::Second => {
                let dirs = directions(&inputs);
                (
                    hessian_vector(c.build, &inputs, &dirs)?,
                    numeric(&inputs, |x| gradient_dot(c.build, x, &dirs))?,
                )
            }
        };
        if opts.inject_fault.as_deref() == Some(c.name) {
            ana.iter_mut().for_each(|t| *t = t.map(|v| v * 1.05 + 1e-2));
        }
        for (a, n) in ana.iter().zip(&num) {
            for (x, y) in a.data().iter().zip(n.data()) {
                worst = worst.max(rel_error(*x, *y));
            }
        }
    }
    Ok(worst)
}

pub fn run(checks: &[Check], opts: &GradcheckOptions) -> GradcheckReport {
    let results = checks
        .iter()
        .filter(|c| opts.only.is_empty() || opts.only.iter().any(|n| n == c.name))
        .map(|c| {
            let tolerance = match c.order {
                CheckOrder::First => FIRST_ORDER_TOL,
                CheckOrder::Second => SECOND_ORDER_TOL,
            };
            match run_one(c, opts) {
                Ok(e) => CheckResult {
                    name: c.name.to_string(),
                    order: c.order,
                    max_rel_error: e,
                    tolerance,
                    passed: e < tolerance,
                    error: None,
                },
                Err(e) => CheckResult {
                    name: c.name.to_string(),
                    order: c.order,
                    max_rel_error: f64::INFINITY,
                    tolerance,
                    passed: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    GradcheckReport { results }
}
