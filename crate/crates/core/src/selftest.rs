//! Fast invariant suite behind `kfc selftest`.

use std::io::Write;

use crate::kfc::{self, init_weights, materialize, Formulation, KfcSpec};
use crate::linalg::{kron, rearrange, svd_full, unrearrange, vec, Matrix, Rng};
use crate::nkp::nkp;
use crate::train::{gradcheck, Layer, Model};

#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Negates every analytic gradient before comparison, to prove the
    /// gradient group can fail.
    pub inject_backward_fault: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelftestSummary {
    pub checks: usize,
    pub failures: usize,
}

impl SelftestSummary {
    pub fn ok(&self) -> bool {
        self.failures == 0
    }
}

struct Group {
    checks: usize,
    failures: Vec<String>,
}

impl Group {
    fn new() -> Self {
        Self { checks: 0, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }
}

fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.normal())
}

fn dims(rng: &mut Rng) -> usize {
    1 + rng.below(4)
}

fn kron_identities(rng: &mut Rng) -> Group {
    let mut g = Group::new();
    for _ in 0..50 {
        let (m, n, p, q) = (dims(rng), dims(rng), dims(rng), dims(rng));
        let (a, b) = (random(rng, m, n), random(rng, p, q));
        let (r, t) = (dims(rng), dims(rng));
        let (c, d) = (random(rng, n, r), random(rng, q, t));
        let left = kron(&a, &b).unwrap().matmul(&kron(&c, &d).unwrap()).unwrap();
        let right = kron(&a.matmul(&c).unwrap(), &b.matmul(&d).unwrap()).unwrap();
        let err = left.sub(&right).unwrap().max_abs();
        g.check(err < 1e-10, || format!("mixed product error {err:e}"));
        let t = kron(&a, &b).unwrap().transpose();
        g.check(t == kron(&a.transpose(), &b.transpose()).unwrap(), || "transpose rule".into());
        let nk = kron(&a, &b).unwrap().frobenius_norm();
        let np = a.frobenius_norm() * b.frobenius_norm();
        g.check((nk - np).abs() <= 1e-12 * np.max(1.0), || format!("norm {nk} vs {np}"));
    }
    g
}

fn rearrangement(rng: &mut Rng) -> Group {
    let mut g = Group::new();
    for _ in 0..50 {
        let (m1, n1, m2, n2) = (dims(rng), dims(rng), dims(rng), dims(rng));
        let (a, b) = (random(rng, m1, n1), random(rng, m2, n2));
        let r = rearrange(&kron(&a, &b).unwrap(), m1, n1, m2, n2).unwrap();
        let outer = vec(&a).matmul(&vec(&b).transpose()).unwrap();
        g.check(r == outer, || format!("rank-one correspondence for {m1}x{n1} ⊗ {m2}x{n2}"));
        let m = random(rng, m1 * m2, n1 * n2);
        let back = unrearrange(&rearrange(&m, m1, n1, m2, n2).unwrap(), m1, n1, m2, n2).unwrap();
        g.check(back == m, || "rearrange round trip".into());
    }
    g
}

fn nkp_optimality(rng: &mut Rng) -> Group {
    let mut g = Group::new();
    let shape = kfc::FactorShape::two(2, 2, 2, 2).unwrap();
    for _ in 0..30 {
        let m = random(rng, 4, 4);
        let s = svd_full(&rearrange(&m, 2, 2, 2, 2).unwrap()).unwrap().s;
        for k in 1..=4 {
            let d = nkp(&m, &shape, k).unwrap();
            let tail: f64 = s[k..].iter().map(|x| x * x).sum();
            let res = d.residual_fro.powi(2);
            let tol = 1e-8 * tail.max(1e-12 * s[0] * s[0]);
            g.check((res - tail).abs() <= tol, || format!("rank {k}: residual² {res:e} vs tail {tail:e}"));
        }
        let best = nkp(&m, &shape, 1).unwrap().residual_fro;
        let other = kron(&random(rng, 2, 2), &random(rng, 2, 2)).unwrap();
        g.check(best <= m.sub(&other).unwrap().frobenius_norm(), || "random Kronecker beat NKP".into());
    }
    g
}

fn toy_specs() -> Vec<KfcSpec> {
    let dims = (2, 2, 3, 8);
    vec![
        KfcSpec::formulation(Formulation::I, dims, &[2, 2, 2], 1).unwrap(),
        KfcSpec::formulation(Formulation::II, dims, &[4, 2], 2).unwrap(),
        KfcSpec::formulation(Formulation::III, dims, &[2, 4], 1).unwrap(),
        KfcSpec::formulation(Formulation::IV, dims, &[4, 2], 3).unwrap(),
        KfcSpec::kfcm_padded(7, 6, 2).unwrap(),
        KfcSpec::combine(&[
            KfcSpec::formulation(Formulation::II, dims, &[4, 2], 1).unwrap(),
            KfcSpec::formulation(Formulation::IV, dims, &[2, 4], 2).unwrap(),
        ])
        .unwrap(),
    ]
}

fn forward_and_macs(rng: &mut Rng) -> Group {
    let mut g = Group::new();
    for spec in toy_specs() {
        let w = init_weights(&spec, rng);
        let x = random(rng, 3, spec.input_dim());
        let (y, macs) = kfc::forward_counted(&spec, &w, &x).unwrap();
        let mut dense = x.matmul(&materialize(&spec, &w).unwrap()).unwrap();
        dense.add_row_vector(&w.bias).unwrap();
        let err = y.sub(&dense).unwrap().max_abs();
        g.check(err < 1e-10, || format!("factored vs dense forward error {err:e}"));
        let expected = kfc::count_macs(&spec, 3).macs;
        g.check(macs == expected, || format!("counted {macs} multiplies, formula gives {expected}"));
    }
    g
}

fn gradients(rng: &mut Rng, fault: bool) -> Group {
    let mut g = Group::new();
    let mut judge = |mut pair: gradcheck::GradPair, what: &str| {
        if fault {
            pair.analytic.iter_mut().for_each(|v| *v = -*v);
        }
        let e = pair.max_rel_error();
        g.check(e < 1e-4, || format!("{what}: max relative gradient error {e:e}"));
    };
    for spec in toy_specs() {
        let mut w = init_weights(&spec, rng);
        w.bias = (0..spec.output_dim()).map(|_| rng.normal()).collect();
        let x = random(rng, 2, spec.input_dim());
        let go = random(rng, 2, spec.output_dim());
        judge(gradcheck::kfc_layer(&spec, &w, &x, &go, 1e-5).unwrap(), "kfc layer");
    }
    let mut model = Model::new(
        "toy",
        vec![Layer::dense("in", 5, 6), Layer::AbsTanh, Layer::kfc("fc", KfcSpec::kfcm(6, 4, 3, 2, 2).unwrap())],
    )
    .unwrap();
    model.init(rng);
    let x = random(rng, 3, 5);
    judge(gradcheck::model_loss(&model, &x, &[0, 3, 1], 1e-5).unwrap(), "dense -> |tanh| -> kfc -> softmax");
    g
}

/// Runs every group, writing one line per group and a final summary line.
pub fn run(opts: &SelftestOptions, out: &mut dyn Write) -> std::io::Result<SelftestSummary> {
    let mut rng = Rng::new(opts.seed);
    let groups: [(&str, Group); 5] = [
        ("kron identities", kron_identities(&mut rng)),
        ("rearrangement", rearrangement(&mut rng)),
        ("nkp optimality", nkp_optimality(&mut rng)),
        ("forward equivalence and MAC count", forward_and_macs(&mut rng)),
        ("gradients", gradients(&mut rng, opts.inject_backward_fault)),
    ];
    let mut summary = SelftestSummary { checks: 0, failures: 0 };
    for (name, g) in &groups {
        let status = if g.failures.is_empty() { "pass" } else { "FAIL" };
        writeln!(out, "{status} {name} ({} checks)", g.checks)?;
        for f in g.failures.iter().take(3) {
            writeln!(out, "    {f}")?;
        }
        summary.checks += g.checks;
        summary.failures += g.failures.len();
    }
    if summary.ok() {
        writeln!(out, "OK ({} checks)", summary.checks)?;
    } else {
        writeln!(out, "FAILED ({} of {} checks)", summary.failures, summary.checks)?;
    }
    Ok(summary)
}
