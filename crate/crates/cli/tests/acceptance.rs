//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any hard criterion fails.

use std::collections::{BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gsnp::dataset::{chain_edges, synth, Split, SynthBundle, SynthSpec};
use gsnp::diff::gradcheck::{check, relative_error, STEP};
use gsnp::diff::{gaussian_reparam, gumbel_sigmoid, Noise, Tape, Tensor, Var};
use gsnp::eval::{compute_metrics, evaluate_split, EvalConfig, ModelScorer, RankingResult, Scorer};
use gsnp::explain::{edge_probabilities, extract_explanation, partition, Selection};
use gsnp::gnn::{encode_subgraph, SubgraphEmbedding};
use gsnp::kg::{
    add_inverse_edges, enclosing_subgraph, EnclosingSubgraph, EntityId, GraphBuilder,
    KnowledgeGraph,
};
use gsnp::model::{GsNp, ModelDims};
use gsnp::np::{distribution_params, encode_hypothesis, HypothesisDistribution, HypothesisSource};
use gsnp::task::{episode_rng, sample_task, FewShotTask, Pair, QueryNegatives, SamplerConfig};
use gsnp::trainer::{
    episode_forward, episode_loss, episode_noise, gaussian_kl, mask_kl, relation_vocabulary,
    sample_episode, TrainConfig, TrainingData,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Line {
    name: &'static str,
    pass: bool,
    soft: bool,
    detail: String,
    elapsed: Duration,
}

fn run(name: &'static str, f: impl FnOnce() -> Outcome) -> Line {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let line = Line {
        name,
        pass,
        soft: false,
        detail,
        elapsed,
    };
    report(&line);
    line
}

fn report(l: &Line) {
    let verdict = match (l.pass, l.soft) {
        (true, _) => "PASS",
        (false, false) => "FAIL",
        (false, true) => "SOFT-FAIL",
    };
    println!(
        "[{verdict}] {} ({:.1}s): {}",
        l.name,
        l.elapsed.as_secs_f64(),
        l.detail
    );
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let mut lines = vec![
        run("criterion 1: subgraph oracle equivalence", subgraph_oracle),
        run("criterion 2: gradient suite", gradient_suite),
        run("criterion 3: closed-form KL oracles", kl_oracles),
        run(
            "criterion 4: distributional invariants",
            distributional_invariants,
        ),
        run("criterion 5: masking identities", masking_identities),
        run("criterion 6: encoder invocation count", complexity_contract),
    ];
    lines.extend(planted_rule());
    lines.push(run("criterion 8: evaluation oracle", evaluation_oracle));
    lines.push(run("criterion 9: tau sweep", tau_sweep));
    lines.push(run("criterion 10: CLI determinism", cli_determinism));

    let hard_failures = lines.iter().filter(|l| !l.pass && !l.soft).count();
    let soft_failures = lines.iter().filter(|l| !l.pass && l.soft).count();
    println!(
        "acceptance: {} checks, {} hard failures, {} soft failures",
        lines.len(),
        hard_failures,
        soft_failures
    );
    if hard_failures > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- criterion 1

fn random_graph(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let n = rng.random_range(2..=50);
    let m = rng.random_range(0..=120);
    let mut b = GraphBuilder::new();
    for i in 0..n {
        b.entity(&format!("v{i}"));
    }
    for _ in 0..m {
        let h = rng.random_range(0..n);
        let t = rng.random_range(0..n);
        let r = rng.random_range(0..4);
        b.add(&format!("v{h}"), &format!("r{r}"), &format!("v{t}"));
    }
    b.build()
}

/// All-pairs undirected hop distances by Floyd-Warshall.
fn all_distances(kg: &KnowledgeGraph) -> Vec<Vec<usize>> {
    let n = kg.num_entities();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for t in kg.triples() {
        let (a, b) = (t.head.index(), t.tail.index());
        if a != b {
            d[a][b] = 1;
            d[b][a] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

fn subgraph_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut queries = 0;
    let mut nonempty = 0;
    for g in 0..200 {
        let mut kg = random_graph(&mut rng);
        if g % 2 == 1 {
            kg = add_inverse_edges(&kg).map_err(|e| e.to_string())?;
        }
        let d = all_distances(&kg);
        let n = kg.num_entities();
        for _ in 0..5 {
            let h = rng.random_range(0..n);
            let t = rng.random_range(0..n);
            let k = rng.random_range(1..=3);
            let within = |v: usize| d[h][v] <= k && d[t][v] <= k;
            let expected: Vec<_> = kg
                .triples()
                .iter()
                .filter(|tr| within(tr.head.index()) && within(tr.tail.index()))
                .copied()
                .collect();
            let sub = enclosing_subgraph(&kg, EntityId(h as u32), EntityId(t as u32), k)
                .map_err(|e| e.to_string())?;
            ensure(sub.edges == expected, || {
                format!(
                    "graph {g} ({h},{t},k={k}): {} edges, oracle {}",
                    sub.edges.len(),
                    expected.len()
                )
            })?;
            let mut nodes: BTreeSet<usize> = [h, t].into();
            nodes.extend(
                expected
                    .iter()
                    .flat_map(|tr| [tr.head.index(), tr.tail.index()]),
            );
            let got: BTreeSet<usize> = sub.nodes.iter().map(|e| e.index()).collect();
            ensure(got == nodes && sub.empty == expected.is_empty(), || {
                format!("graph {g} ({h},{t},k={k}): node set or empty flag differs")
            })?;
            queries += 1;
            nonempty += usize::from(!expected.is_empty());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1}s, limit 10s"))?;
    Ok(format!(
        "{queries} queries on 200 graphs match ({nonempty} nonempty) in {secs:.2}s"
    ))
}

// ---------------------------------------------------------------- criterion 2

const GRAD_TOL: f64 = 1e-4;
const GRAD_FLOOR: f64 = 1e-6;
const GRAD_CONFIGS: usize = 20;

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Entries with magnitude in [0.05, 1), so no relu kink is straddled.
fn off_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    let data = (0..r * c)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(r, c, data).unwrap()
}

/// Weighted sum of all entries, weights fixed per position.
fn contract(tape: &mut Tape, v: Var) -> gsnp::Result<Var> {
    let (r, c) = tape.shape(v);
    let w = (0..r * c)
        .map(|k| ((k * 7919 % 13) as f64 - 6.0) / 5.0)
        .collect();
    let w = tape.leaf(Tensor::new(r, c, w)?);
    let p = tape.mul(v, w)?;
    Ok(tape.sum_all(p))
}

type OpFn = fn(&mut Tape, &[Var]) -> gsnp::Result<Var>;
type MakeFn = fn(&mut ChaCha8Rng) -> Vec<Tensor>;

fn op_cases() -> Vec<(&'static str, MakeFn, OpFn)> {
    vec![
        (
            "matmul",
            |r| {
                let n = r.random_range(1..4);
                vec![uniform(r, n, 3, -1.0, 1.0), uniform(r, 3, 2, -1.0, 1.0)]
            },
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                contract(t, y)
            },
        ),
        (
            "add_bias",
            |r| vec![uniform(r, 3, 4, -1.0, 1.0), uniform(r, 1, 4, -1.0, 1.0)],
            |t, v| {
                let y = t.add_bias(v[0], v[1])?;
                contract(t, y)
            },
        ),
        (
            "linear",
            |r| {
                vec![
                    uniform(r, 2, 3, -1.0, 1.0),
                    uniform(r, 3, 4, -1.0, 1.0),
                    uniform(r, 1, 4, -1.0, 1.0),
                ]
            },
            |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                contract(t, y)
            },
        ),
        (
            "add",
            |r| vec![uniform(r, 2, 3, -1.0, 1.0), uniform(r, 2, 3, -1.0, 1.0)],
            |t, v| {
                let y = t.add(v[0], v[1])?;
                let y = t.mul(y, y)?;
                contract(t, y)
            },
        ),
        (
            "sub",
            |r| vec![uniform(r, 2, 3, -1.0, 1.0), uniform(r, 2, 3, -1.0, 1.0)],
            |t, v| {
                let y = t.sub(v[0], v[1])?;
                let y = t.mul(y, y)?;
                contract(t, y)
            },
        ),
        (
            "mul",
            |r| vec![uniform(r, 2, 3, -1.0, 1.0), uniform(r, 2, 3, -1.0, 1.0)],
            |t, v| {
                let y = t.mul(v[0], v[1])?;
                contract(t, y)
            },
        ),
        (
            "scale",
            |r| vec![uniform(r, 2, 2, -1.0, 1.0)],
            |t, v| {
                let y = t.scale(v[0], -1.7);
                let y = t.mul(y, v[0])?;
                contract(t, y)
            },
        ),
        (
            "add_scalar",
            |r| vec![uniform(r, 2, 2, -1.0, 1.0)],
            |t, v| {
                let y = t.add_scalar(v[0], 0.4);
                let y = t.mul(y, y)?;
                contract(t, y)
            },
        ),
        (
            "relu",
            |r| vec![off_zero(r, 3, 3)],
            |t, v| {
                let y = t.relu(v[0]);
                contract(t, y)
            },
        ),
        (
            "sigmoid",
            |r| vec![uniform(r, 3, 2, -4.0, 4.0)],
            |t, v| {
                let y = t.sigmoid(v[0]);
                contract(t, y)
            },
        ),
        (
            "clamp",
            |r| vec![uniform(r, 3, 3, -2.0, 2.0)],
            |t, v| {
                let y = t.clamp(v[0], -1.2, 1.3);
                let y = t.mul(y, y)?;
                contract(t, y)
            },
        ),
        (
            "logit",
            |r| vec![uniform(r, 2, 3, 0.05, 0.95)],
            |t, v| {
                let y = t.logit(v[0]);
                contract(t, y)
            },
        ),
        (
            "hcat",
            |r| vec![uniform(r, 2, 2, -1.0, 1.0), uniform(r, 2, 3, -1.0, 1.0)],
            |t, v| {
                let y = t.hcat(v)?;
                let y = t.mul(y, y)?;
                contract(t, y)
            },
        ),
        (
            "vcat",
            |r| vec![uniform(r, 1, 3, -1.0, 1.0), uniform(r, 2, 3, -1.0, 1.0)],
            |t, v| {
                let y = t.vcat(v)?;
                let y = t.mul(y, y)?;
                contract(t, y)
            },
        ),
        (
            "sum_n",
            |r| (0..3).map(|_| uniform(r, 2, 2, -1.0, 1.0)).collect(),
            |t, v| {
                let y = t.sum_n(v)?;
                let y = t.mul(y, y)?;
                contract(t, y)
            },
        ),
        (
            "sum_all",
            |r| vec![uniform(r, 3, 2, -1.0, 1.0)],
            |t, v| {
                let y = t.mul(v[0], v[0])?;
                Ok(t.sum_all(y))
            },
        ),
        (
            "mean_rows",
            |r| vec![uniform(r, 4, 3, -1.0, 1.0)],
            |t, v| {
                let y = t.mean_rows(v[0])?;
                let y = t.mul(y, y)?;
                contract(t, y)
            },
        ),
        (
            "mul_rows",
            |r| vec![uniform(r, 4, 3, -1.0, 1.0), uniform(r, 4, 1, 0.0, 1.0)],
            |t, v| {
                let y = t.mul_rows(v[0], v[1])?;
                contract(t, y)
            },
        ),
        (
            "scatter_rows",
            |r| vec![uniform(r, 4, 3, -1.0, 1.0)],
            |t, v| {
                let y = t.scatter_rows(v[0], &[0, 2, 2, 1], 3)?;
                let y = t.mul(y, y)?;
                contract(t, y)
            },
        ),
        (
            "gather_rows",
            |r| vec![uniform(r, 3, 3, -1.0, 1.0)],
            |t, v| {
                let y = t.gather_rows(v[0], &[2, 0, 2, 1])?;
                let y = t.mul(y, y)?;
                contract(t, y)
            },
        ),
        (
            "col_max",
            |r| vec![uniform(r, 5, 3, -1.0, 1.0)],
            |t, v| {
                let y = t.col_max(v[0])?;
                contract(t, y)
            },
        ),
        (
            "max_pool",
            |r| (0..3).map(|_| uniform(r, 1, 4, -1.0, 1.0)).collect(),
            |t, v| {
                let y = t.max_pool(v)?;
                contract(t, y)
            },
        ),
        (
            "cosine",
            |r| vec![uniform(r, 1, 5, -1.0, 1.0), uniform(r, 1, 5, -1.0, 1.0)],
            |t, v| t.cosine(v[0], v[1]),
        ),
        (
            "gaussian_kl",
            |r| {
                vec![
                    uniform(r, 1, 4, -1.0, 1.0),
                    uniform(r, 1, 4, 0.1, 1.0),
                    uniform(r, 1, 4, -1.0, 1.0),
                    uniform(r, 1, 4, 0.1, 1.0),
                ]
            },
            |t, v| t.gaussian_kl(v[0], v[1], v[2], v[3]),
        ),
        (
            "bernoulli_kl",
            |r| vec![uniform(r, 6, 1, 0.01, 0.99)],
            |t, v| t.bernoulli_kl(v[0], 0.7),
        ),
        (
            "gumbel_sigmoid (frozen noise)",
            |r| vec![uniform(r, 4, 1, -3.0, 3.0)],
            |t, v| {
                let mut noise = Noise::seeded(11);
                let y = gumbel_sigmoid(t, v[0], 0.8, &mut noise)?;
                contract(t, y)
            },
        ),
        (
            "gaussian_reparam (frozen noise)",
            |r| vec![uniform(r, 1, 4, -1.0, 1.0), uniform(r, 1, 4, 0.1, 1.0)],
            |t, v| {
                let mut noise = Noise::seeded(5);
                let (z, _) = gaussian_reparam(t, v[0], v[1], &mut noise)?;
                let z = t.mul(z, z)?;
                contract(t, z)
            },
        ),
    ]
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        d_edge: 4,
        d_z: 3,
        layers: 2,
        k_shot: 3,
        ..TrainConfig::default()
    }
}

fn planted(seed: u64) -> SynthBundle {
    synth(&SynthSpec {
        seed,
        ..SynthSpec::default()
    })
    .expect("default synthetic settings are valid")
}

/// Worst relative error over a random 10-parameter slice of the full
/// episode loss, all stochastic draws replayed.
fn episode_gradcheck(seed: u64) -> Result<f64, String> {
    let err = |e: gsnp::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = planted(seed);
    let graph = s.bundle.training_graph().map_err(err)?;
    let pools = s.bundle.training_pools(&graph);
    let mut cfg = small_cfg();
    cfg.k_shot = rng.random_range(1..=3);
    cfg.mc_samples = rng.random_range(1..=2);
    cfg.temperature = rng.random_range(0.5..1.5);
    let mut model = GsNp::new(cfg.dims(), &relation_vocabulary(&[&graph]), seed).map_err(err)?;
    let sampler = SamplerConfig {
        shots: cfg.k_shot,
        negatives: 1,
        max_queries: Some(3),
    };
    let task = sample_task(
        &graph,
        0,
        &pools[0].relation,
        &pools[0].pairs,
        &sampler,
        &mut episode_rng(seed, 0),
    )
    .map_err(err)?;

    let mut noise = Noise::seeded(seed).recording();
    let ep = episode_forward(&model, &model.view(&graph), &task, &cfg, &mut noise).map_err(err)?;
    let draws = noise.take_record();
    let grads: HashMap<_, _> = ep
        .tape
        .backward(ep.loss)
        .map_err(err)?
        .params(&ep.tape)
        .into_iter()
        .collect();

    let slots: Vec<(gsnp::diff::ParamId, usize)> = model
        .store
        .iter()
        .flat_map(|(id, p)| (0..p.value.len()).map(move |k| (id, k)))
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (id, k) = slots[rng.random_range(0..slots.len())];
        let orig = model.store.value(id).data()[k];
        let mut eval = |x: f64| -> Result<f64, String> {
            model.store.value_mut(id).data_mut()[k] = x;
            let view = model.view(&graph);
            let r = episode_loss(
                &model,
                &view,
                &task,
                &cfg,
                &mut Noise::replay(draws.clone()),
            )
            .map_err(err)?;
            Ok(r.total)
        };
        let up = eval(orig + STEP)?;
        let down = eval(orig - STEP)?;
        model.store.value_mut(id).data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grads.get(&id).map_or(0.0, |g| g[k]);
        worst = worst.max(relative_error(analytic, numeric, GRAD_FLOOR));
    }
    Ok(worst)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1FF);
    let cases = op_cases();
    let mut checked = 0;
    let mut worst_op = (0.0, "");
    for (name, make, f) in &cases {
        for c in 0..GRAD_CONFIGS {
            let inputs = make(&mut rng);
            let r = check(&inputs, STEP, GRAD_FLOOR, *f).map_err(|e| format!("{name}: {e}"))?;
            ensure(r.max_relative_error < GRAD_TOL, || {
                format!(
                    "{name} config {c}: relative error {:.2e} at {:?}",
                    r.max_relative_error, r.worst
                )
            })?;
            checked += r.checked;
            if r.max_relative_error > worst_op.0 {
                worst_op = (r.max_relative_error, name);
            }
        }
    }
    let mut worst_episode: f64 = 0.0;
    for c in 0..GRAD_CONFIGS as u64 {
        let e = episode_gradcheck(100 + c)?;
        ensure(e < GRAD_TOL, || {
            format!("episode loss config {c}: relative error {e:.2e}")
        })?;
        worst_episode = worst_episode.max(e);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s, limit 120s"))?;
    Ok(format!(
        "{} ops x {GRAD_CONFIGS} configs ({checked} entries, worst {:.1e} in {}), episode loss x {GRAD_CONFIGS} configs (worst {:.1e})",
        cases.len(),
        worst_op.0,
        worst_op.1,
        worst_episode
    ))
}

// ---------------------------------------------------------------- criterion 3

fn normal_log_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// KL(q || p) of two 1-D Gaussians by composite Simpson integration.
fn kl_by_quadrature(mq: f64, sq: f64, mp: f64, sp: f64) -> f64 {
    let (lo, hi) = (mq - 12.0 * sq, mq + 12.0 * sq);
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let lq = normal_log_pdf(x, mq, sq);
        lq.exp() * (lq - normal_log_pdf(x, mp, sp))
    };
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn dist(
    tape: &mut Tape,
    mu: &[f64],
    sigma: &[f64],
    source: HypothesisSource,
) -> HypothesisDistribution {
    HypothesisDistribution {
        mu: tape.leaf(Tensor::row(mu.to_vec())),
        sigma: tape.leaf(Tensor::row(sigma.to_vec())),
        source,
    }
}

fn gaussian_kl_of(q: (f64, f64), p: (f64, f64)) -> f64 {
    let mut tape = Tape::new();
    let qd = dist(&mut tape, &[q.0], &[q.1], HypothesisSource::Posterior);
    let pd = dist(&mut tape, &[p.0], &[p.1], HypothesisSource::Prior);
    let kl = gaussian_kl(&mut tape, &qd, &pd).unwrap();
    tape.value(kl).item()
}

fn bernoulli_direct(p: f64, tau: f64) -> f64 {
    let a = if p == 0.0 { 0.0 } else { p * (p / tau).ln() };
    let b = if p == 1.0 {
        0.0
    } else {
        (1.0 - p) * ((1.0 - p) / (1.0 - tau)).ln()
    };
    a + b
}

fn mask_kl_of(ps: &[f64], tau: f64) -> f64 {
    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::column(ps.to_vec()));
    let kl = mask_kl(&mut tape, v, tau).unwrap();
    tape.value(kl).item()
}

fn kl_oracles() -> Outcome {
    let anchor = gaussian_kl_of((1.0, 0.5), (0.0, 1.0));
    ensure((anchor - 0.8181).abs() < 1e-4, || {
        format!("N(1,0.5^2)||N(0,1) gave {anchor}")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_g: f64 = 0.0;
    for i in 0..100 {
        let q = (rng.random_range(-2.0..2.0), rng.random_range(0.1..1.0));
        let p = (rng.random_range(-2.0..2.0), rng.random_range(0.1..1.0));
        let (q, p) = if i == 0 {
            ((1.0, 0.5), (0.0, 1.0))
        } else {
            (q, p)
        };
        let a = gaussian_kl_of(q, p);
        let n = kl_by_quadrature(q.0, q.1, p.0, p.1);
        worst_g = worst_g.max((a - n).abs());
        ensure((a - n).abs() < 1e-4, || {
            format!("q={q:?} p={p:?}: closed form {a}, quadrature {n}")
        })?;
    }
    let mut worst_m: f64 = 0.0;
    for _ in 0..100 {
        let tau = rng.random_range(0.05..0.95);
        let n = rng.random_range(1..12);
        let mut ps: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        if rng.random_bool(0.3) {
            ps.push(if rng.random_bool(0.5) { 0.0 } else { 1.0 });
        }
        let a = mask_kl_of(&ps, tau);
        let d: f64 = ps.iter().map(|&p| bernoulli_direct(p, tau)).sum();
        worst_m = worst_m.max((a - d).abs());
        ensure((a - d).abs() < 1e-6, || {
            format!("mask kl {a} vs direct {d} at tau {tau}")
        })?;
    }
    for tau in [0.1, 0.3, 0.7, 0.9] {
        let z = mask_kl_of(&[tau; 7], tau);
        ensure(z == 0.0, || {
            format!("mask kl at p == tau = {tau} is {z}, not 0")
        })?;
    }
    let single = mask_kl_of(&[0.9], 0.7);
    ensure((single - 0.1163).abs() < 1e-4, || {
        format!("p=0.9, tau=0.7 gave {single}")
    })?;
    Ok(format!(
        "gaussian: 100 pairs within {worst_g:.1e} of quadrature, anchor {anchor:.4}; mask: 100 vectors within {worst_m:.1e}, exact 0 at p = tau"
    ))
}

// ---------------------------------------------------------------- criterion 4

fn random_embedding(tape: &mut Tape, rng: &mut ChaCha8Rng, dim: usize) -> SubgraphEmbedding {
    SubgraphEmbedding {
        vector: tape.leaf(uniform(rng, 1, dim, -2.0, 2.0)),
        head: EntityId(0),
        tail: EntityId(1),
        num_edges: 1,
    }
}

fn distributional_invariants() -> Outcome {
    let err = |e: gsnp::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims = ModelDims {
        d_edge: 4,
        d_z: 8,
        layers: 1,
    };
    let model = GsNp::new(dims, &[], 4).map_err(err)?;

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..10_000 {
        let scale = [0.1, 1.0, 10.0, 1e3][i % 4];
        let mut tape = Tape::new();
        let zbar = tape.leaf(uniform(&mut rng, 1, dims.d_z, -scale, scale));
        let d = distribution_params(
            &mut tape,
            &model.store,
            &model.np,
            zbar,
            HypothesisSource::Prior,
        )
        .map_err(err)?;
        for &s in tape.value(d.sigma).data() {
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    ensure(lo >= 0.1 && hi < 1.0, || {
        format!("sigma range [{lo}, {hi}] leaves [0.1, 1.0)")
    })?;

    let mut worst_perm: f64 = 0.0;
    for _ in 0..50 {
        let mut tape = Tape::new();
        let n = rng.random_range(2..9);
        let embs: Vec<_> = (0..n)
            .map(|_| random_embedding(&mut tape, &mut rng, 3 * dims.d_edge))
            .collect();
        let mut items: Vec<(&SubgraphEmbedding, bool)> =
            embs.iter().map(|e| (e, rng.random_bool(0.5))).collect();
        let a = encode_hypothesis(
            &mut tape,
            &model.store,
            &model.np,
            &items,
            HypothesisSource::Prior,
        )
        .map_err(err)?;
        items.shuffle(&mut rng);
        let b = encode_hypothesis(
            &mut tape,
            &model.store,
            &model.np,
            &items,
            HypothesisSource::Prior,
        )
        .map_err(err)?;
        for (x, y) in [(a.mu, b.mu), (a.sigma, b.sigma)] {
            for (p, q) in tape.value(x).data().iter().zip(tape.value(y).data()) {
                worst_perm = worst_perm.max((p - q).abs());
            }
        }
    }
    ensure(worst_perm <= 1e-12, || {
        format!("permutation changed the distribution by {worst_perm:e}")
    })?;

    let mu = [1.0, -0.5, 2.0, 0.3];
    let sigma = [0.5, 0.1, 0.9, 0.25];
    let draws = 50_000;
    let mut noise = Noise::seeded(9);
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..draws {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::row(mu.to_vec()));
        let s = tape.leaf(Tensor::row(sigma.to_vec()));
        let (z, _) = gaussian_reparam(&mut tape, m, s, &mut noise).map_err(err)?;
        for (j, &x) in tape.value(z).data().iter().enumerate() {
            sum[j] += x;
            sq[j] += x * x;
        }
    }
    let mut worst_moment: f64 = 0.0;
    for j in 0..4 {
        let mean = sum[j] / draws as f64;
        let var = sq[j] / draws as f64 - mean * mean;
        let em = ((mean - mu[j]) / mu[j]).abs();
        let ev = ((var - sigma[j] * sigma[j]) / (sigma[j] * sigma[j])).abs();
        worst_moment = worst_moment.max(em).max(ev);
        ensure(em < 0.05 && ev < 0.05, || {
            format!(
                "coordinate {j}: mean {mean} vs {}, variance {var} vs {}",
                mu[j],
                sigma[j] * sigma[j]
            )
        })?;
    }

    // The hard sample is Bernoulli(0.7) exactly. The relaxed value itself
    // averages to E[sigmoid(logit + L)] with L standard logistic, which we
    // integrate independently.
    let logit = (0.7f64 / 0.3).ln();
    let mut noise = Noise::seeded(10);
    let mut tape = Tape::new();
    let l = tape.leaf(Tensor::filled(20_000, 1, logit));
    let y = gumbel_sigmoid(&mut tape, l, 1.0, &mut noise).map_err(err)?;
    let ys = tape.value(y).data();
    let hard = ys.iter().filter(|&&v| v > 0.5).count() as f64 / ys.len() as f64;
    let soft = ys.iter().sum::<f64>() / ys.len() as f64;
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let h = 1e-3;
    let exact_soft: f64 = (-40_000..40_000)
        .map(|i| {
            let u = i as f64 * h;
            sig(logit + u) * sig(u) * (1.0 - sig(u)) * h
        })
        .sum();
    ensure((hard - 0.7).abs() < 0.03, || {
        format!("gumbel-sigmoid sample mean {hard} at p = 0.7")
    })?;
    ensure((soft - exact_soft).abs() < 0.01, || {
        format!("relaxed mean {soft}, integral {exact_soft}")
    })?;

    Ok(format!(
        "sigma in [{lo:.4}, 1 - {:.1e}]; permutation drift {worst_perm:.1e}; reparam moments within {:.2}%; gumbel sample mean {hard:.4} (relaxed {soft:.4} vs {exact_soft:.4})",
        1.0 - hi,
        100.0 * worst_moment
    ))
}

// ---------------------------------------------------------------- criterion 5

fn masking_identities() -> Outcome {
    let err = |e: gsnp::Error| e.to_string();
    let s = planted(5);
    let graph = s.bundle.eval_graph().map_err(err)?;
    let dims = ModelDims {
        d_edge: 6,
        d_z: 5,
        layers: 2,
    };
    let model = GsNp::new(dims, &relation_vocabulary(&[&graph]), 5).map_err(err)?;
    let view = model.view(&graph);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = graph.num_entities() as u32;
    let mut checked = 0;
    while checked < 40 {
        let h = EntityId(rng.random_range(0..n));
        let t = EntityId(rng.random_range(0..n));
        let sub = enclosing_subgraph(&graph, h, t, 2).map_err(err)?;
        if sub.empty {
            continue;
        }
        let e = sub.num_edges();
        let mut tape = Tape::new();
        let plain = encode_subgraph(&mut tape, &model.store, &model.encoder, &view, &sub, None)
            .map_err(err)?;
        let ones = tape.leaf(Tensor::filled(e, 1, 1.0));
        let full = encode_subgraph(
            &mut tape,
            &model.store,
            &model.encoder,
            &view,
            &sub,
            Some(ones),
        )
        .map_err(err)?;
        let zeros = tape.leaf(Tensor::zeros(e, 1));
        let none = encode_subgraph(
            &mut tape,
            &model.store,
            &model.encoder,
            &view,
            &sub,
            Some(zeros),
        )
        .map_err(err)?;
        let bare = EnclosingSubgraph::from_edges(h, t, 2, Vec::new());
        let empty = encode_subgraph(&mut tape, &model.store, &model.encoder, &view, &bare, None)
            .map_err(err)?;
        ensure(tape.value(plain.vector) == tape.value(full.vector), || {
            format!("all-ones mask changed the embedding of ({h:?},{t:?})")
        })?;
        ensure(tape.value(none.vector) == tape.value(empty.vector), || {
            format!("all-zeros mask differs from the empty embedding for ({h:?},{t:?})")
        })?;
        checked += 1;
    }

    let eval_cfg = small_cfg();
    let tasks = s
        .bundle
        .eval_tasks(Split::Test, &graph, eval_cfg.k_shot, 1, 10, 0)
        .map_err(err)?;
    let thresholds = [0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95];
    let mut queries = 0;
    for task in &tasks {
        for &q in &task.queries {
            let (sub, probs) = edge_probabilities(&model, &graph, task, q, 2).map_err(err)?;
            let mut prev: Option<BTreeSet<String>> = None;
            for &th in &thresholds {
                let (kept, _, _) =
                    partition(&graph, &sub, &probs, Selection::Threshold(th)).map_err(err)?;
                let set: BTreeSet<String> = kept
                    .iter()
                    .map(|w| format!("{} {} {}", w.head, w.relation, w.tail))
                    .collect();
                if let Some(p) = &prev {
                    ensure(set.is_subset(p), || {
                        format!("kept edges grew at threshold {th}")
                    })?;
                }
                prev = Some(set);
            }
            queries += 1;
        }
    }
    Ok(format!(
        "ones/zeros mask identities exact on {checked} subgraphs; threshold monotonicity on {queries} queries x {} thresholds",
        thresholds.len()
    ))
}

// ---------------------------------------------------------------- criterion 6

fn complexity_contract() -> Outcome {
    let err = |e: gsnp::Error| e.to_string();
    let s = planted(6);
    let train_graph = s.bundle.training_graph().map_err(err)?;
    let eval_graph = s.bundle.eval_graph().map_err(err)?;
    let pools = s.bundle.training_pools(&train_graph);
    let vocab = relation_vocabulary(&[&train_graph, &eval_graph]);
    let model = GsNp::new(small_cfg().dims(), &vocab, 6).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let all: Vec<EntityId> = eval_graph.entities().collect();
    let n_all = all.len() as u32;

    for shape in 0..50 {
        let k = rng.random_range(1..=4);
        let n = rng.random_range(1..=3);
        let mut cfg = small_cfg();
        cfg.k_shot = k;

        // Inference: prior from the support side, one masked pass per
        // scored (query or candidate) subgraph.
        let n_queries = rng.random_range(1..=3);
        let mut pairs = pools[0].pairs.clone();
        pairs.shuffle(&mut rng);
        let named = |p: &Pair| {
            (
                train_graph.entity_name(p.head).to_owned(),
                train_graph.entity_name(p.tail).to_owned(),
            )
        };
        let resolve = |(h, t): (String, String)| {
            Pair::new(
                eval_graph.entity_id(&h).unwrap(),
                eval_graph.entity_id(&t).unwrap(),
            )
        };
        let support: Vec<Pair> = pairs[..k].iter().map(|p| resolve(named(p))).collect();
        let support_negatives: Vec<Pair> = support
            .iter()
            .flat_map(|p| {
                (0..n).map(move |j| Pair::new(p.head, EntityId((p.tail.0 + 1 + j as u32) % n_all)))
            })
            .collect();
        let queries: Vec<Pair> = pairs[k..k + n_queries]
            .iter()
            .map(|p| resolve(named(p)))
            .collect();
        let candidates: Vec<Vec<EntityId>> = queries
            .iter()
            .map(|_| {
                let c = rng.random_range(0..8);
                (0..c)
                    .map(|_| all[rng.random_range(0..all.len())])
                    .collect()
            })
            .collect();
        let m_scored: usize = candidates.iter().map(|c| 1 + c.len()).sum();
        let task = FewShotTask {
            id: shape,
            relation: pools[0].relation.clone(),
            support,
            support_negatives,
            queries,
            query_negatives: QueryNegatives::Candidates(candidates),
        };
        let scorer = ModelScorer::new(
            &model,
            &eval_graph,
            EvalConfig {
                hop_k: 2,
                seed: 0,
                samples: 1,
            },
        );
        let (_, calls) = scorer.score_task_traced(&task).map_err(err)?;
        let want = (n + 1) * k + m_scored;
        ensure(calls == want, || {
            format!("inference shape {shape} (K={k}, n={n}, m={m_scored}): {calls} invocations, expected {want}")
        })?;

        // Training: the posterior additionally encodes each scored query
        // subgraph once without a mask.
        cfg.mc_samples = rng.random_range(1..=3);
        let sampler = SamplerConfig {
            shots: k,
            negatives: n,
            max_queries: Some(n_queries),
        };
        let task = sample_task(
            &train_graph,
            shape,
            &pools[0].relation,
            &pools[0].pairs,
            &sampler,
            &mut episode_rng(6, shape as u64),
        )
        .map_err(err)?;
        let m_train = 2 * task.queries.len();
        let view = model.view(&train_graph);
        let r = episode_loss(&model, &view, &task, &cfg, &mut Noise::seeded(shape as u64))
            .map_err(err)?;
        let want = (n + 1) * k + (1 + cfg.mc_samples) * m_train;
        ensure(r.encoder_invocations == want, || {
            format!(
                "training shape {shape} (K={k}, n={n}, T={}, m={m_train}): {} invocations, expected {want}",
                cfg.mc_samples, r.encoder_invocations
            )
        })?;
    }
    Ok("50 shapes: inference = (n+1)K + m_scored, training = (n+1)K + (1+T)m_scored".into())
}

// ---------------------------------------------------------------- criterion 7

/// Training setup for the planted-rule run. K, tau and margin are fixed by
/// the criterion; the rest is sized so 500 episodes converge on a CPU.
fn planted_cfg() -> TrainConfig {
    TrainConfig {
        lr: 0.005,
        margin: 1.0,
        tau: 0.7,
        k_shot: 3,
        mc_samples: 8,
        d_edge: 64,
        d_z: 64,
        layers: 2,
        hop_k: 2,
        max_episodes: 500,
        val_every: 50,
        n_candidates: 10,
        seed: 0,
        ..TrainConfig::default()
    }
}

struct PlantedRun {
    secs: f64,
    episodes: usize,
    ranking: f64,
    hit1: f64,
    mrr: f64,
    both_kept: f64,
    precision: f64,
    queries: usize,
}

fn planted_run() -> Result<PlantedRun, String> {
    let err = |e: gsnp::Error| e.to_string();
    let start = Instant::now();
    let s = planted(0);
    let cfg = planted_cfg();
    let outcome = s.bundle.train(&cfg, |_| Ok(())).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let (model, cfg) = outcome.best.clone().into_model().map_err(err)?;

    // Ranking term of the selected model on fresh training episodes, drawn
    // exactly as during training.
    let graph = s.bundle.training_graph().map_err(err)?;
    let eval_graph = s.bundle.eval_graph().map_err(err)?;
    let data = TrainingData {
        graph: &graph,
        vocabulary: relation_vocabulary(&[&graph, &eval_graph]),
        relations: s.bundle.training_pools(&graph),
        valid: None,
    };
    let view = model.view(&graph);
    let fresh = 50;
    let mut ranking = 0.0;
    for e in 0..fresh {
        let episode = 10_000 + e;
        let task = sample_episode(&data, &[0], &cfg, episode).map_err(err)?;
        let r = episode_loss(
            &model,
            &view,
            &task,
            &cfg,
            &mut episode_noise(&cfg, episode),
        )
        .map_err(err)?;
        ranking += r.ranking;
    }
    ranking /= fresh as f64;

    let tasks = s
        .bundle
        .eval_tasks(
            Split::Test,
            &eval_graph,
            cfg.k_shot,
            cfg.neg_size,
            cfg.n_candidates,
            cfg.seed,
        )
        .map_err(err)?;
    let report =
        evaluate_split(&ModelScorer::new(&model, &eval_graph, cfg.eval()), &tasks).map_err(err)?;

    let mut both = 0;
    let mut precision = 0.0;
    let mut queries = 0;
    for task in &tasks {
        for &q in &task.queries {
            let exp = extract_explanation(
                &model,
                &eval_graph,
                task,
                q,
                Selection::Threshold(0.5),
                cfg.hop_k,
                cfg.seed,
            )
            .map_err(err)?;
            let head = eval_graph.entity_name(q.head);
            let chain = s
                .chains
                .iter()
                .find(|c| c.head == head)
                .ok_or_else(|| format!("no planted chain for {head}"))?;
            let planted_edges = chain_edges(chain);
            let is_planted = |h: &str, r: &str, t: &str| {
                planted_edges
                    .iter()
                    .any(|(a, b, c)| a == h && b == r && c == t)
            };
            let forward_kept = planted_edges
                .iter()
                .filter(|(_, r, _)| !r.ends_with("_inv"))
                .all(|(h, r, t)| {
                    exp.kept
                        .iter()
                        .any(|w| &w.head == h && &w.relation == r && &w.tail == t)
                });
            both += usize::from(forward_kept);
            let hits = exp
                .kept
                .iter()
                .filter(|w| is_planted(&w.head, &w.relation, &w.tail))
                .count();
            precision += if exp.kept.is_empty() {
                0.0
            } else {
                hits as f64 / exp.kept.len() as f64
            };
            queries += 1;
        }
    }
    Ok(PlantedRun {
        secs,
        episodes: outcome.episodes,
        ranking,
        hit1: report.hit1,
        mrr: report.mrr,
        both_kept: both as f64 / queries as f64,
        precision: precision / queries as f64,
        queries,
    })
}

fn planted_rule() -> Vec<Line> {
    let start = Instant::now();
    let result = panic::catch_unwind(planted_run)
        .unwrap_or_else(|_| Err("planted-rule run panicked".into()));
    let elapsed = start.elapsed();
    let line = |name, pass, soft, detail| Line {
        name,
        pass,
        soft,
        detail,
        elapsed,
    };
    let lines = match result {
        Err(e) => vec![line("criterion 7: planted-rule end-to-end", false, false, e)],
        Ok(r) => vec![
            line(
                "criterion 7: planted-rule end-to-end",
                r.ranking < 0.05 && r.hit1 == 1.0 && r.episodes <= 500 && r.secs < 300.0,
                false,
                format!(
                    "{} episodes in {:.1}s; ranking term {:.4} (< 0.05); held-out Hit@1 {:.3} (= 1), MRR {:.3} over {} queries x 10 candidates",
                    r.episodes, r.secs, r.ranking, r.hit1, r.mrr, r.queries
                ),
            ),
            line(
                "criterion 7 (soft): explanation precision at threshold 0.5",
                r.precision >= 0.8,
                true,
                format!(
                    "planted fraction of kept edges {:.3} (target >= 0.8); both planted edges kept for {:.0}% of queries",
                    r.precision,
                    100.0 * r.both_kept
                ),
            ),
        ],
    };
    for l in &lines {
        report(l);
    }
    lines
}

// ---------------------------------------------------------------- criterion 8

struct RandomScorer;

impl Scorer for RandomScorer {
    fn score_task(&self, task: &FewShotTask) -> gsnp::Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ task.id as u64);
        let QueryNegatives::Candidates(c) = &task.query_negatives else {
            unreachable!("evaluation tasks carry candidates")
        };
        Ok(c.iter()
            .map(|c| (0..=c.len()).map(|_| rng.random::<f64>()).collect())
            .collect())
    }
}

fn evaluation_oracle() -> Outcome {
    let err = |e: gsnp::Error| e.to_string();
    let pair = Pair::new(EntityId(0), EntityId(1));
    let results: Vec<RankingResult> = [1, 2, 4]
        .iter()
        .enumerate()
        .map(|(i, &rank)| RankingResult {
            task: i,
            relation: "r".into(),
            query: pair,
            rank,
            scores: Vec::new(),
        })
        .collect();
    let m = compute_metrics(&results).map_err(err)?;
    let close = |a: f64, b: f64| (a - b).abs() < 5e-5;
    ensure(
        close(m.mrr, 0.5833) && close(m.hit1, 0.3333) && m.hit5 == 1.0,
        || {
            format!(
                "ranks [1,2,4] gave MRR {} Hit@1 {} Hit@5 {}",
                m.mrr, m.hit1, m.hit5
            )
        },
    )?;

    let tasks: Vec<FewShotTask> = (0..100)
        .map(|id| FewShotTask {
            id,
            relation: "r".into(),
            support: vec![pair],
            support_negatives: Vec::new(),
            queries: vec![pair; 10],
            query_negatives: QueryNegatives::Candidates(vec![vec![EntityId(2); 50]; 10]),
        })
        .collect();
    let r = evaluate_split(&RandomScorer, &tasks).map_err(err)?;
    let expected = (1..=51).map(|i| 1.0 / i as f64).sum::<f64>() / 51.0;
    ensure(
        r.n_queries == 1000 && (r.mrr - expected).abs() < 0.01,
        || {
            format!(
                "random scorer MRR {} over {} queries, expected {expected:.4}",
                r.mrr, r.n_queries
            )
        },
    )?;
    Ok(format!(
        "ranks [1,2,4]: MRR {:.4} Hit@1 {:.4} Hit@5 {:.1}; random 51-way MRR {:.4} vs {expected:.4}",
        m.mrr, m.hit1, m.hit5, r.mrr
    ))
}

// ---------------------------------------------------------------- criterion 9

fn tau_sweep() -> Outcome {
    let err = |e: gsnp::Error| e.to_string();
    let s = planted(0);
    let eval_graph = s.bundle.eval_graph().map_err(err)?;
    let base = TrainConfig {
        lr: 0.01,
        d_edge: 16,
        d_z: 16,
        layers: 2,
        max_episodes: 100,
        val_every: 50,
        n_candidates: 10,
        ..TrainConfig::default()
    };
    let mut per_tau = Vec::new();
    for tau in [0.1, 0.4, 0.7, 0.9] {
        let cfg = TrainConfig {
            tau,
            ..base.clone()
        };
        let out = s
            .bundle
            .train(&cfg, |_| Ok(()))
            .map_err(|e| format!("tau {tau}: {e}"))?;
        let (model, cfg) = out.best.into_model().map_err(err)?;
        let tasks = s
            .bundle
            .eval_tasks(
                Split::Test,
                &eval_graph,
                cfg.k_shot,
                cfg.neg_size,
                cfg.n_candidates,
                cfg.seed,
            )
            .map_err(err)?;
        let r = evaluate_split(&ModelScorer::new(&model, &eval_graph, cfg.eval()), &tasks)
            .map_err(err)?;
        ensure(
            out.history
                .iter()
                .all(|h| h.ranking.is_finite() && h.kl_mask.is_finite()),
            || format!("tau {tau}: non-finite loss"),
        )?;
        per_tau.push(format!("{tau}: {:.3}", r.mrr));
    }

    // Near-zero prior: the mask divergence grows large but stays finite.
    let tiny = TrainConfig {
        tau: 1e-9,
        max_episodes: 5,
        val_every: 5,
        ..base
    };
    let out = s
        .bundle
        .train(&tiny, |_| Ok(()))
        .map_err(|e| format!("tau 1e-9: {e}"))?;
    let last = out.history.last().ok_or("tau 1e-9: no record")?;
    ensure(last.kl_mask.is_finite() && last.ranking.is_finite(), || {
        format!("tau 1e-9: loss not finite ({last:?})")
    })?;
    let saturated = mask_kl_of(&[1.0, 1.0 - 1e-13, 0.0], 1e-12);
    ensure(saturated.is_finite(), || {
        format!("saturated mask kl {saturated}")
    })?;
    Ok(format!(
        "test MRR per tau {{{}}}; tau 1e-9 mask kl {:.1} finite",
        per_tau.join(", "),
        last.kl_mask
    ))
}

// --------------------------------------------------------------- criterion 10

fn gsnp(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gsnp"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "gsnp {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    gsnp(&["synth", "--out", data_s, "--seed", "7"])?;
    let mut runs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}"));
        gsnp(&[
            "--threads",
            "1",
            "train",
            "--data",
            data_s,
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "d_edge=8",
            "--set",
            "d_z=8",
            "--set",
            "layers=2",
            "--set",
            "lr=0.01",
            "--set",
            "max_episodes=40",
            "--set",
            "val_every=10",
            "--set",
            "n_candidates=10",
        ])?;
        runs.push((
            read(&out.join("metrics.jsonl"))?,
            read(&out.join("checkpoint.json"))?,
        ));
    }
    ensure(!runs[0].0.is_empty(), || "empty metrics log".into())?;
    ensure(runs[0].0 == runs[1].0, || "metrics logs differ".into())?;
    ensure(runs[0].1 == runs[1].1, || "checkpoints differ".into())?;
    Ok(format!(
        "two `train --seed 7 --threads 1` runs: metrics log ({} bytes) and checkpoint ({} bytes) identical",
        runs[0].0.len(),
        runs[0].1.len()
    ))
}
