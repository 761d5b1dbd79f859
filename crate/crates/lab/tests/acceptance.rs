//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p odenet-lab --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use odenet::archblocks::{
    init_params, network_forward, network_loss, revnet_reconstruct, ArchKind, Mode, NetworkSpec, Policy,
};
use odenet::autodiff::{gradcheck_by_param, ParamStore, Tape, Tensor};
use odenet::dyncore::{linear_field, LabRng, Matrix, SeedSource, State};
use odenet::odeschemes::{
    characteristic_roots, integrate, lm_architecture_step, neumann_error_bound, neumann_inverse_apply,
    operator_norm, Scheme,
};
use odenet::sdeschemes::{
    moment_condition_check, shake_shake_step, stochastic_depth_step, stochastic_lm_step, IncrementDistribution,
    IncrementKind,
};
use odenet::trainer::{make_synthetic, train_detailed, Synthetic, TrainConfig};
use odenet_lab::{run_command, Command, ExperimentConfig};

const DTS: &str = "[0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625, 0.001953125]";
const EPS: f64 = 1e-6;
const WEAK_SEED: u64 = 2018;
const COMPARE_SEEDS: &str = "[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]";

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Every command run by the suite, so criterion 11 can replay them.
struct Runs {
    root: PathBuf,
    log: Vec<(Command, String, String)>,
}

impl Runs {
    fn run(&mut self, cmd: Command, name: &str, toml: &str) -> PathBuf {
        let out = self.root.join("first").join(name);
        let config = ExperimentConfig::parse(toml).expect("suite configs parse");
        if let Err(e) = run_command(cmd, &config, &out) {
            panic!("{cmd} {name}: {e}");
        }
        self.log.push((cmd, name.to_string(), toml.to_string()));
        out
    }
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn footer(rows: &[Vec<String>], label: &str) -> f64 {
    rows.iter().find(|r| r[0] == label).map(|r| r[1].parse().unwrap()).unwrap()
}

fn order_slope(runs: &mut Runs, name: &str, problem: &str, scheme: &str, reference: &str, k: Option<f64>) -> (f64, f64) {
    let k = k.map(|k| format!("k = {k}\n")).unwrap_or_default();
    let toml = format!("[order]\nproblem = '{problem}'\nscheme = '{scheme}'\nreference = '{reference}'\ndts = {DTS}\n{k}");
    let rows = read_csv(&runs.run(Command::Order, name, &toml).join("order.csv"));
    (footer(&rows, "slope"), footer(&rows, "r_squared"))
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn criterion_1(runs: &mut Runs) -> Verdict {
    let start = Instant::now();
    let expected = [
        ("forward_euler", 1.0, 0.1),
        ("backward_euler", 1.0, 0.1),
        ("rk2", 2.0, 0.15),
        ("rk4", 4.0, 0.3),
        ("ab2", 2.0, 0.15),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for problem in ["exp_decay", "harmonic"] {
        for (scheme, target, tol) in expected {
            let (s, r2) = order_slope(runs, &format!("c1_{problem}_{scheme}"), problem, scheme, "exact", None);
            ok &= within(s, target, tol);
            parts.push(format!("{problem}/{scheme} {s:.3} (R2 {r2:.4})"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(ok && secs < 10.0, format!("{}; {secs:.2}s < 10s", parts.join(", ")))
}

fn criterion_2(runs: &mut Runs) -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for problem in ["exp_decay", "harmonic"] {
        let (m, _) = order_slope(runs, &format!("c2_{problem}_fe_modified"), problem, "forward_euler", "modified", None);
        let (o, _) = order_slope(runs, &format!("c2_{problem}_fe_original"), problem, "forward_euler", "original", None);
        let (l, _) = order_slope(runs, &format!("c2_{problem}_lm_modified"), problem, "lm", "modified", Some(-0.5));
        ok &= within(m, 2.0, 0.15) && within(o, 1.0, 0.1) && within(l, 2.0, 0.15);
        parts.push(format!("{problem}: FE-vs-modified {m:.3}, FE-vs-original {o:.3}, LM(-0.5)-vs-modified {l:.3}"));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(ok && secs < 10.0, format!("{}; {secs:.2}s < 10s", parts.join("; ")))
}

fn criterion_3() -> Verdict {
    let mut rng = SeedSource::new(3).stream("acceptance/roots");
    let mut exact = 0;
    for _ in 0..100 {
        let k: f64 = rng.random_range(-3.0..3.0);
        let r = characteristic_roots(k);
        let roots_ok = r.roots[0].re == 1.0 && r.roots[0].im == 0.0 && r.roots[1].re == -k && r.roots[1].im == 0.0;
        if roots_ok && r.zero_stable == (k.abs() <= 1.0) {
            exact += 1;
        }
    }
    let eps = f64::EPSILON;
    let boundary = [
        (1.0, true),
        (-1.0, false),
        (1.0 + 2.0 * eps, false),
        (1.0 - eps, true),
        (-1.0 + eps, true),
        (-1.0 - 2.0 * eps, false),
        (0.0, true),
    ];
    let flips = boundary.iter().all(|&(k, stable)| characteristic_roots(k).zero_stable == stable);

    let stiff = linear_field(Matrix::from_element(1, 1, -100.0)).unwrap();
    let u0 = State::from_element(1, 1.0);
    let fe = integrate(&Scheme::ForwardEuler, &stiff, &u0, 0.0, 1.0, 0.1).unwrap();
    let be = integrate(&Scheme::from_name("backward_euler", None).unwrap(), &stiff, &u0, 0.0, 1.0, 0.1).unwrap();
    let grows = fe.states().windows(2).all(|w| w[1][0].abs() > w[0][0].abs());
    let decays = be.states().windows(2).all(|w| w[1][0] > 0.0 && w[1][0] < w[0][0]);
    verdict(
        exact == 100 && flips && grows && decays,
        format!(
            "{exact}/100 random k give roots {{1, -k}} and the right verdict; boundary flips {}; \
             u'=-100u dt=0.1: FE |u_10| = {:e} (growing {grows}), BE u_10 = {:e} (monotone decay {decays})",
            if flips { "correct" } else { "WRONG" },
            fe.last().1[0].abs(),
            be.last().1[0]
        ),
    )
}

fn eval_logits(spec: &NetworkSpec, p: &ParamStore, x: &Tensor) -> Tensor {
    let mut t = Tape::new();
    let f = network_forward(&mut t, spec, p, x, Mode::Eval { expectation: None }, None, None).unwrap();
    t.value(f.logits).clone()
}

fn batch(rng: &mut LabRng, p: usize, n: usize) -> Tensor {
    Tensor::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0))
}

fn criterion_4() -> Verdict {
    let mut rng = SeedSource::new(4).stream("acceptance/neumann");
    let mut worst_ratio: f64 = 0.0;
    let mut held = 0;
    for _ in 0..50 {
        let d = rng.random_range(2..=6);
        let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let target: f64 = rng.random_range(0.05..=0.8);
        let dt = target / operator_norm(&a);
        let norm = operator_norm(&(&a * dt));
        let u = State::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let exact = (Matrix::identity(d, d) - &a * dt).lu().solve(&u).unwrap();
        let mut all = true;
        for m in [1, 2, 5] {
            let err = (neumann_inverse_apply(&a, dt, m, &u).unwrap().value - &exact).norm();
            let bound = neumann_error_bound(norm, m, u.norm());
            worst_ratio = worst_ratio.max(err / bound);
            all &= err <= bound;
        }
        held += all as usize;
    }
    let mut bitwise = 0;
    for seed in 0..10 {
        let res = NetworkSpec::new(ArchKind::Resnet, 4, 8, 3, 2);
        let poly = NetworkSpec { kind: ArchKind::Polynet { m: 1 }, ..res };
        let mut r = SeedSource::new(seed).stream("init");
        let p = init_params(&res, &mut r).unwrap();
        let x = batch(&mut r, 3, 16);
        bitwise += (eval_logits(&res, &p, &x) == eval_logits(&poly, &p, &x)) as usize;
    }
    verdict(
        held == 50 && bitwise == 10,
        format!(
            "bound held for {held}/50 matrices x m in {{1,2,5}} (max error/bound {worst_ratio:.3}); \
             polynet(1) == resnet bitwise for {bitwise}/10 seeds"
        ),
    )
}

fn criterion_5(runs: &mut Runs) -> Verdict {
    let start = Instant::now();
    let zeros = [IncrementKind::TwoPoint, IncrementKind::Uniform].iter().all(|&k| {
        [0.5, 0.1, 0.01, 0.001].iter().all(|&dt| {
            let m = moment_condition_check(&IncrementDistribution::new(k, dt).unwrap());
            m.pass && m.first == 0.0 && m.third == 0.0 && m.second_gap == 0.0
        })
    });
    let shift = [0.5, 0.1, 0.01, 0.001]
        .iter()
        .all(|&dt| !moment_condition_check(&IncrementDistribution::new(IncrementKind::ConstantShift, dt).unwrap()).pass);

    let twin = format!(
        "seed = {WEAK_SEED}\n[weak]\nmu = 0.5\nsigma = 0.2\nx0 = 1.0\nt_end = 1.0\nincrement = 'gaussian'\n\
         compare_with = 'two_point'\ndts = [0.2, 0.1, 0.05, 0.025]\npaths = 100000\n"
    );
    let rows = read_csv(&runs.run(Command::Weak, "c5_twin", &twin).join("weak.csv"));
    let data: Vec<&Vec<String>> = rows[1..].iter().filter(|r| r[0] != "slope").collect();
    let agree = data.iter().filter(|r| r[8] == "true").count();
    let gaps: Vec<String> = data
        .iter()
        .map(|r| {
            let gap = (r[1].parse::<f64>().unwrap() - r[5].parse::<f64>().unwrap()).abs();
            format!("dt {}: |diff| {gap:.5} <= {:.5}", r[0], r[7].parse::<f64>().unwrap())
        })
        .collect();

    let fine = format!("seed = {WEAK_SEED}\n[weak]\nmu = 0.5\nsigma = 0.2\ndts = [0.01]\npaths = 100000\n");
    let rows = read_csv(&runs.run(Command::Weak, "c5_fine", &fine).join("weak.csv"));
    let (est, hw, analytic, bias): (f64, f64, f64, f64) =
        (rows[1][1].parse().unwrap(), rows[1][2].parse().unwrap(), rows[1][3].parse().unwrap(), rows[1][4].parse().unwrap());
    let covers = bias <= hw;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        zeros && shift && agree == data.len() && covers && secs < 60.0,
        format!(
            "two_point/uniform moments exactly zero: {zeros}; constant shift fails: {shift}; \
             gaussian vs two_point agree at {agree}/{} dt ({}); dt 0.01: {est:.6} +- {hw:.6} vs e^0.5 = {analytic:.6} \
             (covers: {covers}); {secs:.1}s < 60s",
            data.len(),
            gaps.join(", ")
        ),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = SeedSource::new(6).stream("acceptance/steps");
    let vec3 = |rng: &mut LabRng| State::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
    let (x, f1, f2) = (vec3(&mut rng), vec3(&mut rng), vec3(&mut rng));
    let mut exact_grid = true;
    let mut worst: f64 = 0.0;
    for j in 0..=64 {
        let eta = j as f64 / 64.0;
        let s = shake_shake_step(&f1, &f2, &x, 1.0, eta).unwrap();
        let target = &x + &f1 * eta + &f2 * (1.0 - eta);
        exact_grid &= s == target;
        let eta_r: f64 = rng.random_range(0.0..1.0);
        let s = shake_shake_step(&f1, &f2, &x, 1.0, eta_r).unwrap();
        worst = worst.max((s - (&x + &f1 * eta_r + &f2 * (1.0 - eta_r))).amax());
    }

    let n = 100_000;
    let p = 0.7;
    let f = State::from_vec(vec![1.0, -2.0, 0.5]);
    let x0 = State::from_vec(vec![0.3, 0.1, -1.0]);
    let mut sum = State::zeros(3);
    let mut sq = State::zeros(3);
    for _ in 0..n {
        let eta = if rng.random_bool(p) { 1.0 } else { 0.0 };
        let y = stochastic_depth_step(&f, &x0, 1.0, p, eta).unwrap();
        sum += &y;
        sq += y.component_mul(&y);
    }
    let nf = n as f64;
    let v = p * (1.0 - p);
    let mut moments_ok = true;
    let mut z_max: f64 = 0.0;
    for i in 0..3 {
        let mean = sum[i] / nf;
        let var = (sq[i] - nf * mean * mean) / (nf - 1.0);
        let se_mean = (v / nf).sqrt() * f[i].abs();
        let se_var = (v * (1.0 - 4.0 * v) / nf).sqrt() * f[i] * f[i];
        let z_mean = (mean - (x0[i] + p * f[i])).abs() / se_mean;
        let z_var = (var - v * f[i] * f[i]).abs() / se_var;
        z_max = z_max.max(z_mean).max(z_var);
        moments_ok &= z_mean <= 3.0 && z_var <= 3.0;
    }

    let mut lm_exact = true;
    for j in -64..=64 {
        let k = j as f64 / 64.0;
        let (un, up, fv) = (vec3(&mut rng), vec3(&mut rng), vec3(&mut rng));
        lm_exact &= stochastic_lm_step(&un, &up, &fv, -1.0 - k, 1.0).unwrap()
            == lm_architecture_step(k, &un, &up, &fv, 1.0).unwrap();
    }
    verdict(
        exact_grid && worst <= 1e-15 * 4.0 && moments_ok && lm_exact,
        format!(
            "shake-shake(dt=1) == X + eta f1 + (1-eta) f2 exactly on eta in j/64: {exact_grid}, \
             max rounding gap at random eta {worst:e}; stochastic depth p=0.7, 1e5 draws: worst |z| {z_max:.2} <= 3; \
             stochastic LM (eta=1, g=-1-k) == LM step bitwise for k in j/64: {lm_exact}"
        ),
    )
}

fn jitter_biases(p: &mut ParamStore, rng: &mut LabRng) {
    let names: Vec<String> = p.names().filter(|n| n.contains(".b")).map(String::from).collect();
    for n in names {
        p.get_mut(&n).unwrap().apply(|v| *v += rng.random_range(-0.1..0.1));
    }
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let kinds = [ArchKind::Resnet, ArchKind::LmResnet, ArchKind::Polynet { m: 2 }, ArchKind::Fractal2, ArchKind::Revnet];
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut k_worst: f64 = 0.0;
    let mut redraws = 0;
    for kind in kinds {
        for seed in 0..20 {
            let spec = NetworkSpec::new(kind, 3, 8, 2, 3);
            let mut rng = SeedSource::new(seed).stream("init");
            let mut p = init_params(&spec, &mut rng).unwrap();
            jitter_biases(&mut p, &mut rng);
            let labels = [0, 1, 2, 2, 1, 0];
            // Central differences are only an oracle away from relu kinks:
            // redraw the batch until every relu input clears 100 eps.
            let x = loop {
                let x = batch(&mut rng, 2, 6);
                let mut t = Tape::new();
                network_loss(&mut t, &spec, &p, &x, &labels, Mode::Train, None, None).unwrap();
                if t.relu_margin().is_none_or(|m| m >= 100.0 * EPS) {
                    break x;
                }
                redraws += 1;
            };
            let errs = gradcheck_by_param(
                |t, s| network_loss(t, &spec, s, &x, &labels, Mode::Train, None, None),
                &p,
                EPS,
            )
            .unwrap();
            for (name, e) in &errs {
                if name.ends_with(".k") {
                    k_worst = k_worst.max(*e);
                }
            }
            let w = errs.values().copied().fold(0.0, f64::max);
            let entry = worst.entry(kind.to_string()).or_insert(0.0);
            *entry = entry.max(w);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst.values().all(|&e| e <= 1e-5) && k_worst <= 1e-5;
    verdict(
        ok && secs < 30.0,
        format!(
            "max relative error over 20 seeds: {}; d/dk_n {k_worst:.2e}; \
             {redraws} batches redrawn for a relu input within {:.0e} of 0; {secs:.1}s < 30s",
            worst.iter().map(|(k, e)| format!("{k} {e:.2e}")).collect::<Vec<_>>().join(", "),
            100.0 * EPS
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut worst_abs: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for seed in 0..20 {
        let spec = NetworkSpec::new(ArchKind::Revnet, 10, 8, 3, 2);
        let mut rng = SeedSource::new(seed).stream("init");
        let p = init_params(&spec, &mut rng).unwrap();
        let x = batch(&mut rng, 3, 16);
        let mut t = Tape::new();
        let f = network_forward(&mut t, &spec, &p, &x, Mode::Eval { expectation: None }, None, None).unwrap();
        let last = t.value(*f.cache.states.last().unwrap()).clone();
        let lifted = t.value(f.cache.lifted);
        let err = (revnet_reconstruct(&spec, &p, &last).unwrap() - lifted).amax();
        let scale = lifted.amax().max(last.amax()).max(1.0);
        worst_abs = worst_abs.max(err);
        worst_rel = worst_rel.max(err / scale);
    }
    verdict(
        worst_rel <= 1e-12,
        format!("depth 10, 20 seeds: max error {worst_abs:.2e} absolute, {worst_rel:.2e} relative to max(1, |activation|)"),
    )
}

fn criterion_9() -> Verdict {
    let mut lm_equal = 0;
    for seed in 0..10 {
        let res = NetworkSpec::new(ArchKind::Resnet, 5, 8, 2, 3);
        let lm = NetworkSpec { kind: ArchKind::LmResnet, ..res };
        let mut rng = SeedSource::new(seed).stream("init");
        let mut p = init_params(&lm, &mut rng).unwrap();
        for l in 1..=5 {
            p.get_mut(&format!("block{l}.k")).unwrap().fill(0.0);
        }
        let x = batch(&mut rng, 2, 16);
        lm_equal += (eval_logits(&lm, &p, &x) == eval_logits(&res, &p, &x)) as usize;
    }
    let (train, test) = make_synthetic(Synthetic::Spirals, 400, 0.1, 0).unwrap();
    let mut sd_equal = 0;
    let mut total = 0;
    for kind in [ArchKind::Resnet, ArchKind::LmResnet] {
        for seed in 0..3 {
            let mut c = TrainConfig::new(NetworkSpec::new(kind, 4, 8, 2, 2), 5, seed);
            let plain = train_detailed(&c, &train, &test).unwrap();
            c.policy = Some(Policy::StochasticDepth { p_l: 1.0 });
            let sd = train_detailed(&c, &train, &test).unwrap();
            total += 1;
            sd_equal += (sd.params == plain.params && sd.run.epochs == plain.run.epochs) as usize;
        }
    }
    verdict(
        lm_equal == 10 && sd_equal == total,
        format!(
            "lm_resnet(k=0) == resnet bitwise for {lm_equal}/10 seeds; stochastic depth p_L=1 training == \
             deterministic training bitwise for {sd_equal}/{total} (kind, seed) pairs"
        ),
    )
}

fn compare_toml() -> String {
    format!(
        "[compare]\nseeds = {COMPARE_SEEDS}\n[compare.base]\ndataset = 'spirals'\nn = 2000\nnoise = 0.1\n\
         depth = 6\nwidth = 16\nepochs = 200\n\
         [[compare.groups]]\nname = 'resnet'\nkind = 'resnet'\n\
         [[compare.groups]]\nname = 'lm_resnet'\nkind = 'lm_resnet'\n\
         [[compare.groups]]\nname = 'lm_resnet_sd'\nkind = 'lm_resnet'\npolicy = 'stochastic_depth'\np_l = 0.5\n"
    )
}

fn criterion_10(runs: &mut Runs) -> (Verdict, PathBuf) {
    let start = Instant::now();
    let out = runs.run(Command::Compare, "c10", &compare_toml());
    let secs = start.elapsed().as_secs_f64();
    println!("    per-seed final test accuracy (compare.csv):");
    for line in fs::read_to_string(out.join("compare.csv")).unwrap().lines() {
        println!("      {line}");
    }
    println!("    summary (summary.csv):");
    for line in fs::read_to_string(out.join("summary.csv")).unwrap().lines() {
        println!("      {line}");
    }
    let summary = read_csv(&out.join("summary.csv"));
    let mean = |g: &str| -> f64 { 100.0 * summary.iter().find(|r| r[0] == g).unwrap()[2].parse::<f64>().unwrap() };
    let (res, lm, sd) = (mean("resnet"), mean("lm_resnet"), mean("lm_resnet_sd"));
    let ok = lm >= res - 1.0 && sd >= lm - 1.0 && secs < 900.0;
    (
        verdict(
            ok,
            format!(
                "mean test accuracy: resnet {res:.2}%, lm_resnet {lm:.2}% (>= {:.2}), lm_resnet+SD {sd:.2}% (>= {:.2}); \
                 {secs:.0}s < 900s",
                res - 1.0,
                lm - 1.0
            ),
        ),
        out,
    )
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_11(runs: &Runs, c10: &Path) -> Verdict {
    let audit = read_csv(&c10.join("k_audit.csv"));
    let mut listed = 0;
    let mut flagged = 0;
    let mut consistent = true;
    let mut lines: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for r in &audit[1..] {
        let k: f64 = r[3].parse().unwrap();
        let expect = if k.abs() > 1.0 {
            "outside"
        } else if k.abs() == 1.0 {
            "boundary"
        } else {
            "inside"
        };
        consistent &= r[4] == expect;
        flagged += (r[4] == "outside") as usize;
        listed += 1;
        let mark = if r[4] == "inside" { "" } else { "!" };
        lines.entry((r[0].clone(), r[1].clone())).or_default().push(format!("{k:+.4}{mark}"));
    }
    println!("    learned k_n (k_audit.csv; '!' marks values outside [-1, 1]):");
    for ((g, s), ks) in &lines {
        println!("      {g:<13} seed {s:>2}: {}", ks.join(" "));
    }
    let expected_rows = 2 * 10 * 6;

    let replay = runs.root.join("second");
    for (cmd, name, toml) in &runs.log {
        let config = ExperimentConfig::parse(toml).unwrap();
        run_command(*cmd, &config, &replay.join(name)).unwrap();
    }
    let first = runs.root.join("first");
    let mut compared = 0;
    let mut differing = Vec::new();
    for (_, name, _) in &runs.log {
        let files_a = files_under(&first.join(name));
        let files_b = files_under(&replay.join(name));
        if files_a != files_b {
            differing.push(format!("{name}: file sets differ"));
            continue;
        }
        for f in files_a.iter().filter(|f| f.file_name().unwrap() != "timing.txt") {
            compared += 1;
            if fs::read(first.join(name).join(f)).unwrap() != fs::read(replay.join(name).join(f)).unwrap() {
                differing.push(format!("{name}/{}", f.display()));
            }
        }
    }
    let csvs = runs
        .log
        .iter()
        .flat_map(|(_, name, _)| files_under(&first.join(name)).into_iter().filter(|f| f.extension().is_some_and(|e| e == "csv")))
        .count();
    verdict(
        listed == expected_rows && consistent && differing.is_empty(),
        format!(
            "{listed}/{expected_rows} k_n listed, {flagged} outside [-1, 1], flags consistent: {consistent}; \
             rerun of {} commands: {compared} files ({csvs} CSVs) compared, {} differ{}",
            runs.log.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Runs { root: dir.path().to_path_buf(), log: Vec::new() };
    let titles = [
        "scheme orders",
        "modified-equation orders",
        "stability",
        "Neumann bound and polynet(1)",
        "moment condition and weak sweep",
        "stochastic-step identities",
        "gradient checks",
        "RevNet reversibility",
        "architecture equivalences",
        "desk-scale LM-ResNet comparison",
        "k_n audit and determinism",
    ];
    let mut results: Vec<Verdict> = Vec::new();
    let report = |i: usize, v: &Verdict, secs: f64| {
        println!(
            "{} criterion {:>2} ({}): {} [{secs:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            titles[i],
            v.detail
        );
    };
    let timed = |f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed().as_secs_f64())
    };
    let steps: Vec<Box<dyn Fn(&mut Runs) -> Verdict>> = vec![
        Box::new(criterion_1),
        Box::new(criterion_2),
        Box::new(|_| criterion_3()),
        Box::new(|_| criterion_4()),
        Box::new(criterion_5),
        Box::new(|_| criterion_6()),
        Box::new(|_| criterion_7()),
        Box::new(|_| criterion_8()),
        Box::new(|_| criterion_9()),
    ];
    for (i, step) in steps.iter().enumerate() {
        let (v, secs) = timed(&mut || step(&mut runs));
        report(i, &v, secs);
        results.push(v);
    }
    let t = Instant::now();
    let (v, c10) = criterion_10(&mut runs);
    report(9, &v, t.elapsed().as_secs_f64());
    results.push(v);
    let (v, secs) = timed(&mut || criterion_11(&runs, &c10));
    report(10, &v, secs);
    results.push(v);

    let passed = results.iter().filter(|v| v.pass).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
