mod common;

use std::time::Instant;

use kamzero::config::parse_config;
use kamzero::homological::check_nonresonance_on;
use kamzero::kam::{kam_step, no_torus_witness, schedule, zero_mode_system};
use kamzero::matrix::{expm, kron, vec, DenseMatrix};
use kamzero::nls::{self, ParityKind};
use kamzero::pipeline::{self, measure_config, nls_build, run_config, zero_mode_mean};
use kamzero::report::to_json;
use kamzero::synthetic::{self, SyntheticSpec};
use kamzero::{solve_homological, BaseParams, DomainParams, KamParams, RunOptions, TFSeries, C64};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(name: &str) -> kamzero::config::RunConfig {
    let text = std::fs::read_to_string(format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap();
    parse_config(&text).unwrap()
}

fn random_matrix(g: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| common::crandn(g))
}

fn max_vec_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn kron_vec() -> Outcome {
    let t = Instant::now();
    let mut g = common::rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (m, n, p, q) = (g.gen_range(1..5), g.gen_range(1..5), g.gen_range(1..5), g.gen_range(1..5));
        let (a, b) = (random_matrix(&mut g, m, n), random_matrix(&mut g, p, q));
        let (c, d) = (random_matrix(&mut g, n, 3), random_matrix(&mut g, q, 2));
        let lhs = kron(&a, &b).matmul(&kron(&c, &d)).unwrap();
        let rhs = kron(&a.matmul(&c).unwrap(), &b.matmul(&d).unwrap());
        worst = worst.max(lhs.max_abs_diff(&rhs));

        let x = random_matrix(&mut g, n, p);
        let axb = a.matmul(&x).unwrap().matmul(&b).unwrap();
        let via = kron(&b.transpose(), &a).matvec(&vec(&x)).unwrap();
        worst = worst.max(max_vec_diff(&vec(&axb), &via));

        let (s, u) = (random_matrix(&mut g, m, m), random_matrix(&mut g, n, n));
        let y = random_matrix(&mut g, m, n);
        let syl = s.matmul(&y).unwrap().add(&y.matmul(&u).unwrap()).unwrap();
        let op = kron(&DenseMatrix::identity(n), &s).add(&kron(&u.transpose(), &DenseMatrix::identity(m))).unwrap();
        worst = worst.max(max_vec_diff(&vec(&syl), &op.matvec(&vec(&y)).unwrap()));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(worst <= 1e-12 && secs < 1.0, format!("max error {worst:.2e} over 200 instances, {secs:.3} s"))
}

fn poisson_algebra() -> Outcome {
    let t = Instant::now();
    let d = common::dims();
    let mut g = common::rng(2);
    let (mut anti, mut jac, mut leib) = (0usize, 0.0f64, 0.0f64);
    let mut ok = true;
    for _ in 0..100 {
        let b8 = common::budgets(8);
        let f = common::random_series(&mut g, &d, b8, 6, 4);
        let h1 = common::random_series(&mut g, &d, b8, 6, 4);
        let h2 = common::random_series(&mut g, &d, b8, 6, 4);
        let fg = f.bracket(&h1).unwrap();
        if fg.terms() != &h1.bracket(&f).unwrap().neg().terms().clone() {
            anti += 1;
        }
        let gh = h1.bracket(&h2).unwrap();
        let hf = h2.bracket(&f).unwrap();
        let (a, b, c) = (f.bracket(&gh).unwrap(), h1.bracket(&hf).unwrap(), h2.bracket(&fg).unwrap());
        let dropped: f64 = [&gh, &hf, &fg, &a, &b, &c].iter().map(|s| s.dropped()).sum();
        let defect = a.add(&b).unwrap().add(&c).unwrap().l1_norm();
        ok &= defect <= 10.0 * dropped;
        jac = jac.max(defect);

        let b12 = common::budgets(12);
        let (f, h1, h2) = (f.with_budgets(b12), h1.with_budgets(b12), h2.with_budgets(b12));
        let prod = h1.mul(&h2).unwrap();
        let lhs = f.bracket(&prod).unwrap();
        let (fa, fb) = (f.bracket(&h1).unwrap(), f.bracket(&h2).unwrap());
        let (r1, r2) = (fa.mul(&h2).unwrap(), h1.mul(&fb).unwrap());
        let dropped: f64 = [&prod, &lhs, &fa, &fb, &r1, &r2].iter().map(|s| s.dropped()).sum();
        let defect = lhs.sub(&r1).unwrap().sub(&r2).unwrap().l1_norm();
        ok &= defect <= 10.0 * dropped;
        leib = leib.max(defect);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        ok && anti == 0 && secs < 10.0,
        format!("antisymmetry mismatches {anti}, Jacobi defect {jac:.2e}, Leibniz defect {leib:.2e}, {secs:.2} s"),
    )
}

fn hom_params(b: usize) -> KamParams {
    let base = BaseParams { n: 2, b, tau: 3.5, s1: 1.0, r1: 0.1, gamma1: 1e-3, a: 0.1, p: 1.0 };
    let mut p = schedule(1, &base, 1e-6, 0.1);
    p.kcut = 6.0;
    p
}

fn homological() -> Outcome {
    let dp = DomainParams { s: 1.0, r: 0.1, a: 0.1, p: 1.0 };
    let mut worst: f64 = 0.0;
    let (mut solved, mut seed) = (0, 100u64);
    while solved < 20 {
        seed += 1;
        let zero_modes = if seed % 2 == 0 { vec![0] } else { vec![0, 1] };
        let b = zero_modes.len();
        let spec = SyntheticSpec { zero_modes, seed, jmax: 8, block_scale: 5e-2, zero_mode_mean: true, terms: 80, ..SyntheticSpec::default() };
        let prob = synthetic::build(&spec, &dp).unwrap();
        let p = hom_params(b);
        let low = prob.r0.split_low_high().0.filter(|k, _| k.k_norm() <= 6);
        let ks: Vec<Vec<i32>> = low.terms().keys().map(|k| k.k.to_vec()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        if !check_nonresonance_on(&prob.n0, &prob.dims, &p, &ks).is_empty() {
            continue;
        }
        let sol = solve_homological(&prob.n0, &low, &p).unwrap();
        worst = worst.max(sol.report.residual / low.vector_field_norm(&p.domain()));
        solved += 1;
    }
    let mut diag: f64 = 0.0;
    for (zero_modes, seed) in [(vec![0u32], 1u64), (vec![0, 1], 3)] {
        let b = zero_modes.len();
        let spec = SyntheticSpec { zero_modes, block_scale: 0.0, zero_mode_mean: true, terms: 120, seed, ..SyntheticSpec::default() };
        let prob = synthetic::build(&spec, &dp).unwrap();
        let (low, _) = prob.r0.split_low_high();
        let sol = solve_homological(&prob.n0, &low, &hom_params(b)).unwrap();
        let (f, nhat) = common::diagonal_oracle(&prob.n0, &low);
        diag = diag.max(sol.f.sub(&f).unwrap().max_abs()).max(sol.nhat_series.sub(&nhat).unwrap().max_abs());
    }
    outcome(worst <= 1e-9 && diag <= 1e-12, format!("worst relative residual {worst:.2e} on 20 instances, block vs diagonal {diag:.2e}"))
}

fn fourier_tail() -> Outcome {
    let d = common::dims();
    let dp = DomainParams { s: 0.6, r: 0.1, a: 0.1, p: 1.0 };
    let mut g = common::rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut r = TFSeries::new(d.clone(), common::budgets(6));
        for _ in 0..60 {
            let k = [g.gen_range(-20..=20), g.gen_range(-20..=20)];
            r.add_term(d.key().k(&k).z(3, g.gen_range(0..2)).y(0, g.gen_range(0..2)).build(), common::crandn(&mut g));
        }
        let norm = r.weighted_norm(&dp);
        for kc in [4.0f64, 8.0, 16.0] {
            let sigma = dp.s / 2.0;
            let sp = r.fourier_truncate(kc, sigma, &dp).unwrap();
            let bound = 16.0 * kc * kc * (-kc * sigma).exp() * norm;
            worst = worst.max(sp.tail_norm / bound);
        }
    }
    outcome(worst <= 1.0, format!("largest tail/bound ratio {worst:.3e} for K in 4, 8, 16"))
}

fn synthetic_base() -> BaseParams {
    BaseParams { n: 2, b: 1, tau: 3.5, s1: 1.0, r1: 0.1, gamma1: 0.01, a: 0.1, p: 1.0 }
}

fn contraction() -> Outcome {
    let dp = DomainParams { s: 0.75, r: 0.1, a: 0.1, p: 1.0 };
    let p = synthetic::build(&SyntheticSpec::default(), &dp).unwrap();
    let rep = kamzero::run(&p.n0, &p.r0, &synthetic_base(), &RunOptions { max_steps: 3, ..RunOptions::default() }).unwrap();
    let steps = rep.records.len().min(3);
    let contract = rep.records.iter().take(3).all(|r| r.eps_next <= r.eps_measured.powf(1.1));
    let drift: f64 = rep.records.iter().map(|r| r.drift).sum();
    let eps: f64 = rep.records.iter().map(|r| r.eps_measured).sum();
    let trace: Vec<String> = rep.records.iter().map(|r| format!("{:.2e}", r.eps_measured)).chain(rep.records.last().map(|r| format!("{:.2e}", r.eps_next))).collect();
    outcome(
        steps == 3 && contract && drift <= 10.0 * eps,
        format!("eps trace [{}], drift {drift:.2e} vs 10*sum eps {:.2e}", trace.join(", "), 10.0 * eps),
    )
}

fn birkhoff() -> Outcome {
    let cfg = config("nls.toml");
    let model = cfg.nls_model(None).unwrap();
    let bk = nls::birkhoff_transform(&model, 2).unwrap();
    let elim = nls::max_eliminated_quartic(&bk.h);
    let (c, spread) = nls::gbar_pattern(&bk.gbar);
    let d = bk.h.dims();
    let k_part = bk.h.filter(|k, c| k.z_degree() >= 6 && c.norm() > 1e-15);
    let momentum = k_part.terms().keys().filter(|k| nls::momentum(d, k) != 0).count();
    let selection = k_part.terms().keys().filter(|k| !nls::cosine_selection(d, k)).count();
    outcome(
        elim <= 1e-12 && spread <= 1e-10 && momentum == 0,
        format!(
            "eliminated quartics {elim:.2e}, Gbar constant {c:.12} spread {spread:.2e} over {} pairs, K keys {} with {momentum} nonzero momentum and {selection} off cosine selection",
            bk.gbar.len(),
            k_part.len()
        ),
    )
}

fn nls_parity() -> Outcome {
    let cfg = config("nls.toml");
    let b = nls_build(&cfg, None).unwrap();
    let mut opts = cfg.run_options();
    opts.max_steps = 2;
    let mut means = Vec::new();
    kamzero::kam::run_observed(&b.form.n0, &b.form.r, &cfg.base(), &opts, |m, _, r| means.push((m, zero_mode_mean(r)))).unwrap();
    let seen: Vec<usize> = means.iter().map(|&(m, _)| m).collect();
    let worst = means.iter().map(|&(_, v)| v).fold(0.0, f64::max);
    let d = b.form.r.dims();
    let mut bad = b.form.r.clone();
    bad.add_term(d.key().k(&[1, 1]).z(0, 1).build(), C64::new(1e-6, 0.0));
    let flagged = nls::parity_check(&bad, ParityKind::EvenKBlocks, 1e-12).len();
    let clean = pipeline::step_parity(0, &b.form.r, 1e-12);
    outcome(
        seen == [0, 1, 2] && worst <= 1e-12 && flagged == 1 && clean.even_k_blocks == 0,
        format!("zero-mode means {:?}, injected term flagged {flagged}", means.iter().map(|&(m, v)| format!("m={m}: {v:.1e}")).collect::<Vec<_>>()),
    )
}

/// `e^{−A}X(1) = X(0) + ∫₀¹ e^{−As} α ds` from one exponential of `[[−A, α], [0, 0]]`.
fn linear_oracle(alpha: &[C64], a0: &DenseMatrix, x0: &[C64]) -> f64 {
    let m = alpha.len();
    let mut big = DenseMatrix::zeros(m + 1, m + 1);
    big.set_block(0, 0, &a0.scale(C64::new(-1.0, 0.0)));
    for i in 0..m {
        big[(i, m)] = alpha[i];
    }
    let e = expm(&big).unwrap();
    (0..m).map(|i| (x0[i] + e[(i, m)]).norm_sqr()).sum::<f64>().sqrt()
}

fn witness() -> Outcome {
    let eps: f64 = 1e-6;
    let e76 = eps.powf(7.0 / 6.0);
    let dp = DomainParams { s: 0.75, r: 0.1, a: 0.1, p: 1.0 };
    let p = synthetic::build(&SyntheticSpec::default(), &dp).unwrap();
    let params = schedule(1, &synthetic_base(), eps, 0.1);
    let step = kam_step(&p.n0, &p.r0, &params, &RunOptions::default()).unwrap();
    let mut n1 = step.n_next.clone();
    let d0 = 1e4 * 20.0 * e76;
    let c = C64::from_polar(d0 / 2f64.sqrt(), 0.7);
    n1.nz0 = vec![c];
    n1.nzb0 = vec![c.conj()];
    let ndp = params.next_domain();
    let w = no_torus_witness(&n1, &step.r_next, eps, &ndp, 200).unwrap();
    let (alpha, a0) = zero_mode_system(&n1);
    let an = alpha[..1].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() + alpha[1..].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let x0: Vec<C64> = alpha.iter().map(|v| -v * (e76 / an)).collect();
    let oracle = linear_oracle(&alpha, &a0, &x0);
    let rel = (w.xtilde_norm - oracle).abs() / oracle;

    let mut quiet = step.n_next.clone();
    quiet.nz0 = vec![C64::new(0.0, 0.0)];
    quiet.nzb0 = vec![C64::new(0.0, 0.0)];
    let w0 = no_torus_witness(&quiet, &step.r_next, eps, &ndp, 200).unwrap();
    outcome(
        w.escaped && w.xtilde_norm >= w.chain_bound && rel <= 0.05 && w0.max_norm <= 2.0 * e76,
        format!(
            "escaped {}, |Xtilde(1)| {:.4e} vs chain bound {:.4e}, oracle deviation {:.2e}, quiet max {:.3e} vs {:.3e}",
            w.escaped,
            w.xtilde_norm,
            w.chain_bound,
            rel,
            w0.max_norm,
            2.0 * e76
        ),
    )
}

fn measure_scaling() -> Outcome {
    let reps = measure_config(&config("measure.toml")).unwrap();
    let fr: Vec<f64> = reps.iter().map(|r| r.families[0].fraction).collect();
    let ratios: Vec<f64> = fr.windows(2).map(|w| w[1] / w[0]).collect();
    let ok = reps.iter().all(|r| r.samples == 10_000) && ratios.len() >= 3 && ratios.iter().all(|r| (0.3..=0.7).contains(r));
    outcome(ok, format!("fractions {:?}, ratios {:?}", fr.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(), ratios.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()))
}

fn determinism() -> Outcome {
    let mut same = true;
    let mut bytes = 0;
    for name in ["synthetic.toml", "witness.toml"] {
        let cfg = config(name);
        let a = to_json(&run_config(&cfg, None, None).unwrap()).unwrap();
        let b = to_json(&run_config(&cfg, None, None).unwrap()).unwrap();
        same &= a.as_bytes() == b.as_bytes();
        bytes += a.len();
    }
    outcome(same, format!("two configs, {bytes} bytes of JSON compared"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("Kronecker and vec identities", kron_vec),
        ("Poisson algebra", poisson_algebra),
        ("homological residual", homological),
        ("Fourier tail bound", fourier_tail),
        ("KAM contraction", contraction),
        ("NLS Birkhoff step", birkhoff),
        ("NLS parity", nls_parity),
        ("zero-mode dichotomy", witness),
        ("measure scaling", measure_scaling),
        ("determinism", determinism),
    ];
    let mut passed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        passed += o.pass as usize;
        println!("{} {:>2} {name}: {} [{:.2} s]", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {passed}/{} criteria pass", criteria.len());
}
