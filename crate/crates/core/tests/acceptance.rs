//! Acceptance suite: one PASS/FAIL line per criterion, each checked at its
//! stated tolerance and runtime budget.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use space_lab::datastore::{make_task, sample_dataset};
use space_lab::engine::{metrics_csv, InitPolicy};
use space_lab::objectives::link::{log_sigma_mu, log_sigmoid, posterior_real, posterior_synth};
use space_lab::objectives::{
    loss_and_grad, space_grad, space_loss, space_loss_shifted_logsigmoid, GradSource,
};
use space_lab::oracle::{exact_expected_loss, run_gradcheck, verify_minimizer};
use space_lab::report::{compare, Comparison};
use space_lab::*;

type Outcome = std::result::Result<(bool, String), String>;

fn default_task() -> TaskSpec {
    make_task(7, 3, 3, 4).unwrap()
}

fn grid() -> impl Iterator<Item = (f64, f64)> {
    [0.1, 0.5, 1.0, 2.0, 10.0]
        .into_iter()
        .flat_map(|mu| (0..=10_000).map(move |i| (mu, -50.0 + i as f64 * 0.01)))
}

fn gradient_correctness() -> Outcome {
    let rows = run_gradcheck(20, 1e-6).map_err(|e| e.to_string())?;
    let worst = rows.iter().map(|r| r.max_error).fold(0.0, f64::max);
    let detail = rows
        .iter()
        .map(|r| format!("{} {:.1e}", r.objective, r.max_error))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((
        rows.len() == 5 && rows.iter().all(|r| r.passed),
        format!("worst relative error {worst:.2e} <= 1e-6 ({detail})"),
    ))
}

fn achievability() -> Outcome {
    let report = verify_minimizer(&default_task(), 1.0, 5000).map_err(|e| e.to_string())?;
    Ok((
        report.converged && report.final_kl <= 1e-4 && report.steps <= 5000,
        format!(
            "KL {:.2e} after {} steps (<= 1e-4), {} loss increases",
            report.final_kl, report.steps, report.loss_increases
        ),
    ))
}

fn maintainability() -> Outcome {
    let task = default_task();
    let grad = space_grad(GradSource::Exact(&task), &task.target, &task.target, 1.0)
        .map_err(|e| e.to_string())?;
    let config = RunConfig {
        init: InitPolicy::Target,
        ..RunConfig::exact_default()
    };
    let run = run_with_task(&config, &task).map_err(|e| e.to_string())?;
    let worst_kl = run
        .iterations
        .iter()
        .flat_map(|r| [r.pre_kl, r.post_kl])
        .fold(0.0, f64::max);
    Ok((
        grad.sup_norm() <= 1e-10 && run.status == RunStatus::Completed && run.iterations.len() == 5 && worst_kl <= 1e-6,
        format!("stationary gradient sup-norm {:.1e} (<= 1e-10); max KL over 5 exact iterations {:.1e} (<= 1e-6)", grad.sup_norm(), worst_kl),
    ))
}

fn gap_degeneracy() -> Outcome {
    let task = default_task();
    let data = sample_dataset(&task, 64, 3).map_err(|e| e.to_string())?;
    let batch = LabeledBatch::new(data.items.clone(), data.items);
    let opponent = AutoregressiveTable::uniform(task.vocab(), task.length(), task.prompt_count())
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let thetas: Vec<AutoregressiveTable> = (0..10)
        .map(|_| {
            let mut m = opponent.snapshot();
            m.logits_mut()
                .iter_mut()
                .for_each(|l| *l = rng.gen_range(-2.0..2.0));
            m
        })
        .collect();
    let gap_objectives = [
        ObjectiveSpec::spin(1.0, SpinForm::LossOfMargin),
        ObjectiveSpec::spin(1.0, SpinForm::DifferenceOfLosses),
        ObjectiveSpec::sipo(0.5),
        ObjectiveSpec::ssimpo(2.0, 0.0),
    ];
    let mut ok = true;
    let mut worst_var = 0.0f64;
    let mut worst_grad = 0.0f64;
    for spec in &gap_objectives {
        let mut values = Vec::new();
        for theta in &thetas {
            let (v, g) =
                loss_and_grad(spec, &batch, theta, &opponent).map_err(|e| e.to_string())?;
            values.push(v);
            worst_grad = worst_grad.max(g.sup_norm());
        }
        let mean = values.iter().sum::<f64>() / 10.0;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0;
        worst_var = worst_var.max(var);
        ok &= var <= 1e-12;
    }
    ok &= worst_grad <= 1e-10;
    let space: Vec<f64> = thetas
        .iter()
        .map(|t| space_loss(&batch, t, &opponent, 1.0))
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let range = space.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - space.iter().cloned().fold(f64::INFINITY, f64::min);
    ok &= range >= 0.01;
    Ok((ok, format!("gap losses variance {worst_var:.1e} (<= 1e-12), grad sup-norm {worst_grad:.1e} (<= 1e-10); SPACE range {range:.3} (>= 0.01)")))
}

fn sigma_identity() -> Outcome {
    let worst = grid()
        .map(|(mu, x)| log_sigma_mu(mu, x).map(|a| (a - log_sigmoid(x - mu.ln())).abs()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.to_string())?
        .into_iter()
        .fold(0.0, f64::max);
    let task = default_task();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_batch = 0.0f64;
    for seed in 0..10u64 {
        let mu = [0.5, 1.0, 2.0, 5.0, 10.0][(seed % 5) as usize];
        let mut main = task.target.snapshot();
        main.logits_mut()
            .iter_mut()
            .for_each(|l| *l += rng.gen_range(-1.0..1.0));
        let mut opponent = task.target.snapshot();
        opponent
            .logits_mut()
            .iter_mut()
            .for_each(|l| *l = rng.gen_range(-2.0..2.0));
        let real = sample_dataset(&task, 32, seed)
            .map_err(|e| e.to_string())?
            .items;
        let m = (mu * 32.0_f64).round() as usize;
        let synth = (0..m)
            .map(|j| {
                let x = real[j % real.len()].prompt;
                opponent.sample(x, &mut rng).map(|y| Item::new(x, y))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let batch = LabeledBatch::new(real, synth);
        let a = space_loss(&batch, &main, &opponent, mu).map_err(|e| e.to_string())?;
        let b = space_loss_shifted_logsigmoid(&batch, &main, &opponent, mu)
            .map_err(|e| e.to_string())?;
        worst_batch = worst_batch.max((a - b).abs());
    }
    Ok((
        worst <= 1e-12 && worst_batch <= 1e-12,
        format!("grid max |diff| {worst:.1e}, batch max |diff| {worst_batch:.1e} (<= 1e-12)"),
    ))
}

fn anchors() -> Outcome {
    let task = default_task();
    let data = sample_dataset(&task, 40, 1).map_err(|e| e.to_string())?;
    let m = task.target.snapshot();
    let expect = [
        (1.0, 2.0 * 2f64.ln()),
        (2.0, 3.0 * 3f64.ln() - 2.0 * 2f64.ln()),
    ];
    let mut worst = 0.0f64;
    for (mu, want) in expect {
        let synth: Vec<Item> = (0..(40.0 * mu) as usize)
            .map(|j| data.items[j % 40].clone())
            .collect();
        let batch = LabeledBatch::new(data.items.clone(), synth);
        let got = space_loss(&batch, &m, &m, mu).map_err(|e| e.to_string())?;
        let exact = exact_expected_loss(&ObjectiveSpec::space(mu), &m, &m, &task)
            .map_err(|e| e.to_string())?
            .value;
        worst = worst.max((got - want).abs()).max((exact - want).abs());
    }
    let post = grid()
        .map(|(mu, r)| Ok((posterior_real(mu, r)? + posterior_synth(mu, r)? - 1.0).abs()))
        .collect::<Result<Vec<f64>>>()
        .map_err(|e| e.to_string())?
        .into_iter()
        .fold(0.0, f64::max);
    Ok((
        worst <= 1e-9 && post <= 1e-12,
        format!(
            "anchor max error {worst:.1e} (<= 1e-9); posterior sum error {post:.1e} (<= 1e-12)"
        ),
    ))
}

/// Frozen-seed post_kl values of the four-way comparison.
const PINNED_FINAL_KL: [(&str, f64); 4] = [
    ("SPACE", 0.0889763803446327),
    ("SPIN", 0.09637618703517326),
    ("S-IPO", 0.09233694888846405),
    ("S-SimPO", 0.1787987768899506),
];

fn four_way() -> std::result::Result<Comparison, String> {
    compare(
        &RunConfig::default(),
        &default_task(),
        &ObjectiveSpec::self_play_defaults(),
        0,
    )
    .map_err(|e| e.to_string())
}

fn stability(c: &Comparison) -> Outcome {
    let space = &c.runs[0];
    if space.status != RunStatus::Completed || space.iterations.len() != 5 {
        return Ok((false, "SPACE run did not complete 5 iterations".into()));
    }
    let (kl2, kl4) = (space.iterations[2].post_kl, space.iterations[4].post_kl);
    let best = c.ranks.best_final();
    let pinned =
        c.labels
            .iter()
            .zip(&c.runs)
            .zip(PINNED_FINAL_KL)
            .all(|((label, m), (name, kl))| {
                label == name && m.final_post_kl().is_some_and(|v| (v - kl).abs() <= 1e-9)
            });
    Ok((
        kl4 <= kl2 + 1e-3 && best == vec!["SPACE"] && pinned,
        format!("SPACE KL iter4 {kl4:.5} <= iter2 {kl2:.5} + 1e-3; best final rank {best:?}; pinned values match: {pinned}"),
    ))
}

fn reward_dynamics(c: &Comparison) -> Outcome {
    let s = &c.runs[0].iterations[0];
    let p = &c.runs[1].iterations[0];
    Ok((
        c.labels[0] == "SPACE"
            && c.labels[1] == "SPIN"
            && s.mean_reward_real > s.start_reward_real
            && s.mean_reward_synth < s.start_reward_synth
            && p.reward_gap > p.start_reward_gap,
        format!(
            "SPACE real {:+.4} -> {:+.4}, synth {:+.4} -> {:+.4}; SPIN gap {:+.4} -> {:+.4}",
            s.start_reward_real,
            s.mean_reward_real,
            s.start_reward_synth,
            s.mean_reward_synth,
            p.start_reward_gap,
            p.reward_gap
        ),
    ))
}

fn determinism(first: &Comparison) -> Outcome {
    let second = four_way()?;
    let csv =
        |m: &RunManifest| metrics_csv(&m.without_wall_time().iterations).map_err(|e| e.to_string());
    let mut same = true;
    for (a, b) in first.runs.iter().zip(&second.runs) {
        same &= csv(a)? == csv(b)?;
    }
    let exact = RunConfig {
        iterations: 2,
        ..RunConfig::exact_default()
    };
    let (a, b) = (
        run(&exact).map_err(|e| e.to_string())?,
        run(&exact).map_err(|e| e.to_string())?,
    );
    same &= csv(&a)? == csv(&b)?;
    Ok((
        same,
        format!(
            "metrics.csv identical across reruns of {} runs (wall_time excluded)",
            first.runs.len() + 1
        ),
    ))
}

fn check(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let outcome = f();
    let elapsed = started.elapsed();
    let (ok, detail) = match outcome {
        Ok((ok, detail)) => (ok && elapsed <= budget, detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "[{}] {id}. {name}: {detail} ({:.2}s, budget {}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    ok
}

fn main() {
    let secs = Duration::from_secs;
    let mut passed = vec![
        check(1, "gradient correctness", secs(30), gradient_correctness),
        check(2, "achievability", secs(60), achievability),
        check(3, "maintainability", secs(30), maintainability),
        check(4, "gap degeneracy", secs(10), gap_degeneracy),
        check(5, "sigma identity", secs(5), sigma_identity),
        check(6, "trivial anchors", secs(5), anchors),
    ];
    let started = Instant::now();
    let comparison = four_way();
    let compare_time = started.elapsed();
    match comparison {
        Ok(c) => {
            passed.push(check(
                7,
                "stability contrast",
                secs(300).saturating_sub(compare_time),
                || stability(&c),
            ));
            passed.push(check(8, "reward dynamics", secs(300), || {
                reward_dynamics(&c)
            }));
            passed.push(check(9, "determinism", secs(300), || determinism(&c)));
        }
        Err(e) => {
            for (id, name) in [
                (7, "stability contrast"),
                (8, "reward dynamics"),
                (9, "determinism"),
            ] {
                println!("[FAIL] {id}. {name}: comparison failed: {e}");
                passed.push(false);
            }
        }
    }
    let failed: Vec<usize> = passed
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", passed.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
