//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the criteria execute in order on one thread and the lines are
//! always printed. Exits non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use rand::rngs::Xoshiro256PlusPlus;
use rand::{RngExt, SeedableRng};
use serde_json::Value;

use ofdm_dual::compare::TABLE_HEADER;
use ofdm_dual::scenario_io::suite_shape;
use ofdm_dual::user_agent::{per_tone_best_response, power_price_bisection};
use ofdm_dual::{Link, UserProfile};

const SUITE_SIZE: usize = 50;
const SUITE_SEED: u64 = 1000;
const TINY_SIZE: u64 = 20;
const TINY_SEED: u64 = 5000;

const C1_REL_TOL: f64 = 0.01;
const C1_GAP_FLOOR: f64 = -1e-9;
const C1_SECONDS: f64 = 60.0;
const C2_REL_TOL: f64 = 0.02;
const C2_GRID_POINTS: &str = "201";
const C2_SECONDS: f64 = 30.0;
const C3_REL_TOL: f64 = 1e-10;
const C3_BUDGET_TOL: f64 = 1e-9;
const C4_PRICE_TOL: f64 = 1e-3;
const C4_FEWER_SHARE: f64 = 0.9;
const C5_MAX_ROUNDS: &str = "5000";
const C6_POINTS: usize = 10_000;
const C6_REL_TOL: f64 = 1e-6;
const C6_KINK_DISTANCE: f64 = 1e-3;
const C6_CONCAVITY_SLACK: f64 = 1e-12;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ofdm-dual"))
        .args(args)
        .output()
        .expect("ofdm-dual binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "unparseable output ({e}); stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("missing number {key} in {v}"))
}

fn gen(dir: &Path, seed: u64, users: usize, tones: usize, symmetric: bool) -> String {
    let path = dir.join(format!("s{seed}_{users}x{tones}{}.json", if symmetric { "sym" } else { "" }));
    let path = path.display().to_string();
    let (s, k, n) = (seed.to_string(), users.to_string(), tones.to_string());
    let mut args = vec!["gen", "--seed", &s, "--users", &k, "--tones", &n, "--out", &path];
    if symmetric {
        args.push("--symmetric");
    }
    let out = bin(&args);
    assert_eq!(out.status.code(), Some(0), "gen failed: {}", String::from_utf8_lossy(&out.stderr));
    path
}

fn suite(dir: &Path) -> Vec<String> {
    (0..SUITE_SIZE)
        .map(|i| {
            let (k, n) = suite_shape(i);
            gen(dir, SUITE_SEED + i as u64, k, n, false)
        })
        .collect()
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn criterion_1(dir: &Path) -> Verdict {
    let files = suite(dir);
    let start = Instant::now();
    let mut within = 0;
    let mut worst_rel = f64::NEG_INFINITY;
    let mut worst_label = String::new();
    let mut min_gap = f64::INFINITY;
    for (i, f) in files.iter().enumerate() {
        let run = bin(&["run", "--scenario", f]);
        let oracle = bin(&["oracle", "--scenario", f]);
        let (r, o) = (report(&run), report(&oracle));
        let objective = num(&r, "objective");
        let dual = num(&o, "dual_value");
        let rel = (dual - objective) / dual.abs();
        if rel <= C1_REL_TOL {
            within += 1;
        }
        if rel > worst_rel {
            worst_rel = rel;
            worst_label = format!("seed {} (run {objective:.6}, dual {dual:.6})", SUITE_SEED + i as u64);
        }
        min_gap = min_gap.min(dual - objective).min(dual - num(&o, "primal_value"));
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        pass: within == files.len() && min_gap >= C1_GAP_FLOOR && secs < C1_SECONDS,
        detail: format!(
            "{within}/{} within {:.0}% of the oracle dual; worst {:.3}% at {worst_label}; min gap {min_gap:.3e}; {secs:.1} s",
            files.len(),
            C1_REL_TOL * 100.0,
            worst_rel * 100.0
        ),
    }
}

fn criterion_2(dir: &Path) -> Verdict {
    let files: Vec<String> = (0..TINY_SIZE).map(|i| gen(dir, TINY_SEED + i, 2, 2, false)).collect();
    let start = Instant::now();
    let mut within = 0;
    let mut worst = 0.0f64;
    for f in &files {
        let objective = num(&report(&bin(&["run", "--scenario", f])), "objective");
        let oracle = report(&bin(&["oracle", "--scenario", f, "--iters", "1", "--grid", C2_GRID_POINTS]));
        let best = num(&oracle["grid"], "best_value");
        let rel = (objective - best).abs() / best.abs();
        worst = worst.max(rel);
        if rel <= C2_REL_TOL {
            within += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        pass: within == files.len() && secs < C2_SECONDS,
        detail: format!(
            "{within}/{} within {:.0}% of the {C2_GRID_POINTS}-point grid; worst {:.3}%; {secs:.1} s",
            files.len(),
            C2_REL_TOL * 100.0,
            worst * 100.0
        ),
    }
}

fn criterion_3() -> Verdict {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
    let mut worst_rel = 0.0f64;
    let mut worst_budget = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let w = rng.random_range(0.5..2.0);
        let noise = rng.random_range(0.1..5.0);
        let profile = UserProfile {
            weight: w,
            budget: rng.random_range(1.0..5.0),
            links: (0..n)
                .map(|_| Link::new(rng.random_range(0.1..10.0), noise, 0.0, f64::INFINITY))
                .collect(),
        };
        for link in &profile.links {
            let lambda = rng.random_range(0.01..5.0);
            let q = per_tone_best_response(w, lambda, 0.0, link).expect("bounded").power;
            let expected = (w / lambda - link.noise / link.gain).max(0.0);
            let rel = if expected == 0.0 { q.abs() } else { (q - expected).abs() / expected };
            worst_rel = worst_rel.max(rel);
        }
        let (_, responses) = power_price_bisection(0, &profile, &vec![0.0; n]).expect("bisection");
        let spent: f64 = responses.iter().map(|r| r.power).sum();
        worst_budget = worst_budget.max((spent - profile.budget).abs() / profile.budget);
    }
    Verdict {
        pass: worst_rel <= C3_REL_TOL && worst_budget <= C3_BUDGET_TOL,
        detail: format!("worst water-filling error {worst_rel:.2e}; worst budget error {worst_budget:.2e} x P"),
    }
}

fn criterion_4(dir: &Path) -> Verdict {
    let files = suite(dir);
    let mut close = 0;
    let mut fewer = 0;
    let mut worst = 0.0f64;
    let (mut sum_reduced, mut sum_full) = (0u64, 0u64);
    for f in &files {
        let r = report(&bin(&["run", "--scenario", f, "--reduced"]));
        let full = report(&bin(&["run", "--scenario", f, "--full"]));
        let diff = r["final_prices"]
            .as_array()
            .unwrap()
            .iter()
            .zip(full["final_prices"].as_array().unwrap())
            .map(|(a, b)| (a.as_f64().unwrap() - b.as_f64().unwrap()).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
        if diff <= C4_PRICE_TOL {
            close += 1;
        }
        let (ur, uf) = (r["total_updates"].as_u64().unwrap(), full["total_updates"].as_u64().unwrap());
        sum_reduced += ur;
        sum_full += uf;
        if ur < uf {
            fewer += 1;
        }
    }
    let share = fewer as f64 / files.len() as f64;
    Verdict {
        pass: close == files.len() && share >= C4_FEWER_SHARE,
        detail: format!(
            "{close}/{} final prices within {C4_PRICE_TOL:e} (worst {worst:.2e}); reduced fewer updates on {fewer}/{} ({sum_reduced} vs {sum_full} total)",
            files.len(),
            files.len()
        ),
    }
}

fn feasible(doc: &Value, r: &Value) -> bool {
    let budgets = doc["power_budget"].as_array().unwrap();
    let owner = r["owner"].as_array().unwrap();
    r["power"].as_array().unwrap().iter().enumerate().all(|(k, row)| {
        let row: Vec<f64> = row.as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).collect();
        let owns = |n: usize| owner[n].as_u64() == Some(k as u64);
        let budget = budgets[k].as_f64().unwrap();
        row.iter().enumerate().all(|(n, &p)| p >= 0.0 && (p == 0.0 || owns(n)))
            && row.iter().sum::<f64>() <= budget * (1.0 + 1e-9)
    })
}

fn criterion_5(dir: &Path) -> Verdict {
    let mut total = 0;
    let mut converged = 0;
    let mut replayed = 0;
    let mut feasible_count = 0;
    let mut worst_rounds = 0;
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        for k in 2..=4 {
            for n in 1..=8 {
                let f = gen(dir, seed, k, n, true);
                let doc: Value = serde_json::from_str(&std::fs::read_to_string(&f).unwrap()).unwrap();
                let a = bin(&["run", "--scenario", &f, "--max-rounds", C5_MAX_ROUNDS]);
                let b = bin(&["run", "--scenario", &f, "--max-rounds", C5_MAX_ROUNDS]);
                total += 1;
                if a.status.code() == Some(0) {
                    converged += 1;
                } else if failures.len() < 3 {
                    failures.push(format!("seed {seed} K={k} N={n}"));
                }
                if a.stdout == b.stdout && a.status.code() == b.status.code() {
                    replayed += 1;
                }
                let r = report(&a);
                worst_rounds = worst_rounds.max(r["rounds"].as_u64().unwrap());
                if feasible(&doc, &r) {
                    feasible_count += 1;
                }
            }
        }
    }
    let mut detail = format!(
        "{converged}/{total} symmetric instances exit 0 (worst {worst_rounds} rounds); {feasible_count} feasible; {replayed} replay-identical"
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; unconverged: {}", failures.join(", ")));
    }
    Verdict {
        pass: converged == total && replayed == total && feasible_count == total,
        detail,
    }
}

fn random_link(rng: &mut Xoshiro256PlusPlus) -> Link {
    let cap = if rng.random_bool(0.5) {
        f64::INFINITY
    } else {
        rng.random_range(0.5..50.0)
    };
    Link::new(
        rng.random_range(0.05..20.0),
        rng.random_range(0.1..5.0),
        rng.random_range(0.0..0.5),
        cap,
    )
}

fn criterion_6() -> Verdict {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
    let mut worst_fd = 0.0f64;
    let mut checked = 0;
    while checked < C6_POINTS {
        let link = random_link(&mut rng);
        let q: f64 = rng.random_range(1e-3..20.0);
        if link.cap_power().is_some_and(|c| (q - c).abs() <= C6_KINK_DISTANCE) {
            continue;
        }
        let h = 1e-5 * q;
        let fd = (link.capped_rate(q + h).unwrap() - link.capped_rate(q - h).unwrap()) / (2.0 * h);
        let d = link.rate_derivative(q).unwrap();
        let err = if d == 0.0 { fd.abs() } else { (fd - d).abs() / d };
        worst_fd = worst_fd.max(err);
        checked += 1;
    }

    let mut worst_concavity = 0.0f64;
    for _ in 0..C6_POINTS {
        let link = random_link(&mut rng);
        let (q1, q2, t): (f64, f64, f64) = (rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), rng.random());
        let mid = link.capped_rate(t * q1 + (1.0 - t) * q2).unwrap();
        let chord = t * link.capped_rate(q1).unwrap() + (1.0 - t) * link.capped_rate(q2).unwrap();
        worst_concavity = worst_concavity.max(chord - mid);
    }
    Verdict {
        pass: worst_fd < C6_REL_TOL && worst_concavity <= C6_CONCAVITY_SLACK,
        detail: format!(
            "worst finite-difference error {worst_fd:.2e} over {C6_POINTS} points; worst concavity violation {worst_concavity:.2e} over {C6_POINTS} triples"
        ),
    }
}

fn traced_bytes(scenario: &str, trace: &Path, extra: &[&str]) -> (Vec<u8>, Vec<u8>) {
    let t = trace.display().to_string();
    let mut args = vec!["run", "--scenario", scenario, "--trace", &t];
    args.extend_from_slice(extra);
    let out = bin(&args);
    assert!(matches!(out.status.code(), Some(0 | 2)));
    let mut meta = trace.as_os_str().to_os_string();
    meta.push(".meta.json");
    (std::fs::read(trace).unwrap(), std::fs::read(PathBuf::from(meta)).unwrap())
}

fn criterion_7(dir: &Path) -> Verdict {
    let modes: [&[&str]; 3] = [
        &[],
        &["--async", "--delay", "2", "--seed", "7"],
        &["--async", "--delay", "1", "--drop", "0.3", "--seed", "11"],
    ];
    let mut total = 0;
    let mut identical = 0;
    for i in 0..5 {
        let (k, n) = suite_shape(i);
        let f = gen(dir, 7000 + i as u64, k, n, false);
        for (m, extra) in modes.iter().enumerate() {
            let a = traced_bytes(&f, &dir.join(format!("a{i}_{m}.csv")), extra);
            let b = traced_bytes(&f, &dir.join(format!("b{i}_{m}.csv")), extra);
            total += 1;
            if a == b {
                identical += 1;
            }
        }
    }
    Verdict {
        pass: identical == total,
        detail: format!("{identical}/{total} replays byte-identical (trace and sidecar; sync, delayed, and lossy)"),
    }
}

fn criterion_8(dir: &Path) -> Verdict {
    let out_path = dir.join("compare.csv");
    let count = SUITE_SIZE.to_string();
    let seed = SUITE_SEED.to_string();
    let out = bin(&["compare", "--suite", &count, "--suite-seed", &seed, "--out", out_path.to_str().unwrap()]);
    let code = out.status.code();
    let text = std::fs::read_to_string(&out_path).unwrap_or_default();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    let columns = TABLE_HEADER.split(',').count();
    let mut problems = Vec::new();
    if !matches!(code, Some(0 | 2)) {
        problems.push(format!("exit code {code:?}"));
    }
    if lines.first() != Some(&TABLE_HEADER) {
        problems.push("bad header".to_string());
    }
    let rows = lines.iter().skip(1).collect::<Vec<_>>();
    if rows.len() != SUITE_SIZE {
        problems.push(format!("{} rows", rows.len()));
    }
    let mut unmet = [0usize; 3];
    for row in &rows {
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != columns {
            problems.push(format!("row with {} cells", cells.len()));
            continue;
        }
        for (j, cell) in cells[3..6].iter().enumerate() {
            if *cell == "-" {
                unmet[j] += 1;
            } else if cell.parse::<usize>().is_err() {
                problems.push(format!("bad rounds cell {cell}"));
            }
        }
        if cells[6..].iter().any(|c| c.parse::<f64>().map_or(true, |x| !x.is_finite())) {
            problems.push(format!("bad numeric cell in {row}"));
        }
    }
    let pass = problems.is_empty();
    let detail = if pass {
        format!(
            "{} rows x {columns} columns; rounds-to-eps missing for reduced {}, full {}, central {}",
            rows.len(),
            unmet[0],
            unmet[1],
            unmet[2]
        )
    } else {
        problems.truncate(5);
        problems.join("; ")
    };
    Verdict { pass, detail }
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let d = dir.path();
    let criteria: [(&str, Box<dyn Fn() -> Verdict>); 8] = [
        ("oracle equivalence", Box::new(|| criterion_1(&d.join("c1")))),
        ("brute-force equivalence", Box::new(|| criterion_2(&d.join("c2")))),
        ("water-filling reduction", Box::new(criterion_3)),
        ("reduced vs full updates", Box::new(|| criterion_4(&d.join("c4")))),
        ("convergence under multiple optima", Box::new(|| criterion_5(&d.join("c5")))),
        ("numerical checks", Box::new(criterion_6)),
        ("determinism", Box::new(|| criterion_7(&d.join("c7")))),
        ("convergence-speed report", Box::new(|| criterion_8(&d.join("c8")))),
    ];
    for sub in ["c1", "c2", "c4", "c5", "c7", "c8"] {
        std::fs::create_dir_all(d.join(sub)).unwrap();
    }

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} criterion {} ({name}): {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
