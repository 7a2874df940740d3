//! Exit criteria. Runs every check, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::cell::OnceCell;
use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use mvsim_core::domain::{AttributeModel, Capacity, CurveMode, VersionId, VersionScheme};
use mvsim_core::metrics::{confidence_interval, objectives, quantile, ConfidenceInterval, Sample};
use mvsim_core::policies::{build_agent, EpsilonSchedule, PolicyParams, PolicyState};
use mvsim_core::report::{summarize, write_run, write_summary, RunDigest};
use mvsim_core::simulator::record::{read_learn_entries, write_policy_log};
use mvsim_core::{run, AppClass, Horizon, PolicyKind, RunOptions, RunOutput, Scenario};

type Outcome = Result<String, String>;

fn preset() -> Scenario {
    Scenario::preset("oran-edge").expect("bundled preset")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn capacity_invariant() -> Outcome {
    let sc = preset();
    assert_eq!(sc.horizon, Horizon::Events(1_000_000));
    let mut parts = Vec::new();
    let mut ok = true;
    for p in PolicyKind::ALL {
        let t = Instant::now();
        let out = run(
            &sc,
            p,
            1,
            RunOptions {
                audit: true,
                ..Default::default()
            },
        )
        .unwrap();
        let s = &out.stats;
        ok &= s.violations == 0 && s.events == 1_000_000;
        parts.push(format!("{p}: {} violations in {:.1}s", s.violations, t.elapsed().as_secs_f64()));
        if let Some(v) = &s.first_violation {
            parts.push(format!("first: {v}"));
        }
    }
    check(ok, parts.join(", "))
}

const MM1: &str = r#"
[run]
seeds = [1]
horizon_events = 460000
policies = ["never"]

[versions]
max_index = 1

[scaling]
enabled = false

[[nodes]]
name = "server"
layer = "edge"
cpu = "unlimited"
ram_gb = "unlimited"
disk_gb = "unlimited"

[[models]]
name = "single-queue"
app_class = "xapp"
mean_interarrival_ms = 350.0
spawn_time_ms = 0.0
cpu = 1
ram_gb = 1.0
disk_gb = 0.0
service_time_ms = [200.0, 200.0]
accuracy = [0.9, 0.9]
stability = [1.0, 1.0]
processing_delay_ms = 0.0
"#;

fn mm1_sojourn() -> Outcome {
    let sc = Scenario::from_toml(MM1).unwrap();
    let out = run(&sc, PolicyKind::Never, 1, RunOptions::default()).unwrap();
    let n = out.records.len();
    let mean = out.records.iter().map(|r| r.total).sum::<f64>() / n as f64;
    let expect = 1.0 / (1.0 / 200.0 - 1.0 / 350.0);
    let rel = (mean - expect).abs() / expect;
    check(
        n >= 200_000 && rel <= 0.05,
        format!("mean sojourn {mean:.2} ms vs {expect:.2} ms ({:.2}% off) over {n} requests", rel * 100.0),
    )
}

fn never_update_exact() -> Outcome {
    let sc = preset();
    let out = run(&sc, PolicyKind::Never, 1, RunOptions::default()).unwrap();
    let all_zero = out.records.iter().all(|r| r.served_version == VersionId::ZERO);
    let samples: Vec<Sample> = out.records.iter().map(Sample::from).collect();
    let o3 = objectives(&samples).unwrap().overall.stability;
    check(
        all_zero && o3 == 1.0 && out.stats.updates == 0,
        format!("O3 = {o3}, all served versions 0: {all_zero}, {} records", out.records.len()),
    )
}

struct Grid {
    runs: Vec<(PolicyKind, u64, Vec<Sample>)>,
}

impl Grid {
    fn dapp(&self, p: PolicyKind) -> impl Iterator<Item = &Vec<Sample>> {
        self.runs.iter().filter(move |r| r.0 == p).map(|r| &r.2)
    }

    fn ci(&self, p: PolicyKind, f: fn(&mvsim_core::metrics::Objectives) -> f64) -> ConfidenceInterval {
        let means: Vec<f64> = self.dapp(p).map(|s| f(&objectives(s).unwrap().overall)).collect();
        confidence_interval(&means, 0.98).unwrap()
    }

    fn median_delay(&self, p: PolicyKind) -> f64 {
        let mut d: Vec<f64> = self.dapp(p).flat_map(|s| s.iter().map(|x| x.total_delay_ms)).collect();
        d.sort_by(f64::total_cmp);
        quantile(&d, 0.5)
    }
}

fn preset_grid() -> Grid {
    let sc = preset();
    assert!(sc.seeds.len() >= 10);
    let mut runs = Vec::new();
    for p in PolicyKind::ALL {
        for &seed in &sc.seeds {
            let out = run(&sc, p, seed, RunOptions::default()).unwrap();
            let dapp: Vec<Sample> = out
                .records
                .iter()
                .filter(|r| r.app_class == AppClass::DApp)
                .map(Sample::from)
                .collect();
            runs.push((p, seed, dapp));
        }
    }
    Grid { runs }
}

fn above(name: &str, a: (&str, ConfidenceInterval), b: (&str, ConfidenceInterval)) -> (bool, String) {
    let ok = a.1.mean > b.1.mean && a.1.disjoint(&b.1);
    let line = format!(
        "{name}({}) {:.5}±{:.5} > {name}({}) {:.5}±{:.5}: {}",
        a.0,
        a.1.mean,
        a.1.half_width,
        b.0,
        b.1.mean,
        b.1.half_width,
        if ok { "yes" } else { "no" }
    );
    (ok, line)
}

fn policy_ordering(g: &Grid) -> Outcome {
    use PolicyKind::*;
    let acc = |p: PolicyKind| (p.as_str(), g.ci(p, |o| o.accuracy));
    let stab = |p: PolicyKind| (p.as_str(), g.ci(p, |o| o.stability));
    let checks = [
        above("O2", acc(Always), acc(LoadBased)),
        above("O2", acc(Always), acc(Random)),
        above("O2", acc(LoadBased), acc(Never)),
        above("O2", acc(Random), acc(Never)),
        above("O3", stab(Never), stab(Rl)),
        above("O3", stab(Rl), stab(Always)),
    ];
    let ok = checks.iter().all(|c| c.0);
    check(ok, checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join("; "))
}

fn delay_ordering(g: &Grid) -> Outcome {
    let always = g.median_delay(PolicyKind::Always);
    let never = g.median_delay(PolicyKind::Never);
    // within a factor 2 of a 10 to 12 ms band
    let soft = (5.0..=24.0).contains(&never);
    check(
        always <= never && soft,
        format!("dApp median always {always:.3} ms <= never {never:.3} ms; never within [5, 24] ms: {soft}"),
    )
}

fn epsilon_schedule() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for total in [10_000u64, 1_000_000] {
        let params = PolicyParams::default();
        let mut agent = build_agent(PolicyKind::Rl, &params, 1, 6, total, None);
        let mut prev = agent.epsilon().unwrap();
        ok &= prev == 1.0;
        for _ in 0..total / 2 {
            agent.on_event();
            let e = agent.epsilon().unwrap();
            ok &= e <= prev;
            prev = e;
        }
        let half = prev;
        ok &= (half - 0.001).abs() <= 1e-6;
        let mut after_exact = true;
        for _ in 0..total / 2 {
            agent.on_event();
            after_exact &= agent.epsilon().unwrap() == 0.001;
        }
        ok &= after_exact;
        let d = EpsilonSchedule::new(1.0, 0.001, total).decay;
        lines.push(format!("total {total}: decay {d}, eps at half {half:e}, exactly 0.001 after: {after_exact}"));
    }
    let mut sc = preset();
    sc.horizon = Horizon::Events(40_000);
    let out = run(&sc, PolicyKind::Rl, 1, RunOptions::default()).unwrap();
    let end = out.stats.final_epsilon.unwrap();
    ok &= end == 0.001;
    lines.push(format!("engine run ends at {end}"));
    check(ok, lines.join("; "))
}

fn reward_and_q_replay() -> Outcome {
    let mut sc = preset();
    sc.horizon = Horizon::Events(100_000);
    let cfg = sc.params.rl.clone();
    let out = run(
        &sc,
        PolicyKind::Rl,
        4,
        RunOptions {
            policy_log: true,
            ..Default::default()
        },
    )
    .unwrap();
    let mut buf = Vec::new();
    write_policy_log(&mut buf, &out.policy_log, &sc.model_names()).unwrap();
    let entries = read_learn_entries(buf.as_slice()).unwrap();

    let w = cfg.reward;
    let mut table: HashMap<(PolicyState, bool), f64> = HashMap::new();
    let q = |t: &HashMap<(PolicyState, bool), f64>, s: PolicyState, a: bool| *t.get(&(s, a)).unwrap_or(&0.0);
    let mut mismatches = 0usize;
    let mut first = None;
    for (i, e) in entries.iter().enumerate() {
        let psi = e.inputs.total_delay_ms / e.inputs.delay_budget_ms;
        let sigma = 1.0 - e.inputs.stability;
        let r = -(1.0 - w.alpha) * (w.w1 * psi + w.w2 * sigma) + w.alpha * w.w3 * e.inputs.accuracy;
        let before = q(&table, e.state, e.update);
        let next_max = if e.next_state.gap_bin == 0 {
            q(&table, e.next_state, false)
        } else {
            q(&table, e.next_state, false).max(q(&table, e.next_state, true))
        };
        let after = before + cfg.learning_rate * (r + cfg.discount * next_max - before);
        let same = r.to_bits() == e.reward.to_bits()
            && before.to_bits() == e.q_before.to_bits()
            && next_max.to_bits() == e.q_next_max.to_bits()
            && after.to_bits() == e.q_after.to_bits();
        if !same {
            mismatches += 1;
            first.get_or_insert(i);
        }
        table.insert((e.state, e.update), after);
    }
    check(
        entries.len() >= 10_000 && mismatches == 0,
        format!("{} logged updates replayed, {mismatches} mismatches (first at {first:?})", entries.len()),
    )
}

fn greedy_at_accuracy_only() -> Outcome {
    let mut sc = preset();
    sc.params.rl.reward.alpha = 1.0;
    for n in sc.nodes.iter_mut() {
        n.capacity = Capacity::UNLIMITED;
    }
    let out = run(&sc, PolicyKind::Rl, 1, RunOptions::default()).unwrap();
    assert_eq!(out.stats.update_placement_failures, 0);
    let table = out.q_table.unwrap();
    let states = table.visited_decision_states();
    let holding: Vec<PolicyState> = states.iter().copied().filter(|s| !table.greedy(s)).collect();
    let mut detail = format!("{} of {} visited decision states hold", holding.len(), states.len());
    if let Some(s) = holding.first() {
        detail += &format!(
            "; e.g. model {} gap bin {}: Q(update) {:.4} over {} visits, Q(hold) {:.4} over {} visits",
            s.model,
            s.gap_bin,
            table.get(s, true),
            table.visits(s, true),
            table.get(s, false),
            table.visits(s, false)
        );
    }
    check(!states.is_empty() && holding.is_empty(), detail)
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let mut sc = preset();
    sc.horizon = Horizon::Events(30_000);
    let produce = |dir: &Path| {
        let mut digests = Vec::new();
        for p in PolicyKind::ALL {
            for seed in [1, 2] {
                let out: RunOutput = run(
                    &sc,
                    p,
                    seed,
                    RunOptions {
                        policy_log: true,
                        ..Default::default()
                    },
                )
                .unwrap();
                write_run(dir, &sc, &out).unwrap();
                digests.push(RunDigest::from_output(&out, sc.models.len()).unwrap());
            }
        }
        write_summary(dir, &summarize(&digests, &sc.models)).unwrap();
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    produce(a.path());
    produce(b.path());
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    let bytes: usize = ta.iter().map(|f| f.1.len()).sum();
    check(
        ta == tb && ta.len() == 10 * 3 + 2 + 2,
        format!("{} files, {bytes} bytes, identical: {}", ta.len(), ta == tb),
    )
}

fn attribute_endpoints() -> Outcome {
    // name, service time, accuracy, stability: first and last release
    type Row = (&'static str, [f64; 2], [f64; 2], [f64; 2]);
    let table: [Row; 6] = [
        ("ML-d1", [2.0, 0.5], [0.7, 1.0], [1.0, 0.7]),
        ("ML-d2", [4.0, 0.8], [0.7, 1.0], [1.0, 0.7]),
        ("ML-x1", [200.0, 100.0], [0.75, 1.0], [1.0, 0.7]),
        ("ML-x2", [300.0, 200.0], [0.75, 1.0], [1.0, 0.7]),
        ("ML-r1", [1000.0, 900.0], [0.8, 1.0], [1.0, 0.7]),
        ("ML-r2", [2000.0, 1800.0], [0.8, 1.0], [1.0, 0.7]),
    ];
    let sc = preset();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let geo = AttributeModel::new(VersionScheme::default(), CurveMode::Geometric);
    let pct = AttributeModel::new(VersionScheme::default(), CurveMode::PercentStep);
    let mut worst: f64 = 0.0;
    let mut outside = 0usize;
    for (name, svc, acc, stab) in table {
        let m = sc.models.iter().find(|m| m.name == name).unwrap();
        for (i, v) in [(0, 0u32), (1, 2000)] {
            let a = geo.attributes_of(m, VersionId(v)).unwrap();
            worst = worst
                .max(rel(a.mean_service_time_ms, svc[i]))
                .max(rel(a.accuracy, acc[i]))
                .max(rel(a.stability, stab[i]));
        }
        let inside = |x: f64, r: [f64; 2]| x >= r[0].min(r[1]) && x <= r[0].max(r[1]);
        for v in 0..=2000 {
            let a = pct.attributes_of(m, VersionId(v)).unwrap();
            if !(inside(a.mean_service_time_ms, svc) && inside(a.accuracy, acc) && inside(a.stability, stab)) {
                outside += 1;
            }
        }
    }
    check(
        worst <= 1e-9 && outside == 0,
        format!("worst relative endpoint error {worst:e}; percent-step values outside ranges: {outside}"),
    )
}

fn main() {
    // keep panics from tearing through the report
    panic::set_hook(Box::new(|info| eprintln!("{info}")));
    let grid: OnceCell<Grid> = OnceCell::new();
    let mut failed = 0;
    let criteria: [(&str, &mut dyn FnMut() -> Outcome); 10] = [
        ("capacity invariant over 1e6 events, every policy", &mut capacity_invariant),
        ("M/M/1 mean sojourn within 5%", &mut mm1_sojourn),
        ("never-update stability and versions exact", &mut never_update_exact),
        ("policy ordering with disjoint 98% intervals", &mut || {
            policy_ordering(grid.get_or_init(preset_grid))
        }),
        ("dApp delay ordering and band", &mut || delay_ordering(grid.get_or_init(preset_grid))),
        ("exploration schedule", &mut epsilon_schedule),
        ("reward and Q updates reproduce from the log", &mut reward_and_q_replay),
        ("accuracy-only reward gives an always-update greedy policy", &mut greedy_at_accuracy_only),
        ("byte-identical reruns", &mut determinism),
        ("attribute curve endpoints and ranges", &mut attribute_endpoints),
    ];
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS  {name} [{secs:.1}s]: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} [{secs:.1}s]: {d}", i + 1);
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
