//! Acceptance criteria P1-P7. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails or overruns its time limit.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabprompt::evaluator::pass_at_k;
use tabprompt::exec::{CannedOutput, ReplayExecutor, RunReply};
use tabprompt::inference::infer;
use tabprompt::postprocess::{cleanup, rewrite, RewriteForm};
use tabprompt::profiler::cluster_table;
use tabprompt::selector::{select_representative, SelectionConfig};
use tabprompt::table::{parse_table, Table, TableFormat};
use tabprompt::transport::{
    BatchPlanner, Choice, CompletionRequest, CompletionSource, InferenceConfig, ScriptedTransport,
    TransportError,
};
use tabprompt::validator::{cells_match, outputs_match, MatchOptions};

use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("demo")
}

fn p1_clustering_fidelity() -> Outcome {
    let bytes = std::fs::read(demo_dir().join("names.csv")).map_err(|e| e.to_string())?;
    let table = parse_table(&bytes, TableFormat::Csv).map_err(|e| e.to_string())?;
    let names = table.column("Names").ok_or("no Names column")?;
    for format in [
        "John Smith",
        "Jake L Woodhall",
        "Jo Anna Emily Gray",
        "Ash Kelsey-Poe",
    ] {
        ensure(names.cells.iter().any(|c| c == format), || {
            format!("missing {format}")
        })?;
    }
    let map = cluster_table(&table).map_err(|e| e.to_string())?;
    let clusters = map.columns()[0].clusters.len();
    ensure(clusters == 4, || format!("{clusters} clusters, expected 4"))?;
    let picked = select_representative(&table, &map, 4).map_err(|e| e.to_string())?;
    let ids: BTreeSet<usize> = picked
        .iter()
        .map(|r| map.row_clusters(r)[0].cluster_id)
        .collect();
    ensure(ids.len() == 4, || {
        format!("rows {:?} cover clusters {ids:?}", picked.indices())
    })?;
    Ok(format!(
        "4 clusters, rows {:?} hit one each",
        picked.indices()
    ))
}

fn p2_coverage_oracle() -> Outcome {
    let bound = 1.0 - (-1.0f64).exp();
    let mut instances = 0usize;
    let mut check = |labels: &Labels| -> Result<(), String> {
        let table = label_table(labels);
        let map = cluster_table(&table).map_err(|e| e.to_string())?;
        let optima = brute_force_optima(labels);
        for (n, &optimum) in optima.iter().enumerate().skip(1) {
            let got = select_representative(&table, &map, n).map_err(|e| e.to_string())?;
            let want = greedy_oracle(labels, n);
            ensure(got.indices() == want.as_slice(), || {
                format!(
                    "labels {labels:?} n={n}: greedy {:?}, oracle {want:?}",
                    got.indices()
                )
            })?;
            let achieved = covered_weight(labels, got.indices()) as f64;
            let optimum = optimum as f64;
            ensure(achieved >= bound * optimum, || {
                format!("labels {labels:?} n={n}: covered {achieved} < (1-1/e)*{optimum}")
            })?;
        }
        instances += 1;
        Ok(())
    };

    // exhaustive up to relabelling: <= 6 rows x <= 2 columns, <= 5 rows x 3 columns
    for rows in 1..=6 {
        let parts = partitions(rows, 4);
        for a in &parts {
            check(&vec![a.clone()])?;
            for b in &parts {
                check(&vec![a.clone(), b.clone()])?;
            }
        }
        if rows <= 5 {
            for a in &parts {
                for b in &parts {
                    for c in &parts {
                        check(&vec![a.clone(), b.clone(), c.clone()])?;
                    }
                }
            }
        }
    }
    // 6 rows x 3 columns, sampled
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let six = partitions(6, 4);
    for _ in 0..20_000 {
        let labels: Labels = (0..3)
            .map(|_| six[rng.random_range(0..six.len())].clone())
            .collect();
        check(&labels)?;
    }
    Ok(format!(
        "{instances} instances, every n: greedy == oracle, ratio >= 1-1/e"
    ))
}

fn p3_pass_at_k() -> Outcome {
    let closed = [
        (20, 0, 1, 0.0),
        (20, 0, 5, 0.0),
        (20, 10, 1, 0.5),
        (20, 10, 5, exact_pass_at_k(20, 10, 5)),
        (20, 20, 1, 1.0),
        (20, 20, 5, 1.0),
    ];
    for (m, s, k, want) in closed {
        let got = pass_at_k(m, s, k).map_err(|e| e.to_string())?;
        let tol = if want == 0.0 || want == 1.0 || want == 0.5 {
            0.0
        } else {
            1e-12
        };
        ensure((got - want).abs() <= tol, || {
            format!("pass@{k}(m={m}, s={s}) = {got}, want {want}")
        })?;
    }
    ensure((exact_pass_at_k(20, 10, 5) - 0.98374).abs() < 1e-5, || {
        "oracle disagrees with 0.98374".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = rng.random_range(1..=40);
        let s = rng.random_range(0..=m);
        let k = rng.random_range(1..=m);
        let estimate = pass_at_k(m, s, k).map_err(|e| e.to_string())?;
        let empirical = monte_carlo_pass_at_k(m, s, k, 100_000, &mut rng);
        let gap = (estimate - empirical).abs();
        worst = worst.max(gap);
        ensure(gap <= 0.01, || {
            format!("(m={m}, s={s}, k={k}): {estimate} vs {empirical}")
        })?;
    }
    Ok(format!(
        "closed forms exact; 50 Monte Carlo triples, max gap {worst:.4}"
    ))
}

/// Counts completions requested across all calls.
struct Counting {
    inner: ScriptedTransport,
    requested: AtomicUsize,
}

impl CompletionSource for Counting {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Choice>, TransportError> {
        self.requested.fetch_add(request.n, Ordering::SeqCst);
        self.inner.complete(request)
    }
    fn max_choices_per_request(&self) -> usize {
        self.inner.max_choices_per_request()
    }
    fn model_name(&self) -> &str {
        "counting"
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

fn p4_batch_sizing() -> Outcome {
    // worked examples, with p set directly
    let direct = [
        (3usize, 0.5f64, 10usize, 8usize, 6usize),
        (1, 1.0, 100, 10, 1),
        (5, 0.1, 4, 64, 4),
    ];
    for (r, p, b, l, want) in direct {
        let mut planner = BatchPlanner::new(b, r, 0.05);
        planner.validity_estimate = p;
        let got = planner.next_batch_size(l).map_err(|e| e.to_string())?;
        ensure(got == want, || {
            format!("r={r} p={p} B={b} L={l}: {got}, want {want}")
        })?;
    }
    // p from observed counts; oracle computes ceil(r * attempted / valid) in integers
    let observed: [(usize, usize, usize, usize, usize); 17] = [
        (3, 3, 7, 100, 100),
        (2, 1, 3, 100, 100),
        (4, 4, 4, 100, 100),
        (5, 2, 9, 100, 100),
        (7, 5, 11, 100, 100),
        (1, 1, 10, 100, 100),
        (6, 3, 7, 100, 5),
        (9, 1, 2, 12, 100),
        (10, 7, 10, 100, 100),
        (3, 2, 3, 100, 100),
        (8, 3, 10, 20, 100),
        (1, 9, 10, 100, 100),
        (12, 5, 12, 100, 30),
        (2, 1, 30, 100, 100), // ratio below the floor
        (3, 0, 40, 100, 100), // nothing valid yet: floor
        (4, 1, 4, 3, 100),
        (20, 13, 17, 1000, 1000),
    ];
    for (r, valid, attempted, b, l) in observed {
        let mut planner = BatchPlanner::new(b, r, 0.05);
        planner
            .update_estimate(valid, attempted)
            .map_err(|e| e.to_string())?;
        // p = max(1/20, valid/attempted)
        let wanted = if valid * 20 >= attempted {
            ceil_div(r * attempted, valid)
        } else {
            r * 20
        };
        let want = wanted.min(b).min(l);
        let got = planner.next_batch_size(l).map_err(|e| e.to_string())?;
        ensure(got == want, || {
            format!("r={r} p={valid}/{attempted} B={b} L={l}: {got}, want {want}")
        })?;
    }

    let table = Table::new([("a", ["1", "2", "3", "4"])]).unwrap();
    let canned: Vec<CannedOutput> = (0..60)
        .map(|i| CannedOutput {
            contains: format!("v{i} ="),
            reply: RunReply {
                status: "ok".into(),
                columns: Some(vec![(
                    "b".into(),
                    vec!["x".into(); if i % 3 == 0 { 3 } else { 4 }],
                )]),
                error: None,
            },
        })
        .collect();
    let executor = ReplayExecutor::new(canned);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for run in 0..100 {
        let k = rng.random_range(1..=6);
        let texts: Vec<String> = (0..rng.random_range(0..80))
            .map(|_| {
                let v = rng.random_range(0..70);
                match rng.random_range(0..4) {
                    0 => "\n# comment only".to_string(),
                    1 => format!("\nv{v} = df['a']\n"),
                    _ => format!("\nv{v} = df['a']"),
                }
            })
            .collect();
        let limit = rng.random_range(1..=5);
        let transport = Counting {
            inner: ScriptedTransport::from_texts(texts).with_per_request_limit(limit),
            requested: AtomicUsize::new(0),
        };
        let mut config = InferenceConfig::new(k);
        config.parallel_limit = rng.random_range(1..=25);
        let result = infer(
            "q",
            &table,
            &SelectionConfig::none(),
            &config,
            &transport,
            &executor,
        )
        .map_err(|e| e.to_string())?;
        let requested = transport.requested.load(Ordering::SeqCst);
        ensure(requested <= 8 * k && result.calls_used == requested, || {
            format!(
                "run {run}: k={k} requested {requested}, calls_used {}",
                result.calls_used
            )
        })?;
        let distinct: HashSet<&String> = result.completions.iter().collect();
        ensure(
            result.completions.len() <= k && distinct.len() == result.completions.len(),
            || format!("run {run}: accepted {:?}", result.completions),
        )?;
    }
    Ok("20 sizing cases exact; 100 mock runs within 8k".into())
}

fn p5_cleanup_rewrite() -> Outcome {
    let rules = [
        (
            "entities",
            "df['a'] &lt;= 3 &amp;&amp; &quot;x&quot; &gt; &#39;y&#39;",
            "df['a'] <= 3 && \"x\" > 'y'",
        ),
        (
            "comment-only lines",
            "# say\nx = 1\n    # indented note\ny = 2",
            "x = 1\ny = 2",
        ),
        ("blank lines", "\n\nx = 1\n\n\ny = 2\n\n", "x = 1\ny = 2"),
        (
            "trailing whitespace",
            "x = 1   \nif x:\t\n    y = 2 ",
            "x = 1\nif x:\n    y = 2",
        ),
        ("truncation", "x = 1\n#next post\ny = 2", "x = 1"),
    ];
    for (rule, input, want) in rules {
        let got = cleanup(input);
        ensure(got == want, || format!("{rule}: {got:?}, want {want:?}"))?;
    }

    let pre = "df = pd.DataFrame()\ndf['a'] = ['1']";
    let forms = [
        (
            "result = df['a'].str.lower()",
            RewriteForm::Assign,
            "var_out = result",
        ),
        (
            "df['b'] = df['a'] + 'x'",
            RewriteForm::IndexedAssign,
            "var_out = df",
        ),
        (
            "print(df['a'] + df['b'])",
            RewriteForm::Print,
            "var_out = df['a'] + df['b']",
        ),
        (
            "df['a'].str.upper()",
            RewriteForm::BareExpr,
            "var_out = df['a'].str.upper()",
        ),
    ];
    for (code, form, last) in forms {
        let c = rewrite(code, pre);
        let program = c.program.ok_or_else(|| format!("{code}: no program"))?;
        ensure(
            c.rewrite_form == form && program.lines().last() == Some(last),
            || {
                format!(
                    "{code}: {:?} ending {:?}",
                    c.rewrite_form,
                    program.lines().last()
                )
            },
        )?;
        ensure(
            program.starts_with("import pandas as pd\nimport numpy as np\n"),
            || format!("{code}: imports missing"),
        )?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pieces = [
        "x = 1", "#", "# c", "\n", "\n\n", " ", "\t", "&lt;", "&amp;", "&amp;lt;", "&quot;",
        "&#39;", "&gt;", "'", "\"", "print(", ")", "df['a']", "    ", "\\", "&", ";", "\r", "=",
    ];
    for _ in 0..1000 {
        let s: String = (0..rng.random_range(0..25))
            .map(|_| {
                if rng.random_bool(0.2) {
                    char::from(rng.random_range(0x20u8..0x7f)).to_string()
                } else {
                    pieces[rng.random_range(0..pieces.len())].to_string()
                }
            })
            .collect();
        let once = cleanup(&s);
        ensure(cleanup(&once) == once, || {
            format!("not idempotent on {s:?}")
        })?;
    }
    Ok("5 cleanup rules, 4 rewrite forms, idempotent on 1000 strings".into())
}

fn table(cols: &[(&str, &[&str])]) -> Table {
    Table::new(cols.iter().map(|(n, c)| (*n, c.to_vec()))).unwrap()
}

fn p6_validation() -> Outcome {
    let opts = MatchOptions::default();
    let matched = |e: &Table, a: &Table, o: &MatchOptions| {
        outputs_match(e, a, o).map(|r| r.matched).unwrap_or(false)
    };
    let expected = table(&[("username", &["jsmith", "mjones"])]);
    let bullets: [(&str, bool); 9] = [
        (
            "extra columns",
            matched(
                &expected,
                &table(&[
                    ("Names", &["John Smith", "Mary Jones"]),
                    ("username", &["jsmith", "mjones"]),
                ]),
                &opts,
            ),
        ),
        (
            "column order",
            matched(
                &table(&[("x", &["1"]), ("y", &["a"])]),
                &table(&[("y", &["a"]), ("x", &["1"])]),
                &opts,
            ),
        ),
        (
            "headers",
            matched(
                &expected,
                &table(&[("new_col", &["jsmith", "mjones"])]),
                &opts,
            ),
        ),
        ("5.05 vs 5 fails", !cells_match("5", "5.05", &opts)),
        ("5.049 vs 5 passes", cells_match("5", "5.049", &opts)),
        (
            "string-parsed numbers",
            cells_match("3", "3.000", &opts) && cells_match("1e3", " 1000.0 ", &opts),
        ),
        (
            "boolean 0/1",
            cells_match("True", "1", &opts)
                && cells_match("false", "0", &opts)
                && !cells_match("true", "0", &opts),
        ),
        (
            "truth strings",
            cells_match("yes", "TRUE", &opts) && cells_match("n", "False", &opts),
        ),
        (
            "case",
            cells_match("JSmith", "jsmith", &opts)
                && !cells_match(
                    "JSmith",
                    "jsmith",
                    &MatchOptions {
                        case_sensitive: true,
                        ..opts.clone()
                    },
                ),
        ),
    ];
    for (bullet, ok) in bullets {
        ensure(ok, || format!("{bullet} rule"))?;
    }

    let alphabet = ["1", "1.0", "2", "a", "A", "true", "0", "b"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut positives = 0;
    for case in 0..200 {
        let rows = rng.random_range(1..=5);
        let cell = |rng: &mut ChaCha8Rng| alphabet[rng.random_range(0..alphabet.len())].to_string();
        let e_cols: Vec<Vec<String>> = (0..rng.random_range(1..=4))
            .map(|_| (0..rows).map(|_| cell(&mut rng)).collect())
            .collect();
        let mut a_cols: Vec<Vec<String>> = Vec::new();
        for _ in 0..rng.random_range(1..=4) {
            let col = if rng.random_bool(0.6) {
                let mut c = e_cols[rng.random_range(0..e_cols.len())].clone();
                if rng.random_bool(0.3) {
                    let r = rng.random_range(0..rows);
                    c[r] = cell(&mut rng);
                }
                c
            } else {
                (0..rows).map(|_| cell(&mut rng)).collect()
            };
            a_cols.push(col);
        }
        let e = Table::new(
            e_cols
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("e{i}"), c.clone())),
        )
        .unwrap();
        let a = Table::new(
            a_cols
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("a{i}"), c.clone())),
        )
        .unwrap();
        let result = outputs_match(&e, &a, &opts).map_err(|err| err.to_string())?;
        let valid = valid_mappings(&e, &a, &opts);
        ensure(result.matched == !valid.is_empty(), || {
            format!(
                "case {case}: matched={} but oracle found {} mappings",
                result.matched,
                valid.len()
            )
        })?;
        if let Some(mapping) = result.column_mapping {
            positives += 1;
            let as_indices: Vec<usize> = mapping
                .iter()
                .map(|(_, actual)| actual[1..].parse::<usize>().unwrap())
                .collect();
            ensure(valid.contains(&as_indices), || {
                format!("case {case}: mapping {as_indices:?} not valid")
            })?;
        }
    }
    Ok(format!(
        "9 rule checks; 200 generated cases agree with the oracle ({positives} matches)"
    ))
}

fn p7_offline_end_to_end() -> Outcome {
    let run = || -> Result<Vec<u8>, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_tabprompt"))
            .args(["eval", "--suite"])
            .arg(demo_dir().join("suite"))
            .args([
                "--strategy",
                "representative",
                "--n",
                "5",
                "--k",
                "1,5",
                "--transport",
                "mock",
                "--mock-script",
            ])
            .arg(demo_dir().join("replay.json"))
            .env("TABPROMPT_RUNNER", "/nonexistent/runner")
            .env_remove("TABPROMPT_ENDPOINT")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            String::from_utf8_lossy(&out.stderr).into_owned()
        })?;
        Ok(out.stdout)
    };
    let first = run()?;
    let second = run()?;
    ensure(first == second, || "reports differ between runs".into())?;

    let report: serde_json::Value = serde_json::from_slice(&first).map_err(|e| e.to_string())?;
    // (task, m, s) traced by hand from the replay script
    let traced = [
        ("capital_city", 4, 1),
        ("city_upper", 10, 10),
        ("timestamp_diff", 10, 0),
        ("username", 20, 10),
    ];
    let per_task = |m: usize, s: usize| {
        [1usize, 5].map(|k| {
            if m == 0 {
                0.0
            } else {
                exact_pass_at_k(m, s, k.min(m))
            }
        })
    };
    let tasks = report["tasks"].as_array().ok_or("no tasks")?;
    ensure(tasks.len() == traced.len(), || {
        format!("{} tasks", tasks.len())
    })?;
    let mut by_class: std::collections::BTreeMap<&str, Vec<[f64; 2]>> = Default::default();
    for ((id, m, s), t) in traced.iter().zip(tasks) {
        ensure(t["task_id"] == *id && t["m"] == *m && t["s"] == *s, || {
            format!("task {t}")
        })?;
        let want = per_task(*m, *s);
        for (i, w) in want.iter().enumerate() {
            let got = t["pass_at_k"][i]["value"].as_f64().unwrap();
            ensure((got - w).abs() < 1e-12, || {
                format!("{id} pass@{}: {got} vs {w}", [1, 5][i])
            })?;
        }
        let class = t["class"].as_str().unwrap();
        by_class.entry(class).or_default().push(want);
        by_class.entry("all").or_default().push(want);
    }
    for g in report["summary"].as_array().ok_or("no summary")? {
        let group = g["group"].as_str().unwrap();
        let members = &by_class[group];
        for i in 0..2 {
            let want = members.iter().map(|v| v[i]).sum::<f64>() / members.len() as f64;
            let got = g["pass_at_k"][i]["value"].as_f64().unwrap();
            ensure((got - want).abs() < 1e-12, || {
                format!("{group} pass@{}: {got} vs {want}", [1, 5][i])
            })?;
        }
    }
    let all = &report["summary"].as_array().unwrap().last().unwrap()["pass_at_k"];
    Ok(format!(
        "byte-identical; overall pass@1 {:.4}, pass@5 {:.4}",
        all[0]["value"].as_f64().unwrap(),
        all[1]["value"].as_f64().unwrap()
    ))
}

type Criterion = (&'static str, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        (
            "P1",
            "clustering fidelity",
            Duration::from_secs(1),
            p1_clustering_fidelity,
        ),
        (
            "P2",
            "coverage oracle",
            Duration::from_secs(30),
            p2_coverage_oracle,
        ),
        (
            "P3",
            "pass@k estimator",
            Duration::from_secs(30),
            p3_pass_at_k,
        ),
        (
            "P4",
            "batch sizing",
            Duration::from_secs(10),
            p4_batch_sizing,
        ),
        (
            "P5",
            "cleanup and rewrite",
            Duration::from_secs(10),
            p5_cleanup_rewrite,
        ),
        (
            "P6",
            "validation matching",
            Duration::from_secs(30),
            p6_validation,
        ),
        (
            "P7",
            "offline end-to-end",
            Duration::from_secs(10),
            p7_offline_end_to_end,
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| id.contains(f.as_str()) || name.contains(f.as_str()))
        {
            continue;
        }
        let started = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = started.elapsed();
        let (verdict, detail) = match outcome {
            Ok(_) if elapsed > limit => ("FAIL", format!("over the {} s limit", limit.as_secs())),
            Ok(d) => ("PASS", d),
            Err(e) => ("FAIL", e),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!(
            "{id} {name:<22} {verdict}  {:>6.2} s / {:>2} s  {detail}",
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
