//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shinka_core::archive::PatchType;
use shinka_core::bandit::transform_reward;
use shinka_core::config::{ConfigOverrides, RunConfig, PRESET_NAMES};
use shinka_core::journal::{read_journal, Event, EventRecord};
use shinka_core::mutation::blocks::parse_blocks;
use shinka_core::mutation::patch::{apply_patch, PatchPayload, PatchProposal, SearchReplace};
use shinka_core::novelty::NoveltyDecision;
use shinka_core::runner::{run, RunOptions};
use shinka_core::sampling::{power_law_probs, sample_index, sigmoid, weighted_probs, weighted_weights};
use shinka_core::scheduler::{collect, EvalFailure, EvaluationJob, EvaluationResult, FailureKind, JobRunner};
use shinka_core::tasks::{packing, synthetic};

type Verdict = Result<String, String>;

const TARGET: [f64; 3] = [0.2, -0.1, 0.2];

fn check(cond: bool, message: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message.into())
    }
}

fn shinka(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shinka"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("shinka runs")
}

fn shinka_ok(cwd: &Path, args: &[&str]) -> Result<Output, String> {
    let out = shinka(cwd, args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`shinka {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn journal(run_dir: &Path) -> Vec<EventRecord> {
    read_journal(&run_dir.join("journal.jsonl")).expect("journal parses")
}

fn trajectory(run_dir: &Path) -> Vec<f64> {
    read(&run_dir.join("trajectory.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

fn monotone(series: &[f64]) -> bool {
    series.windows(2).all(|w| w[0] <= w[1])
}

/// Synthetic-task config evaluated by `shinka task-eval synthetic`.
fn synthetic_toml(models: &[(&str, &str)], generations: u64, seed: u64, evolution_extra: &str) -> String {
    let target: Vec<String> = TARGET.iter().map(|x| format!("{x:?}")).collect();
    let names: Vec<String> = models.iter().map(|(n, _)| format!("{n:?}")).collect();
    let mut text = format!(
        "seed = {seed}\n\n\
         [evolution]\nnum_generations = {generations}\nembedding_model = \"embed\"\n{evolution_extra}\n\n\
         [models]\nllm_models = [{}]\nnovelty_judge_model = \"judge\"\n\n\
         [models.providers.embed]\nkind = \"hashed_ngram\"\ndim = 64\nn = 3\n\n\
         [models.providers.judge]\nkind = \"duplicate_judge\"\n\n\
         [evaluation]\ncommand = [{:?}, \"task-eval\", \"synthetic\", \"--target\", \"{}\"]\ntimeout_secs = 30\n",
        names.join(", "),
        env!("CARGO_BIN_EXE_shinka"),
        target.join(",")
    );
    for (name, body) in models {
        text.push_str(&format!("\n[models.providers.{name}]\n{body}\n"));
    }
    text
}

fn scripted(q: f64) -> String {
    let target: Vec<String> = TARGET.iter().map(|x| format!("{x:?}")).collect();
    format!("kind = \"scripted_vector\"\ntarget = [{}]\nq = {q}\nstep = 0.1", target.join(", "))
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("config.toml"), config).unwrap();
        fs::write(dir.path().join("init.py"), synthetic::initial_program(3)).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run_dir(&self, name: &str) -> PathBuf {
        self.path().join(name)
    }

    fn start(&self, name: &str, extra: &[&str]) -> Result<PathBuf, String> {
        let mut args = vec!["run", "--config", "config.toml", "--init", "init.py", "--run-dir", name];
        args.extend_from_slice(extra);
        shinka_ok(self.path(), &args)?;
        Ok(self.run_dir(name))
    }

    fn ablate(&self, preset: &str, name: &str, extra: &[&str]) -> Result<PathBuf, String> {
        let mut args = vec!["ablate", "--preset", preset, "--config", "config.toml", "--init", "init.py", "--run-dir", name];
        args.extend_from_slice(extra);
        shinka_ok(self.path(), &args)?;
        Ok(self.run_dir(name))
    }
}

fn criterion_1() -> Verdict {
    let started = Instant::now();
    let p = power_law_probs(&[3.0, 2.0, 1.0], 1.0).map_err(|e| e.to_string())?;
    let want = [6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0];
    let err = p.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(err <= 1e-12, format!("power law error {err:e}"))?;
    let flat = power_law_probs(&[3.0, 2.0, 1.0], 0.0).map_err(|e| e.to_string())?;
    check(flat.iter().all(|x| (x - 1.0 / 3.0).abs() <= 1e-15), format!("alpha 0 gives {flat:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = [0usize; 3];
    for _ in 0..20_000 {
        counts[sample_index(&p, &mut rng)] += 1;
    }
    let dev = counts
        .iter()
        .zip(want)
        .map(|(&c, w)| (c as f64 / 20_000.0 - w).abs())
        .fold(0.0, f64::max);
    check(dev <= 0.02, format!("empirical deviation {dev}"))?;
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("max analytic error {err:.1e}, 20k-draw deviation {dev:.4}, {elapsed:.2?}"))
}

fn criterion_2() -> Verdict {
    let fitness = [0.4, 1.0, 2.5, 0.9];
    let mut last = f64::INFINITY;
    for n in 0..50 {
        let p = weighted_probs(&fitness, &[n, 3, 1, 0], 10.0).map_err(|e| e.to_string())?[0];
        check(p < last, format!("p did not decrease at N={n}: {p} >= {last}"))?;
        last = p;
    }
    check(sigmoid(0.0) == 0.5, "sigmoid(0) != 0.5")?;
    // odd count: the median member sits exactly at the anchor
    let w = weighted_weights(&[1.0, 2.0, 7.0], &[0, 0, 0], 10.0).map_err(|e| e.to_string())?;
    check(w[1] == 0.5, format!("median member weight {}", w[1]))?;
    // even count: anchor is the mean of the two middle values
    let w = weighted_weights(&[1.0, 2.0, 4.0, 5.0, 3.0], &[0, 0, 0, 0, 0], 3.0).map_err(|e| e.to_string())?;
    check(w[4] == 0.5, format!("anchored member weight {}", w[4]))?;
    Ok("strictly decreasing over N = 0..49; sigmoid anchor exactly 0.5".into())
}

fn criterion_3() -> Verdict {
    check(transform_reward(1.0, 1.5, 0.2) == 0.0, "below parent not zero")?;
    check(transform_reward(1.0, 0.2, 1.0) == 0.0, "equal to seed not zero")?;
    let base = 0.75;
    let r = transform_reward(base + std::f64::consts::LN_2, base, 0.1);
    check((r - 1.0).abs() <= 1e-12, format!("ln 2 gap gives {r}"))?;

    let started = Instant::now();
    let ws = Workspace::new(&synthetic_toml(
        &[("improving", &scripted(0.3)), ("stuck", &scripted(0.0))],
        200,
        42,
        "",
    ));
    let dir = ws.start("bandit", &[])?;
    let picks: Vec<String> = journal(&dir)
        .into_iter()
        .filter_map(|r| match r.event {
            Event::Proposal(p) => Some(p.model),
            _ => None,
        })
        .collect();
    let share = picks.iter().filter(|m| *m == "improving").count() as f64 / picks.len() as f64;
    let elapsed = started.elapsed();
    check(picks.len() == 200, format!("{} proposals", picks.len()))?;
    check(share > 0.6, format!("improving arm share {share:.3}"))?;
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("transform exact; improving arm share {share:.3} over 200 generations, {elapsed:.2?}"))
}

/// Splits on marker lines without the library parser.
fn immutable_parts(code: &str) -> Vec<String> {
    let mut parts = vec![String::new()];
    let mut inside = false;
    for line in code.split_inclusive('\n') {
        let t = line.trim();
        if t.ends_with("EVOLVE-BLOCK-START") {
            parts.last_mut().unwrap().push_str(line);
            inside = true;
        } else if t.ends_with("EVOLVE-BLOCK-END") {
            parts.push(line.to_string());
            inside = false;
        } else if !inside {
            parts.last_mut().unwrap().push_str(line);
        }
    }
    parts
}

fn random_line(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 10] = ["x", "=", "1", "return", "def f():", "y += 2", "# note", "pass", "(a, b)", "  "];
    (0..rng.random_range(1..4)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn random_program(rng: &mut ChaCha8Rng) -> String {
    let mut code = String::new();
    for _ in 0..rng.random_range(1..4) {
        for _ in 0..rng.random_range(0..3) {
            code.push_str(&random_line(rng));
            code.push('\n');
        }
        code.push_str("# EVOLVE-BLOCK-START\n");
        for _ in 0..rng.random_range(0..4) {
            code.push_str(&random_line(rng));
            code.push('\n');
        }
        code.push_str("# EVOLVE-BLOCK-END\n");
    }
    for _ in 0..rng.random_range(0..3) {
        code.push_str(&random_line(rng));
        code.push('\n');
    }
    code
}

/// Mostly text from inside a block, sometimes from anywhere.
fn random_search(code: &str, rng: &mut ChaCha8Rng) -> String {
    let blocks = parse_blocks(code).expect("generated programs parse");
    let mutable: Vec<&str> = blocks.mutable_segments().into_iter().filter(|s| !s.is_empty()).collect();
    if !mutable.is_empty() && rng.random_bool(0.7) {
        let segment = mutable[rng.random_range(0..mutable.len())];
        return random_substring(segment, rng);
    }
    random_substring(code, rng)
}

fn random_substring(code: &str, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = code.chars().collect();
    if chars.is_empty() {
        return "x".into();
    }
    let start = rng.random_range(0..chars.len());
    let len = rng.random_range(1..=(chars.len() - start).min(40));
    chars[start..start + len].iter().collect()
}

fn criterion_4() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut accepted, mut rejected) = (0, 0);
    for case in 0..1000 {
        let code = random_program(&mut rng);
        let blocks = parse_blocks(&code).map_err(|e| format!("case {case}: {e}"))?;
        check(blocks.reassemble() == code, format!("case {case}: reassemble differs"))?;
        let pairs = (0..rng.random_range(1..3))
            .map(|_| {
                let mut replace = random_line(&mut rng);
                if rng.random_bool(0.1) {
                    replace.push_str("\n# EVOLVE-BLOCK-END\n");
                }
                SearchReplace {
                    search: random_search(&code, &mut rng),
                    replace,
                }
            })
            .collect();
        let proposal = PatchProposal {
            patch_type: PatchType::Diff,
            payload: PatchPayload::Diff(pairs),
            model_name: "fuzz".into(),
            temperature: 0.0,
            raw_response: String::new(),
        };
        match apply_patch(&code, &proposal) {
            Ok(patched) => {
                accepted += 1;
                check(
                    immutable_parts(&patched) == immutable_parts(&code),
                    format!("case {case}: accepted patch changed immutable text"),
                )?;
                let reparsed = parse_blocks(&patched).map_err(|e| format!("case {case}: {e}"))?;
                check(reparsed.reassemble() == patched, format!("case {case}: reassemble differs after patch"))?;
            }
            Err(_) => rejected += 1,
        }
    }
    let elapsed = started.elapsed();
    check(accepted > 50, format!("only {accepted} patches accepted"))?;
    check(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!("1000 programs, {accepted} accepted and {rejected} rejected patches, no immutable byte changed"))
}

fn echo_toml() -> String {
    synthetic_toml(
        &[("echo", "kind = \"echo_parent\"")],
        4,
        5,
        "patch_types = [\"full\"]\npatch_type_probs = [1.0]",
    )
}

fn criterion_5() -> Verdict {
    let ws = Workspace::new(&echo_toml());
    let recorded = ws.start("judged", &[])?;
    let transcript = recorded.join("transcripts.jsonl");
    let replayed = ws.start("judged-replay", &["--replay", transcript.to_str().unwrap()])?;
    check(
        read(&recorded.join("journal.jsonl")) == read(&replayed.join("journal.jsonl")),
        "replayed journal differs",
    )?;
    let rejects: Vec<_> = journal(&replayed)
        .into_iter()
        .filter_map(|r| match r.event {
            Event::NoveltyReject(n) => Some(n.verdict),
            _ => None,
        })
        .collect();
    check(!rejects.is_empty(), "no novelty rejection logged")?;
    for v in &rejects {
        check(v.max_similarity == 1.0, format!("similarity {}", v.max_similarity))?;
        check(v.decision == NoveltyDecision::RejectByJudge, format!("decision {:?}", v.decision))?;
        check(v.judge_rationale.is_some(), "judge was not consulted")?;
    }

    let open = ws.ablate("no_rejection", "open", &[])?;
    let transcript = open.join("transcripts.jsonl");
    let open_replay = ws.ablate("no_rejection", "open-replay", &["--replay", transcript.to_str().unwrap()])?;
    check(
        read(&open.join("journal.jsonl")) == read(&open_replay.join("journal.jsonl")),
        "replayed no_rejection journal differs",
    )?;
    let events = journal(&open_replay);
    let start = events.iter().find_map(|r| match &r.event {
        Event::RunStart(s) => Some(s.clone()),
        _ => None,
    });
    check(
        start.is_some_and(|s| s.config.evolution.novelty_mode == shinka_core::novelty::NoveltyMode::Off),
        "replayed run did not keep the preset",
    )?;
    let mut codes = BTreeMap::new();
    let mut duplicates = 0;
    for r in &events {
        match &r.event {
            Event::NoveltyReject(_) => return Err("rejection with the filter disabled".into()),
            Event::Insert(i) => {
                if let Some(parent) = &i.record.parent_id {
                    if codes.get(parent) == Some(&i.record.code) {
                        duplicates += 1;
                    }
                }
                codes.insert(i.record.id.clone(), i.record.code.clone());
            }
            _ => {}
        }
    }
    check(duplicates == 4, format!("{duplicates} byte-identical children archived"))?;
    Ok(format!(
        "{} judge rejections at similarity 1.0; no_rejection archived all {duplicates} duplicates; replays identical",
        rejects.len()
    ))
}

/// In-process synthetic evaluator that records peak concurrency.
struct CountingRunner {
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl JobRunner for CountingRunner {
    fn run(&self, job: &EvaluationJob) -> Result<EvaluationResult, EvalFailure> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(25));
        let result = synthetic::evaluate(&job.program_path, &job.results_dir, &TARGET)
            .map_err(|e| EvalFailure {
                kind: FailureKind::NonZeroExit,
                message: e.to_string(),
                output: String::new(),
                runtime_seconds: 0.0,
            })
            .and_then(|_| collect(&job.results_dir, 0.0));
        self.active.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

fn criterion_6() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = RunConfig::from_toml_str(&synthetic_toml(&[("a", &scripted(0.5))], 100, 6, ""))
        .map_err(|e| e.to_string())?;
    config.evolution.max_parallel_jobs = 5;
    let runner = Arc::new(CountingRunner {
        active: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    });
    let outcome = run(
        config,
        RunOptions {
            run_dir: tmp.path().join("run"),
            initial_program: synthetic::initial_program(3),
            runner: Some(runner.clone()),
            ..RunOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let peak = runner.peak.load(Ordering::SeqCst);
    check(peak <= 5, format!("peak concurrency {peak}"))?;
    check(peak == 5, format!("the bound was never reached (peak {peak})"))?;

    let mut finished = 0u64;
    let mut archived = BTreeSet::new();
    let mut proposals = 0;
    let mut jobs = 0;
    for r in journal(&outcome.run_dir) {
        match r.event {
            Event::EvalDone(_) | Event::EvalFail(_) => finished += 1,
            Event::Insert(i) => {
                archived.insert(i.record.id.clone());
            }
            Event::EvalStart(s) => {
                jobs += 1;
                check(s.in_flight <= 5, format!("seq {}: {} in flight", r.seq, s.in_flight))?;
            }
            Event::Proposal(p) => {
                proposals += 1;
                check(
                    p.completed_results == finished,
                    format!("seq {}: context saw {} results, {finished} completed", r.seq, p.completed_results),
                )?;
                let used = std::iter::once(&p.parent_id)
                    .chain(&p.inspiration_ids)
                    .chain(&p.crossover_partner_id);
                for id in used {
                    check(archived.contains(id), format!("seq {}: context uses unarchived {id}", r.seq))?;
                }
            }
            _ => {}
        }
    }
    check(proposals == 100, format!("{proposals} proposals"))?;
    Ok(format!("{jobs} jobs, peak concurrency {peak}, every context built from completed results only"))
}

fn criterion_7() -> Verdict {
    let ws = Workspace::new(&synthetic_toml(&[("a", &scripted(0.6)), ("b", &scripted(0.2))], 50, 7, ""));
    let recorded = ws.start("recorded", &[])?;
    let transcript = recorded.join("transcripts.jsonl");
    let t = transcript.to_str().unwrap();
    let first = ws.start("replay-a", &["--replay", t])?;
    let second = ws.start("replay-b", &["--replay", t])?;
    let partial = ws.start("replay-resumed", &["--replay", t, "--stop-after", "20"])?;
    shinka_ok(ws.path(), &["resume", "--run-dir", "replay-resumed"])?;

    let files = ["archive.jsonl", "journal.jsonl", "report.json", "tree.json", "trajectory.csv", "bandit_history.csv"];
    for file in files {
        let want = read(&first.join(file));
        check(read(&second.join(file)) == want, format!("{file}: replays differ"))?;
        check(read(&partial.join(file)) == want, format!("{file}: resumed run differs"))?;
        check(read(&recorded.join(file)) == want, format!("{file}: recording differs from replay"))?;
    }
    for dir in [&recorded, &first, &second, &partial] {
        check(monotone(&trajectory(dir)), format!("{} not monotone", dir.display()))?;
    }
    Ok("two replays, the recording, and a run stopped at 20 then resumed are byte-identical".into())
}

fn criterion_8() -> Verdict {
    let started = Instant::now();
    let ws = Workspace::new(&synthetic_toml(&[("push", &scripted(1.0))], 50, 7, ""));
    let dir = ws.start("progress", &[])?;
    let series = trajectory(&dir);
    let elapsed = started.elapsed();
    let best = series.last().copied().unwrap_or(f64::NEG_INFINITY);
    check(monotone(&series), "best-so-far decreased")?;
    check(best > -1e-3, format!("best fitness {best}"))?;
    check(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    let first_hit = series.iter().position(|f| *f > -1e-3).unwrap_or(series.len());
    Ok(format!("best {best} first reached at generation {first_hit}, monotone, {elapsed:.2?}"))
}

fn criterion_9() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let program = tmp.path().join("packing.py");
    fs::write(&program, packing::initial_program()).unwrap();
    let results = tmp.path().join("results");
    shinka_ok(
        tmp.path(),
        &["task-eval", "packing", "--slack", "0", "--program_path", program.to_str().unwrap(), "--results_dir", results.to_str().unwrap()],
    )?;
    let metrics: serde_json::Value = serde_json::from_str(&read(&results.join("metrics.json"))).unwrap();
    let score = metrics["combined_score"].as_f64().unwrap();
    check((score - 2.54142).abs() <= 1e-5, format!("grid+gap score {score}"))?;
    check(metrics["public"]["valid"] == 1.0, "grid+gap invalid at slack 0")?;

    let mut inflated = packing::grid_with_gap();
    inflated[25].r += 2e-6;
    let strict = packing::verify_packing(&inflated, 1e-6).map_err(|e| e.to_string())?;
    let loose = packing::verify_packing(&inflated, 1e-5).map_err(|e| e.to_string())?;
    check(!strict.valid, "inflated packing passes at slack 1e-6")?;
    check(loose.valid, "inflated packing fails at slack 1e-5")?;

    let single = [packing::Circle::new(0.5, 0.5, 0.5)];
    let v = packing::verify_circles(&single, 0.0, Some(1)).map_err(|e| e.to_string())?;
    let sum = packing::radius_sum(&single);
    check(v.valid && sum == 0.5, format!("inscribed circle: valid {} sum {sum}", v.valid))?;
    Ok(format!("grid+gap {score:.8} via the evaluator; inflation caught at 1e-6, passes at 1e-5; inscribed 0.5"))
}

fn criterion_10() -> Verdict {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/presets");
    let base_text = synthetic_toml(&[("a", &scripted(0.5)), ("b", &scripted(0.2))], 3, 10, "");
    let base = RunConfig::from_toml_str(&base_text).map_err(|e| e.to_string())?;
    let ws = Workspace::new(&base_text);
    let mut seen = BTreeSet::new();
    let mut axes = BTreeMap::<String, usize>::new();
    let listing = String::from_utf8(shinka_ok(ws.path(), &["presets", "--json"])?.stdout).unwrap();
    let listed: Vec<serde_json::Value> = serde_json::from_str(&listing).map_err(|e| e.to_string())?;
    check(listed.len() == PRESET_NAMES.len(), format!("{} presets listed", listed.len()))?;

    for name in PRESET_NAMES {
        let golden: ConfigOverrides =
            serde_json::from_str(&read(&fixtures.join(format!("{name}.json")))).map_err(|e| format!("{name}: {e}"))?;
        let dir = ws.ablate(name, &format!("ablate-{name}"), &[])?;
        let events = journal(&dir);
        let Some(Event::RunStart(start)) = events.first().map(|r| &r.event) else {
            return Err(format!("{name}: journal does not open with run_start"));
        };
        check(start.preset.as_deref() == Some(name), format!("{name}: preset not recorded"))?;
        check(start.overrides.as_ref() == Some(&golden), format!("{name}: overrides differ from fixture"))?;

        let mut expected = base.clone();
        if let Some(kind) = golden.parent_selection {
            expected.database.parent_selection = kind;
        }
        if golden.single_model == Some(true) {
            expected.models.llm_models.truncate(1);
        }
        if let Some(mode) = golden.llm_dynamic_selection {
            expected.evolution.llm_dynamic_selection = mode;
        }
        if let Some(mode) = golden.novelty_mode {
            expected.evolution.novelty_mode = mode;
        }
        let mut recorded = start.config.clone();
        recorded.evaluation = expected.evaluation.clone();
        check(recorded == expected, format!("{name}: journaled config is not base + delta"))?;
        check(seen.insert(read(&dir.join("journal.jsonl"))), format!("{name}: journal not distinguishable"))?;
        *axes.entry(listed.iter().find(|p| p["name"] == *name).unwrap()["axis"].as_str().unwrap().to_string()).or_default() += 1;
    }
    check(axes.len() == 3 && axes.values().all(|&n| n == 3), format!("axes {axes:?}"))?;
    Ok(format!("9 presets over axes {:?}; deltas match fixtures; journals distinct", axes.keys().collect::<Vec<_>>()))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("sampler correctness", criterion_1),
        ("weighted-sampling monotonicity", criterion_2),
        ("bandit reward transform and arm share", criterion_3),
        ("patch safety fuzz", criterion_4),
        ("novelty filter", criterion_5),
        ("scheduler contract", criterion_6),
        ("end-to-end determinism", criterion_7),
        ("end-to-end progress", criterion_8),
        ("circle-packing verifier", criterion_9),
        ("ablation presets", criterion_10),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(message)
        });
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
