//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to the
//! real stdout so the verdicts show up even when output capture is on.

use std::cmp::Ordering;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidqa::config::{EngineConfig, ProfileConfig};
use vidqa::mock::{MockBackend, MockScript, RuleSpec};
use vidqa::pipeline::{Engine, FrameSource};
use vidqa_core::agent::{action_frames, fn_action_window, fn_term_frequency, AgentError, Direction};
use vidqa_core::clock::FrozenClock;
use vidqa_core::embedding::{EmbeddingIndex, IndexedItem, ItemKind};
use vidqa_core::eval::{accuracy, aggregate, confusion_matrix, macro_f1, Category, EvalRecord};
use vidqa_core::orchestrator::{parse_answer_label, Question, RethinkStep, Variant};
use vidqa_core::vtt::{parse_webvtt, to_webvtt, VttError};
use vidqa_core::{EmbeddingVector, FrameRecord, Millis, TranscriptSegment, VideoAsset};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn verdict(n: u32, name: &str, result: Result<String, String>) {
    let line = match &result {
        Ok(detail) => format!("acceptance {n:>2} {name}: PASS ({detail})\n"),
        Err(why) => format!("acceptance {n:>2} {name}: FAIL ({why})\n"),
    };
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    if let Err(why) = result {
        panic!("{name}: {why}");
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {{
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)*));
        }
    }};
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return EmbeddingVector::new(v).unwrap();
        }
    }
}

struct Instance {
    index: EmbeddingIndex,
    raw: Vec<(String, ItemKind, usize, Vec<f32>)>,
    dim: usize,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let dim = rng.random_range(2..48);
    let mut index = EmbeddingIndex::new(dim).unwrap();
    let mut raw = Vec::new();
    for video in ["a", "b"] {
        for kind in [ItemKind::Frame, ItemKind::Transcript] {
            let count = rng.random_range(1..120);
            let mut previous: Option<EmbeddingVector> = None;
            for ordinal in 0..count {
                // every so often repeat the last vector to force a score tie
                let vector = match &previous {
                    Some(p) if rng.random_bool(0.1) => p.clone(),
                    _ => random_vector(rng, dim),
                };
                raw.push((video.to_string(), kind, ordinal, vector.values().to_vec()));
                index
                    .insert(IndexedItem { video_id: video.into(), kind, ordinal, vector: vector.clone() })
                    .unwrap();
                previous = Some(vector);
            }
        }
    }
    Instance { index, raw, dim }
}

/// Exhaustive scoring, sorted by score then ordinal.
fn oracle_top(inst: &Instance, query: &[f32], video: &str, kind: ItemKind, n: usize) -> Vec<usize> {
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut scored: Vec<(f64, usize)> = inst
        .raw
        .iter()
        .filter(|(v, k, _, _)| v == video && *k == kind)
        .map(|(_, _, ordinal, vec)| {
            let d: f64 = vec.iter().zip(query).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            ((d / (qn * norm(vec))).clamp(-1.0, 1.0), *ordinal)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, o)| o).collect()
}

#[test]
fn a01_retrieval_matches_exhaustive_oracle() {
    let run = || -> Result<String, String> {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let instances = 120;
        let mut checks = 0;
        for i in 0..instances {
            let inst = random_instance(&mut rng);
            for _ in 0..3 {
                let query = random_vector(&mut rng, inst.dim);
                let n = rng.random_range(1..12);
                let video = if rng.random_bool(0.5) { "a" } else { "b" };
                for kind in [ItemKind::Frame, ItemKind::Transcript] {
                    let got: Vec<usize> =
                        inst.index.top_n(&query, kind, n, video).unwrap().iter().map(|h| h.ordinal).collect();
                    let want = oracle_top(&inst, query.values(), video, kind, n);
                    ensure!(got == want, "instance {i} {kind:?} n={n}: got {got:?}, oracle {want:?}");
                    checks += 1;
                }
                let r = inst.index.retrieve(&query, n, video).unwrap();
                ensure!(
                    r.top_frame == oracle_top(&inst, query.values(), video, ItemKind::Frame, 1).first().copied(),
                    "instance {i}: frame argmax differs"
                );
                ensure!(
                    r.top_transcript
                        == oracle_top(&inst, query.values(), video, ItemKind::Transcript, 1).first().copied(),
                    "instance {i}: transcript argmax differs"
                );
            }
        }
        let elapsed = started.elapsed();
        ensure!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
        Ok(format!("{instances} instances, {checks} rankings, {:.2} s", elapsed.as_secs_f64()))
    };
    verdict(1, "retrieval oracle", run());
}

#[test]
fn a02_retrieval_is_scale_invariant() {
    let run = || -> Result<String, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let dim = 32;
        let mut index = EmbeddingIndex::new(dim).unwrap();
        let mut scaled_indexes: Vec<(f32, EmbeddingIndex)> =
            [0.1f32, 1.0, 10.0].iter().map(|l| (*l, EmbeddingIndex::new(dim).unwrap())).collect();
        for kind in [ItemKind::Frame, ItemKind::Transcript] {
            for ordinal in 0..150 {
                let v = random_vector(&mut rng, dim);
                for (l, idx) in &mut scaled_indexes {
                    idx.insert(IndexedItem { video_id: "v".into(), kind, ordinal, vector: v.scaled(*l) }).unwrap();
                }
                index.insert(IndexedItem { video_id: "v".into(), kind, ordinal, vector: v }).unwrap();
            }
        }
        let sorted = |mut v: Vec<usize>| {
            v.sort_unstable();
            v
        };
        for q in 0..50 {
            let query = random_vector(&mut rng, dim);
            let base = index.retrieve(&query, 5, "v").unwrap();
            for (lambda, scaled_index) in &scaled_indexes {
                for (label, idx) in [("query", &index), ("index", scaled_index)] {
                    let probe = if label == "query" { query.scaled(*lambda) } else { query.clone() };
                    let r = idx.retrieve(&probe, 5, "v").unwrap();
                    ensure!(
                        sorted(r.frame_ids()) == sorted(base.frame_ids())
                            && sorted(r.transcript_ids()) == sorted(base.transcript_ids()),
                        "query {q}, {label} scaled by {lambda}: {:?}/{:?} vs {:?}/{:?}",
                        r.frame_ids(),
                        r.transcript_ids(),
                        base.frame_ids(),
                        base.transcript_ids()
                    );
                    ensure!(r.top_frame == base.top_frame, "query {q}: argmax moved under {label} scale {lambda}");
                }
            }
        }
        Ok("50 queries x lambda {0.1, 1, 10}, query and index scaled".into())
    };
    verdict(2, "scale invariance", run());
}

#[test]
fn a03_webvtt_round_trip() {
    let run = || -> Result<String, String> {
        let dir = fixtures().join("vtt/valid");
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        ensure!(files.len() == 20, "expected 20 corpus files, found {}", files.len());
        let mut segments = 0;
        for path in &files {
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            let text = std::fs::read_to_string(path).unwrap();
            let first = parse_webvtt(&text).map_err(|e| format!("{name}: {e}"))?;
            ensure!(!first.is_empty(), "{name}: no segments");
            let again = parse_webvtt(&to_webvtt(&first)).map_err(|e| format!("{name} re-parse: {e}"))?;
            ensure!(first == again, "{name}: segments changed across the round trip");
            segments += first.len();
        }
        let spot = |file: &str| parse_webvtt(&std::fs::read_to_string(dir.join(file)).unwrap()).unwrap();
        ensure!(spot("09_entities.vtt")[0].text == "Fish & chips <fresh>", "entities not decoded");
        ensure!(spot("08_voice_tags.vtt")[2].text == "Thunder rolls closer", "markup not stripped");
        ensure!(spot("15_empty_payloads.vtt").len() == 1, "empty payload cues kept");
        let unsorted = spot("14_unsorted.vtt");
        ensure!(
            unsorted.iter().map(|s| s.text.as_str()).collect::<Vec<_>>() == ["First", "Second", "Third"],
            "cues not sorted by start"
        );
        ensure!(spot("12_long_hours.vtt")[1].start == Millis(123 * 3_600_000), "long hour stamp misread");

        let bad = fixtures().join("vtt/malformed");
        type Check = fn(&VttError) -> bool;
        let expected: [(&str, Check); 8] = [
            ("missing_header.vtt", |e| *e == VttError::MissingHeader),
            ("wrong_header.vtt", |e| *e == VttError::MissingHeader),
            ("empty.vtt", |e| *e == VttError::MissingHeader),
            ("bad_timestamp.vtt", |e| matches!(e, VttError::MalformedTimestamp { line: 6, .. })),
            ("bad_minutes.vtt", |e| matches!(e, VttError::MalformedTimestamp { line: 3, .. })),
            ("missing_end.vtt", |e| matches!(e, VttError::MalformedTimestamp { line: 4, .. })),
            ("reversed_cue.vtt", |e| matches!(e, VttError::NonMonotonicCues { line: 6, .. })),
            ("zero_length_cue.vtt", |e| matches!(e, VttError::NonMonotonicCues { line: 3, .. })),
        ];
        for (file, check) in expected {
            let text = std::fs::read_to_string(bad.join(file)).unwrap();
            match parse_webvtt(&text) {
                Ok(segs) => return Err(format!("{file}: parsed {} segments, expected an error", segs.len())),
                Err(e) => ensure!(check(&e), "{file}: unexpected error {e:?}"),
            }
        }
        Ok(format!("20 files, {segments} segments stable; 8 malformed files rejected"))
    };
    verdict(3, "webvtt round trip", run());
}

fn mock_config(store: &Path, script: &Path) -> EngineConfig {
    let mut config = EngineConfig { store_dir: store.to_path_buf(), ..EngineConfig::default() };
    config.profiles.insert("mock".into(), ProfileConfig::Mock { script: Some(script.to_path_buf()) });
    config
}

#[test]
fn a04_summary_is_contiguous_across_batches() {
    let run = || -> Result<String, String> {
        let tmp = tempfile::tempdir().unwrap();
        let fx = fixtures().join("summary");
        let engine = Engine::new(mock_config(tmp.path(), &fx.join("mock.json"))).map_err(|e| e.to_string())?;
        engine
            .ingest("orchard", Some(&fx.join("orchard.vtt")), FrameSource::Manifest(fx.join("frames.jsonl")), false)
            .map_err(|e| e.to_string())?;
        let built = engine.summarize("orchard").map_err(|e| e.to_string())?;
        ensure!(built.backend_calls == 3, "expected 3 batch calls, made {}", built.backend_calls);
        let summary = engine.store.load_summary("orchard").map_err(|e| e.to_string())?.ok_or("summary not persisted")?;
        ensure!(summary.source_batches == 3, "summary came from {} batches", summary.source_batches);
        ensure!(summary.clusters.len() == 6, "expected 6 clusters, got {}", summary.clusters.len());
        for (k, pair) in summary.clusters.windows(2).enumerate() {
            ensure!(
                pair[1].start == pair[0].end,
                "cluster {} starts at {} but cluster {} ends at {}",
                k + 1,
                pair[1].start,
                k,
                pair[0].end
            );
        }
        let asset = engine.store.load_asset("orchard").map_err(|e| e.to_string())?;
        let (start, end) = summary.time_span().unwrap();
        ensure!(start == Millis::ZERO && end == asset.duration, "span {start} - {end} does not cover the video");
        let cached = engine.summarize("orchard").map_err(|e| e.to_string())?;
        ensure!(cached.cached && cached.backend_calls == 0, "second summarize was not served from cache");
        let seams: Vec<String> = summary.clusters.iter().skip(1).map(|c| c.start.to_string()).collect();
        Ok(format!("6 clusters over 3 batches, seams at {}", seams.join(", ")))
    };
    verdict(4, "summary contiguity", run());
}

fn harbor_script(prepend: Option<RuleSpec>) -> MockScript {
    let mut script = MockScript::load(&fixtures().join("harbor/mock.json")).unwrap();
    if let Some(rule) = prepend {
        script.rules.insert(0, rule);
    }
    script
}

fn harbor_engine(store: &Path, script: MockScript) -> Engine {
    let fx = fixtures().join("harbor");
    let mut config = mock_config(store, &fx.join("mock.json"));
    config.search_fixture = Some(fx.join("search.json"));
    let backend = MockBackend::new(script, config.embedding_dim, config.seed).unwrap();
    Engine::with_parts(config, Box::new(backend), Box::new(FrozenClock(0))).unwrap()
}

fn ingest_harbor(engine: &Engine) {
    let fx = fixtures().join("harbor");
    engine
        .ingest("harbor", Some(&fx.join("harbor.vtt")), FrameSource::Manifest(fx.join("frames.jsonl")), false)
        .unwrap();
    engine.summarize("harbor").unwrap();
}

fn harbor_question(id: &str) -> Question {
    let text = std::fs::read_to_string(fixtures().join("harbor/dataset.jsonl")).unwrap();
    vidqa_core::eval::parse_dataset(&text).unwrap().into_iter().find(|q| q.question_id == id).unwrap()
}

#[test]
fn a05_rethink_loop_respects_cap() {
    let run = || -> Result<String, String> {
        let question = harbor_question("h06");

        let tmp = tempfile::tempdir().unwrap();
        let never_satisfied = RuleSpec {
            when: r"^\[system\]\nYou review answers".into(),
            reply: "VERDICT: inadequate\nDIAGNOSIS: the shouted words are not confirmed\nDIRECTIVE: look again\nFUNCTIONS: none"
                .into(),
        };
        let engine = harbor_engine(tmp.path(), harbor_script(Some(never_satisfied)));
        ingest_harbor(&engine);
        ensure!(engine.config.rethink_cap == 3, "default cap is {}", engine.config.rethink_cap);
        let (_, trace) = engine.ask(&question, Variant::Full).map_err(|e| e.to_string())?;
        ensure!(trace.iterations.len() == 4, "always-inadequate run made {} passes", trace.iterations.len());
        let inadequate = trace.iterations.iter().filter(|it| matches!(it.rethink, RethinkStep::Inadequate { .. })).count();
        ensure!(inadequate == 3, "{inadequate} inadequate verdicts");
        ensure!(
            matches!(trace.iterations[3].rethink, RethinkStep::CapReached),
            "last pass ended with {:?}",
            trace.iterations[3].rethink
        );
        // plan + answer per pass, one verdict per pass below the cap
        ensure!(trace.backend_call_count == 11, "{} chat calls", trace.backend_call_count);

        let tmp = tempfile::tempdir().unwrap();
        let engine = harbor_engine(tmp.path(), harbor_script(None));
        ingest_harbor(&engine);
        let (answer, trace) = engine.ask(&question, Variant::Full).map_err(|e| e.to_string())?;
        ensure!(trace.iterations.len() == 1, "adequate-first run made {} passes", trace.iterations.len());
        ensure!(matches!(trace.iterations[0].rethink, RethinkStep::Adequate { .. }), "first verdict not adequate");
        ensure!(answer.chosen_index == 2, "answered {}", answer.chosen_index);
        Ok("4 passes when never adequate, 1 pass when adequate first".into())
    };
    verdict(5, "rethink cap", run());
}

/// Token-level count: consecutive words equal to the term's words with only
/// whitespace between them, greedy and non-overlapping.
fn naive_term_count(tokens: &[(String, String)], term: &[String]) -> usize {
    let mut count = 0;
    let mut i = 0;
    while i + term.len() <= tokens.len() {
        let words_match = (0..term.len()).all(|k| tokens[i + k].0.to_lowercase() == term[k]);
        let glued = (0..term.len() - 1).all(|k| tokens[i + k].1.chars().all(char::is_whitespace));
        if words_match && glued {
            count += 1;
            i += term.len();
        } else {
            i += 1;
        }
    }
    count
}

#[test]
fn a06_function_outputs_match_oracles() {
    let run = || -> Result<String, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(606);
        let vocab = ["ow", "owl", "bell", "storm", "la", "anchor", "Anchor", "ANCHOR", "ferry", "x1", "re"];
        let seps = [" ", "  ", ", ", ". ", "! ", "\n", " - ", "\t"];
        for case in 0..1000 {
            let segment_count = rng.random_range(1..6);
            let mut segments = Vec::new();
            let mut all_tokens: Vec<Vec<(String, String)>> = Vec::new();
            for s in 0..segment_count {
                let len = rng.random_range(1..30);
                let tokens: Vec<(String, String)> = (0..len)
                    .map(|_| {
                        (
                            vocab[rng.random_range(0..vocab.len())].to_string(),
                            seps[rng.random_range(0..seps.len())].to_string(),
                        )
                    })
                    .collect();
                let text: String = tokens.iter().map(|(w, sep)| format!("{w}{sep}")).collect::<String>().trim().to_string();
                segments.push(TranscriptSegment {
                    segment_id: s,
                    start: Millis(s as u64 * 1000),
                    end: Millis(s as u64 * 1000 + 900),
                    text,
                });
                all_tokens.push(tokens);
            }
            let term_len = rng.random_range(1..3);
            let term_words: Vec<String> =
                (0..term_len).map(|_| vocab[rng.random_range(0..vocab.len())].to_lowercase()).collect();
            let term = if rng.random_bool(0.5) { term_words.join(" ") } else { term_words.join(" ").to_uppercase() };
            let want: usize = all_tokens.iter().map(|t| naive_term_count(t, &term_words)).sum();
            let got = fn_term_frequency(&term, &segments);
            ensure!(got == want, "case {case}: term {term:?} counted {got}, oracle {want}");
        }

        // action windows on a 20-frame timeline, 2 s apart
        let frames: Vec<FrameRecord> = (0..20)
            .map(|i| FrameRecord { frame_id: i, timestamp: Millis(i as u64 * 2000), image_ref: format!("f{i}.jpg") })
            .collect();
        let oracle = |at: Millis, dir: Direction| -> Vec<usize> {
            match dir {
                Direction::Before => {
                    let prior: Vec<usize> = frames.iter().filter(|f| f.timestamp < at).map(|f| f.frame_id).collect();
                    prior[prior.len().saturating_sub(6)..].to_vec()
                }
                Direction::After => frames.iter().filter(|f| f.timestamp > at).map(|f| f.frame_id).take(6).collect(),
            }
        };
        let cases: &[(u64, Direction, &[usize])] = &[
            (20_000, Direction::Before, &[4, 5, 6, 7, 8, 9]),
            (20_000, Direction::After, &[11, 12, 13, 14, 15, 16]),
            (21_000, Direction::Before, &[5, 6, 7, 8, 9, 10]),
            (21_000, Direction::After, &[11, 12, 13, 14, 15, 16]),
            (4_000, Direction::Before, &[0, 1]),
            (0, Direction::Before, &[]),
            (34_000, Direction::After, &[18, 19]),
            (38_000, Direction::After, &[]),
            (99_000, Direction::Before, &[14, 15, 16, 17, 18, 19]),
            (10_000, Direction::Before, &[0, 1, 2, 3, 4]),
            (11_999, Direction::Before, &[0, 1, 2, 3, 4, 5]),
        ];
        let asset = VideoAsset::new("w", Vec::new(), frames.clone(), None).unwrap();
        let backend = MockBackend::new(
            MockScript::replying("unused").rule(r"Frames (before|after) the event", "someone moves ${1}"),
            8,
            0,
        )
        .unwrap();
        for (at, dir, expected) in cases {
            let at = Millis(*at);
            let got: Vec<usize> = action_frames(&frames, at, *dir).iter().map(|f| f.frame_id).collect();
            ensure!(got == *expected, "{dir:?} {at}: selected {got:?}, expected {expected:?}");
            ensure!(got == oracle(at, *dir), "{dir:?} {at}: disagrees with the filter oracle");
            match fn_action_window(at, *dir, &asset, &backend) {
                Ok((ids, _)) => ensure!(ids == *expected, "{dir:?} {at}: described {ids:?}"),
                Err(AgentError::NoFramesInDirection { .. }) => {
                    ensure!(expected.is_empty(), "{dir:?} {at}: no frames reported")
                }
                Err(e) => return Err(format!("{dir:?} {at}: {e}")),
            }
        }
        Ok(format!("1000 term-frequency cases, {} action-window fixtures", cases.len()))
    };
    verdict(6, "function correctness", run());
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["vidqa"];
    argv.extend_from_slice(args);
    let code = vidqa::cli::run(argv, &|_| None, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn cli_ok(args: &[&str]) -> Result<String, String> {
    let (code, out, err) = cli(args);
    if code == 0 {
        Ok(out)
    } else {
        Err(format!("`vidqa {}` exited {code}: {err}", args.join(" ")))
    }
}

fn run_harbor_eval(root: &Path) -> Result<(String, PathBuf), String> {
    let fx = fixtures().join("harbor");
    let config = fx.join("vidqa.toml");
    let store = root.join("store");
    let out = root.join("eval");
    let s = |p: &Path| p.to_string_lossy().to_string();
    let base = ["--config".to_string(), s(&config), "--store".to_string(), s(&store), "--seed".to_string(), "7".to_string()];
    let with = |rest: &[String]| -> Vec<String> { base.iter().cloned().chain(rest.iter().cloned()).collect() };
    let args = with(&[
        "ingest".into(),
        "harbor".into(),
        "--vtt".into(),
        s(&fx.join("harbor.vtt")),
        "--frames".into(),
        s(&fx.join("frames.jsonl")),
    ]);
    cli_ok(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    let args = with(&["eval".into(), s(&fx.join("dataset.jsonl")), "--out".into(), s(&out)]);
    let table = cli_ok(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    Ok((table, out))
}

#[test]
fn a07_ablation_table_shape_and_determinism() {
    let run = || -> Result<String, String> {
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        let (table, out1) = run_harbor_eval(first.path())?;
        let (table2, out2) = run_harbor_eval(second.path())?;
        let strip = |t: &str| t.lines().filter(|l| !l.starts_with("Reports:")).collect::<Vec<_>>().join("\n");
        ensure!(strip(&table) == strip(&table2), "printed tables differ across runs");
        for file in ["report.txt", "report.json", "records.jsonl", "traces.jsonl"] {
            let a = std::fs::read(out1.join(file)).map_err(|e| format!("{file}: {e}"))?;
            let b = std::fs::read(out2.join(file)).map_err(|e| format!("{file}: {e}"))?;
            ensure!(a == b, "{file} differs across runs");
        }

        let report: vidqa_core::eval::EvalReport =
            serde_json::from_slice(&std::fs::read(out1.join("report.json")).unwrap()).map_err(|e| e.to_string())?;
        ensure!(report.variants == [Variant::Baseline, Variant::PlusSummary, Variant::PlusAgent, Variant::Full], "variant rows {:?}", report.variants);
        ensure!(report.categories == Category::ALL, "category columns {:?}", report.categories);
        ensure!(report.cells.len() == 20, "{} cells", report.cells.len());
        ensure!(report.cells.iter().all(|c| c.total == 5 && c.accuracy.is_some() && c.macro_f1.is_some()), "a cell is not 5 scored questions");

        let text = std::fs::read_to_string(out1.join("report.txt")).unwrap();
        let blocks: Vec<&str> = text.split("\n\n").collect();
        ensure!(blocks.len() >= 2, "missing macro-F1 block");
        for (block, title) in blocks.iter().zip(["Accuracy", "Macro-F1"]) {
            let lines: Vec<&str> = block.lines().collect();
            ensure!(lines[0].starts_with(title), "block starts with {:?}", lines[0]);
            ensure!(lines.len() == 5, "{title} block has {} rows", lines.len() - 1);
            for row in &lines[1..] {
                let numbers = row.split_whitespace().filter(|w| w.parse::<f64>().is_ok()).count();
                ensure!(numbers == 5, "{title} row {row:?} has {numbers} values");
            }
        }
        let acc = |v| report.summary(v).and_then(|s| s.accuracy).unwrap();
        let (base, full) = (acc(Variant::Baseline), acc(Variant::Full));
        ensure!(full > base, "full {full:.1} does not beat baseline {base:.1}");
        let mut out = std::io::stdout().lock();
        let _ = out.write_all(blocks[..2].join("\n\n").as_bytes());
        let _ = out.write_all(b"\n");
        Ok(format!(
            "4x5 tables identical across runs; accuracy baseline {base:.1} < +summary {:.1} < +agent {:.1} < full {full:.1}",
            acc(Variant::PlusSummary),
            acc(Variant::PlusAgent)
        ))
    };
    verdict(7, "ablation table", run());
}

fn fraction(s: &str) -> f64 {
    match s.split_once('/') {
        Some((n, d)) => n.parse::<f64>().unwrap() / d.parse::<f64>().unwrap(),
        None => s.parse().unwrap(),
    }
}

#[test]
fn a08_metrics_match_hand_computed_values() {
    let run = || -> Result<String, String> {
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(fixtures().join("metrics/metric_60.json")).unwrap()).unwrap();
        let records: Vec<EvalRecord> = doc["records"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| {
                let gold = r["gold_index"].as_u64().unwrap() as u8;
                let chosen = r["chosen_index"].as_u64().unwrap() as u8;
                EvalRecord {
                    question_id: r["question_id"].as_str().unwrap().into(),
                    category: r["category"].as_str().unwrap().parse().unwrap(),
                    variant: Variant::Full,
                    chosen_index: chosen,
                    gold_index: gold,
                    correct: chosen == gold,
                    wall_time_ms: 0,
                    backend_call_count: 1,
                    error: None,
                }
            })
            .collect();
        ensure!(records.len() == 60, "{} records", records.len());
        let recorded: Vec<Vec<u64>> = serde_json::from_value(doc["confusion_gold_by_pred"].clone()).unwrap();
        let (matrix, unparsed) = confusion_matrix(&records);
        ensure!(matrix.iter().map(|r| r.to_vec()).collect::<Vec<_>>() == recorded, "confusion matrix differs");
        ensure!(unparsed == [0; 6], "unexpected unparsed answers");

        let want_acc = fraction(doc["accuracy"].as_str().unwrap());
        let want_f1 = fraction(doc["macro_f1"].as_str().unwrap());
        let got_acc = accuracy(&records).unwrap() / 100.0;
        let got_f1 = macro_f1(&records).unwrap();
        ensure!((got_acc - want_acc).abs() < 1e-9, "accuracy {got_acc} vs {want_acc}");
        ensure!((got_f1 - want_f1).abs() < 1e-9, "macro-F1 {got_f1} vs {want_f1}");

        let report = aggregate(&records, &[Variant::Full]).map_err(|e| e.to_string())?;
        for (name, value) in doc["category_accuracy"].as_object().unwrap() {
            let category: Category = name.parse().unwrap();
            let cell = report.cell(Variant::Full, category).unwrap();
            let want = fraction(value.as_str().unwrap()) * 100.0;
            ensure!((cell.accuracy.unwrap() - want).abs() < 1e-9, "{name}: {:?} vs {want}", cell.accuracy);
        }
        Ok(format!("accuracy {got_acc:.6}, macro-F1 {got_f1:.9} equal the hand values"))
    };
    verdict(8, "metric oracle", run());
}

#[test]
fn a09_answer_labels_map_without_ambiguity() {
    let run = || -> Result<String, String> {
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(fixtures().join("metrics/labels.json")).unwrap()).unwrap();
        let reject: Vec<String> = serde_json::from_value(doc["reject"].clone()).unwrap();
        let accept: Vec<String> = serde_json::from_value(doc["accept"].clone()).unwrap();
        ensure!(reject.len() == 20, "{} adversarial strings", reject.len());
        for s in &reject {
            ensure!(parse_answer_label(s).is_none(), "accepted {s:?}");
        }
        for s in &accept {
            let digit = s.trim().parse::<u8>().unwrap();
            ensure!(parse_answer_label(s) == Some(digit), "{s:?} did not map to {digit}");
        }
        // every string of up to three characters over a mixed alphabet
        let alphabet = [' ', '\t', '\n', '0', '1', '3', '6', '7', '.', 'a', ':'];
        let mut checked = 0;
        let mut strings = vec![String::new()];
        for _ in 0..3 {
            let mut next = Vec::new();
            for s in &strings {
                for c in alphabet {
                    let mut t = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            for s in &next {
                let trimmed = s.trim_matches(|c: char| c.is_ascii_whitespace());
                let want = match trimmed.as_bytes() {
                    [d @ b'1'..=b'6'] => Some(d - b'0'),
                    _ => None,
                };
                ensure!(parse_answer_label(s) == want, "{s:?}: got {:?}, want {want:?}", parse_answer_label(s));
                checked += 1;
            }
            strings = next;
        }
        Ok(format!("20 adversarial strings rejected, {} accepted forms, {checked} generated strings", accept.len()))
    };
    verdict(9, "label mapping", run());
}

#[test]
fn a10_end_to_end_traces_are_deterministic() {
    let run = || -> Result<String, String> {
        let fx = fixtures().join("harbor");
        let question = harbor_question("h25");
        let mut traces = Vec::new();
        for _ in 0..2 {
            let tmp = tempfile::tempdir().unwrap();
            let store = tmp.path().join("store");
            let s = |p: &Path| p.to_string_lossy().to_string();
            let (config, store) = (s(&fx.join("vidqa.toml")), s(&store));
            let base = ["--config", config.as_str(), "--store", store.as_str(), "--seed", "7"];
            let with = |rest: &[&str]| -> Vec<String> { base.iter().chain(rest).map(|s| s.to_string()).collect() };
            let (vtt, frames) = (s(&fx.join("harbor.vtt")), s(&fx.join("frames.jsonl")));
            let argv = with(&["ingest", "harbor", "--vtt", &vtt, "--frames", &frames]);
            cli_ok(&argv.iter().map(String::as_str).collect::<Vec<_>>())?;
            cli_ok(&with(&["summarize", "harbor"]).iter().map(String::as_str).collect::<Vec<_>>())?;
            let mut ask = with(&["ask", "harbor", &question.text, "--variant", "full", "--options"]);
            ask.extend(question.options[..5].iter().cloned());
            let out = cli_ok(&ask.iter().map(String::as_str).collect::<Vec<_>>())?;
            ensure!(out.starts_with("Answer: 1"), "unexpected answer line {out:?}");
            let trace_path = out
                .lines()
                .find_map(|l| l.strip_prefix("Trace: "))
                .ok_or_else(|| format!("no trace path in {out:?}"))?;
            let bytes = std::fs::read(trace_path).map_err(|e| format!("{trace_path}: {e}"))?;
            traces.push(bytes);
        }
        ensure!(traces[0] == traces[1], "trace files differ between runs");
        let lines = String::from_utf8(traces[0].clone()).unwrap().lines().count();
        ensure!(lines >= 2, "expected a multi-pass trace, got {lines} line(s)");
        Ok(format!("two fresh runs wrote identical {lines}-pass traces ({} bytes)", traces[0].len()))
    };
    verdict(10, "end-to-end determinism", run());
}
