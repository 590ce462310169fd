//! Subcommand implementations. Each writes its artifacts plus the resolved
//! config (`config.toml`, seed included) into one directory.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use tacmamba::bench::{bench_accuracy, bench_latency, latency_ratio, strictly_increasing, write_latency_csv, BenchKind};
use tacmamba::checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
use tacmamba::encoder::{encoder_init, EncoderWeights};
use tacmamba::phase::{boundary_recall, segment_default};
use tacmamba::runtime::{read_report, run_dual_rate, write_histogram_csv, write_report, SampleSource};
use tacmamba::sim::{generate_batch, read_trajectory, sidecar_path, write_trajectory, LabeledTrajectory, Sidecar, TRAJECTORY_MAGIC};
use tacmamba::train::{finetune_stage2, pretrain_stage1, read_metrics, write_metrics, MetricRecord};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::{Command, GlobalArgs};

type Result<T> = std::result::Result<T, CliError>;

pub const CONFIG_FILE: &str = "config.toml";

pub fn run(global: &GlobalArgs, command: Command) -> Result<()> {
    let mut cfg = ExperimentConfig::load(global.config.as_deref())?;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    let name = command_name(&command);
    if let Command::Inspect(a) = command {
        return inspect(&a.path);
    }
    apply_flags(&mut cfg, &command);
    let cfg = cfg.resolve()?;
    let out = Artifacts::create(global.out.clone().unwrap_or_else(|| global.out_root.join(name)), &cfg)?;
    match command {
        Command::Gen(a) => gen(&cfg, &out, a.count),
        Command::Segment(a) => segment(&out, &a.inputs, a.tolerance),
        Command::Pretrain(a) => pretrain(&cfg, &out, a.data.data.as_deref()),
        Command::Finetune(a) => finetune(&cfg, &out, &a.checkpoint, a.data.data.as_deref()),
        Command::BenchLatency(_) => latency(&cfg, &out),
        Command::BenchAccuracy(_) => accuracy(&cfg, &out),
        Command::RunAsync(a) => run_async(&cfg, &out, a.checkpoint.as_deref(), a.trajectory.as_deref()),
        Command::Inspect(_) => unreachable!(),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::Segment(_) => "segment",
        Command::Pretrain(_) => "pretrain",
        Command::Finetune(_) => "finetune",
        Command::BenchLatency(_) => "bench-latency",
        Command::BenchAccuracy(_) => "bench-accuracy",
        Command::RunAsync(_) => "run-async",
        Command::Inspect(_) => "inspect",
    }
}

/// Command-line flags win over the config file.
fn apply_flags(cfg: &mut ExperimentConfig, command: &Command) {
    match command {
        Command::Gen(a) => {
            let s = &mut cfg.scenario;
            s.kind = a.scenario.unwrap_or(s.kind);
            s.presses = a.presses.unwrap_or(s.presses);
            s.cycles = a.cycles.unwrap_or(s.cycles);
            s.channels = a.channels.unwrap_or(s.channels);
            s.duration_s = a.duration.unwrap_or(s.duration_s);
        }
        Command::Pretrain(a) => {
            cfg.stage1.steps = a.steps.unwrap_or(cfg.stage1.steps);
            cfg.stage1.target_accuracy = a.target.or(cfg.stage1.target_accuracy);
        }
        Command::Finetune(a) => {
            cfg.stage2.sampler = a.sampler.unwrap_or(cfg.stage2.sampler);
            cfg.stage2.steps = a.steps.unwrap_or(cfg.stage2.steps);
            cfg.stage2.target_critical_accuracy = a.target.or(cfg.stage2.target_critical_accuracy);
        }
        Command::BenchLatency(a) => {
            if let Some(k) = &a.kinds {
                cfg.latency.kinds = k.clone();
            }
            if let Some(l) = &a.lengths {
                cfg.latency.lengths = l.clone();
            }
        }
        Command::BenchAccuracy(a) => {
            cfg.accuracy.stage1.steps = a.steps.unwrap_or(cfg.accuracy.stage1.steps);
            cfg.accuracy.trajectories = a.trajectories.unwrap_or(cfg.accuracy.trajectories);
        }
        Command::RunAsync(a) => {
            cfg.runtime.clock = a.clock.unwrap_or(cfg.runtime.clock);
            cfg.runtime.duration_s = a.duration.unwrap_or(cfg.runtime.duration_s);
        }
        Command::Segment(_) | Command::Inspect(_) => {}
    }
}

struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    fn create(dir: PathBuf, cfg: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let a = Self { dir };
        a.write_config(cfg)?;
        Ok(a)
    }

    fn write_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        self.write_text(CONFIG_FILE, &cfg.to_toml()).map(drop)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
        self.write_text(name, &(text + "\n"))
    }

    /// Replaces any earlier log: metric files append otherwise.
    fn write_metrics(&self, name: &str, records: &[MetricRecord]) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
        }
        write_metrics(&p, records).map_err(CliError::at(&p))?;
        Ok(p)
    }
}

fn tacm_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "tacm"))
                .collect();
            if found.is_empty() {
                return Err(CliError::Missing(format!("{}: no .tacm files", p.display())));
            }
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(CliError::Missing(format!("{}: file not found", p.display())));
        }
    }
    Ok(files)
}

fn dataset(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<Vec<LabeledTrajectory>> {
    let data = match dir {
        Some(d) => tacm_files(&[d.to_path_buf()])?
            .iter()
            .map(|f| read_trajectory(f).map_err(CliError::at(f)))
            .collect::<Result<Vec<_>>>()?,
        None => generate_batch(&cfg.scenario, cfg.dataset.trajectories)?,
    };
    if let Some(t) = data.iter().find(|t| t.channels != cfg.encoder.channels) {
        return Err(CliError::Schema(format!(
            "trajectory has {} channels but the encoder expects {}",
            t.channels, cfg.encoder.channels
        )));
    }
    Ok(data)
}

fn gen(cfg: &ExperimentConfig, out: &Artifacts, count: usize) -> Result<()> {
    if count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    let trajs = generate_batch(&cfg.scenario, count)?;
    for (i, t) in trajs.iter().enumerate() {
        let p = out.path(&format!("traj_{i:04}.tacm"));
        write_trajectory(t, &p).map_err(CliError::at(&p))?;
    }
    say!("gen: {count} trajectories in {}", out.dir.display());
    Ok(())
}

fn segment(out: &Artifacts, inputs: &[PathBuf], tol: usize) -> Result<()> {
    let mut rows = Vec::new();
    let (mut hit, mut total) = (0.0, 0usize);
    for f in tacm_files(inputs)? {
        let traj = read_trajectory(&f).map_err(CliError::at(&f))?;
        let seg = segment_default(&traj).map_err(CliError::at(&f))?;
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
        out.write_json(&format!("{stem}.segments.json"), &seg.to_sidecar())?;
        let detected = seg.contact_onsets();
        let recall = if traj.phases.is_empty() {
            None
        } else {
            let truth = traj.contact_onsets();
            let r = boundary_recall(&detected, &truth, tol);
            hit += r * truth.len() as f64;
            total += truth.len();
            Some(r)
        };
        rows.push(json!({
            "file": f.display().to_string(),
            "phases": seg.k(),
            "detected_onsets": detected.len(),
            "recall": recall,
        }));
    }
    let pooled = (total > 0).then(|| hit / total as f64);
    out.write_json(
        "segment_report.json",
        &json!({ "version": 1, "tolerance": tol, "labeled_onsets": total, "recall": pooled, "files": rows }),
    )?;
    match pooled {
        Some(r) => say!("segment: {} files, onset recall {r:.4} over {total} onsets (+-{tol})", rows.len()),
        None => say!("segment: {} files, no labels", rows.len()),
    }
    Ok(())
}

fn pretrain(cfg: &ExperimentConfig, out: &Artifacts, data_dir: Option<&Path>) -> Result<()> {
    let data = dataset(cfg, data_dir)?;
    let s1 = pretrain_stage1(&data, encoder_init(&cfg.encoder)?, &cfg.stage1)?;
    let mut ck = Checkpoint::with_encoder(&s1.encoder);
    ck.add_section("disc/", &s1.discriminator);
    ck.meta["stage"] = json!(1);
    ck.meta["seed"] = json!(cfg.seed);
    ck.meta["heldout_accuracy"] = json!(s1.heldout_accuracy);
    let p = out.path("pretrain.tacw");
    ck.write(&p).map_err(CliError::at(&p))?;
    out.write_metrics("metrics.jsonl", &s1.log)?;
    out.write_json(
        "summary.json",
        &json!({
            "stage": 1,
            "trajectories": data.len(),
            "steps": s1.steps,
            "initial_loss": s1.initial_loss,
            "heldout_accuracy": s1.heldout_accuracy,
        }),
    )?;
    say!(
        "pretrain: {} steps, initial loss {:.4}, held-out accuracy {:.3} -> {}",
        s1.steps,
        s1.initial_loss,
        s1.heldout_accuracy,
        p.display()
    );
    Ok(())
}

fn load_encoder(path: &Path) -> Result<(Checkpoint, EncoderWeights<f32>)> {
    let ck = Checkpoint::read(path).map_err(CliError::at(path))?;
    let enc = ck.encoder().map_err(CliError::at(path))?;
    Ok((ck, enc))
}

fn finetune(cfg: &ExperimentConfig, out: &Artifacts, checkpoint: &Path, data_dir: Option<&Path>) -> Result<()> {
    let (_, enc) = load_encoder(checkpoint)?;
    let mut cfg = cfg.clone();
    cfg.encoder = *enc.config();
    out.write_config(&cfg)?;
    let data = dataset(&cfg, data_dir)?;
    let s2 = finetune_stage2(&data, &enc, &cfg.stage2)?;
    let mut ck = Checkpoint::with_encoder(&s2.encoder);
    ck.add_section("head/", &s2.head);
    ck.meta["stage"] = json!(2);
    ck.meta["seed"] = json!(cfg.seed);
    ck.meta["sampler"] = json!(cfg.stage2.sampler);
    let p = out.path("finetune.tacw");
    ck.write(&p).map_err(CliError::at(&p))?;
    out.write_metrics("metrics.jsonl", &s2.log)?;
    out.write_json(
        "summary.json",
        &json!({
            "stage": 2,
            "sampler": cfg.stage2.sampler,
            "trajectories": data.len(),
            "steps": s2.steps,
            "steps_to_target": s2.steps_to_target,
            "eval": s2.eval,
        }),
    )?;
    say!(
        "finetune: {} steps, critical accuracy {:.3}, overall {:.3} -> {}",
        s2.steps,
        s2.eval.critical_accuracy,
        s2.eval.overall_accuracy,
        p.display()
    );
    Ok(())
}

fn latency(cfg: &ExperimentConfig, out: &Artifacts) -> Result<()> {
    let rows = bench_latency(&cfg.latency)?;
    let p = out.path("latency.csv");
    write_latency_csv(&rows, &p).map_err(CliError::at(&p))?;
    let ratio = |k, a, b| latency_ratio(&rows, k, a, b);
    let increasing: serde_json::Map<String, Value> = cfg
        .latency
        .kinds
        .iter()
        .map(|&k| (k.tag().to_string(), json!(strictly_increasing(&rows, k))))
        .collect();
    out.write_json(
        "summary.json",
        &json!({
            "tacmamba_5000_over_100": ratio(BenchKind::Tacmamba, 5000, 100),
            "lstm_bi_full_5000_over_500": ratio(BenchKind::LstmBiFull, 5000, 500),
            "attn_full_2000_over_1000": ratio(BenchKind::AttnFull, 2000, 1000),
            "strictly_increasing": increasing,
        }),
    )?;
    for r in &rows {
        say!(
            "{:<13} L={:<5} median {:>10.1} us  p99 {:>10.1} us  peak {:>10} B",
            r.kind.tag(),
            r.length,
            r.median_us,
            r.p99_us,
            r.peak_bytes
        );
    }
    say!("bench-latency: {} rows -> {}", rows.len(), p.display());
    Ok(())
}

fn accuracy(cfg: &ExperimentConfig, out: &Artifacts) -> Result<()> {
    let rows = bench_accuracy(&cfg.accuracy)?;
    let p = out.write_json("accuracy.json", &json!({ "version": 1, "rows": rows }))?;
    for r in &rows {
        say!(
            "{:<12} params {:>7}  steps {:>5}  loss {:.4} -> {:.4}  held-out {:.3}  {:.1} s",
            r.kind.tag(),
            r.params,
            r.steps,
            r.initial_loss,
            r.final_loss,
            r.heldout_accuracy,
            r.train_seconds
        );
    }
    say!("bench-accuracy -> {}", p.display());
    Ok(())
}

fn run_async(cfg: &ExperimentConfig, out: &Artifacts, checkpoint: Option<&Path>, trajectory: Option<&Path>) -> Result<()> {
    let enc = match checkpoint {
        Some(p) => {
            let enc = load_encoder(p)?.1;
            out.write_config(&ExperimentConfig {
                encoder: *enc.config(),
                ..cfg.clone()
            })?;
            enc
        }
        None => encoder_init(&cfg.encoder)?,
    };
    let source = match trajectory {
        Some(p) => SampleSource::trajectory(read_trajectory(p).map_err(CliError::at(p))?)?,
        None => SampleSource::live(tacmamba::sim::ScenarioConfig {
            channels: enc.config().channels,
            ..cfg.scenario.clone()
        })?,
    };
    let report = run_dual_rate(&enc, source, &cfg.runtime)?;
    let p = out.path("run_report.json");
    write_report(&report, &p).map_err(CliError::at(&p))?;
    let h = out.path("latency_histogram.csv");
    write_histogram_csv(&report, &h).map_err(CliError::at(&h))?;
    say!(
        "run-async: {} steps, {} misses, {} queries, median {} us, p99 {} us, max staleness {:.2} ms -> {}",
        report.steps,
        report.deadline_misses,
        report.slow_queries,
        report.latency_median_us,
        report.latency_p99_us,
        report.max_staleness_ms,
        p.display()
    );
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let info = if bytes.starts_with(&TRAJECTORY_MAGIC) {
        let t = read_trajectory(path).map_err(CliError::at(path))?;
        json!({
            "format": "TACM",
            "version": u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
            "channels": t.channels,
            "rate_hz": t.rate_hz,
            "length": t.len(),
            "duration_s": t.len() as f64 / t.rate_hz as f64,
            "sidecar": sidecar_path(path).exists(),
            "phases": t.phases.len(),
            "events": t.events.len(),
        })
    } else if bytes.starts_with(&CHECKPOINT_MAGIC) {
        let ck = Checkpoint::from_bytes(&bytes).map_err(CliError::at(path))?;
        let tensors: Vec<Value> = ck.tensors.views().iter().map(|v| json!({ "name": v.name, "shape": v.shape })).collect();
        json!({
            "format": "TACW",
            "version": u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
            "meta": ck.meta,
            "tensor_count": tensors.len(),
            "values": ck.tensors.len(),
            "tensors": tensors,
        })
    } else {
        inspect_text(path, &bytes)?
    };
    say!("{}", serde_json::to_string_pretty(&info).expect("json value serializes"));
    Ok(())
}

fn inspect_text(path: &Path, bytes: &[u8]) -> Result<Value> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let text = std::str::from_utf8(bytes).map_err(|_| CliError::Corrupt(format!("{}: unrecognized binary file", path.display())))?;
    match ext {
        "jsonl" => {
            let recs = read_metrics(path).map_err(CliError::at(path))?;
            Ok(json!({
                "format": "metrics-jsonl",
                "records": recs.len(),
                "stages": recs.iter().map(|r| r.stage).collect::<std::collections::BTreeSet<_>>(),
                "last": recs.last(),
            }))
        }
        "csv" => {
            let mut lines = text.lines();
            Ok(json!({
                "format": "csv",
                "header": lines.next().unwrap_or("").split(',').collect::<Vec<_>>(),
                "rows": lines.filter(|l| !l.is_empty()).count(),
            }))
        }
        "json" => {
            let v: Value = serde_json::from_str(text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
            if v.get("steps").is_some() && v.get("clock").is_some() {
                let r = read_report(path).map_err(CliError::at(path))?;
                Ok(json!({
                    "format": "run-report",
                    "version": r.version,
                    "clock": r.clock,
                    "fast_hz": r.fast_hz,
                    "slow_hz": r.slow_hz,
                    "steps": r.steps,
                    "slow_queries": r.slow_queries,
                    "deadline_misses": r.deadline_misses,
                    "latency_median_us": r.latency_median_us,
                    "latency_p99_us": r.latency_p99_us,
                }))
            } else if v.get("phases").is_some() {
                let s: Sidecar = serde_json::from_value(v).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
                Ok(json!({ "format": "sidecar", "version": s.version, "phases": s.phases.len(), "events": s.events.len() }))
            } else {
                Ok(json!({ "format": "json", "keys": v.as_object().map(|o| o.keys().cloned().collect::<Vec<_>>()) }))
            }
        }
        _ => Err(CliError::Schema(format!("{}: unrecognized file type", path.display()))),
    }
}
