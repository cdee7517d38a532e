//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use cunet::audio::{concat_patches, extract_patches, istft, stft, MagnitudeSpectrogram, HOP, PATCH_FRAMES, WINDOW_SIZE};
use cunet::conditioning::{ConditionVector, Embedding, FilmBatch, FilmMode, Generator, GeneratorConfig};
use cunet::evaluation::{
    bss_decompose, compare_models, evaluate_model, metrics, mixture_baseline, summary_table, write_results_csv,
    EvalResult, CLIP_DB,
};
use cunet::model::{build_model, Mode, ModelConfig};
use cunet::training::{
    default_tasks, progressive_weight, sample_instance, split_dataset, synth_dataset, train_on_tracks, Dataset,
    ModelSpec, Partition, TrainConfig, TrainOutcome, Track,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(value: usize, published: f64, tol: f64) -> bool {
    ((value as f64 - published) / published).abs() <= tol
}

const VARIANTS: [(FilmMode, Embedding, f64); 4] = [
    (FilmMode::Simple, Embedding::FullyConnected, 9.85e6),
    (FilmMode::Complex, Embedding::FullyConnected, 12.0e6),
    (FilmMode::Simple, Embedding::Cnn, 9.84e6),
    (FilmMode::Complex, Embedding::Cnn, 10.42e6),
];

fn criterion_1() -> Check {
    let ded_cfg = ModelConfig::dedicated();
    let ded = build_model::<f32>(&ded_cfg, None, 0).map_err(|e| e.to_string())?;
    let ded_count = ded.count_parameters();
    ensure(ded_count == ded_cfg.core_param_count(), "dedicated allocation differs from layer arithmetic")?;
    ensure(within(ded_count, 9.825e6, 0.05), format!("dedicated {ded_count}"))?;
    ensure(within(4 * ded_count, 39.30e6, 0.05), format!("4 x dedicated {}", 4 * ded_count))?;
    let mut detail = format!("Fix {} (x4 = {})", ded_count, 4 * ded_count);
    let mut cores = Vec::new();
    for (mode, emb, published) in VARIANTS {
        let cfg = ModelConfig::conditioned(mode);
        let g = GeneratorConfig::new(emb, mode, 4);
        let m = build_model::<f32>(&cfg, Some(&g), 0).map_err(|e| e.to_string())?;
        let total = m.count_parameters();
        ensure(total == cfg.total_param_count(Some(&g)), format!("{} allocation differs from arithmetic", g.variant_name()))?;
        ensure(within(total, published, 0.05), format!("{} total {total} vs {published}", g.variant_name()))?;
        cores.push(m.core_parameter_count());
        detail.push_str(&format!(", {} {total}", g.variant_name()));
    }
    ensure(cores.iter().all(|&c| c == ded_count), format!("conditioned cores {cores:?} differ from {ded_count}"))?;
    Ok(detail)
}

fn criterion_2() -> Check {
    let channels = ModelConfig::default().channels();
    let mut counts = Vec::new();
    for (mode, emb, _) in VARIANTS {
        let mut g = Generator::<f64>::new(GeneratorConfig::new(emb, mode, 4), &channels).map_err(|e| e.to_string())?;
        g.init(&mut ChaCha8Rng::seed_from_u64(1));
        let z = ConditionVector::one_hot(1, 4).unwrap().weights().to_vec();
        let (film, _) = g.forward(&[z], None).map_err(|e| e.to_string())?;
        let emitted = film.to_param_sets()[0].total_values();
        let want = if mode == FilmMode::Complex { 2016 } else { 12 };
        ensure(emitted == want, format!("{mode:?}/{emb:?} emits {emitted}, expected {want}"))?;
        counts.push(emitted);
    }
    Ok(format!("complex {} values, simple {} values", counts[1], counts[0]))
}

fn criterion_3() -> Check {
    let mut worst: f64 = 0.0;
    for mode in [FilmMode::Simple, FilmMode::Complex] {
        for seed in 0..3u64 {
            let ded = build_model::<f64>(&tiny_config(false, mode), None, seed).unwrap();
            let gen = tiny_generator(mode, Embedding::Cnn);
            let mut cond = build_model::<f64>(&tiny_config(true, mode), Some(&gen), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_batch(2, 32, 16, &mut rng);
            let channels = tiny_config(true, mode).channels();
            for run in [Mode::Eval, Mode::Train { seed }] {
                let a = ded.forward(&x, None, run).unwrap();
                let film = FilmBatch::constant(mode, &channels, 2, 1.0, 0.0);
                let b = cond.forward_with_film(&x, Some(film), run).unwrap();
                worst = worst.max(max_abs(&a.masked.data, &b.masked.data));
            }
            // the same through the generator, whatever the condition
            cond.generator_mut().unwrap().set_constant_output(1.0, 0.0);
            let c = cond.forward(&x, Some(&one_hots(&[3, 0], 4)), Mode::Eval).unwrap();
            let a = ded.forward(&x, None, Mode::Eval).unwrap();
            worst = worst.max(max_abs(&a.masked.data, &c.masked.data));
        }
        // full-size f32 model
        let ded = build_model::<f32>(&ModelConfig::dedicated(), None, 5).unwrap();
        let mut cond =
            build_model::<f32>(&ModelConfig::conditioned(mode), Some(&GeneratorConfig::new(Embedding::Cnn, mode, 4)), 5).unwrap();
        cond.generator_mut().unwrap().set_constant_output(1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x64 = random_batch(1, 512, 128, &mut rng);
        let x = cunet::nn::Tensor::from_vec(1, 1, 512, 128, x64.data.iter().map(|&v| v as f32).collect());
        let a = ded.forward(&x, None, Mode::Eval).unwrap();
        let z = vec![vec![0.0f32, 1.0, 0.0, 0.0]];
        let b = cond.forward(&x, Some(&z), Mode::Eval).unwrap();
        let diff = a.masked.data.iter().zip(&b.masked.data).map(|(p, q)| (p - q).abs() as f64).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    ensure(worst < 1e-6, format!("max abs diff {worst:e}"))?;
    Ok(format!("max abs diff {worst:.1e} over both FiLM modes"))
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_4() -> Check {
    let r = gradient_check(true, FilmMode::Complex, Embedding::Cnn, 200, 42);
    ensure(r.checked == 200, "not all coordinates checked")?;
    ensure(r.generator_coords > 0, "no generator coordinate sampled")?;
    ensure(r.max_rel_err < 1e-3, format!("max relative error {:e} at {}", r.max_rel_err, r.worst))?;
    Ok(format!(
        "200 coordinates ({} in the generator), max relative error {:.2e}",
        r.generator_coords, r.max_rel_err
    ))
}

fn criterion_5() -> Check {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for n in [8usize, 17, 33, 64] {
        for l in 1..=4 {
            for k in 1..=3 {
                let refs: Vec<Vec<f64>> = (0..k).map(|_| random_signal(n, &mut rng)).collect();
                let est = random_signal(n, &mut rng);
                let target = (n + l) % k;
                let d = bss_decompose(&est, &refs, target, l).map_err(|e| e.to_string())?;
                let (s, i, a) = dense_decompose(&est, &refs, target, l);
                worst = worst.max(max_abs(&d.s_target, &s)).max(max_abs(&d.e_interf, &i)).max(max_abs(&d.e_artif, &a));
            }
        }
    }
    ensure(worst < 1e-8, format!("component error {worst:e}"))?;
    let refs = vec![random_signal(64, &mut rng), random_signal(64, &mut rng)];
    let perfect = metrics(&bss_decompose(&refs[0], &refs, 0, 4).unwrap()).unwrap();
    ensure(
        perfect.sdr == CLIP_DB && perfect.sir == CLIP_DB && perfect.sar == CLIP_DB,
        format!("perfect estimate scored {perfect:?}"),
    )?;
    let noise = random_signal(64, &mut rng);
    let est: Vec<f64> = refs[0].iter().zip(&refs[1]).zip(&noise).map(|((a, b), c)| a + 0.2 * b + 0.1 * c).collect();
    let base = metrics(&bss_decompose(&est, &refs, 0, 4).unwrap()).unwrap();
    let mut scale_err: f64 = 0.0;
    for g in [0.5, 2.0, 10.0] {
        let scaled: Vec<f64> = est.iter().map(|v| v * g).collect();
        let m = metrics(&bss_decompose(&scaled, &refs, 0, 4).unwrap()).unwrap();
        scale_err = scale_err.max((m.sdr - base.sdr).abs()).max((m.sir - base.sir).abs()).max((m.sar - base.sar).abs());
    }
    ensure(scale_err < 1e-6, format!("scale changes metrics by {scale_err:e} dB"))?;
    Ok(format!("dense oracle error {worst:.1e}, perfect = +{CLIP_DB} dB, scale drift {scale_err:.1e} dB"))
}

fn criterion_6(tracks: &[Track]) -> Check {
    let mut worst: f64 = 0.0;
    for t in tracks.iter().take(3) {
        let x = &t.mixture;
        let y = istft(&stft(x, WINDOW_SIZE, HOP).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let (lo, hi) = (WINDOW_SIZE, x.len() - WINDOW_SIZE);
        let err: f64 = (lo..hi).map(|i| (y.samples[i] - x.samples[i]).powi(2)).sum();
        let energy: f64 = (lo..hi).map(|i| x.samples[i].powi(2)).sum();
        worst = worst.max((err / energy).sqrt());

        let mag = MagnitudeSpectrogram { values: t.mixture_mag.clone(), norm_scale: t.norm_scale };
        let patches: Vec<_> = extract_patches(&mag, PATCH_FRAMES, &t.id).unwrap().into_iter().map(|p| p.values).collect();
        let cat = concat_patches(&patches, t.frames()).unwrap();
        for f in 0..cat.rows {
            for k in 0..cat.cols {
                ensure(cat.get(f, k) == t.mixture_mag.get(f, k), format!("patch identity broken at ({f}, {k})"))?;
            }
        }
    }
    ensure(worst < 1e-6, format!("interior relative RMS error {worst:e}"))?;
    Ok(format!("interior relative RMS error {worst:.1e}, patch concatenation exact"))
}

/// Settings of the desk-scale experiment.
fn desk_model(conditioned: bool) -> ModelConfig {
    ModelConfig { n_blocks: 6, base_filters: 4, bn_momentum: 0.9, conditioned, ..ModelConfig::default() }
}

const DEDICATED_EPOCHS: usize = 5;
const CONDITIONED_EPOCHS: usize = 16;
const TIME_LIMIT_S: f64 = 30.0 * 60.0;

struct Desk {
    baseline: Vec<EvalResult>,
    dedicated: Vec<EvalResult>,
    conditioned: Vec<EvalResult>,
    train_secs: Vec<(String, f64)>,
    cond_outcome: TrainOutcome,
    cond_instances: usize,
}

struct Data {
    train: Vec<Track>,
    val: Vec<Track>,
    test: Vec<Track>,
}

fn load_desk_data(dir: &Path) -> Data {
    synth_dataset(30, 10, 20.0, 1, dir).unwrap();
    let ds = Dataset::open(Some(dir), &default_tasks()).unwrap();
    let split = split_dataset(&ds.manifest.ids(Partition::Train), &ds.manifest.ids(Partition::Test), 2, 0).unwrap();
    Data {
        train: ds.load_all(&split.train_tracks).unwrap(),
        val: ds.load_all(&split.val_tracks).unwrap(),
        test: ds.load_all(&split.test_tracks).unwrap(),
    }
}

fn run_desk(data: &Data) -> Desk {
    let tasks = default_tasks();
    let base_cfg = TrainConfig { patience: 5, seed: 3, ..TrainConfig::default() };
    let mut baseline = Vec::new();
    for t in &data.test {
        baseline.extend(mixture_baseline(t, &tasks, 512).unwrap());
    }
    let mut dedicated = Vec::new();
    let mut train_secs = Vec::new();
    for task in &tasks {
        let spec = ModelSpec { model: desk_model(false), generator: None, tasks: tasks.clone(), dedicated_task: Some(task.clone()) };
        let cfg = TrainConfig { max_epochs: DEDICATED_EPOCHS, ..base_cfg.clone() };
        let start = Instant::now();
        let out = train_on_tracks(&spec, &cfg, &data.train, &data.val).unwrap();
        train_secs.push((format!("Fix-{task}"), start.elapsed().as_secs_f64()));
        dedicated.extend(evaluate_model(&out.checkpoint.model, &spec, &data.test, 512).unwrap());
    }
    let generator = GeneratorConfig::new(Embedding::Cnn, FilmMode::Complex, tasks.len());
    let spec = ModelSpec { model: desk_model(true), generator: Some(generator), tasks: tasks.clone(), dedicated_task: None };
    let cfg = TrainConfig { max_epochs: CONDITIONED_EPOCHS, progressive: true, ..base_cfg };
    let start = Instant::now();
    let cond_outcome = train_on_tracks(&spec, &cfg, &data.train, &data.val).unwrap();
    train_secs.push(("CoC-p".into(), start.elapsed().as_secs_f64()));
    let conditioned = evaluate_model(&cond_outcome.checkpoint.model, &spec, &data.test, 512).unwrap();
    let cond_instances = cond_outcome.history.len() * cfg.instances_per_epoch;
    print!("{}", summary_table("mixture baseline", &baseline, &tasks));
    print!("{}", summary_table("dedicated", &dedicated, &tasks));
    print!("{}", summary_table("conditioned CoC (progressive)", &conditioned, &tasks));
    Desk { baseline, dedicated, conditioned, train_secs, cond_outcome, cond_instances }
}

fn mean_gain(results: &[EvalResult], baseline: &[EvalResult], task: &str) -> f64 {
    let gains: Vec<f64> = results
        .iter()
        .filter(|r| r.task == task)
        .map(|r| {
            let b = baseline.iter().find(|b| b.task == task && b.track_id == r.track_id).expect("baseline row");
            r.sdr - b.sdr
        })
        .collect();
    gains.iter().sum::<f64>() / gains.len() as f64
}

fn criterion_7(desk: &Desk) -> Check {
    let mut detail = Vec::new();
    for (name, secs) in &desk.train_secs {
        ensure(*secs <= TIME_LIMIT_S, format!("{name} trained for {secs:.0} s"))?;
    }
    for task in default_tasks() {
        let expected = desk.baseline.iter().filter(|b| b.task == task).count();
        ensure(expected == 10, format!("{expected} baseline rows for {task}"))?;
        for (label, rows) in [("Fix", &desk.dedicated), ("CoC", &desk.conditioned)] {
            ensure(rows.iter().filter(|r| r.task == task).count() == expected, format!("{label} {task} is missing rows"))?;
            let g = mean_gain(rows, &desk.baseline, &task);
            ensure(g >= 3.0, format!("{label} {task} gains only {g:.2} dB"))?;
            detail.push(format!("{label}-{task} +{g:.1}"));
        }
    }
    let cmp = compare_models(&desk.conditioned, &desk.dedicated).map_err(|e| e.to_string())?;
    let r = &cmp.global;
    ensure(r.n_points == 4 * 10 * 3, format!("{} pooled points", r.n_points))?;
    ensure(r.r >= 0.8 && r.p_value < 0.01, format!("pooled r = {:.3}, p = {:.2e}", r.r, r.p_value))?;
    let longest = desk.train_secs.iter().map(|(_, s)| *s).fold(0.0, f64::max);
    Ok(format!(
        "SDR gains (dB) {}; pooled r = {:.3}, p = {:.1e}, n = {}; longest training {longest:.0} s",
        detail.join(" "),
        r.r,
        r.p_value,
        r.n_points
    ))
}

fn criterion_8(data: &Data, desk: &Desk) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 10_000u64;
    let mut weights = Vec::new();
    for counter in 1..=n {
        let task = (counter % 4) as usize;
        let inst = sample_instance(&data.train, task, PATCH_FRAMES, &mut rng).unwrap();
        let (z, y, w) = progressive_weight(&inst.z, &inst.y.values, counter, 5, &mut rng);
        if let Some(w) = w {
            ensure(counter % 5 == 0, format!("instance {counter} weighted off cadence"))?;
            ensure((z.weights()[task] - w).abs() < 1e-15, "condition not scaled by w")?;
            let k = inst.y.values.data.iter().position(|v| *v > 0.0).unwrap();
            ensure((y.data[k] - w * inst.y.values.data[k]).abs() < 1e-12, "target not scaled by w")?;
            weights.push(w);
        } else {
            ensure(z == inst.z && y == inst.y.values, format!("instance {counter} altered"))?;
        }
    }
    ensure(weights.len() as u64 == n / 5, format!("{} weighted of {n}", weights.len()))?;
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    ensure((0.47..=0.53).contains(&mean), format!("weight mean {mean:.4}"))?;
    let trained = desk.cond_outcome.progressive_weights.len();
    ensure(trained == desk.cond_instances / 5, format!("training weighted {trained} of {}", desk.cond_instances))?;
    for task in default_tasks() {
        let g = mean_gain(&desk.conditioned, &desk.baseline, &task);
        ensure(g >= 3.0, format!("progressive model gains {g:.2} dB on {task}"))?;
    }
    Ok(format!(
        "{} of {n} weighted, mean {mean:.4}; training run weighted {trained} of {} instances and every conditioned gain is at least 3 dB",
        weights.len(),
        desk.cond_instances
    ))
}

/// Synthesize, train a conditioned and a dedicated model, evaluate, and
/// return every artifact as bytes.
fn end_to_end(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let tasks = default_tasks();
    let manifest = synth_dataset(5, 2, 5.0, 77, dir).unwrap();
    let ds = Dataset::open(Some(dir), &tasks).unwrap();
    let split = split_dataset(&manifest.ids(Partition::Train), &manifest.ids(Partition::Test), 1, 4).unwrap();
    let train = ds.load_all(&split.train_tracks).unwrap();
    let val = ds.load_all(&split.val_tracks).unwrap();
    let test = ds.load_all(&split.test_tracks).unwrap();
    let model = ModelConfig { n_blocks: 3, base_filters: 2, input_width: 16, bn_momentum: 0.9, ..ModelConfig::default() };
    let mut g = GeneratorConfig::new(Embedding::Cnn, FilmMode::Complex, 4);
    g.hidden_sizes = vec![4, 8, 8];
    let specs = [
        ModelSpec { model: ModelConfig { conditioned: true, ..model.clone() }, generator: Some(g), tasks: tasks.clone(), dedicated_task: None },
        ModelSpec { model, generator: None, tasks: tasks.clone(), dedicated_task: Some("drums".into()) },
    ];
    let cfg = TrainConfig { batch_size: 4, max_epochs: 2, instances_per_epoch: 20, seed: 13, ..TrainConfig::default() };
    let mut out = vec![("manifest".to_string(), manifest.to_text().into_bytes())];
    for (_, id) in &manifest.tracks {
        out.push((format!("{id}/mixture.wav"), std::fs::read(dir.join(id).join("mixture.wav")).unwrap()));
    }
    for (k, spec) in specs.iter().enumerate() {
        let o = train_on_tracks(spec, &cfg, &train, &val).unwrap();
        out.push((format!("model{k}.ckpt"), o.checkpoint.to_bytes()));
        let results = evaluate_model(&o.checkpoint.model, spec, &test, 64).unwrap();
        out.push((format!("model{k}.csv"), write_results_csv(&results).unwrap().into_bytes()));
    }
    out
}

fn criterion_9() -> Check {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = end_to_end(a.path());
    let second = end_to_end(b.path());
    ensure(first.len() == second.len(), "different artifact sets")?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, format!("{name} differs between runs"))?;
    }
    let bytes: usize = first.iter().map(|(_, v)| v.len()).sum();
    Ok(format!("{} artifacts ({bytes} bytes) identical across two seeded runs", first.len()))
}

fn run(id: &str, title: &str, f: impl FnOnce() -> Check, failures: &mut usize) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(d) => println!("criterion {id} {title}: PASS ({secs:.1} s) {d}"),
        Err(d) => {
            *failures += 1;
            println!("criterion {id} {title}: FAIL ({secs:.1} s) {d}");
        }
    }
    result.is_ok()
}

fn main() {
    let mut failures = 0;
    run("1", "parameter accounting", criterion_1, &mut failures);
    run("2", "FiLM cardinality", criterion_2, &mut failures);
    run("3", "identity conditioning", criterion_3, &mut failures);
    run("4", "gradient correctness", criterion_4, &mut failures);
    run("5", "BSS-eval oracle", criterion_5, &mut failures);

    let dir = tempfile::tempdir().unwrap();
    let data = load_desk_data(dir.path());
    run("6", "pipeline round trip", || criterion_6(&data.test), &mut failures);

    let desk = catch_unwind(AssertUnwindSafe(|| run_desk(&data)));
    match desk {
        Ok(desk) => {
            run("7", "desk-scale multitask", || criterion_7(&desk), &mut failures);
            run("8", "progressive training", || criterion_8(&data, &desk), &mut failures);
        }
        Err(_) => {
            failures += 2;
            println!("criterion 7 desk-scale multitask: FAIL experiment did not complete");
            println!("criterion 8 progressive training: FAIL experiment did not complete");
        }
    }
    run("9", "determinism", criterion_9, &mut failures);

    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
