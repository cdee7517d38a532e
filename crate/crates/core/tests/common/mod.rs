#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cunet::conditioning::{Embedding, FilmMode, GeneratorConfig};
use cunet::model::{build_model, Cunet, Mode, ModelConfig};
use cunet::nn::{Parameterized, Tensor};

/// Dense least-squares decomposition: explicit delay matrices solved by SVD.
/// Returns (s_target, e_interf, e_artif).
pub fn dense_decompose(estimate: &[f64], refs: &[Vec<f64>], target: usize, l: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = estimate.len();
    let rows = n + l - 1;
    let delays = |sel: &[usize]| {
        let mut a = DMatrix::<f64>::zeros(rows, sel.len() * l);
        for (c, &i) in sel.iter().enumerate() {
            for d in 0..l {
                for t in 0..n {
                    a[(t + d, c * l + d)] = refs[i][t];
                }
            }
        }
        a
    };
    let mut e = DVector::<f64>::zeros(rows);
    for t in 0..n {
        e[t] = estimate[t];
    }
    let project = |a: DMatrix<f64>| -> DVector<f64> {
        let svd = a.clone().svd(true, true);
        let coef = svd.solve(&e, 1e-12).expect("svd solve");
        a * coef
    };
    let s = project(delays(&[target]));
    let all: Vec<usize> = (0..refs.len()).collect();
    let p = project(delays(&all));
    let interf = &p - &s;
    let artif = &e - &p;
    (s.as_slice().to_vec(), interf.as_slice().to_vec(), artif.as_slice().to_vec())
}

pub fn random_signal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// The small model used for gradient checks: 3 blocks, 4 base filters,
/// 32x16 input.
pub fn tiny_config(conditioned: bool, film_mode: FilmMode) -> ModelConfig {
    ModelConfig {
        n_blocks: 3,
        base_filters: 4,
        input_height: 32,
        input_width: 16,
        conditioned,
        film_mode,
        ..ModelConfig::default()
    }
}

pub fn tiny_generator(film_mode: FilmMode, embedding: Embedding) -> GeneratorConfig {
    let mut g = GeneratorConfig::new(embedding, film_mode, 4);
    g.hidden_sizes = vec![4, 8, 8];
    g
}

pub fn random_batch(n: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_vec(n, 1, h, w, (0..n * h * w).map(|_| rng.gen_range(0.0..1.0)).collect())
}

pub fn one_hots(tasks: &[usize], n_tasks: usize) -> Vec<Vec<f64>> {
    tasks
        .iter()
        .map(|&t| (0..n_tasks).map(|k| if k == t { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Flattened (parameter, index) coordinates of a model.
pub fn coordinates(model: &Cunet<f64>) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut p_idx = 0;
    model.visit_params(&mut |p| {
        for i in 0..p.len() {
            out.push((p.name.clone(), p_idx, i));
        }
        p_idx += 1;
    });
    out
}

pub fn set_coordinate(model: &mut Cunet<f64>, which: usize, index: usize, delta: f64) {
    let mut k = 0;
    model.visit_params_mut(&mut |p| {
        if k == which {
            p.value[index] += delta;
        }
        k += 1;
    });
}

pub fn gradient_at(model: &Cunet<f64>, which: usize, index: usize) -> f64 {
    let mut k = 0;
    let mut g = 0.0;
    model.visit_params(&mut |p| {
        if k == which {
            g = p.grad[index];
        }
        k += 1;
    });
    g
}

/// Move biases and BN shifts off zero so no ReLU sits exactly on its kink.
pub fn offset_biases(model: &mut Cunet<f64>) {
    let mut k = 0usize;
    model.visit_params_mut(&mut |p| {
        if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
            for v in p.value.iter_mut() {
                *v += 0.05 + 0.01 * (k % 7) as f64;
                k += 1;
            }
        }
    });
}

pub struct GradCheck {
    pub checked: usize,
    pub generator_coords: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Compare analytic gradients with central differences at `n_coords`
/// randomly drawn coordinates. Train mode with a fixed seed, so dropout
/// masks are identical across the perturbed evaluations.
pub fn gradient_check(conditioned: bool, film_mode: FilmMode, embedding: Embedding, n_coords: usize, seed: u64) -> GradCheck {
    let cfg = tiny_config(conditioned, film_mode);
    let gen = conditioned.then(|| tiny_generator(film_mode, embedding));
    let mut model = build_model::<f64>(&cfg, gen.as_ref(), seed).unwrap();
    offset_biases(&mut model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let n = 3;
    let x = random_batch(n, cfg.input_height, cfg.input_width, &mut rng);
    let y = random_batch(n, cfg.input_height, cfg.input_width, &mut rng);
    let z = conditioned.then(|| one_hots(&[0, 1, 3], 4));
    let mode = Mode::Train { seed: 11 };
    let loss = |m: &Cunet<f64>| m.loss(&x, &y, z.as_deref(), mode).unwrap();

    model.zero_grad();
    let cache = model.forward(&x, z.as_deref(), mode).unwrap();
    model.backward(&cache, &y).unwrap();

    let coords = coordinates(&model);
    let h = 1e-5;
    let mut out = GradCheck { checked: 0, generator_coords: 0, max_rel_err: 0.0, worst: String::new() };
    let generator_coords: Vec<usize> = (0..coords.len()).filter(|&i| coords[i].0.starts_with("generator")).collect();
    for k in 0..n_coords {
        // every fourth draw comes from the generator so both parts are covered
        let c = if conditioned && k % 4 == 0 && !generator_coords.is_empty() {
            generator_coords[rng.gen_range(0..generator_coords.len())]
        } else {
            rng.gen_range(0..coords.len())
        };
        let (name, which, index) = &coords[c];
        let analytic = gradient_at(&model, *which, *index);
        let mut m = model.clone();
        set_coordinate(&mut m, *which, *index, h);
        let up = loss(&m);
        set_coordinate(&mut m, *which, *index, -2.0 * h);
        let down = loss(&m);
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs()).max(1e-4);
        let rel = (analytic - numeric).abs() / scale;
        if rel > out.max_rel_err {
            out.max_rel_err = rel;
            out.worst = format!("{name}[{index}]: analytic {analytic:e} numeric {numeric:e}");
        }
        if name.starts_with("generator") {
            out.generator_coords += 1;
        }
        out.checked += 1;
    }
    out
}
