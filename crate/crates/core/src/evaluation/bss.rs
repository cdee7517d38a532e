use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Default projection filter length, in samples.
pub const DEFAULT_FILTER_LEN: usize = 512;
/// Metric magnitudes are clipped to this many dB.
pub const CLIP_DB: f64 = 100.0;
const RIDGE: f64 = 1e-10;

/// Estimate split into target, interference and artifact parts, each of
/// length `len + filter_len - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BssDecomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// Spectra of zero-padded signals sharing one FFT size.
struct Spectra {
    nfft: usize,
    planner: FftPlanner<f64>,
}

impl Spectra {
    fn forward(&mut self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(self.nfft, Complex64::new(0.0, 0.0));
        self.planner.plan_fft_forward(self.nfft).process(&mut buf);
        buf
    }

    fn inverse(&mut self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.planner.plan_fft_inverse(self.nfft).process(&mut buf);
        let scale = 1.0 / self.nfft as f64;
        buf.into_iter().map(|c| c.re * scale).collect()
    }
}

static RIDGE_WARNED: AtomicBool = AtomicBool::new(false);

/// Solve `g c = d` for a symmetric positive semi-definite `g`. When the
/// factorization fails or its pivots span more than `1 / RIDGE` (delayed
/// copies of band-limited signals are nearly collinear), a ridge of
/// `RIDGE` times the mean diagonal is added.
fn solve_spd(g: DMatrix<f64>, d: DVector<f64>) -> DVector<f64> {
    let m = g.nrows();
    if let Some(ch) = g.clone().cholesky() {
        let pivots = ch.l_dirty().diagonal().map(|v| v * v);
        if pivots.min() > RIDGE * pivots.max() {
            return ch.solve(&d);
        }
    }
    let mean_diag = g.trace() / m as f64;
    if !(mean_diag > 0.0) {
        return DVector::zeros(m);
    }
    if !RIDGE_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("projection system is singular; solving with a ridge of {RIDGE}");
    }
    let mut reg = g;
    for i in 0..m {
        reg[(i, i)] += RIDGE * mean_diag;
    }
    match reg.cholesky() {
        Some(ch) => ch.solve(&d),
        None => DVector::zeros(m),
    }
}

/// Least-squares projection of `estimate` onto every reference delayed by
/// `0..filter_len`. Output has length `len + filter_len - 1`.
fn project(ref_spectra: &[Vec<Complex64>], est_spectrum: &[Complex64], sp: &mut Spectra, n: usize, l: usize) -> Vec<f64> {
    let k = ref_spectra.len();
    let m = k * l;
    let out_len = n + l - 1;
    let nfft = sp.nfft;
    // cross-correlation c_ij(lag) = sum_u r_i(u) r_j(u + lag)
    let mut g = DMatrix::<f64>::zeros(m, m);
    for i in 0..k {
        for j in i..k {
            let prod: Vec<Complex64> = ref_spectra[i].iter().zip(&ref_spectra[j]).map(|(a, b)| a.conj() * b).collect();
            let c = sp.inverse(prod);
            let at = |lag: isize| c[lag.rem_euclid(nfft as isize) as usize];
            for a in 0..l {
                for b in 0..l {
                    // <r_i(. - a), r_j(. - b)> = c_ij(a - b)
                    let v = at(a as isize - b as isize);
                    g[(i * l + a, j * l + b)] = v;
                    g[(j * l + b, i * l + a)] = v;
                }
            }
        }
    }
    let mut d = DVector::<f64>::zeros(m);
    for i in 0..k {
        let prod: Vec<Complex64> = ref_spectra[i].iter().zip(est_spectrum).map(|(a, b)| a.conj() * b).collect();
        let c = sp.inverse(prod);
        for a in 0..l {
            d[i * l + a] = c[a];
        }
    }
    let coef = solve_spd(g, d);
    let mut acc = vec![Complex64::new(0.0, 0.0); nfft];
    for i in 0..k {
        let filt = sp.forward(&coef.as_slice()[i * l..(i + 1) * l]);
        for ((a, f), r) in acc.iter_mut().zip(&filt).zip(&ref_spectra[i]) {
            *a += f * r;
        }
    }
    let mut proj = sp.inverse(acc);
    proj.truncate(out_len);
    proj
}

/// Decompose `estimate` against `references` (each the same length) with
/// time-invariant filters of length `filter_len`.
pub fn bss_decompose(estimate: &[f64], references: &[Vec<f64>], target_index: usize, filter_len: usize) -> Result<BssDecomposition> {
    let n = estimate.len();
    if references.is_empty() || target_index >= references.len() {
        return Err(Error::Index { index: target_index, len: references.len() });
    }
    if filter_len == 0 || n == 0 {
        return Err(Error::Input("estimate and filter length must be non-empty".into()));
    }
    if references.iter().any(|r| r.len() != n) {
        return Err(Error::shape("references and estimate differ in length"));
    }
    if estimate.iter().chain(references.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("signals must be finite".into()));
    }
    let l = filter_len;
    let nfft = (n + l - 1).next_power_of_two();
    let mut sp = Spectra { nfft, planner: FftPlanner::new() };
    let ref_spectra: Vec<Vec<Complex64>> = references.iter().map(|r| sp.forward(r)).collect();
    let est_spectrum = sp.forward(estimate);

    let target_spec = std::slice::from_ref(&ref_spectra[target_index]);
    let s_target = project(target_spec, &est_spectrum, &mut sp, n, l);
    let all = project(&ref_spectra, &est_spectrum, &mut sp, n, l);
    let out_len = n + l - 1;
    let e_interf: Vec<f64> = all.iter().zip(&s_target).map(|(a, s)| a - s).collect();
    let e_artif: Vec<f64> = (0..out_len)
        .map(|t| {
            let e = if t < n { estimate[t] } else { 0.0 };
            e - s_target[t] - e_interf[t]
        })
        .collect();
    Ok(BssDecomposition { s_target, e_interf, e_artif })
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn ratio_db(num: f64, den: f64, floor: f64) -> f64 {
    (10.0 * (num / den.max(floor)).log10()).clamp(-CLIP_DB, CLIP_DB)
}

/// SDR, SIR and SAR in dB, clipped to +-100 dB.
pub fn metrics(d: &BssDecomposition) -> Result<Metrics> {
    let s2 = energy(&d.s_target);
    if !(s2 > 0.0) {
        return Err(Error::UndefinedMetric("target component has zero energy".into()));
    }
    let floor = 1e-12 * s2;
    let distortion: Vec<f64> = d.e_interf.iter().zip(&d.e_artif).map(|(a, b)| a + b).collect();
    let signal: Vec<f64> = d.s_target.iter().zip(&d.e_interf).map(|(a, b)| a + b).collect();
    Ok(Metrics {
        sdr: ratio_db(s2, energy(&distortion), floor),
        sir: ratio_db(s2, energy(&d.e_interf), floor),
        sar: ratio_db(energy(&signal), energy(&d.e_artif), floor),
    })
}
