//! Seeded synthetic datasets with known discriminative structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, LabeledInstance};
use crate::error::{Error, Result};
use crate::series::TimeSeries;

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("positive sd")
}

fn znorm(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 1e-12 { sd } else { 1.0 };
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

fn smoothstep(t: f64, start: f64, width: f64) -> f64 {
    let u = ((t - start) / width).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn gauss(t: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((t - center) / width).powi(2)).exp()
}

fn split<F>(n_train: usize, n_test: usize, classes: usize, rng: &mut ChaCha8Rng, mut gen: F) -> (Vec<LabeledInstance>, Vec<LabeledInstance>)
where
    F: FnMut(usize, &mut ChaCha8Rng) -> TimeSeries,
{
    let mut make = |n: usize, rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|i| {
                let label = i % classes;
                LabeledInstance {
                    series: gen(label, rng),
                    label,
                }
            })
            .collect::<Vec<_>>()
    };
    let train = make(n_train, rng);
    let test = make(n_test, rng);
    (train, test)
}

/// Two-class motion-capture-like curves, 150 steps, 50 train / 150 test,
/// z-normalized per instance. Class 0 dips before rising and after falling;
/// class 1 overshoots at the start of the plateau.
pub fn gunpoint_like(seed: u64) -> Dataset {
    gunpoint_like_with(seed, 150)
}

/// [`gunpoint_like`] stretched to `steps`: event positions scale with the
/// length, while the widths of the class-specific dips and overshoot stay
/// fixed, so longer series have proportionally narrower discriminative parts.
pub fn gunpoint_like_with(seed: u64, steps: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(0.04);
    let scale = steps as f64 / 150.0;
    let (train, test) = split(50, 150, 2, &mut rng, |label, rng| {
        let rise = rng.random_range(35.0..50.0) * scale;
        let fall = rng.random_range(95.0..110.0) * scale;
        let height = rng.random_range(1.6..2.2);
        let mut v: Vec<f64> = (0..steps)
            .map(|t| {
                let t = t as f64;
                let mut y = height * (smoothstep(t, rise, 12.0) - smoothstep(t, fall, 12.0));
                if label == 0 {
                    y -= 0.35 * gauss(t, rise - 6.0, 3.5) + 0.35 * gauss(t, fall + 18.0, 3.5);
                } else {
                    y += 0.45 * gauss(t, rise + 14.0, 4.0);
                }
                y + noise.sample(rng)
            })
            .collect();
        znorm(&mut v);
        TimeSeries::univariate(v).expect("finite")
    });
    let name = if steps == 150 { "GunPointLike".to_string() } else { format!("GunPointLike{steps}") };
    Dataset::new(name, train, test, 2).expect("consistent")
}

/// Class 1 carries a raised bump over steps `10..=20`; class 0 is noise.
pub fn planted_bump(seed: u64, n_train: usize, n_test: usize, steps: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(0.1);
    let (train, test) = split(n_train, n_test, 2, &mut rng, |label, rng| {
        let v = (0..steps)
            .map(|t| {
                let bump = if label == 1 && (10..=20).contains(&t) { 2.0 } else { 0.0 };
                bump + noise.sample(rng)
            })
            .collect();
        TimeSeries::univariate(v).expect("finite")
    });
    Dataset::new("PlantedBump", train, test, 2).expect("consistent")
}

/// The motif `[0, 1, 0]` (scaled) planted at a random position in class 0;
/// class 1 is smooth low-amplitude noise.
pub fn planted_motif(seed: u64, n_train: usize, n_test: usize, steps: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(0.05);
    let (train, test) = split(n_train, n_test, 2, &mut rng, |label, rng| {
        let mut v: Vec<f64> = (0..steps).map(|_| noise.sample(rng)).collect();
        if label == 0 {
            let at = rng.random_range(0..steps - 3);
            for (k, m) in [0.0, 3.0, 0.0].iter().enumerate() {
                v[at + k] += m;
            }
        }
        TimeSeries::univariate(v).expect("finite")
    });
    Dataset::new("PlantedMotif", train, test, 2).expect("consistent")
}

/// `channels`-channel series where only channel `decisive` carries the class
/// (a level shift of ±1); the others are label-independent sinusoids.
pub fn decisive_channel(
    seed: u64,
    channels: usize,
    decisive: usize,
    n_train: usize,
    n_test: usize,
    steps: usize,
) -> Result<Dataset> {
    if decisive >= channels {
        return Err(Error::Config("decisive channel out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(0.2);
    let (train, test) = split(n_train, n_test, 2, &mut rng, |label, rng| {
        let rows: Vec<Vec<f64>> = (0..channels)
            .map(|c| {
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (0..steps)
                    .map(|t| {
                        let base = if c == decisive {
                            if label == 1 { 1.0 } else { -1.0 }
                        } else {
                            (t as f64 * 0.3 + phase).sin()
                        };
                        base + noise.sample(rng)
                    })
                    .collect()
            })
            .collect();
        TimeSeries::from_channels(&rows).expect("finite")
    });
    Dataset::new("DecisiveChannel", train, test, 2)
}

/// Six-channel, four-class activity-like data: 100 steps, 40 train / 40 test.
/// Each class has its own dominant frequency and amplitude pattern.
pub fn basic_motions_like(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(0.15);
    let (train, test) = split(40, 40, 4, &mut rng, |label, rng| {
        let freq = [0.05, 0.12, 0.25, 0.4][label];
        let amp = [0.3, 1.0, 1.5, 2.0][label];
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|c| {
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let a = amp * (1.0 + 0.2 * c as f64);
                (0..100)
                    .map(|t| a * (std::f64::consts::TAU * freq * t as f64 + phase).sin() + noise.sample(rng))
                    .collect()
            })
            .collect();
        TimeSeries::from_channels(&rows).expect("finite")
    });
    Dataset::new("BasicMotionsLike", train, test, 4).expect("consistent")
}

/// Linearly separable mean-shifted noise.
pub fn mean_shift(seed: u64, n_train: usize, n_test: usize, steps: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(1.0);
    let (train, test) = split(n_train, n_test, 2, &mut rng, |label, rng| {
        let shift = if label == 1 { 0.8 } else { -0.8 };
        TimeSeries::univariate((0..steps).map(|_| shift + noise.sample(rng)).collect())
            .expect("finite")
    });
    Dataset::new("MeanShift", train, test, 2).expect("consistent")
}

/// Class 1 iff the mean levels of the first and second halves share a sign.
/// No linear function of the input separates the classes.
pub fn xor_in_time(seed: u64, n_train: usize, n_test: usize, steps: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(0.3);
    let (train, test) = split(n_train, n_test, 2, &mut rng, |label, rng| {
        let a: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let b = if label == 1 { a } else { -a };
        let half = steps / 2;
        TimeSeries::univariate(
            (0..steps)
                .map(|t| if t < half { a } else { b } + noise.sample(rng))
                .collect(),
        )
        .expect("finite")
    });
    Dataset::new("XorInTime", train, test, 2).expect("consistent")
}

/// Resolves a `synth:<name>[:seed]` dataset identifier.
pub fn by_name(spec: &str) -> Result<Dataset> {
    let mut parts = spec.split(':');
    let name = parts.next().unwrap_or_default();
    let seed = match parts.next() {
        Some(s) => s
            .parse()
            .map_err(|_| Error::Config(format!("bad seed in synthetic dataset {spec:?}")))?,
        None => 0,
    };
    match name {
        "gunpoint" => Ok(gunpoint_like(seed)),
        "gunpoint_long" => Ok(gunpoint_like_with(seed, 300)),
        "bump" => Ok(planted_bump(seed, 40, 40, 50)),
        "motif" => Ok(planted_motif(seed, 40, 40, 30)),
        "decisive" => decisive_channel(seed, 4, 1, 40, 40, 40),
        "motions" => Ok(basic_motions_like(seed)),
        "meanshift" => Ok(mean_shift(seed, 60, 60, 30)),
        "xor" => Ok(xor_in_time(seed, 100, 100, 40)),
        other => Err(Error::Config(format!(
            "unknown synthetic dataset {other:?} (gunpoint, gunpoint_long, bump, motif, decisive, motions, meanshift, xor)"
        ))),
    }
}
