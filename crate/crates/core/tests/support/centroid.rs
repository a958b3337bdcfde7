//! Plain nearest-centroid classifier for the default configuration
//! (normalize, nine features, Euclidean), written without the pipeline code.

use std::collections::BTreeMap;
use std::path::Path;

fn read(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("rate="))
        .map(|l| l.trim().parse().unwrap())
        .collect()
}

fn features(raw: &[f64]) -> Vec<f64> {
    let peak = raw.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let xs: Vec<f64> = if peak > 0.0 { raw.iter().map(|x| x / peak).collect() } else { raw.to_vec() };
    let n = xs.len();
    let ms = |s: &[f64]| s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
    let mut crossings = 0;
    for i in 1..n {
        if (xs[i - 1] < 0.0) != (xs[i] < 0.0) {
            crossings += 1;
        }
    }
    let mut f = vec![
        xs.iter().sum::<f64>() / n as f64,
        ms(&xs).sqrt(),
        crossings as f64 / (n - 1) as f64,
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    ];
    for k in 0..4 {
        f.push(ms(&xs[k * n / 4..(k + 1) * n / 4]));
    }
    f
}

pub struct NearestCentroid {
    centroids: BTreeMap<i64, Vec<f64>>,
}

impl NearestCentroid {
    pub fn fit(samples: &[(i64, &Path)]) -> NearestCentroid {
        let mut sums: BTreeMap<i64, (Vec<f64>, usize)> = BTreeMap::new();
        for (subject, path) in samples {
            let f = features(&read(path));
            let e = sums.entry(*subject).or_insert_with(|| (vec![0.0; f.len()], 0));
            for (s, v) in e.0.iter_mut().zip(&f) {
                *s += v;
            }
            e.1 += 1;
        }
        let centroids = sums.into_iter().map(|(s, (v, n))| (s, v.into_iter().map(|x| x / n as f64).collect())).collect();
        NearestCentroid { centroids }
    }

    pub fn predict(&self, path: &Path) -> i64 {
        let f = features(&read(path));
        let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let mut best = (f64::INFINITY, 0);
        for (s, c) in &self.centroids {
            let d = dist(c);
            if d < best.0 {
                best = (d, *s);
            }
        }
        best.1
    }

    pub fn accuracy(&self, samples: &[(i64, &Path)]) -> f64 {
        let hits = samples.iter().filter(|(s, p)| self.predict(p) == *s).count();
        hits as f64 / samples.len() as f64
    }
}
