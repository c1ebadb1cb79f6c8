//! Timing sweeps of TT and dense linear maps.
//!
//! Times are medians over repeated single-threaded runs after warmup.
//! Intermediate memory is counted from the contraction plan, not measured.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tt_format::{glorot_init_with, seeded_rng, TtSpec};
use crate::tt_linear::LinearMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Dense,
    Tt,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Dense => "dense",
            Family::Tt => "tt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub rank: usize,
    pub max_mode: usize,
    pub batch: usize,
    pub warmups: usize,
    pub reps: usize,
    pub seed: u64,
    pub backward: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            rank: 4,
            max_mode: 16,
            batch: 1,
            warmups: 3,
            reps: 20,
            seed: 0,
            backward: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPoint {
    pub family: Family,
    pub rows: usize,
    pub cols: usize,
    pub d: usize,
    pub max_rank: usize,
    pub max_mode: usize,
    pub batch: usize,
    pub forward_median_s: f64,
    /// `None` when backward timing was skipped.
    pub backward_median_s: Option<f64>,
    pub param_bytes: usize,
    pub intermediate_bytes: usize,
}

impl BenchPoint {
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "family={} M={} N={} d={} rank={} max_mode={} batch={} forward_s={:.9}",
            self.family.as_str(),
            self.rows,
            self.cols,
            self.d,
            self.max_rank,
            self.max_mode,
            self.batch,
            self.forward_median_s
        );
        if let Some(b) = self.backward_median_s {
            let _ = write!(s, " backward_s={b:.9}");
        }
        let _ = write!(s, " param_bytes={} intermediate_bytes={}", self.param_bytes, self.intermediate_bytes);
        s
    }
}

/// Fewest factors of `n`, each at most `max_mode`; among those, the most balanced, largest first.
pub fn factor_modes(n: usize, max_mode: usize) -> Result<Vec<usize>> {
    fn search(n: usize, max: usize, slots: usize, cur: &mut Vec<usize>, best: &mut Option<Vec<usize>>) {
        if n == 1 {
            let score = |v: &[usize]| v.iter().map(|&f| f * f).sum::<usize>();
            if best.as_ref().is_none_or(|b| score(cur) < score(b)) {
                *best = Some(cur.clone());
            }
            return;
        }
        if slots == 0 {
            return;
        }
        for f in (2..=max.min(n)).rev() {
            if n.is_multiple_of(f) {
                cur.push(f);
                search(n / f, f, slots - 1, cur, best);
                cur.pop();
            }
        }
    }
    if n == 0 || max_mode < 2 {
        return Err(Error::config("sizes", format!("cannot factor {n} into modes of at most {max_mode}")));
    }
    if n == 1 {
        return Ok(vec![1]);
    }
    for d in 1..=usize::BITS as usize {
        let mut best = None;
        search(n, max_mode, d, &mut Vec::new(), &mut best);
        if let Some(b) = best {
            return Ok(b);
        }
    }
    Err(Error::config("sizes", format!("{n} has a prime factor above {max_mode}")))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median time per job. Repetitions run round-robin over the jobs, so slow phases of
/// the machine spread over every size instead of landing on one.
fn time_interleaved(warmups: usize, reps: usize, jobs: &mut [Box<dyn FnMut() + '_>]) -> Vec<f64> {
    let mut times = vec![Vec::with_capacity(reps); jobs.len()];
    for round in 0..warmups + reps {
        for (job, t) in jobs.iter_mut().zip(&mut times) {
            let start = Instant::now();
            job();
            if round >= warmups {
                t.push(start.elapsed().as_secs_f64());
            }
        }
    }
    times.into_iter().map(median).collect()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Result<Array2<f64>> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Resource(format!("{rows}x{cols} overflows")))?;
    let mut data: Vec<f64> = Vec::new();
    data.try_reserve_exact(len)
        .map_err(|_| Error::Resource(format!("cannot allocate {} bytes for a {rows}x{cols} matrix", len * 8)))?;
    data.extend((0..len).map(|_| -> f64 { StandardNormal.sample(rng) }));
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length"))
}

/// Builds the map benchmarked at one size.
pub fn bench_map(family: Family, size: usize, settings: &SweepSettings) -> Result<LinearMap> {
    let mut rng = seeded_rng(settings.seed);
    match family {
        Family::Dense => {
            let scale = (2.0 / (2 * size) as f64).sqrt();
            let weight = random_matrix(size, size, &mut rng)? * scale;
            Ok(LinearMap::Dense { weight, bias: None })
        }
        Family::Tt => {
            let modes = factor_modes(size, settings.max_mode)?;
            let spec = TtSpec::uniform(&modes, &modes, settings.rank)?;
            let m = glorot_init_with(&spec, &mut rng).with_bias(None)?;
            Ok(LinearMap::Tt(m))
        }
    }
}

/// Times one square `size x size` map.
pub fn bench_point(family: Family, size: usize, settings: &SweepSettings) -> Result<BenchPoint> {
    Ok(run_scaling_sweep(family, &[size], settings)?.remove(0))
}

struct Prepared {
    size: usize,
    map: LinearMap,
    x: Array2<f64>,
    g: Array2<f64>,
}

pub fn run_scaling_sweep(family: Family, sizes: &[usize], settings: &SweepSettings) -> Result<Vec<BenchPoint>> {
    if settings.reps == 0 || settings.batch == 0 {
        return Err(Error::config("reps", "reps and batch must be at least 1"));
    }
    let mut prepared = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let map = bench_map(family, size, settings)?;
        let mut rng = seeded_rng(settings.seed.wrapping_add(1));
        let x = random_matrix(settings.batch, size, &mut rng)?;
        let g = random_matrix(settings.batch, size, &mut rng)?;
        prepared.push(Prepared { size, map, x, g });
    }
    let forward = {
        let mut jobs: Vec<Box<dyn FnMut() + '_>> = prepared
            .iter()
            .map(|p| -> Box<dyn FnMut() + '_> {
                Box::new(move || {
                    std::hint::black_box(p.map.forward(p.x.view()).expect("shapes fixed"));
                })
            })
            .collect();
        time_interleaved(settings.warmups, settings.reps, &mut jobs)
    };
    let backward = if settings.backward {
        let mut jobs: Vec<Box<dyn FnMut() + '_>> = prepared
            .iter()
            .map(|p| -> Box<dyn FnMut() + '_> {
                Box::new(move || {
                    std::hint::black_box(p.map.backward(p.x.view(), p.g.view()).expect("shapes fixed"));
                })
            })
            .collect();
        time_interleaved(settings.warmups, settings.reps, &mut jobs).into_iter().map(Some).collect()
    } else {
        vec![None; prepared.len()]
    };
    Ok(prepared
        .iter()
        .zip(forward.into_iter().zip(backward))
        .map(|(p, (forward, backward))| {
            let (d, max_rank, max_mode) = match &p.map {
                LinearMap::Tt(m) => (m.spec().d(), m.spec().max_rank(), m.spec().row_modes().max_mode()),
                LinearMap::Dense { .. } => (1, 1, p.size),
            };
            BenchPoint {
                family,
                rows: p.size,
                cols: p.size,
                d,
                max_rank,
                max_mode,
                batch: settings.batch,
                forward_median_s: forward,
                backward_median_s: backward,
                param_bytes: 8 * crate::params::Parameterized::param_count(&p.map),
                intermediate_bytes: 8 * p.map.intermediate_len_per_sample() * settings.batch,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in natural-log units.
    pub residual: f64,
}

/// Ordinary least squares of `ln t` on `ln s`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(s, t)| !(s > 0.0 && t > 0.0 && s.is_finite() && t.is_finite())) {
        return Err(Error::Fit("sizes and times must be positive".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-12 * (1.0 + mx * mx) {
        return Err(Error::Fit("all sizes are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(LogLogFit {
        slope,
        intercept,
        residual: (sse / n).sqrt(),
    })
}

pub fn sweep_fit(points: &[BenchPoint]) -> Result<LogLogFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.rows.max(p.cols) as f64, p.forward_median_s))
        .collect();
    fit_loglog_slope(&pts)
}

/// Benchmark description in the same `key = value` format as run configs.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub families: Vec<Family>,
    pub sizes: Vec<usize>,
    pub settings: SweepSettings,
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut families = vec![Family::Tt];
        let mut sizes = Vec::new();
        let mut s = SweepSettings::default();
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::config(key, format!("cannot parse {v:?}")))
        }
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", i + 1), "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "family" => {
                    families = match v {
                        "tt" => vec![Family::Tt],
                        "dense" => vec![Family::Dense],
                        "both" => vec![Family::Tt, Family::Dense],
                        _ => return Err(Error::config(k, format!("expected tt, dense or both, got {v:?}"))),
                    }
                }
                "sizes" => {
                    sizes = v
                        .split(',')
                        .map(|x| num::<usize>(k, x.trim()))
                        .collect::<Result<Vec<_>>>()?;
                }
                "rank" => s.rank = num(k, v)?,
                "max_mode" => s.max_mode = num(k, v)?,
                "batch" => s.batch = num(k, v)?,
                "warmups" => s.warmups = num(k, v)?,
                "reps" => s.reps = num(k, v)?,
                "seed" => s.seed = num(k, v)?,
                "backward" => {
                    s.backward = match v {
                        "true" => true,
                        "false" => false,
                        _ => return Err(Error::config(k, "expected true or false")),
                    }
                }
                _ => return Err(Error::config(k, "unknown key")),
            }
        }
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::config("sizes", "need one or more positive sizes"));
        }
        if s.reps == 0 || s.batch == 0 || s.rank == 0 {
            return Err(Error::config("reps", "reps, batch and rank must be at least 1"));
        }
        if families.contains(&Family::Tt) {
            for &n in &sizes {
                factor_modes(n, s.max_mode)?;
            }
        }
        Ok(BenchConfig {
            families,
            sizes,
            settings: s,
        })
    }
}

/// One line per point, then a slope line per family with three or more points.
pub fn run_bench_config(cfg: &BenchConfig) -> Result<String> {
    let mut out = String::new();
    for &family in &cfg.families {
        let points = run_scaling_sweep(family, &cfg.sizes, &cfg.settings)?;
        for p in &points {
            let _ = writeln!(out, "{}", p.to_line());
        }
        if points.len() >= 3 {
            let fit = sweep_fit(&points)?;
            let _ = writeln!(
                out,
                "family={} slope={:.4} residual={:.4} points={}",
                family.as_str(),
                fit.slope,
                fit.residual,
                points.len()
            );
        }
    }
    Ok(out)
}
