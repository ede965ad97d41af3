use std::hint::black_box;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dprfs::{DprfsGallery, DprfsTemplate};
use super::gallery::Gallery;
use crate::error::{Error, Result};
use crate::heads::CompactTemplate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Compact,
    Dprfs,
}

impl std::str::FromStr for BenchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compact" => Ok(BenchMode::Compact),
            "dprfs" => Ok(BenchMode::Dprfs),
            _ => Err(Error::InvalidInput(format!("unknown bench mode {s:?} (compact|dprfs)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Minimum measured wall time per figure.
    pub min_duration: Duration,
    /// Threads for the parallel figure; `None` uses every core.
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            min_duration: Duration::from_secs(3),
            threads: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub threads: usize,
    pub comparisons: u64,
    pub seconds: f64,
    /// Median rate over the measurement windows.
    pub per_second: f64,
    /// Total comparisons over total time.
    pub sustained_per_second: f64,
    pub windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareInfo {
    pub cpu: String,
    pub logical_cpus: usize,
    pub os: String,
    pub arch: String,
}

impl HardwareInfo {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        HardwareInfo {
            cpu,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub gallery: usize,
    pub probes: usize,
    pub single_thread: Throughput,
    pub all_cores: Throughput,
    pub hardware: HardwareInfo,
}

const WINDOW: Duration = Duration::from_millis(100);

/// Repeats whole passes until `min` has elapsed; the first pass is warm-up
/// and is not counted. Passes are grouped into windows of at least 100 ms and
/// the median window rate is reported, which keeps scheduler hiccups on a
/// shared machine from dominating the figure.
fn measure(threads: usize, min: Duration, per_pass: u64, mut pass: impl FnMut()) -> Throughput {
    pass();
    let start = Instant::now();
    let mut rates = Vec::new();
    let mut passes = 0u64;
    loop {
        let w = Instant::now();
        let mut n = 0u64;
        while w.elapsed() < WINDOW {
            pass();
            n += 1;
        }
        rates.push((n * per_pass) as f64 / w.elapsed().as_secs_f64());
        passes += n;
        if start.elapsed() >= min {
            break;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let comparisons = passes * per_pass;
    rates.sort_by(f64::total_cmp);
    let mid = rates.len() / 2;
    let median = if rates.len() % 2 == 1 {
        rates[mid]
    } else {
        (rates[mid - 1] + rates[mid]) / 2.0
    };
    Throughput {
        threads,
        comparisons,
        seconds,
        per_second: median,
        sustained_per_second: comparisons as f64 / seconds,
        windows: rates.len(),
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

/// Cosine matching of compact templates against a gallery with cached norms.
pub fn bench_compact(gallery: &Gallery, probes: &[CompactTemplate], config: &BenchConfig) -> Result<BenchReport> {
    if gallery.is_empty() || probes.is_empty() {
        return Err(Error::InvalidInput("benchmark needs a gallery and probes".into()));
    }
    let scales = probes
        .iter()
        .map(|p| gallery.probe_scale(p.values()))
        .collect::<Result<Vec<_>>>()?;
    let per_pass = (gallery.len() * probes.len()) as u64;
    let one = |buf: &mut [f32], i: usize| {
        gallery.dots_into(black_box(probes[i].values()), scales[i], buf);
        black_box(&buf);
    };
    let mut buf = vec![0f32; gallery.len()];
    let single = measure(1, config.min_duration, per_pass, || {
        for i in 0..probes.len() {
            one(&mut buf, i);
        }
    });
    let pool = pool(config.threads)?;
    let threads = pool.current_num_threads();
    let all = pool.install(|| {
        measure(threads, config.min_duration, per_pass, || {
            (0..probes.len())
                .into_par_iter()
                .for_each_init(|| vec![0f32; gallery.len()], |b, i| one(b, i));
        })
    });
    Ok(BenchReport {
        mode: BenchMode::Compact,
        gallery: gallery.len(),
        probes: probes.len(),
        single_thread: single,
        all_cores: all,
        hardware: HardwareInfo::detect(),
    })
}

/// Masked per-patch matching of the uncompressed representation.
pub fn bench_dprfs(gallery: &[DprfsTemplate], probes: &[DprfsTemplate], config: &BenchConfig) -> Result<BenchReport> {
    if gallery.is_empty() || probes.is_empty() {
        return Err(Error::InvalidInput("benchmark needs a gallery and probes".into()));
    }
    let g = DprfsGallery::new(gallery)?;
    let prepared = probes
        .iter()
        .map(|p| g.prepare_probe(p))
        .collect::<Result<Vec<_>>>()?;
    let per_pass = (g.len() * probes.len()) as u64;
    let one = |buf: &mut [f64], i: usize| {
        g.scores_into(black_box(&prepared[i]), buf);
        black_box(&buf);
    };
    let mut buf = vec![0f64; g.len()];
    let single = measure(1, config.min_duration, per_pass, || {
        for i in 0..prepared.len() {
            one(&mut buf, i);
        }
    });
    let pool = pool(config.threads)?;
    let threads = pool.current_num_threads();
    let all = pool.install(|| {
        measure(threads, config.min_duration, per_pass, || {
            (0..prepared.len())
                .into_par_iter()
                .for_each_init(|| vec![0f64; g.len()], |b, i| one(b, i));
        })
    });
    Ok(BenchReport {
        mode: BenchMode::Dprfs,
        gallery: g.len(),
        probes: probes.len(),
        single_thread: single,
        all_cores: all,
        hardware: HardwareInfo::detect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn short_runs_report_counts() {
        let mut rng = SeededRng::new(1);
        let ts: Vec<CompactTemplate> = (0..20)
            .map(|_| CompactTemplate::new((0..16).map(|_| rng.normal() as f32).collect()))
            .collect();
        let g = Gallery::new(&ts, &(0..20).collect::<Vec<u32>>()).unwrap();
        let cfg = BenchConfig {
            min_duration: Duration::from_millis(20),
            threads: Some(2),
        };
        let r = bench_compact(&g, &ts[..5], &cfg).unwrap();
        assert_eq!(r.single_thread.comparisons % 100, 0);
        assert!(r.single_thread.per_second > 0.0 && r.all_cores.threads == 2);
        assert!(r.hardware.logical_cpus >= 1);

        let d: Vec<DprfsTemplate> = (0..6)
            .map(|_| DprfsTemplate {
                patches: (0..3).map(|_| (0..4).map(|_| rng.normal() as f32).collect()).collect(),
                visible: vec![true; 3],
            })
            .collect();
        let r = bench_dprfs(&d, &d[..2], &cfg).unwrap();
        assert_eq!(r.mode, BenchMode::Dprfs);
        assert!(bench_dprfs(&d, &[], &cfg).is_err());
    }
}
