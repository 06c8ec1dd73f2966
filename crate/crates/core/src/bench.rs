//! Forward + backward timing of a single GLU layer across gates.
//!
//! Every gate at a given shape runs on identical tensors; only the gate
//! differs. Repetitions of different gates are interleaved round-robin so slow
//! drifts in machine load spread evenly over all of them.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{GateKind, GateSpec};
use crate::model::{glu_forward, LayerVars};
use crate::tensor::{Graph, Tensor};

/// Gate order of the CSV columns.
pub const CSV_GATES: [GateKind; 5] = [GateKind::Relu, GateKind::Swish, GateKind::Gelu, GateKind::Identity, GateKind::Sqs];

pub const GRID_BATCHES: [usize; 4] = [256, 512, 1024, 2048];
pub const GRID_DIMS: [usize; 4] = [256, 512, 1024, 2048];

/// Refuse cases whose working set would exceed this many bytes.
const MEMORY_LIMIT: usize = 3 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchCase {
    pub batch: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub gate: GateKind,
    pub repetitions: usize,
    pub warmup: usize,
}

impl BenchCase {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.d_in == 0 || self.d_out == 0 || self.repetitions == 0 {
            return Err(Error::Config(format!("bench case needs positive sizes and repetitions: {self:?}")));
        }
        if self.warmup < 3 {
            return Err(Error::Config(format!("bench warmup must be at least 3, got {}", self.warmup)));
        }
        Ok(())
    }

    /// Rough peak bytes: f32 tensors plus gradients plus f64 gemm staging.
    fn working_set(&self) -> Option<usize> {
        let (b, i, o) = (self.batch, self.d_in, self.d_out);
        let floats = b
            .checked_mul(i)?
            .checked_add(2usize.checked_mul(o)?.checked_mul(i)?)?
            .checked_add(6usize.checked_mul(b)?.checked_mul(o)?)?;
        floats.checked_mul(4 * 2 + 8)
    }
}

/// Timing of one gate at one shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub case: BenchCase,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub median_of_means_ms: f64,
    /// Sum of the weight gradients from the last repetition.
    pub checksum: f64,
    /// `std/mean ≤ 0.2`.
    pub stable: bool,
}

fn median_of_means(samples: &[f64]) -> f64 {
    let groups = samples.len().min(3);
    let size = samples.len().div_ceil(groups);
    let mut means: Vec<f64> = samples.chunks(size).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    means.sort_by(f64::total_cmp);
    let k = means.len();
    if k % 2 == 1 {
        means[k / 2]
    } else {
        0.5 * (means[k / 2 - 1] + means[k / 2])
    }
}

impl Timing {
    fn from_samples(case: BenchCase, samples_ms: Vec<f64>, checksum: f64) -> Self {
        let n = samples_ms.len() as f64;
        let mean_ms = samples_ms.iter().sum::<f64>() / n;
        let std_ms = if samples_ms.len() > 1 {
            (samples_ms.iter().map(|s| (s - mean_ms).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Timing {
            case,
            median_of_means_ms: median_of_means(&samples_ms),
            mean_ms,
            std_ms,
            checksum,
            stable: std_ms <= 0.2 * mean_ms,
            samples_ms,
        }
    }
}

/// Tensors shared by all gates at one shape.
struct Fixture {
    x: Tensor,
    w: Tensor,
    v: Tensor,
}

impl Fixture {
    fn new(batch: usize, d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d_in as f32).sqrt();
        let mut fill = |len: usize, b: f32| (0..len).map(|_| rng.random_range(-b..b)).collect::<Vec<f32>>();
        Ok(Fixture {
            x: Tensor::new(vec![batch, d_in], fill(batch * d_in, 1.0))?,
            w: Tensor::new(vec![d_out, d_in], fill(d_out * d_in, bound))?,
            v: Tensor::new(vec![d_out, d_in], fill(d_out * d_in, bound))?,
        })
    }

    /// One timed forward + backward; returns milliseconds and a gradient checksum.
    fn pass(&self, gate: &GateSpec, parallel: bool) -> Result<(f64, f64)> {
        let start = Instant::now();
        let mut g = Graph::new().with_parallel(parallel);
        let x = g.constant(self.x.clone());
        let vars = LayerVars {
            w: g.param(&self.w),
            v: g.param(&self.v),
            b: None,
            c_bias: None,
        };
        let y = glu_forward(&mut g, &vars, gate, x)?;
        let loss = g.sum(y);
        g.backward(loss)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let grad = g.grad(vars.w).ok_or_else(|| Error::State("missing weight gradient".into()))?;
        let checksum = grad.iter().map(|&v| v as f64).sum::<f64>()
            + g.grad(vars.v).map_or(0.0, |gv| gv.iter().map(|&v| v as f64).sum());
        Ok((ms, std::hint::black_box(checksum)))
    }
}

fn check_case(case: &BenchCase) -> Result<()> {
    case.validate()?;
    match case.working_set() {
        Some(bytes) if bytes <= MEMORY_LIMIT => Ok(()),
        _ => Err(Error::Resource(format!(
            "bench case {}x{}x{} needs more than {} MiB",
            case.batch,
            case.d_in,
            case.d_out,
            MEMORY_LIMIT >> 20
        ))),
    }
}

/// Time one case on its own.
pub fn time_glu_pass(case: &BenchCase, parallel: bool) -> Result<Timing> {
    check_case(case)?;
    let fx = Fixture::new(case.batch, case.d_in, case.d_out, 0)?;
    let spec = GateSpec::of(case.gate);
    let mut checksum = 0.0;
    for _ in 0..case.warmup {
        checksum = fx.pass(&spec, parallel)?.1;
    }
    let mut samples = Vec::with_capacity(case.repetitions);
    for _ in 0..case.repetitions {
        let (ms, c) = fx.pass(&spec, parallel)?;
        samples.push(ms);
        checksum = c;
    }
    Ok(Timing::from_samples(*case, samples, checksum))
}

/// All five gates at one shape, in [`CSV_GATES`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub parallel: bool,
    pub timings: Vec<Timing>,
}

impl BenchRow {
    pub fn timing(&self, gate: GateKind) -> &Timing {
        let i = CSV_GATES.iter().position(|&g| g == gate).expect("every gate has a column");
        &self.timings[i]
    }

    pub fn stable(&self) -> bool {
        self.timings.iter().all(|t| t.stable)
    }
}

/// The full table: batch × dims with `d_in = d_out`.
pub fn default_grid() -> Vec<(usize, usize, usize)> {
    GRID_BATCHES
        .iter()
        .flat_map(|&b| GRID_DIMS.iter().map(move |&d| (b, d, d)))
        .collect()
}

/// Time every gate on every `(batch, d_in, d_out)` shape, interleaving gates.
pub fn bench_suite(grid: &[(usize, usize, usize)], repetitions: usize, warmup: usize, parallel: bool) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for &(batch, d_in, d_out) in grid {
        let cases: Vec<BenchCase> = CSV_GATES
            .iter()
            .map(|&gate| BenchCase {
                batch,
                d_in,
                d_out,
                gate,
                repetitions,
                warmup,
            })
            .collect();
        for c in &cases {
            check_case(c)?;
        }
        let fx = Fixture::new(batch, d_in, d_out, 0)?;
        let specs: Vec<GateSpec> = CSV_GATES.iter().map(|&g| GateSpec::of(g)).collect();
        let mut checksums = vec![0.0; specs.len()];
        for _ in 0..warmup {
            for (i, s) in specs.iter().enumerate() {
                checksums[i] = fx.pass(s, parallel)?.1;
            }
        }
        let mut samples = vec![Vec::with_capacity(repetitions); specs.len()];
        for rep in 0..repetitions {
            // rotate the starting gate so none is always first after a pause
            for j in 0..specs.len() {
                let i = (rep + j) % specs.len();
                let (ms, c) = fx.pass(&specs[i], parallel)?;
                samples[i].push(ms);
                checksums[i] = c;
            }
        }
        let timings = cases
            .into_iter()
            .zip(samples)
            .zip(checksums)
            .map(|((c, s), sum)| Timing::from_samples(c, s, sum))
            .collect();
        rows.push(BenchRow {
            batch,
            d_in,
            d_out,
            parallel,
            timings,
        });
    }
    Ok(rows)
}

/// `batch,d_in,d_out,relu,swiglu,gelu,identity,sqs` in milliseconds (median of means).
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "batch,d_in,d_out,relu,swiglu,gelu,identity,sqs")?;
    for r in rows {
        write!(out, "{},{},{}", r.batch, r.d_in, r.d_out)?;
        for t in &r.timings {
            write!(out, ",{:.3}", t.median_of_means_ms)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Rows with per-repetition samples as pretty JSON.
pub fn write_bench_json<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, rows).map_err(|e| Error::Format(e.to_string()))
}
