//! Compound Poisson path simulation.
//!
//! Every path draws from its own ChaCha8 stream keyed by `(seed, path index)`,
//! so batches are bit-identical regardless of how rayon splits the work.
//! Between claims the loss `L_s = S_s - c s` drifts down, so the running
//! maximum is attained at time 0 or at a claim epoch.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distortion::{choquet_empirical, Distortion};
use crate::error::{Error, Result};
use crate::model::ExponentialLine;

const TAG_MAX_LOSS: u64 = 0x6d61_785f_6c6f_7373;
const TAG_OUTER: u64 = 0x6f75_7465_7200_0001;
const TAG_INNER: u64 = 0x696e_6e65_7200_0002;
const TAG_CLAIMS: u64 = 0x636c_6169_6d73_0003;
const TAG_PATHS: u64 = 0x7061_7468_7300_0004;
const TAG_BOOT: u64 = 0x626f_6f74_0000_0005;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of an independent family of streams derived from `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// RNG for path `stream` under `seed`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn exp_draw<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    // inverse CDF; 1 - U lies in (0, 1]
    -mean * (1.0 - rng.random::<f64>()).ln()
}

/// `max(0, max_i (Σ_{j<=i} Y_j - c T_i))` for claims `(T_i, Y_i)` in time order.
pub fn max_loss_from_jumps(times: &[f64], sizes: &[f64], c: f64) -> f64 {
    let mut cum = 0.0;
    let mut best: f64 = 0.0;
    for (t, y) in times.iter().zip(sizes) {
        cum += y;
        best = best.max(cum - c * t);
    }
    best
}

/// Running maximum of one path on `[0, t]`.
pub fn max_loss_path<R: Rng>(line: &ExponentialLine, t: f64, rng: &mut R) -> f64 {
    let (lambda, mu, c) = (line.lambda(), line.mu(), line.c());
    let inter = 1.0 / lambda;
    let mut time = exp_draw(rng, inter);
    let mut cum = 0.0;
    let mut best: f64 = 0.0;
    while time <= t {
        cum += exp_draw(rng, mu);
        best = best.max(cum - c * time);
        time += exp_draw(rng, inter);
    }
    best
}

/// A reproducible batch of running-maximum samples `M_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBatch {
    line: ExponentialLine,
    horizon: f64,
    seed: u64,
    samples: Vec<f64>,
}

impl SimBatch {
    pub fn line(&self) -> &ExponentialLine {
        &self.line
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Writes the header and one sample per line. Samples use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# maxdeficit simbatch v1")?;
        writeln!(
            w,
            "# lambda={} mu={} c={} t={} n={} seed={}",
            self.line.lambda(),
            self.line.mu(),
            self.line.c(),
            self.horizon,
            self.samples.len(),
            self.seed
        )?;
        writeln!(w, "max_loss")?;
        for x in &self.samples {
            writeln!(w, "{x}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut params: Vec<(String, String)> = Vec::new();
        let mut samples = Vec::new();
        let mut seen_column = false;
        for line in r.lines() {
            let line = line.map_err(|e| Error::argument(format!("read error: {e}")))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for tok in rest.split_whitespace() {
                    if let Some((k, v)) = tok.split_once('=') {
                        params.push((k.to_string(), v.to_string()));
                    }
                }
            } else if !seen_column {
                if line != "max_loss" {
                    return Err(Error::argument(format!("unexpected column header '{line}'")));
                }
                seen_column = true;
            } else {
                samples.push(
                    line.parse::<f64>()
                        .map_err(|_| Error::argument(format!("bad sample '{line}'")))?,
                );
            }
        }
        let get = |key: &str| -> Result<&str> {
            params
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::argument(format!("batch header lacks '{key}'")))
        };
        let num = |key: &str| -> Result<f64> {
            get(key)?
                .parse::<f64>()
                .map_err(|_| Error::argument(format!("bad header value for '{key}'")))
        };
        let line = ExponentialLine::new(num("lambda")?, num("mu")?, num("c")?)?;
        let n: usize = get("n")?
            .parse()
            .map_err(|_| Error::argument("bad header value for 'n'"))?;
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| Error::argument("bad header value for 'seed'"))?;
        if n != samples.len() {
            return Err(Error::argument(format!(
                "header announces {n} samples, file holds {}",
                samples.len()
            )));
        }
        Ok(SimBatch {
            line,
            horizon: num("t")?,
            seed,
            samples,
        })
    }
}

/// Simulate `n` independent copies of `M_t`.
pub fn simulate_max_loss(line: &ExponentialLine, t: f64, n: usize, seed: u64) -> Result<SimBatch> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("horizon must be positive, got {t}")));
    }
    if n == 0 {
        return Err(Error::argument("need at least one path"));
    }
    let key = derive_seed(seed, TAG_MAX_LOSS);
    let samples: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| max_loss_path(line, t, &mut path_rng(key, i)))
        .collect();
    Ok(SimBatch {
        line: *line,
        horizon: t,
        seed,
        samples,
    })
}

/// Empirical `P(M_t > u)` with a 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuinEstimate {
    pub probability: f64,
    pub half_width: f64,
}

impl RuinEstimate {
    /// Binomial standard error.
    pub fn std_error(&self) -> f64 {
        self.half_width / 1.96
    }
}

pub fn estimate_finite_ruin(batch: &SimBatch, u: f64) -> RuinEstimate {
    if u < 0.0 {
        return RuinEstimate {
            probability: 1.0,
            half_width: 0.0,
        };
    }
    let n = batch.samples.len() as f64;
    let hits = batch.samples.iter().filter(|m| **m > u).count() as f64;
    let p = hits / n;
    RuinEstimate {
        probability: p,
        half_width: 1.96 * (p * (1.0 - p) / n).sqrt(),
    }
}

/// Information at epoch `time`: realized loss `L_r` and running maximum `M_r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub time: f64,
    pub loss: f64,
    pub running_max: f64,
}

impl PathState {
    pub fn new(time: f64, loss: f64, running_max: f64) -> Result<Self> {
        if !(time >= 0.0) {
            return Err(Error::domain(format!("state time must be >= 0, got {time}")));
        }
        if running_max < loss.max(0.0) {
            return Err(Error::domain(format!(
                "running maximum {running_max} is below max(0, L_r) = {}",
                loss.max(0.0)
            )));
        }
        Ok(PathState {
            time,
            loss,
            running_max,
        })
    }

    pub fn initial() -> Self {
        PathState {
            time: 0.0,
            loss: 0.0,
            running_max: 0.0,
        }
    }
}

/// Run one path up to time `r` and report its state.
pub fn simulate_state<R: Rng>(line: &ExponentialLine, r: f64, rng: &mut R) -> PathState {
    let (lambda, mu, c) = (line.lambda(), line.mu(), line.c());
    let mut time = exp_draw(rng, 1.0 / lambda);
    let mut cum = 0.0;
    let mut best: f64 = 0.0;
    while time <= r {
        cum += exp_draw(rng, mu);
        best = best.max(cum - c * time);
        time += exp_draw(rng, 1.0 / lambda);
    }
    PathState {
        time: r,
        loss: cum - c * r,
        running_max: best,
    }
}

/// Samples of `M_t` given the information at `state.time`:
/// `max(M_r, L_r + M'_{t-r})` with `M'` a fresh running maximum.
pub fn conditional_max_samples(
    line: &ExponentialLine,
    t: f64,
    state: &PathState,
    n_inner: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(state.time < t) {
        return Err(Error::domain(format!(
            "conditioning epoch {} must be before the horizon {t}",
            state.time
        )));
    }
    if n_inner == 0 {
        return Err(Error::argument("need at least one inner path"));
    }
    let rest = t - state.time;
    let key = derive_seed(seed, TAG_INNER);
    Ok((0..n_inner as u64)
        .into_par_iter()
        .map(|j| {
            let fresh = max_loss_path(line, rest, &mut path_rng(key, j));
            state.running_max.max(state.loss + fresh)
        })
        .collect())
}

/// Output of [`supermartingale_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupermartingaleReport {
    /// Measure at time 0 from the pooled conditional samples.
    pub rho_0: f64,
    /// Average of the conditional measures at time `r`.
    pub mean_rho_r: f64,
    /// Standard error of `mean_rho_r` across outer paths.
    pub std_error: f64,
}

/// Nested Monte Carlo comparison of `rho_{g,0}` and `E[rho_{g,r}]`.
///
/// The pooled inner samples form an unconditional sample of `M_t`, so both
/// sides are computed from the same draws.
pub fn supermartingale_check(
    line: &ExponentialLine,
    g: &Distortion,
    t: f64,
    r: f64,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<SupermartingaleReport> {
    if !g.is_concave() {
        return Err(Error::domain(format!("distortion {g} is not concave")));
    }
    if !(r >= 0.0 && r < t) {
        return Err(Error::domain(format!("need 0 <= r < t, got r={r}, t={t}")));
    }
    if n_outer < 2 || n_inner == 0 {
        return Err(Error::argument("need n_outer >= 2 and n_inner >= 1"));
    }
    let outer_key = derive_seed(seed, TAG_OUTER);
    let per_outer: Vec<(f64, Vec<f64>)> = (0..n_outer as u64)
        .into_par_iter()
        .map(|i| -> Result<(f64, Vec<f64>)> {
            let state = simulate_state(line, r, &mut path_rng(outer_key, i));
            let inner = conditional_max_samples(line, t, &state, n_inner, derive_seed(seed, i))?;
            Ok((choquet_empirical(g, &inner)?, inner))
        })
        .collect::<Result<_>>()?;

    let rhos: Vec<f64> = per_outer.iter().map(|(rho, _)| *rho).collect();
    let pooled: Vec<f64> = per_outer.into_iter().flat_map(|(_, s)| s).collect();
    let rho_0 = choquet_empirical(g, &pooled)?;
    let n = rhos.len() as f64;
    let mean = rhos.iter().sum::<f64>() / n;
    let var = rhos.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SupermartingaleReport {
        rho_0,
        mean_rho_r: mean,
        std_error: (var / n).sqrt(),
    })
}

/// Capital needed at `state.time` for the rolling horizon: `L_s + rho`.
pub fn rolling_requirement(state: &PathState, baseline_rho: f64) -> f64 {
    state.loss + baseline_rho
}

/// Aggregate claims `S_h` for a compound Poisson sum with exponential sizes.
/// `lambda = 0` gives identically zero claims.
pub fn aggregate_claims(lambda: f64, mu: f64, horizon: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !(mu > 0.0) || !(horizon > 0.0) {
        return Err(Error::domain(format!(
            "aggregate claims need lambda >= 0, mu > 0, horizon > 0 (got {lambda}, {mu}, {horizon})"
        )));
    }
    if lambda == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let key = derive_seed(seed, TAG_CLAIMS);
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(key, i);
            let mut time = exp_draw(&mut rng, 1.0 / lambda);
            let mut total = 0.0;
            while time <= horizon {
                total += exp_draw(&mut rng, mu);
                time += exp_draw(&mut rng, 1.0 / lambda);
            }
            total
        })
        .collect())
}

/// Bootstrap standard error of the empirical Choquet integral.
pub fn bootstrap_choquet_se(g: &Distortion, samples: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if resamples < 2 {
        return Err(Error::argument("bootstrap needs at least two resamples"));
    }
    let n = samples.len();
    let key = derive_seed(seed, TAG_BOOT);
    let stats: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = path_rng(key, b);
            let draw: Vec<f64> = (0..n).map(|_| samples[rng.random_range(0..n)]).collect();
            choquet_empirical(g, &draw)
        })
        .collect::<Result<_>>()?;
    let m = stats.iter().sum::<f64>() / resamples as f64;
    let var = stats.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (resamples as f64 - 1.0);
    Ok(var.sqrt())
}

/// Full claim record of one path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimPath {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub sizes: Vec<f64>,
}

impl ClaimPath {
    pub fn simulate<R: Rng>(line: &ExponentialLine, horizon: f64, rng: &mut R) -> Self {
        let inter = 1.0 / line.lambda();
        let mut times = Vec::new();
        let mut sizes = Vec::new();
        let mut time = exp_draw(rng, inter);
        while time <= horizon {
            times.push(time);
            sizes.push(exp_draw(rng, line.mu()));
            time += exp_draw(rng, inter);
        }
        ClaimPath {
            horizon,
            times,
            sizes,
        }
    }

    /// Aggregate claims up to and including time `s`.
    pub fn claims_at(&self, s: f64) -> f64 {
        let k = self.times.partition_point(|t| *t <= s);
        self.sizes[..k].iter().sum()
    }

    pub fn loss_at(&self, s: f64, c: f64) -> f64 {
        self.claims_at(s) - c * s
    }

    pub fn max_loss(&self, c: f64) -> f64 {
        max_loss_from_jumps(&self.times, &self.sizes, c)
    }
}

/// Running maximum of `Σ_k L^(k)` for paths sharing a horizon, with total
/// premium rate `c_total`.
pub fn combined_max_loss(paths: &[&ClaimPath], c_total: f64) -> f64 {
    let mut events: Vec<(f64, f64)> = paths
        .iter()
        .flat_map(|p| p.times.iter().copied().zip(p.sizes.iter().copied()))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (times, sizes): (Vec<f64>, Vec<f64>) = events.into_iter().unzip();
    max_loss_from_jumps(&times, &sizes, c_total)
}

/// `n` claim paths keyed by `(seed, index)`.
pub fn simulate_claim_paths(line: &ExponentialLine, horizon: f64, n: usize, seed: u64) -> Vec<ClaimPath> {
    let key = derive_seed(seed, TAG_PATHS);
    (0..n as u64)
        .into_par_iter()
        .map(|i| ClaimPath::simulate(line, horizon, &mut path_rng(key, i)))
        .collect()
}
