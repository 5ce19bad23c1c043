//! Exogenous scenarios: origin-destination demand intensities, discrete
//! travel-time fields, order arrivals, and the fare model.
//!
//! A scenario field pairs an `m x m` nonnegative demand matrix `D` (expected
//! requests per step) with an `m x m` travel-time matrix `T` (integer step
//! multiples, >= 1, unit diagonal). Datasets are either ingested from trip
//! records or produced synthetically.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexgrid::{CellId, HexGrid};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("csv parse error on line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("field dimension {got} does not match grid size {expected}")]
    Dimension { got: usize, expected: usize },
}

/// One step of exogenous input: demand intensities and travel times.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioField {
    m: usize,
    demand: Vec<f64>,
    travel: Vec<i32>,
}

impl ScenarioField {
    /// Construct a field, asserting the invariants `D >= 0`, `T >= 1`,
    /// `T(h,h) = 1`.
    pub fn new(m: usize, demand: Vec<f64>, travel: Vec<i32>) -> Self {
        assert_eq!(demand.len(), m * m);
        assert_eq!(travel.len(), m * m);
        assert!(demand.iter().all(|&d| d >= 0.0), "demand must be nonnegative");
        assert!(travel.iter().all(|&t| t >= 1), "travel times must be >= 1");
        for h in 0..m {
            assert_eq!(travel[h * m + h], 1, "diagonal travel time must be 1");
        }
        ScenarioField { m, demand, travel }
    }

    pub fn zeros(m: usize) -> Self {
        let mut travel = vec![1; m * m];
        for t in travel.iter_mut() {
            *t = 1;
        }
        ScenarioField { m, demand: vec![0.0; m * m], travel }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn demand(&self, o: CellId, d: CellId) -> f64 {
        self.demand[o * self.m + d]
    }

    pub fn travel(&self, o: CellId, d: CellId) -> i32 {
        self.travel[o * self.m + d]
    }

    pub fn demand_raw(&self) -> &[f64] {
        &self.demand
    }

    pub fn travel_raw(&self) -> &[i32] {
        &self.travel
    }

    /// Total expected requests this step.
    pub fn total_demand(&self) -> f64 {
        self.demand.iter().sum()
    }

    /// Demand outflow per origin hex.
    pub fn outflow(&self) -> Vec<f64> {
        (0..self.m).map(|h| self.demand[h * self.m..(h + 1) * self.m].iter().sum()).collect()
    }

    /// Demand inflow per destination hex.
    pub fn inflow(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.m];
        for o in 0..self.m {
            for d in 0..self.m {
                v[d] += self.demand[o * self.m + d];
            }
        }
        v
    }
}

/// A single trip observation, already binned to a step and geocoded to cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripRecord {
    pub pickup_step: usize,
    pub origin: CellId,
    pub dest: CellId,
    pub duration_steps: i32,
}

/// Trip revenue model: flat base plus a per-km rate on hop distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FareModel {
    pub base_fare: f64,
    pub per_km: f64,
}

impl Default for FareModel {
    fn default() -> Self {
        FareModel { base_fare: 2.5, per_km: 1.0 }
    }
}

/// Revenue for a trip between two cells.
pub fn fare(model: &FareModel, origin: CellId, dest: CellId, grid: &HexGrid) -> f64 {
    model.base_fare + model.per_km * grid.distance_km(origin, dest)
}

/// A full scenario sequence over the horizon.
#[derive(Debug, Clone)]
pub struct ScenarioDataset {
    pub fields: Vec<ScenarioField>,
    pub dt_min: f64,
    pub fare_params: FareModel,
}

impl ScenarioDataset {
    pub fn horizon(&self) -> usize {
        self.fields.len()
    }

    pub fn m(&self) -> usize {
        self.fields.first().map_or(0, |f| f.m())
    }

    /// Per-coordinate sample variance of the flattened scenario vectors
    /// (demand block then travel block), used for the ground-metric weights.
    pub fn coordinate_variance(&self) -> Vec<f64> {
        let m2 = self.m() * self.m();
        let q = 2 * m2;
        let n = self.horizon().max(1) as f64;
        let mut mean = vec![0.0; q];
        for f in &self.fields {
            for (i, &d) in f.demand_raw().iter().enumerate() {
                mean[i] += d / n;
            }
            for (i, &t) in f.travel_raw().iter().enumerate() {
                mean[m2 + i] += t as f64 / n;
            }
        }
        let mut var = vec![0.0; q];
        for f in &self.fields {
            for (i, &d) in f.demand_raw().iter().enumerate() {
                var[i] += (d - mean[i]).powi(2) / n;
            }
            for (i, &t) in f.travel_raw().iter().enumerate() {
                var[m2 + i] += (t as f64 - mean[m2 + i]).powi(2) / n;
            }
        }
        var
    }
}

/// Order lifecycle status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderStatus {
    Open,
    Assigned,
    Served,
    Dropped,
}

/// A ride request.
#[derive(Debug, Clone, PartialEq)]
pub struct Order {
    pub id: u64,
    pub origin: CellId,
    pub dest: CellId,
    pub arrival_step: usize,
    pub wait_steps: u32,
    pub status: OrderStatus,
}

/// Ingest accounting: how many raw rows were kept or skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub trips_kept: usize,
}

/// Aggregate trip records into a scenario dataset.
///
/// `D_t(o,d)` counts trips departing in bin `t`; `T_t(o,d)` is the median
/// observed duration rounded to step multiples with a floor of 1, backfilled
/// with the global median for unobserved pairs. Aggregation is independent
/// of input row order. Rows referencing unknown cells are skipped and
/// counted in the report.
pub fn ingest_trips<I>(records: I, grid: &HexGrid, dt_min: f64) -> (ScenarioDataset, IngestReport)
where
    I: IntoIterator<Item = TripRecord>,
{
    let m = grid.len();
    let mut report = IngestReport::default();
    let mut kept: Vec<TripRecord> = Vec::new();
    let mut horizon = 0usize;
    for rec in records {
        report.rows_read += 1;
        if rec.origin >= m || rec.dest >= m || rec.duration_steps < 1 {
            report.rows_skipped += 1;
            continue;
        }
        horizon = horizon.max(rec.pickup_step + 1);
        kept.push(rec);
    }
    report.trips_kept = kept.len();

    let mut fields = Vec::with_capacity(horizon);
    if horizon > 0 {
        // Per (t, o, d) counts and per (o, d) duration samples pooled over time.
        let mut counts = vec![0u32; horizon * m * m];
        let mut durations: Vec<Vec<i32>> = vec![Vec::new(); m * m];
        let mut all_durations: Vec<i32> = Vec::with_capacity(kept.len());
        for rec in &kept {
            counts[rec.pickup_step * m * m + rec.origin * m + rec.dest] += 1;
            durations[rec.origin * m + rec.dest].push(rec.duration_steps);
            all_durations.push(rec.duration_steps);
        }
        let global_median = median_i32(&mut all_durations).max(1);
        let mut travel = vec![0i32; m * m];
        for od in 0..m * m {
            travel[od] = if durations[od].is_empty() {
                global_median
            } else {
                median_i32(&mut durations[od]).max(1)
            };
        }
        for h in 0..m {
            travel[h * m + h] = 1;
        }
        for t in 0..horizon {
            let demand: Vec<f64> =
                counts[t * m * m..(t + 1) * m * m].iter().map(|&c| c as f64).collect();
            fields.push(ScenarioField::new(m, demand, travel.clone()));
        }
    }
    (ScenarioDataset { fields, dt_min, fare_params: FareModel::default() }, report)
}

fn median_i32(samples: &mut [i32]) -> i32 {
    assert!(!samples.is_empty());
    samples.sort_unstable();
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        // even count: average the two middle values, rounding half away from zero
        let a = samples[n / 2 - 1] as f64;
        let b = samples[n / 2] as f64;
        ((a + b) / 2.0).round() as i32
    }
}

/// Parse the trip CSV schema `pickup_step,origin_hex,dest_hex,duration_min`.
///
/// The duration column is minutes; it is converted to step multiples as
/// `max(1, round(duration_min / dt_min))`.
pub fn parse_trip_csv<R: Read>(reader: R, dt_min: f64) -> Result<Vec<TripRecord>, ScenarioError> {
    let buf = BufReader::new(reader);
    let mut out = Vec::new();
    let mut lines = buf.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ScenarioError::Csv { line: 1, message: "missing header".into() })?;
    let header = header?;
    if header.trim() != "pickup_step,origin_hex,dest_hex,duration_min" {
        return Err(ScenarioError::Csv { line: 1, message: format!("unexpected header `{}`", header) });
    }
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(ScenarioError::Csv { line: idx + 1, message: "expected 4 fields".into() });
        }
        let parse = |s: &str, what: &str| -> Result<f64, ScenarioError> {
            s.trim().parse::<f64>().map_err(|e| ScenarioError::Csv {
                line: idx + 1,
                message: format!("bad {}: {}", what, e),
            })
        };
        let pickup_step = parse(parts[0], "pickup_step")? as usize;
        let origin = parse(parts[1], "origin_hex")? as usize;
        let dest = parse(parts[2], "dest_hex")? as usize;
        let duration_min = parse(parts[3], "duration_min")?;
        let duration_steps = ((duration_min / dt_min).round() as i32).max(1);
        out.push(TripRecord { pickup_step, origin, dest, duration_steps });
    }
    Ok(out)
}

/// Keep each trip independently with probability `rate` (seeded).
pub fn subsample_trips(records: &[TripRecord], rate: f64, seed: u64) -> Vec<TripRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.iter().copied().filter(|_| rng.random::<f64>() < rate).collect()
}

/// Synthetic generator settings.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub horizon: usize,
    pub hotspots: usize,
    pub peak_rate: f64,
    pub seed: u64,
    pub dt_min: f64,
}

/// Generate a synthetic dataset: fixed spatial hotspot kernels modulated by
/// a smooth two-peak diurnal profile; travel times `1 + hop distance`, held
/// static. Reproducible per seed.
pub fn synth_scenario(grid: &HexGrid, cfg: &SynthConfig) -> ScenarioDataset {
    assert!(cfg.horizon >= 1, "horizon must be >= 1");
    let m = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut cell_ids: Vec<CellId> = (0..m).collect();
    for i in (1..cell_ids.len()).rev() {
        let j = rng.random_range(0..=i);
        cell_ids.swap(i, j);
    }
    let centers: Vec<CellId> = cell_ids.into_iter().take(cfg.hotspots.min(m)).collect();

    // Origin weights: exponential hop decay around each hotspot, normalized.
    let mut origin_w = vec![0.0f64; m];
    if centers.is_empty() {
        for w in origin_w.iter_mut() {
            *w = 1.0 / m as f64;
        }
    } else {
        for h in 0..m {
            for &c in &centers {
                origin_w[h] += (-(grid.hops(h, c) as f64) / 1.2).exp();
            }
        }
        let sum: f64 = origin_w.iter().sum();
        for w in origin_w.iter_mut() {
            *w /= sum;
        }
    }

    let mut travel = vec![1i32; m * m];
    for o in 0..m {
        for d in 0..m {
            travel[o * m + d] = 1 + grid.hops(o, d) as i32;
        }
    }

    let mut fields = Vec::with_capacity(cfg.horizon);
    for t in 0..cfg.horizon {
        let scale = cfg.peak_rate * diurnal_profile(t, cfg.dt_min);
        let mut demand = vec![0.0f64; m * m];
        for o in 0..m {
            let w = scale * origin_w[o] / m as f64;
            for d in 0..m {
                demand[o * m + d] = w;
            }
        }
        fields.push(ScenarioField::new(m, demand, travel.clone()));
    }
    ScenarioDataset { fields, dt_min: cfg.dt_min, fare_params: FareModel::default() }
}

/// Smooth two-peak day shape in (0, 1]: morning and evening bumps over a floor.
pub fn diurnal_profile(step: usize, dt_min: f64) -> f64 {
    let hour = (step as f64 * dt_min / 60.0) % 24.0;
    let bump = |center: f64, width: f64| {
        let d = hour - center;
        (-0.5 * (d / width).powi(2)).exp()
    };
    (0.15 + 0.85 * (bump(8.0, 2.0) + bump(18.0, 2.0))).min(1.0)
}

/// Draw order arrivals for step `t`: independent Poisson counts per OD pair
/// with mean `D(o,d)`. Deterministic per seed.
pub fn sample_orders(field: &ScenarioField, t: usize, seed: u64) -> Vec<Order> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = field.m();
    let mut orders = Vec::new();
    let mut seq = 0u64;
    for o in 0..m {
        for d in 0..m {
            let lambda = field.demand(o, d);
            let k = poisson_draw(&mut rng, lambda);
            for _ in 0..k {
                orders.push(Order {
                    id: t as u64 * 1_000_000 + seq,
                    origin: o,
                    dest: d,
                    arrival_step: t,
                    wait_steps: 0,
                    status: OrderStatus::Open,
                });
                seq += 1;
            }
        }
    }
    orders
}

/// Exact Poisson sampling: Knuth's product method for small means, with
/// recursive halving (sums of independent Poissons) above 30 to avoid
/// underflow.
pub fn poisson_draw<R: Rng>(rng: &mut R, lambda: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda > 30.0 {
        return poisson_draw(rng, lambda / 2.0) + poisson_draw(rng, lambda / 2.0);
    }
    let limit = (-lambda).exp();
    let mut prod = rng.random::<f64>();
    let mut k = 0u32;
    while prod > limit {
        prod *= rng.random::<f64>();
        k += 1;
    }
    k
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    m: usize,
    horizon: usize,
    dt_min: f64,
    fare: FareModel,
}

/// Write a dataset: one-line JSON manifest, then little-endian f64 demand
/// blocks and i32 travel blocks, one field after another.
pub fn save_dataset<W: Write>(dataset: &ScenarioDataset, mut w: W) -> Result<(), ScenarioError> {
    let manifest = DatasetManifest {
        m: dataset.m(),
        horizon: dataset.horizon(),
        dt_min: dataset.dt_min,
        fare: dataset.fare_params,
    };
    let line = serde_json::to_string(&manifest).map_err(|e| ScenarioError::Manifest(e.to_string()))?;
    writeln!(w, "{}", line)?;
    for f in &dataset.fields {
        for &d in f.demand_raw() {
            w.write_all(&d.to_le_bytes())?;
        }
    }
    for f in &dataset.fields {
        for &t in f.travel_raw() {
            w.write_all(&t.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_dataset_file(dataset: &ScenarioDataset, path: &Path) -> Result<(), ScenarioError> {
    let file = std::fs::File::create(path)?;
    save_dataset(dataset, std::io::BufWriter::new(file))
}

/// Read a dataset written by [`save_dataset`].
pub fn load_dataset<R: Read>(r: R) -> Result<ScenarioDataset, ScenarioError> {
    let mut buf = BufReader::new(r);
    let mut line = String::new();
    buf.read_line(&mut line)?;
    let manifest: DatasetManifest =
        serde_json::from_str(line.trim()).map_err(|e| ScenarioError::Manifest(e.to_string()))?;
    let m2 = manifest.m * manifest.m;
    let mut demand_all = vec![0.0f64; manifest.horizon * m2];
    let mut bytes8 = [0u8; 8];
    for d in demand_all.iter_mut() {
        buf.read_exact(&mut bytes8)?;
        *d = f64::from_le_bytes(bytes8);
    }
    let mut travel_all = vec![0i32; manifest.horizon * m2];
    let mut bytes4 = [0u8; 4];
    for t in travel_all.iter_mut() {
        buf.read_exact(&mut bytes4)?;
        *t = i32::from_le_bytes(bytes4);
    }
    let fields = (0..manifest.horizon)
        .map(|t| {
            ScenarioField::new(
                manifest.m,
                demand_all[t * m2..(t + 1) * m2].to_vec(),
                travel_all[t * m2..(t + 1) * m2].to_vec(),
            )
        })
        .collect();
    Ok(ScenarioDataset { fields, dt_min: manifest.dt_min, fare_params: manifest.fare })
}

pub fn load_dataset_file(path: &Path) -> Result<ScenarioDataset, ScenarioError> {
    let file = std::fs::File::open(path)?;
    load_dataset(file)
}
