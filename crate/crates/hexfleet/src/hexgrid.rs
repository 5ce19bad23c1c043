//! Axial-coordinate hexagonal grid: adjacency, hop distances, station
//! placement, and the graph matrices consumed by the encoder and the
//! scenario ground metric.
//!
//! Grids are rhombus-shaped in axial coordinates `(q, r)` with `q` running
//! over columns and `r` over rows. Cell ids are `r * cols + q`. Interior
//! cells have exactly six neighbors; boundary cells have two to five.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::Mat;

/// Cell identifier, `0..m`.
pub type CellId = usize;

/// Default k-hop exclusion radius for station spacing.
pub const DEFAULT_EXCLUSION_RADIUS: u32 = 2;

const AXIAL_DIRS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {rows}x{cols}")]
    ZeroDimension { rows: usize, cols: usize },
    #[error("requested {requested} stations but the grid has {cells} cells")]
    TooManyStations { requested: usize, cells: usize },
    #[error("hex pitch must be positive, got {0}")]
    NonPositivePitch(f64),
    #[error("demand hint has {got} entries, expected {expected}")]
    HintLength { got: usize, expected: usize },
    #[error("unknown cell id {0}")]
    UnknownCell(CellId),
}

/// Immutable hexagonal tessellation with precomputed adjacency and
/// all-pairs hop distances.
#[derive(Debug, Clone)]
pub struct HexGrid {
    cells: Vec<(i32, i32)>,
    neighbors: Vec<Vec<CellId>>,
    station_hexes: Vec<CellId>,
    hex_pitch_km: f64,
    rows: usize,
    cols: usize,
    hops: Vec<u32>,
    spacing_fallback: bool,
}

impl HexGrid {
    /// Number of cells `m`.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn axial(&self, id: CellId) -> (i32, i32) {
        self.cells[id]
    }

    pub fn neighbors(&self, id: CellId) -> &[CellId] {
        &self.neighbors[id]
    }

    pub fn station_hexes(&self) -> &[CellId] {
        &self.station_hexes
    }

    /// True when the spaced greedy selection could not seat every station
    /// and the remaining slots were filled by demand rank alone.
    pub fn station_spacing_fell_back(&self) -> bool {
        self.spacing_fallback
    }

    pub fn hex_pitch_km(&self) -> f64 {
        self.hex_pitch_km
    }

    /// Shortest-path hop count between two cells.
    pub fn hop_distance(&self, h1: CellId, h2: CellId) -> Result<u32, GridError> {
        let m = self.len();
        if h1 >= m {
            return Err(GridError::UnknownCell(h1));
        }
        if h2 >= m {
            return Err(GridError::UnknownCell(h2));
        }
        Ok(self.hops[h1 * m + h2])
    }

    /// Hop count without bounds checking against `GridError`; panics on bad ids.
    pub fn hops(&self, h1: CellId, h2: CellId) -> u32 {
        self.hops[h1 * self.len() + h2]
    }

    /// Center-to-center driving distance in km.
    pub fn distance_km(&self, h1: CellId, h2: CellId) -> f64 {
        self.hops(h1, h2) as f64 * self.hex_pitch_km
    }

    /// Plain-text edge list, one `h1 h2` pair per line, each undirected edge once.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for h1 in 0..self.len() {
            for &h2 in &self.neighbors[h1] {
                if h1 < h2 {
                    let _ = writeln!(out, "{} {}", h1, h2);
                }
            }
        }
        out
    }
}

/// Build a rhombus grid with demand-aware, spatially-spaced station placement.
///
/// Stations are picked in descending `demand_hint` order subject to the
/// default exclusion radius; see [`build_grid_spaced`]. Uniform hints fall
/// back to a seed-deterministic spread.
pub fn build_grid(
    rows: usize,
    cols: usize,
    hex_pitch_km: f64,
    n_stations: usize,
    seed: u64,
    demand_hint: Option<&[f64]>,
) -> Result<HexGrid, GridError> {
    build_grid_spaced(rows, cols, hex_pitch_km, n_stations, seed, demand_hint, DEFAULT_EXCLUSION_RADIUS)
}

/// [`build_grid`] with an explicit station exclusion radius in hops.
pub fn build_grid_spaced(
    rows: usize,
    cols: usize,
    hex_pitch_km: f64,
    n_stations: usize,
    seed: u64,
    demand_hint: Option<&[f64]>,
    exclusion_radius: u32,
) -> Result<HexGrid, GridError> {
    if rows == 0 || cols == 0 {
        return Err(GridError::ZeroDimension { rows, cols });
    }
    if hex_pitch_km <= 0.0 {
        return Err(GridError::NonPositivePitch(hex_pitch_km));
    }
    let m = rows * cols;
    if n_stations > m {
        return Err(GridError::TooManyStations { requested: n_stations, cells: m });
    }
    if let Some(h) = demand_hint {
        if h.len() != m {
            return Err(GridError::HintLength { got: h.len(), expected: m });
        }
    }

    let mut cells = Vec::with_capacity(m);
    for r in 0..rows as i32 {
        for q in 0..cols as i32 {
            cells.push((q, r));
        }
    }
    let id_of = |q: i32, r: i32| -> Option<CellId> {
        if q >= 0 && (q as usize) < cols && r >= 0 && (r as usize) < rows {
            Some(r as usize * cols + q as usize)
        } else {
            None
        }
    };
    let mut neighbors = vec![Vec::new(); m];
    for (id, &(q, r)) in cells.iter().enumerate() {
        for (dq, dr) in AXIAL_DIRS {
            if let Some(n) = id_of(q + dq, r + dr) {
                neighbors[id].push(n);
            }
        }
        neighbors[id].sort_unstable();
    }

    let hops = all_pairs_hops(m, &neighbors);

    // Rank cells by descending demand; ties broken by a seeded permutation so
    // uniform hints still give a reproducible spread.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tie_rank: Vec<usize> = (0..m).collect();
    tie_rank.shuffle(&mut rng);
    let mut order: Vec<CellId> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let ha = demand_hint.map_or(0.0, |h| h[a]);
        let hb = demand_hint.map_or(0.0, |h| h[b]);
        hb.partial_cmp(&ha).unwrap().then(tie_rank[a].cmp(&tie_rank[b]))
    });

    let mut stations: Vec<CellId> = Vec::with_capacity(n_stations);
    for &cand in &order {
        if stations.len() == n_stations {
            break;
        }
        let spaced = stations.iter().all(|&s| hops[cand * m + s] > exclusion_radius);
        if spaced {
            stations.push(cand);
        }
    }
    let spacing_fallback = stations.len() < n_stations;
    if spacing_fallback {
        // Spacing infeasible: fill the remaining slots by demand rank alone.
        for &cand in &order {
            if stations.len() == n_stations {
                break;
            }
            if !stations.contains(&cand) {
                stations.push(cand);
            }
        }
    }
    stations.sort_unstable();

    Ok(HexGrid {
        cells,
        neighbors,
        station_hexes: stations,
        hex_pitch_km,
        rows,
        cols,
        hops,
        spacing_fallback,
    })
}

fn all_pairs_hops(m: usize, neighbors: &[Vec<CellId>]) -> Vec<u32> {
    let mut hops = vec![u32::MAX; m * m];
    let mut queue = std::collections::VecDeque::new();
    for src in 0..m {
        let row = &mut hops[src * m..(src + 1) * m];
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = row[u];
            for &v in &neighbors[u] {
                if row[v] == u32::MAX {
                    row[v] = du + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    hops
}

/// Graph matrices derived from a grid: symmetric-normalized adjacency with
/// self-loops, combinatorial Laplacian, and the Laplacian lift onto the
/// origin-destination scenario space.
#[derive(Debug, Clone)]
pub struct GraphMatrices {
    pub a_hat: Mat,
    pub laplacian: Mat,
    pub q_graph: Mat,
}

/// Compute `A_hat = D~^{-1/2}(A+I)D~^{-1/2}`, `L = D - A`, and the
/// scenario-space matrix `Q_graph = blockdiag(L (+) L, L (+) L)` where
/// `L (+) L = L (x) I + I (x) L` is the Kronecker-sum Laplacian on OD pairs
/// (row-major flattening on both the demand and travel-time blocks).
pub fn graph_matrices(grid: &HexGrid) -> GraphMatrices {
    let m = grid.len();
    let mut a = Mat::zeros(m, m);
    for h in 0..m {
        for &n in grid.neighbors(h) {
            a[(h, n)] = 1.0;
        }
    }
    let mut a_hat = Mat::zeros(m, m);
    let deg_tilde: Vec<f64> = (0..m).map(|h| grid.neighbors(h).len() as f64 + 1.0).collect();
    for i in 0..m {
        for j in 0..m {
            let tilde = a[(i, j)] + if i == j { 1.0 } else { 0.0 };
            if tilde != 0.0 {
                a_hat[(i, j)] = tilde / (deg_tilde[i] * deg_tilde[j]).sqrt();
            }
        }
    }
    let mut laplacian = Mat::zeros(m, m);
    for i in 0..m {
        laplacian[(i, i)] = grid.neighbors(i).len() as f64;
        for j in 0..m {
            laplacian[(i, j)] -= a[(i, j)];
        }
    }

    let q = 2 * m * m;
    let mut q_graph = Mat::zeros(q, q);
    // Kronecker sum on one m^2 block: K[(i,j),(k,l)] = L[i,k]*d(j,l) + d(i,k)*L[j,l]
    for block in 0..2 {
        let off = block * m * m;
        for i in 0..m {
            for j in 0..m {
                let row = off + i * m + j;
                for k in 0..m {
                    q_graph[(row, off + k * m + j)] += laplacian[(i, k)];
                }
                for l in 0..m {
                    q_graph[(row, off + i * m + l)] += laplacian[(j, l)];
                }
            }
        }
    }
    GraphMatrices { a_hat, laplacian, q_graph }
}
