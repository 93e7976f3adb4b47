//! CVT-MAP-Elites archive used purely for scoring.
//!
//! Centroids come from k-means over uniform samples of `[0, 1]^d`. Each cell
//! remembers the best fitness ever offered to it together with the
//! descriptor and species that produced it; policies themselves are never
//! stored, so nothing here can feed back into selection.

use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KMEANS_ITERATIONS: usize = 50;
pub const SAMPLES_PER_CELL: usize = 100;
pub const MIN_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CentroidData {
    dim: usize,
    coords: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CentroidData", into = "CentroidData")]
pub struct Centroids {
    dim: usize,
    /// Row-major `n_cells x dim`.
    coords: Vec<f64>,
    sweep: Sweep,
}

impl TryFrom<CentroidData> for Centroids {
    type Error = Error;

    fn try_from(data: CentroidData) -> Result<Self> {
        Self::new(data.dim, data.coords)
    }
}

impl From<Centroids> for CentroidData {
    fn from(c: Centroids) -> Self {
        CentroidData {
            dim: c.dim,
            coords: c.coords,
        }
    }
}

impl Centroids {
    fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::Malformed {
                what: "centroids",
                reason: format!("{} values do not form rows of width {dim}", coords.len()),
            });
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                what: "centroids",
                reason: "non-finite coordinate".into(),
            });
        }
        let sweep = Sweep::new(&coords, dim);
        Ok(Self { dim, coords, sweep })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Malformed {
                what: "centroids",
                reason: "need at least one non-empty centroid".into(),
            });
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Malformed {
                what: "centroids",
                reason: "ragged rows".into(),
            });
        }
        Self::new(dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Index of the nearest centroid (Euclidean); ties go to the lower index.
    pub fn nearest(&self, point: &[f64]) -> usize {
        self.sweep.nearest(&self.coords, self.dim, point)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim).map(|i| format!("centroid_{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.rows() {
            writeln!(w, "{}", join(row))?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        lines.next().ok_or_else(|| Error::Malformed {
            what: "centroids csv",
            reason: "missing header".into(),
        })?;
        let rows = lines
            .map(|l| {
                l.split(',')
                    .map(|v| {
                        v.trim().parse::<f64>().map_err(|e| Error::Malformed {
                            what: "centroids csv",
                            reason: format!("{v:?}: {e}"),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }
}

/// Centroids ordered along the first axis. A query walks outward from its
/// own position in that order and stops once the axis gap alone exceeds the
/// best squared distance found.
#[derive(Debug, Clone, PartialEq)]
struct Sweep {
    order: Vec<usize>,
    keys: Vec<f64>,
}

impl Sweep {
    fn new(coords: &[f64], dim: usize) -> Self {
        let mut order: Vec<usize> = (0..coords.len() / dim).collect();
        order.sort_by(|&a, &b| coords[a * dim].total_cmp(&coords[b * dim]).then(a.cmp(&b)));
        let keys = order.iter().map(|&i| coords[i * dim]).collect();
        Self { order, keys }
    }

    fn nearest(&self, coords: &[f64], dim: usize, point: &[f64]) -> usize {
        let x = point[0];
        let start = self.keys.partition_point(|&k| k < x);
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        let mut visit = |j: usize| -> bool {
            let gap = self.keys[j] - x;
            if gap * gap > best_d {
                return false;
            }
            let i = self.order[j];
            let d: f64 = coords[i * dim..(i + 1) * dim]
                .iter()
                .zip(point)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d || (d == best_d && i < best) {
                best_d = d;
                best = i;
            }
            true
        };
        let (mut lo, mut hi) = (start, start);
        let (mut lo_open, mut hi_open) = (true, true);
        while lo_open || hi_open {
            if hi_open {
                hi_open = hi < self.keys.len() && visit(hi);
                hi += 1;
            }
            if lo_open {
                lo_open = lo > 0 && visit(lo - 1);
                lo = lo.saturating_sub(1);
            }
        }
        best
    }
}

/// k-means ([`KMEANS_ITERATIONS`] Lloyd iterations) over
/// `SAMPLES_PER_CELL * n_cells` (at least [`MIN_SAMPLES`]) uniform samples of
/// `[0, 1]^bd_dim`, initialized from distinct random samples.
pub fn build_centroids(n_cells: usize, bd_dim: usize, seed: u64) -> Result<Centroids> {
    if n_cells == 0 {
        return Err(Error::config("n_cells", "must be >= 1"));
    }
    if bd_dim == 0 {
        return Err(Error::config("bd_dim", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_samples = (SAMPLES_PER_CELL * n_cells).max(MIN_SAMPLES);
    let samples: Vec<f64> = (0..n_samples * bd_dim).map(|_| rng.gen::<f64>()).collect();
    let mut coords: Vec<f64> = sample(&mut rng, n_samples, n_cells)
        .into_iter()
        .flat_map(|i| samples[i * bd_dim..(i + 1) * bd_dim].to_vec())
        .collect();

    let mut sums = vec![0.0; n_cells * bd_dim];
    let mut counts = vec![0usize; n_cells];
    for _ in 0..KMEANS_ITERATIONS {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        let sweep = Sweep::new(&coords, bd_dim);
        for p in samples.chunks_exact(bd_dim) {
            let k = sweep.nearest(&coords, bd_dim, p);
            counts[k] += 1;
            for (s, v) in sums[k * bd_dim..(k + 1) * bd_dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        for k in 0..n_cells {
            // empty clusters keep their previous centroid
            if counts[k] > 0 {
                for d in 0..bd_dim {
                    coords[k * bd_dim + d] = sums[k * bd_dim + d] / counts[k] as f64;
                }
            }
        }
    }
    Centroids::new(bd_dim, coords)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub fitness: f64,
    pub descriptor: Vec<f64>,
    pub species: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvtArchive {
    centroids: Centroids,
    cells: Vec<Option<Elite>>,
}

impl CvtArchive {
    pub fn new(centroids: Centroids) -> Self {
        let cells = vec![None; centroids.len()];
        Self { centroids, cells }
    }

    pub fn centroids(&self) -> &Centroids {
        &self.centroids
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, i: usize) -> Option<&Elite> {
        self.cells[i].as_ref()
    }

    pub fn cells(&self) -> &[Option<Elite>] {
        &self.cells
    }

    /// `(cell index, elite)` for every filled cell.
    pub fn filled(&self) -> impl Iterator<Item = (usize, &Elite)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|e| (i, e)))
    }

    /// Offers a solution to its nearest cell. The cell is overwritten only if
    /// empty or strictly improved; returns whether it was.
    pub fn insert(&mut self, descriptor: &[f64], fitness: f64, species: usize) -> Result<bool> {
        if descriptor.len() != self.centroids.dim() {
            return Err(Error::DimensionMismatch {
                what: "descriptor",
                expected: self.centroids.dim(),
                got: descriptor.len(),
            });
        }
        if let Some((index, &value)) = descriptor
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::DescriptorOutOfBounds { index, value });
        }
        if !fitness.is_finite() {
            return Err(Error::NonFiniteInput { what: "fitness" });
        }
        let cell = &mut self.cells[self.centroids.nearest(descriptor)];
        let replace = cell.as_ref().map_or(true, |e| fitness > e.fitness);
        if replace {
            *cell = Some(Elite {
                fitness,
                descriptor: descriptor.to_vec(),
                species,
            });
        }
        Ok(replace)
    }

    pub fn qd_score(&self) -> f64 {
        self.filled().map(|(_, e)| e.fitness).sum()
    }

    /// `None` for an empty archive.
    pub fn max_fitness(&self) -> Option<f64> {
        self.filled().map(|(_, e)| e.fitness).reduce(f64::max)
    }

    pub fn filled_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn coverage(&self) -> f64 {
        self.filled_count() as f64 / self.n_cells() as f64
    }

    /// One record per filled cell: centroid, descriptor, fitness, species.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.centroids.dim();
        let mut header: Vec<String> = (0..d).map(|i| format!("centroid_{i}")).collect();
        header.extend((0..d).map(|i| format!("descriptor_{i}")));
        header.push("fitness".into());
        header.push("species_id".into());
        writeln!(w, "{}", header.join(","))?;
        for (i, e) in self.filled() {
            writeln!(
                w,
                "{},{},{},{}",
                join(self.centroids.get(i)),
                join(&e.descriptor),
                e.fitness,
                e.species
            )?;
        }
        Ok(())
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Mean Euclidean distance between per-species mean descriptors over all
/// unordered species pairs; 0 with a single species.
pub fn species_separation(groups: &[Vec<Vec<f64>>]) -> Result<f64> {
    let means = groups
        .iter()
        .enumerate()
        .map(|(z, g)| {
            let first = g.first().ok_or(Error::EmptySpecies(z))?;
            let mut mean = vec![0.0; first.len()];
            for d in g {
                if d.len() != mean.len() {
                    return Err(Error::DimensionMismatch {
                        what: "descriptor",
                        expected: mean.len(),
                        got: d.len(),
                    });
                }
                mean.iter_mut().zip(d).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= g.len() as f64);
            Ok(mean)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            total += means[i]
                .iter()
                .zip(&means[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            pairs += 1;
        }
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    })
}
