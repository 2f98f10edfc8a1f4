//! Grid-accelerated DBSCAN over integer pixel coordinates.
//!
//! Points are visited in `(y, x)` order, so labels are deterministic for any
//! presentation order of the same point set. Border points reachable from
//! several clusters belong to the one discovered first.

use super::DbscanConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Noise,
    Cluster(usize),
}

impl Label {
    pub fn cluster_id(self) -> Option<usize> {
        match self {
            Label::Cluster(id) => Some(id),
            Label::Noise => None,
        }
    }
}

/// Points bucketed by square cells of side `eps`, sorted by `(cell_y, cell_x)`.
struct Grid<'a> {
    points: &'a [(i32, i32)],
    eps: f64,
    eps_sq: f64,
    origin: (i32, i32),
    /// `(cell_y, cell_x, point index)`, sorted.
    entries: Vec<(i64, i64, usize)>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [(i32, i32)], eps: f64) -> Self {
        let origin = (
            points.iter().map(|p| p.0).min().unwrap_or(0),
            points.iter().map(|p| p.1).min().unwrap_or(0),
        );
        let mut grid = Grid {
            points,
            eps,
            eps_sq: eps * eps,
            origin,
            entries: Vec::with_capacity(points.len()),
        };
        for (i, &p) in points.iter().enumerate() {
            let (cx, cy) = grid.cell(p);
            grid.entries.push((cy, cx, i));
        }
        grid.entries.sort_unstable();
        grid
    }

    fn cell(&self, (x, y): (i32, i32)) -> (i64, i64) {
        (
            ((x - self.origin.0) as f64 / self.eps).floor() as i64,
            ((y - self.origin.1) as f64 / self.eps).floor() as i64,
        )
    }

    /// Indices of all points within `eps` of point `i`, including `i`.
    fn region(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let p = self.points[i];
        let (cx, cy) = self.cell(p);
        for ny in cy - 1..=cy + 1 {
            let lo = self.entries.partition_point(|e| (e.0, e.1) < (ny, cx - 1));
            let hi = self.entries.partition_point(|e| (e.0, e.1) <= (ny, cx + 1));
            for &(_, _, j) in &self.entries[lo..hi] {
                let q = self.points[j];
                let dx = (q.0 - p.0) as f64;
                let dy = (q.1 - p.1) as f64;
                if dx * dx + dy * dy <= self.eps_sq {
                    out.push(j);
                }
            }
        }
    }
}

/// Labels each point (in input order) with its cluster id or [`Label::Noise`].
/// Cluster ids count up in discovery order.
pub fn dbscan(points: &[(i32, i32)], cfg: &DbscanConfig) -> Vec<Label> {
    let n = points.len();
    let grid = Grid::new(points, cfg.eps());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by_key(|&i| (points[i].1, points[i].0));

    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut region = Vec::new();
    let mut frontier = Vec::new();
    let mut next_id = 0;

    for &seed in &order {
        if labels[seed].is_some() {
            continue;
        }
        grid.region(seed, &mut region);
        if region.len() < cfg.min_pts() {
            labels[seed] = Some(Label::Noise);
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[seed] = Some(Label::Cluster(id));
        frontier.clear();
        frontier.extend_from_slice(&region);

        while let Some(q) = frontier.pop() {
            match labels[q] {
                Some(Label::Noise) => {
                    // border point, not core (its region was already too small)
                    labels[q] = Some(Label::Cluster(id));
                    continue;
                }
                Some(Label::Cluster(_)) => continue,
                None => {}
            }
            labels[q] = Some(Label::Cluster(id));
            grid.region(q, &mut region);
            if region.len() >= cfg.min_pts() {
                frontier.extend(
                    region
                        .iter()
                        .copied()
                        .filter(|&r| !matches!(labels[r], Some(Label::Cluster(_)))),
                );
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap_or(Label::Noise)).collect()
}
