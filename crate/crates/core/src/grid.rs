//! Uniform hypercube cell decompositions, one lattice per agent.
//!
//! Every agent gets a grid of width `w = d_max / sqrt(n)` whose origin is chosen
//! so that `x0` is a cell center. Cells are stored once, in the extended index
//! set, and addressed by a dense `u32` id; marks record which cells belong to
//! the smaller decompositions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Ball, Point, Region};
use crate::scalar::Scalar;

/// Integer lattice coordinates of a cell.
pub type Lattice = Vec<i32>;

/// Dense id of a cell within one agent's decomposition.
pub type CellId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("discretization too fine: {cells} cells requested, cap is {cap}")]
    TooFine { cells: u128, cap: usize },
    #[error("point {point:?} lies outside the cover of agent {agent}")]
    OutOfCover { agent: u32, point: Vec<f64> },
    #[error("cell width must be positive and finite, got {0}")]
    BadWidth(f64),
}

/// Which decomposition a cell belongs to. Every stored cell is in the extended set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellMarks {
    /// Cell meets `R_i([0, T - dt])`; transitions are defined only from these.
    pub pre: bool,
    /// Cell meets `R_i([0, T])`; the state set of the individual system.
    pub cover: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellDecomposition<S> {
    pub agent: u32,
    pub origin: Point<S>,
    pub width: S,
    /// Sorted lattice coordinates of every cell in the extended index set.
    pub cells: Vec<Lattice>,
    pub marks: Vec<CellMarks>,
    lookup: HashMap<Lattice, CellId>,
}

/// Lattice cells (sorted) whose closed box meets `ball`, given grid `origin` and `width`.
pub fn cells_meeting_ball<S: Scalar>(
    origin: &Point<S>,
    width: S,
    ball: &Ball<S>,
    cap: usize,
) -> Result<Vec<Lattice>, GridError> {
    let n = origin.dim();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    let mut count: u128 = 1;
    for k in 0..n {
        let a = ((ball.center[k] - ball.radius - origin[k]) / width).floor();
        let b = ((ball.center[k] + ball.radius - origin[k]) / width).floor();
        let (a, b) = (a.to_i64().unwrap_or(i64::MIN), b.to_i64().unwrap_or(i64::MAX));
        count = count.saturating_mul((b - a + 1).max(0) as u128);
        lo.push(a);
        hi.push(b);
    }
    if count > cap as u128 {
        return Err(GridError::TooFine { cells: count, cap });
    }
    let mut out = Vec::new();
    let mut idx = lo.clone();
    if n == 0 {
        return Ok(out);
    }
    loop {
        let lat: Lattice = idx.iter().map(|&v| v as i32).collect();
        if cell_box(origin, width, &lat).distance(&ball.center).expect("dims") <= ball.radius {
            out.push(lat);
        }
        let mut k = 0;
        loop {
            if k == n {
                out.sort_unstable();
                return Ok(out);
            }
            idx[k] += 1;
            if idx[k] <= hi[k] {
                break;
            }
            idx[k] = lo[k];
            k += 1;
        }
    }
}

/// Closed box of lattice cell `lat`.
pub fn cell_box<S: Scalar>(origin: &Point<S>, width: S, lat: &[i32]) -> Aabb<S> {
    let lower: Vec<S> = lat
        .iter()
        .enumerate()
        .map(|(k, &c)| origin[k] + width * S::from_i32(c).expect("i32"))
        .collect();
    let upper = lower.iter().map(|&l| l + width).collect();
    Aabb { lower: Point(lower), upper: Point(upper) }
}

/// Balls that define the three index sets of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkRegions<S> {
    pub pre: Ball<S>,
    pub cover: Ball<S>,
    pub extended: Ball<S>,
}

impl<S: Scalar> CellDecomposition<S> {
    /// Builds the extended cell set on the grid anchored at `x0`, marking the
    /// cells that meet `regions.pre` and `regions.cover`.
    pub fn build(
        agent: u32,
        x0: &Point<S>,
        d_max: S,
        regions: &MarkRegions<S>,
        cap: usize,
    ) -> Result<Self, GridError> {
        let n = x0.dim();
        let width = d_max / S::from_usize_lossy(n).sqrt();
        if !(width > S::zero() && width.is_finite()) {
            return Err(GridError::BadWidth(width.as_f64()));
        }
        let origin = Point(x0.coords().iter().map(|&c| c - width * S::half()).collect());
        // the extended ball must contain the others so that one lattice scan suffices
        let mut ext = regions.extended.clone();
        for b in [&regions.pre, &regions.cover] {
            let need = b.center.dist(&ext.center) + b.radius;
            ext.radius = ext.radius.max(need);
        }
        let cells = cells_meeting_ball(&origin, width, &ext, cap)?;
        let marks = cells
            .iter()
            .map(|lat| {
                let bx = cell_box(&origin, width, lat);
                let meets = |b: &Ball<S>| bx.distance(&b.center).expect("dims") <= b.radius;
                CellMarks { pre: meets(&regions.pre), cover: meets(&regions.cover) }
            })
            .collect();
        Ok(Self::from_parts(agent, origin, width, cells, marks))
    }

    pub fn from_parts(
        agent: u32,
        origin: Point<S>,
        width: S,
        cells: Vec<Lattice>,
        marks: Vec<CellMarks>,
    ) -> Self {
        let lookup = cells.iter().enumerate().map(|(k, c)| (c.clone(), k as CellId)).collect();
        CellDecomposition { agent, origin, width, cells, marks, lookup }
    }

    pub fn dim(&self) -> usize {
        self.origin.dim()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cell diameter `w * sqrt(n)`.
    pub fn diameter(&self) -> S {
        self.width * S::from_usize_lossy(self.dim()).sqrt()
    }

    pub fn id_of(&self, lat: &[i32]) -> Option<CellId> {
        self.lookup.get(lat).copied()
    }

    pub fn lattice(&self, id: CellId) -> &Lattice {
        &self.cells[id as usize]
    }

    pub fn cell(&self, id: CellId) -> Aabb<S> {
        cell_box(&self.origin, self.width, &self.cells[id as usize])
    }

    pub fn cell_of_lattice(&self, lat: &[i32]) -> Aabb<S> {
        cell_box(&self.origin, self.width, lat)
    }

    /// Cell center `x_{l,G}`.
    pub fn reference_point(&self, id: CellId) -> Point<S> {
        self.cell(id).center()
    }

    pub fn in_cover(&self, id: CellId) -> bool {
        self.marks[id as usize].cover
    }

    pub fn in_pre(&self, id: CellId) -> bool {
        self.marks[id as usize].pre
    }

    /// Ids of the cells of `I_i`.
    pub fn cover_ids(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.cells.len() as CellId).filter(|&k| self.in_cover(k))
    }

    pub fn cover_len(&self) -> usize {
        self.marks.iter().filter(|m| m.cover).count()
    }

    /// Lattice coordinates by the floor convention.
    pub fn lattice_of(&self, x: &Point<S>) -> Lattice {
        (0..self.dim())
            .map(|k| {
                ((x[k] - self.origin[k]) / self.width)
                    .floor()
                    .to_i32()
                    .unwrap_or(i32::MAX)
            })
            .collect()
    }

    /// Cell containing `x`. Points just outside the stored cells but within `eps` of one
    /// are attributed to it; anything else is an explicit error.
    pub fn locate(&self, x: &Point<S>, eps: S) -> Result<CellId, GridError> {
        let lat = self.lattice_of(x);
        if let Some(id) = self.id_of(&lat) {
            return Ok(id);
        }
        let n = self.dim();
        let mut best: Option<(S, CellId)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let cand: Lattice = lat
                .iter()
                .map(|&v| {
                    let off = (c % 3) as i32 - 1;
                    c /= 3;
                    v.saturating_add(off)
                })
                .collect();
            if let Some(id) = self.id_of(&cand) {
                let d = self.cell(id).distance(x).expect("dims");
                if d <= eps && best.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
                    best = Some((d, id));
                }
            }
        }
        best.map(|(_, id)| id).ok_or_else(|| GridError::OutOfCover {
            agent: self.agent,
            point: x.coords().iter().map(|v| v.as_f64()).collect(),
        })
    }

    pub fn export(&self) -> DecompositionExport<S> {
        let n = self.dim();
        let mut lower = vec![i32::MAX; n];
        let mut upper = vec![i32::MIN; n];
        for c in &self.cells {
            for k in 0..n {
                lower[k] = lower[k].min(c[k]);
                upper[k] = upper[k].max(c[k]);
            }
        }
        DecompositionExport {
            agent: self.agent,
            origin: self.origin.clone(),
            width: self.width,
            index_lower: lower,
            index_upper: upper,
            cells: self.cells.clone(),
            pre_bitmap: bitmap(self.marks.iter().map(|m| m.pre)),
            cover_bitmap: bitmap(self.marks.iter().map(|m| m.cover)),
        }
    }

    pub fn import(e: &DecompositionExport<S>) -> Result<Self, String> {
        let pre = unbitmap(&e.pre_bitmap, e.cells.len())?;
        let cover = unbitmap(&e.cover_bitmap, e.cells.len())?;
        let marks = pre.into_iter().zip(cover).map(|(pre, cover)| CellMarks { pre, cover }).collect();
        Ok(Self::from_parts(e.agent, e.origin.clone(), e.width, e.cells.clone(), marks))
    }
}

/// Bits packed little-endian within bytes, hex encoded.
fn bitmap(bits: impl Iterator<Item = bool>) -> String {
    let mut bytes = Vec::new();
    for (k, b) in bits.enumerate() {
        if k % 8 == 0 {
            bytes.push(0u8);
        }
        if b {
            *bytes.last_mut().unwrap() |= 1 << (k % 8);
        }
    }
    hex::encode(bytes)
}

fn unbitmap(s: &str, len: usize) -> Result<Vec<bool>, String> {
    let bytes = hex::decode(s).map_err(|e| e.to_string())?;
    if bytes.len() != len.div_ceil(8) {
        return Err(format!("bitmap holds {} bytes, expected {}", bytes.len(), len.div_ceil(8)));
    }
    Ok((0..len).map(|k| bytes[k / 8] & (1 << (k % 8)) != 0).collect())
}

/// Serializable form of a decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionExport<S> {
    pub agent: u32,
    pub origin: Point<S>,
    pub width: S,
    pub index_lower: Vec<i32>,
    pub index_upper: Vec<i32>,
    pub cells: Vec<Lattice>,
    pub pre_bitmap: String,
    pub cover_bitmap: String,
}

/// `pr_i`: own cell followed by the neighbor cells in the stored neighbor order.
pub fn project_configuration(global: &[CellId], i: usize, neighbors: &[usize]) -> Vec<CellId> {
    std::iter::once(global[i]).chain(neighbors.iter().map(|&j| global[j])).collect()
}
