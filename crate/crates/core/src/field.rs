//! Space-time samples on a grid and time series on tagged boundary parts.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Face, Grid, Subset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Solution,
    Potential,
    Source,
    Amplitude,
}

/// Real samples indexed `(level, node)`, level-major.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    grid: Arc<Grid>,
    kind: FieldKind,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: Arc<Grid>, kind: FieldKind) -> SpaceTimeField {
        let n = grid.n_levels() * grid.n_nodes();
        SpaceTimeField { grid, kind, values: vec![0.0; n] }
    }

    pub fn from_values(grid: Arc<Grid>, kind: FieldKind, values: Vec<f64>) -> Result<SpaceTimeField> {
        let n = grid.n_levels() * grid.n_nodes();
        if values.len() != n {
            return Err(Error::Shape(format!("field has {} samples, grid needs {n}", values.len())));
        }
        Ok(SpaceTimeField { grid, kind, values })
    }

    /// Samples `f(x, t)` at every node and level.
    pub fn from_fn(grid: Arc<Grid>, kind: FieldKind, f: impl Fn(&[f64; 2], f64) -> f64) -> SpaceTimeField {
        let nn = grid.n_nodes();
        let coords: Vec<[f64; 2]> = (0..nn).map(|n| grid.coord(n)).collect();
        let mut values = Vec::with_capacity(grid.n_levels() * nn);
        for level in 0..grid.n_levels() {
            let t = grid.time(level);
            values.extend(coords.iter().map(|p| f(p, t)));
        }
        SpaceTimeField { grid, kind, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn kind(&self) -> FieldKind {
        self.kind
    }
    pub fn with_kind(mut self, kind: FieldKind) -> SpaceTimeField {
        self.kind = kind;
        self
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn n_levels(&self) -> usize {
        self.grid.n_levels()
    }
    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn level(&self, level: usize) -> &[f64] {
        let nn = self.n_nodes();
        &self.values[level * nn..(level + 1) * nn]
    }

    pub fn level_mut(&mut self, level: usize) -> &mut [f64] {
        let nn = self.n_nodes();
        &mut self.values[level * nn..(level + 1) * nn]
    }

    pub fn at(&self, level: usize, node: usize) -> f64 {
        self.values[level * self.n_nodes() + node]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> SpaceTimeField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn check_same_grid(&self, other: &SpaceTimeField) -> Result<()> {
        if !self.grid.same_layout(&other.grid) {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
        Ok(())
    }

    pub fn sub(&self, other: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(SpaceTimeField { grid: self.grid.clone(), kind: self.kind, values })
    }

    pub fn add_scaled(&mut self, s: f64, other: &SpaceTimeField) -> Result<()> {
        self.check_same_grid(other)?;
        self.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += s * b);
        Ok(())
    }

    /// Zeroes every level whose time lies outside `[t1, t2]`.
    pub fn masked_to_window(&self, t1: f64, t2: f64) -> SpaceTimeField {
        let mut out = self.clone();
        let tol = 1e-9 * self.grid.dt();
        for level in 0..self.n_levels() {
            let t = self.grid.time(level);
            if t < t1 - tol || t > t2 + tol {
                out.level_mut(level).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out
    }

    /// Restriction to levels `n0..=n1` on the matching window grid.
    pub fn window(&self, n0: usize, n1: usize) -> Result<SpaceTimeField> {
        let g = Arc::new(self.grid.time_window(n0, n1)?);
        let nn = self.n_nodes();
        let values = self.values[n0 * nn..(n1 + 1) * nn].to_vec();
        SpaceTimeField::from_values(g, self.kind, values)
    }

    /// Centered time derivative at a level (second-order one-sided at the ends).
    pub fn time_derivative(&self, level: usize) -> Vec<f64> {
        let nt = self.grid.nt();
        let dt = self.grid.dt();
        let nn = self.n_nodes();
        let mut out = vec![0.0; nn];
        for i in 0..nn {
            out[i] = if level == 0 {
                (-3.0 * self.at(0, i) + 4.0 * self.at(1, i) - self.at(2, i)) / (2.0 * dt)
            } else if level == nt {
                (3.0 * self.at(nt, i) - 4.0 * self.at(nt - 1, i) + self.at(nt - 2, i)) / (2.0 * dt)
            } else {
                (self.at(level + 1, i) - self.at(level - 1, i)) / (2.0 * dt)
            };
        }
        out
    }

    pub fn write_wfld(&self, path: &Path) -> Result<()> {
        let shape = field_shape(&self.grid);
        write_wfld(path, &shape, WfldData::Real(&self.values))
    }
}

/// WFLD1 array shape for a space-time field: `[levels, (ny+1,) nx+1]`.
pub fn field_shape(grid: &Grid) -> Vec<u32> {
    let mut shape = vec![grid.n_levels() as u32];
    for axis in (0..grid.dim()).rev() {
        shape.push(grid.nx()[axis] as u32 + 1);
    }
    shape
}

/// Complex field stored as real and imaginary parts.
#[derive(Debug, Clone)]
pub struct ComplexField {
    pub re: SpaceTimeField,
    pub im: SpaceTimeField,
}

impl ComplexField {
    pub fn new(re: SpaceTimeField, im: SpaceTimeField) -> Result<ComplexField> {
        re.check_same_grid(&im)?;
        if re.kind() != im.kind() {
            return Err(Error::InvalidArgument("real and imaginary parts differ in kind".into()));
        }
        if !matches!(re.kind(), FieldKind::Solution | FieldKind::Amplitude) {
            return Err(Error::InvalidArgument(format!(
                "complex values are only allowed for solution or amplitude fields, not {:?}",
                re.kind()
            )));
        }
        Ok(ComplexField { re, im })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.re.grid()
    }

    pub fn at(&self, level: usize, node: usize) -> Complex64 {
        Complex64::new(self.re.at(level, node), self.im.at(level, node))
    }

    pub fn write_wfld(&self, path: &Path) -> Result<()> {
        let shape = field_shape(self.re.grid());
        let data: Vec<Complex64> =
            self.re.values().iter().zip(self.im.values()).map(|(&a, &b)| Complex64::new(a, b)).collect();
        write_wfld(path, &shape, WfldData::Complex(&data))
    }
}

pub enum WfldData<'a> {
    Real(&'a [f64]),
    Complex(&'a [Complex64]),
}

#[derive(Debug, Clone, PartialEq)]
pub enum WfldArray {
    Real { shape: Vec<u32>, data: Vec<f64> },
    Complex { shape: Vec<u32>, data: Vec<Complex64> },
}

pub const WFLD_MAGIC: &[u8; 5] = b"WFLD1";

pub fn encode_wfld(shape: &[u32], data: WfldData<'_>) -> Result<Vec<u8>> {
    let count: usize = shape.iter().map(|&s| s as usize).product();
    let (kind, len) = match &data {
        WfldData::Real(d) => (0u8, d.len()),
        WfldData::Complex(d) => (1u8, d.len()),
    };
    if count != len {
        return Err(Error::Shape(format!("shape {shape:?} holds {count} entries, data has {len}")));
    }
    if shape.len() > u8::MAX as usize {
        return Err(Error::Shape("too many axes".into()));
    }
    let mut out = Vec::with_capacity(7 + 4 * shape.len() + 16 * len);
    out.extend_from_slice(WFLD_MAGIC);
    out.push(shape.len() as u8);
    for s in shape {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.push(kind);
    match data {
        WfldData::Real(d) => d.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        WfldData::Complex(d) => d.iter().for_each(|c| {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }),
    }
    Ok(out)
}

pub fn decode_wfld(bytes: &[u8]) -> Result<WfldArray> {
    let bad = |m: &str| Error::Shape(format!("malformed WFLD1 data: {m}"));
    if bytes.len() < 7 || &bytes[..5] != WFLD_MAGIC {
        return Err(bad("missing magic"));
    }
    let rank = bytes[5] as usize;
    let mut pos = 6;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let b = bytes.get(pos..pos + 4).ok_or_else(|| bad("truncated shape"))?;
        shape.push(u32::from_le_bytes(b.try_into().unwrap()));
        pos += 4;
    }
    let kind = *bytes.get(pos).ok_or_else(|| bad("missing scalar kind"))?;
    pos += 1;
    let count: usize = shape.iter().map(|&s| s as usize).product();
    let width = match kind {
        0 => 8,
        1 => 16,
        k => return Err(bad(&format!("unknown scalar kind {k}"))),
    };
    let payload = &bytes[pos..];
    if payload.len() != count * width {
        return Err(bad("payload length does not match shape"));
    }
    let f = |i: usize| f64::from_le_bytes(payload[8 * i..8 * i + 8].try_into().unwrap());
    Ok(match kind {
        0 => WfldArray::Real { shape, data: (0..count).map(f).collect() },
        _ => WfldArray::Complex { shape, data: (0..count).map(|i| Complex64::new(f(2 * i), f(2 * i + 1))).collect() },
    })
}

pub fn write_wfld(path: &Path, shape: &[u32], data: WfldData<'_>) -> Result<()> {
    let bytes = encode_wfld(shape, data)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_wfld(path: &Path) -> Result<WfldArray> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_wfld(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Dirichlet,
    NeumannFlux,
}

/// A boundary sample location. Flux samples belong to a face (corner nodes
/// appear once per face); Dirichlet samples are plain nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TracePoint {
    pub node: usize,
    pub face: Option<Face>,
}

/// Time series on a tagged boundary subset, indexed `(level, point)`.
#[derive(Debug, Clone)]
pub struct BoundaryTrace {
    grid: Arc<Grid>,
    subset: Subset,
    quantity: Quantity,
    points: Vec<TracePoint>,
    weights: Vec<f64>,
    values: Vec<f64>,
}

impl BoundaryTrace {
    /// Zero Dirichlet data on the nodes of `subset`.
    pub fn dirichlet(grid: Arc<Grid>, subset: Subset) -> BoundaryTrace {
        let faces = grid.faces_in(subset);
        let nodes = grid.nodes_in(subset);
        let mut weights = vec![0.0; nodes.len()];
        for face in &faces {
            let fw = grid.face_weights(*face);
            for (k, n) in grid.face_nodes(*face).into_iter().enumerate() {
                if let Ok(pos) = nodes.binary_search(&n) {
                    weights[pos] += fw[k];
                }
            }
        }
        let points = nodes.into_iter().map(|node| TracePoint { node, face: None }).collect::<Vec<_>>();
        let values = vec![0.0; grid.n_levels() * points.len()];
        BoundaryTrace { grid, subset, quantity: Quantity::Dirichlet, points, weights, values }
    }

    /// Dirichlet data `h(x, t)` sampled on `subset`.
    pub fn dirichlet_from_fn(grid: Arc<Grid>, subset: Subset, h: impl Fn(&[f64; 2], f64) -> f64) -> BoundaryTrace {
        let mut tr = BoundaryTrace::dirichlet(grid, subset);
        let coords: Vec<[f64; 2]> = tr.points.iter().map(|p| tr.grid.coord(p.node)).collect();
        let np = tr.points.len();
        for level in 0..tr.grid.n_levels() {
            let t = tr.grid.time(level);
            for (k, c) in coords.iter().enumerate() {
                tr.values[level * np + k] = h(c, t);
            }
        }
        tr
    }

    /// Zero flux samples on the faces of `subset`.
    pub fn flux(grid: Arc<Grid>, subset: Subset) -> BoundaryTrace {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for face in grid.faces_in(subset) {
            let fw = grid.face_weights(face);
            for (k, n) in grid.face_nodes(face).into_iter().enumerate() {
                points.push(TracePoint { node: n, face: Some(face) });
                weights.push(fw[k]);
            }
        }
        let values = vec![0.0; grid.n_levels() * points.len()];
        BoundaryTrace { grid, subset, quantity: Quantity::NeumannFlux, points, weights, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn subset(&self) -> Subset {
        self.subset
    }
    pub fn quantity(&self) -> Quantity {
        self.quantity
    }
    pub fn points(&self) -> &[TracePoint] {
        &self.points
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn level(&self, level: usize) -> &[f64] {
        let np = self.points.len();
        &self.values[level * np..(level + 1) * np]
    }

    pub fn level_mut(&mut self, level: usize) -> &mut [f64] {
        let np = self.points.len();
        &mut self.values[level * np..(level + 1) * np]
    }

    pub fn at(&self, level: usize, point: usize) -> f64 {
        self.values[level * self.points.len() + point]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn zeros_like(&self) -> BoundaryTrace {
        let mut z = self.clone();
        z.values.iter_mut().for_each(|v| *v = 0.0);
        z
    }

    pub fn scaled(&self, s: f64) -> BoundaryTrace {
        let mut z = self.clone();
        z.values.iter_mut().for_each(|v| *v *= s);
        z
    }

    pub fn check_compatible(&self, other: &BoundaryTrace) -> Result<()> {
        if !self.grid.same_layout(&other.grid) || self.points != other.points || self.quantity != other.quantity {
            return Err(Error::GridMismatch("boundary traces differ in grid, points or quantity".into()));
        }
        Ok(())
    }

    /// `self + s * other`.
    pub fn combined(&self, s: f64, other: &BoundaryTrace) -> Result<BoundaryTrace> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += s * b);
        Ok(out)
    }

    /// Weighted inner product over subset x time (trapezoid in both).
    pub fn dot(&self, other: &BoundaryTrace) -> Result<f64> {
        self.check_compatible(other)?;
        let tw = self.grid.time_weights(0, self.grid.nt());
        let np = self.points.len();
        let mut s = 0.0;
        for (level, w) in tw.iter().enumerate() {
            for k in 0..np {
                let i = level * np + k;
                s += w * self.weights[k] * self.values[i] * other.values[i];
            }
        }
        Ok(s)
    }

    /// Discrete L2 norm over subset x (0, T).
    pub fn l2_norm(&self) -> Result<f64> {
        if self.points.is_empty() {
            return Err(Error::EmptyRegion("boundary trace has no sample points".into()));
        }
        Ok(self.dot(self)?.max(0.0).sqrt())
    }

    /// Dense boundary values per level for every boundary node in `nodes`
    /// (zero where this trace has no sample).
    pub fn node_values(&self, level: usize, nodes: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let row = self.level(level);
        for (k, p) in self.points.iter().enumerate() {
            if let Ok(pos) = nodes.binary_search(&p.node) {
                out[pos] = row[k];
            }
        }
    }

    /// Restriction to levels `n0..=n1` on the matching window grid.
    pub fn window(&self, n0: usize, n1: usize) -> Result<BoundaryTrace> {
        let g = Arc::new(self.grid.time_window(n0, n1)?);
        let np = self.points.len();
        let mut out = self.clone();
        out.grid = g;
        out.values = self.values[n0 * np..(n1 + 1) * np].to_vec();
        Ok(out)
    }

    /// Same samples on a grid with the same spatial layout but more levels;
    /// levels past the end of this trace are zero.
    pub fn extended_to(&self, grid: Arc<Grid>) -> Result<BoundaryTrace> {
        if grid.dim() != self.grid.dim() || grid.nx() != self.grid.nx() || (grid.dt() - self.grid.dt()).abs() > 1e-14 {
            return Err(Error::GridMismatch("cannot extend trace to a different layout".into()));
        }
        let np = self.points.len();
        let mut values = vec![0.0; grid.n_levels() * np];
        let copy = self.grid.n_levels().min(grid.n_levels()) * np;
        values[..copy].copy_from_slice(&self.values[..copy]);
        Ok(BoundaryTrace { grid, values, ..self.clone() })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let dim = self.grid.dim();
        if dim == 1 {
            w.write_record(["t", "x", "value"])?;
        } else {
            w.write_record(["t", "x", "y", "value"])?;
        }
        for level in 0..self.grid.n_levels() {
            let t = self.grid.time(level);
            for (k, p) in self.points.iter().enumerate() {
                let c = self.grid.coord(p.node);
                let v = self.at(level, k);
                if dim == 1 {
                    w.write_record(&[fmt(t), fmt(c[0]), fmt(v)])?;
                } else {
                    w.write_record(&[fmt(t), fmt(c[0]), fmt(c[1]), fmt(v)])?;
                }
            }
        }
        Ok(())
    }
}

/// Shortest round-trip formatting for CSV cells.
pub fn fmt(v: f64) -> String {
    format!("{v:e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, grid_2d, tag_gamma0};
    use proptest::prelude::*;

    #[test]
    fn complex_only_for_solution_or_amplitude() {
        let g = Arc::new(build_grid(&[[0.0, 1.0]], &[8], 1.0, 20, 0.5).unwrap());
        let re = SpaceTimeField::zeros(g.clone(), FieldKind::Potential);
        assert!(ComplexField::new(re.clone(), re.clone()).is_err());
        let s = re.with_kind(FieldKind::Amplitude);
        assert!(ComplexField::new(s.clone(), s).is_ok());
    }

    #[test]
    fn wfld_header_layout() {
        let bytes = encode_wfld(&[2, 3], WfldData::Real(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        assert_eq!(&bytes[..5], b"WFLD1");
        assert_eq!(bytes[5], 2);
        assert_eq!(&bytes[6..10], &2u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &3u32.to_le_bytes());
        assert_eq!(bytes[14], 0);
        assert_eq!(&bytes[15..23], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 15 + 48);
        assert!(decode_wfld(&bytes[..20]).is_err());
    }

    proptest! {
        #[test]
        fn wfld_roundtrip(shape in proptest::collection::vec(1u32..5, 1..4), seed in any::<u64>(), complex in any::<bool>()) {
            let n: usize = shape.iter().map(|&s| s as usize).product();
            let vals: Vec<f64> = (0..n).map(|i| ((i as u64).wrapping_mul(seed) as f64).sin()).collect();
            if complex {
                let c: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, -2.0 * v)).collect();
                let bytes = encode_wfld(&shape, WfldData::Complex(&c)).unwrap();
                prop_assert_eq!(decode_wfld(&bytes).unwrap(), WfldArray::Complex { shape: shape.clone(), data: c });
            } else {
                let bytes = encode_wfld(&shape, WfldData::Real(&vals)).unwrap();
                prop_assert_eq!(decode_wfld(&bytes).unwrap(), WfldArray::Real { shape: shape.clone(), data: vals });
            }
        }
    }

    #[test]
    fn trace_norm_of_constant() {
        // |Gamma0| = 1 in 1D (single node), constant 1 over (0, T) -> sqrt(T)
        let g = Arc::new(tag_gamma0(&build_grid(&[[0.0, 1.0]], &[10], 3.0, 60, 0.5).unwrap(), &[-0.5]).unwrap());
        let tr = BoundaryTrace::dirichlet_from_fn(g, Subset::Gamma0, |_, _| 1.0);
        assert!((tr.l2_norm().unwrap() - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn flux_trace_on_square_counts_corners_per_face() {
        let g = grid_2d([0.0, 1.0], [0.0, 1.0], [4, 4], 1.0, 0.5).unwrap();
        let g = Arc::new(g.with_gamma0_faces(&g.faces()));
        let tr = BoundaryTrace::flux(g.clone(), Subset::Gamma0);
        assert_eq!(tr.n_points(), 4 * 5);
        let total: f64 = tr.weights().iter().sum();
        assert!((total - 4.0).abs() < 1e-14);
        let d = BoundaryTrace::dirichlet(g, Subset::All);
        assert_eq!(d.n_points(), 16);
        assert!((d.weights().iter().sum::<f64>() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn csv_columns() {
        let g = Arc::new(tag_gamma0(&build_grid(&[[0.0, 1.0]], &[10], 1.0, 20, 0.5).unwrap(), &[-0.5]).unwrap());
        let tr = BoundaryTrace::dirichlet_from_fn(g, Subset::Gamma0, |_, t| t);
        let mut w = csv::Writer::from_writer(Vec::new());
        tr.write_csv_to(&mut w).unwrap();
        let s = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "t,x,value");
        assert_eq!(s.lines().count(), 22);
    }
}
