//! Discrete calculus on the periodic torus `Z^d / L Z^d`.
//!
//! Vertices are indexed lexicographically with the first coordinate running
//! fastest. The canonical edge `{x, x + e_i}` is stored at `x * d + i`, i.e. it
//! is owned by its lower endpoint. Multi-channel fields store each channel as
//! a contiguous block.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numeric::{self, CompensatedSum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LatticeSpec", into = "LatticeSpec")]
pub struct TorusLattice {
    d: usize,
    side: usize,
    n: usize,
}

/// Serialized form of a lattice, validated on the way in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub d: usize,
    pub side: usize,
}

impl TryFrom<LatticeSpec> for TorusLattice {
    type Error = Error;
    fn try_from(s: LatticeSpec) -> Result<Self> {
        TorusLattice::new(s.d, s.side)
    }
}

impl From<TorusLattice> for LatticeSpec {
    fn from(l: TorusLattice) -> Self {
        LatticeSpec {
            d: l.d,
            side: l.side,
        }
    }
}

impl TorusLattice {
    pub fn new(d: usize, side: usize) -> Result<Self> {
        ensure(d >= 1, || format!("dimension must be >= 1, got {d}"))?;
        ensure(side >= 2, || {
            format!("side length must be >= 2, got {side}")
        })?;
        let n = (0..d)
            .try_fold(1usize, |acc, _| acc.checked_mul(side))
            .filter(|&n| n.checked_mul(d).is_some_and(|e| e <= u32::MAX as usize))
            .ok_or_else(|| Error::InvalidParameter(format!("lattice {side}^{d} is too large")))?;
        Ok(Self { d, side, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.n * self.d
    }

    #[inline]
    pub fn stride(&self, i: usize) -> usize {
        self.side.pow(i as u32)
    }

    #[inline]
    pub fn coord(&self, x: usize, i: usize) -> usize {
        (x / self.stride(i)) % self.side
    }

    pub fn coords(&self, x: usize) -> Vec<usize> {
        (0..self.d).map(|i| self.coord(x, i)).collect()
    }

    pub fn index_of(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.d);
        coords
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * self.side + c % self.side)
    }

    /// Index of the torus vertex representing a point of `Z^d`.
    pub fn wrap(&self, point: &[i64]) -> usize {
        let l = self.side as i64;
        point
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * self.side + c.rem_euclid(l) as usize)
    }

    /// Vertex `x + offset` with periodic wrap.
    pub fn translate(&self, x: usize, offset: &[i64]) -> usize {
        let l = self.side as i64;
        let mut out = 0usize;
        for i in (0..self.d).rev() {
            let c = (self.coord(x, i) as i64 + offset[i]).rem_euclid(l) as usize;
            out = out * self.side + c;
        }
        out
    }

    /// `x + e_i`.
    #[inline]
    pub fn forward(&self, x: usize, i: usize) -> usize {
        let s = self.stride(i);
        if (x / s) % self.side == self.side - 1 {
            x + s - self.side * s
        } else {
            x + s
        }
    }

    /// `x - e_i`.
    #[inline]
    pub fn backward(&self, x: usize, i: usize) -> usize {
        let s = self.stride(i);
        if (x / s).is_multiple_of(self.side) {
            x + self.side * s - s
        } else {
            x - s
        }
    }

    #[inline]
    pub fn edge_index(&self, x: usize, i: usize) -> usize {
        x * self.d + i
    }

    #[inline]
    pub fn edge_endpoints(&self, e: usize) -> (usize, usize) {
        let x = e / self.d;
        (x, self.forward(x, e % self.d))
    }

    #[inline]
    pub fn edge_of(&self, e: usize) -> (usize, usize) {
        (e / self.d, e % self.d)
    }

    /// Minimal l1 distance from the origin on the torus.
    pub fn torus_norm(&self, x: usize) -> usize {
        (0..self.d)
            .map(|i| {
                let c = self.coord(x, i);
                c.min(self.side - c)
            })
            .sum()
    }

    pub fn torus_distance(&self, x: usize, y: usize) -> usize {
        (0..self.d)
            .map(|i| {
                let a = self.coord(x, i) as i64;
                let b = self.coord(y, i) as i64;
                let c = (a - b).rem_euclid(self.side as i64) as usize;
                c.min(self.side - c)
            })
            .sum()
    }

    /// Minimal periodic representative of `x` as an offset in `Z^d`.
    pub fn minimal_offset(&self, x: usize) -> Vec<i64> {
        (0..self.d)
            .map(|i| {
                let c = self.coord(x, i) as i64;
                if 2 * c > self.side as i64 {
                    c - self.side as i64
                } else {
                    c
                }
            })
            .collect()
    }
}

fn check_len(lat: &TorusLattice, per_channel: usize, channels: usize, len: usize) -> Result<()> {
    ensure(channels >= 1, || "fields need at least one channel".into())?;
    if per_channel * channels != len {
        return Err(Error::shape(
            format!(
                "{} values ({lat:?}, {channels} channels)",
                per_channel * channels
            ),
            len,
        ));
    }
    Ok(())
}

/// Real values per vertex, possibly with several channels.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexField {
    lattice: TorusLattice,
    channels: usize,
    values: Vec<f64>,
}

impl VertexField {
    pub fn zeros(lattice: &TorusLattice, channels: usize) -> Self {
        Self {
            lattice: *lattice,
            channels: channels.max(1),
            values: vec![0.0; lattice.num_vertices() * channels.max(1)],
        }
    }

    pub fn constant(lattice: &TorusLattice, value: f64) -> Self {
        Self {
            lattice: *lattice,
            channels: 1,
            values: vec![value; lattice.num_vertices()],
        }
    }

    pub fn delta(lattice: &TorusLattice, x: usize) -> Self {
        let mut f = Self::zeros(lattice, 1);
        f.values[x] = 1.0;
        f
    }

    pub fn from_values(lattice: &TorusLattice, channels: usize, values: Vec<f64>) -> Result<Self> {
        check_len(lattice, lattice.num_vertices(), channels, values.len())?;
        Ok(Self {
            lattice: *lattice,
            channels,
            values,
        })
    }

    pub fn from_fn(lattice: &TorusLattice, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            lattice: *lattice,
            channels: 1,
            values: (0..lattice.num_vertices()).map(f).collect(),
        }
    }

    /// Stacks single-channel fields into one multi-channel field.
    pub fn stack(parts: &[VertexField]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("cannot stack zero fields".into()))?;
        let mut values = Vec::with_capacity(parts.len() * first.values.len());
        let mut channels = 0;
        for p in parts {
            p.expect_lattice(&first.lattice)?;
            values.extend_from_slice(&p.values);
            channels += p.channels;
        }
        Self::from_values(&first.lattice, channels, values)
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    pub fn channels(&self) -> usize {
        self.channels
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

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.lattice.num_vertices();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.lattice.num_vertices();
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn channel_field(&self, c: usize) -> VertexField {
        VertexField {
            lattice: self.lattice,
            channels: 1,
            values: self.channel(c).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn sum(&self) -> f64 {
        numeric::sum(self.values.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        numeric::mean(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        numeric::max_abs(&self.values)
    }

    pub fn norm2(&self) -> f64 {
        numeric::norm2(&self.values)
    }

    /// `<f, g>` over all vertices and channels.
    pub fn inner(&self, other: &VertexField) -> Result<f64> {
        self.expect_shape(other)?;
        Ok(numeric::dot(&self.values, &other.values))
    }

    pub fn expect_lattice(&self, lat: &TorusLattice) -> Result<()> {
        if &self.lattice != lat {
            return Err(Error::shape(
                format!("{lat:?}"),
                format!("{:?}", self.lattice),
            ));
        }
        Ok(())
    }

    fn expect_shape(&self, other: &VertexField) -> Result<()> {
        self.expect_lattice(&other.lattice)?;
        if self.channels != other.channels {
            return Err(Error::shape(
                format!("{} channels", self.channels),
                other.channels,
            ));
        }
        Ok(())
    }
}

/// Real values per canonical edge `(x, i)`, possibly with several channels.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField {
    lattice: TorusLattice,
    channels: usize,
    values: Vec<f64>,
}

impl EdgeField {
    pub fn zeros(lattice: &TorusLattice, channels: usize) -> Self {
        Self {
            lattice: *lattice,
            channels: channels.max(1),
            values: vec![0.0; lattice.num_edges() * channels.max(1)],
        }
    }

    pub fn constant(lattice: &TorusLattice, value: f64) -> Self {
        Self {
            lattice: *lattice,
            channels: 1,
            values: vec![value; lattice.num_edges()],
        }
    }

    pub fn from_values(lattice: &TorusLattice, channels: usize, values: Vec<f64>) -> Result<Self> {
        check_len(lattice, lattice.num_edges(), channels, values.len())?;
        Ok(Self {
            lattice: *lattice,
            channels,
            values,
        })
    }

    /// Builds a single-channel field from `f(x, i)`.
    pub fn from_fn(lattice: &TorusLattice, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let d = lattice.dim();
        Self {
            lattice: *lattice,
            channels: 1,
            values: (0..lattice.num_edges()).map(|e| f(e / d, e % d)).collect(),
        }
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    pub fn channels(&self) -> usize {
        self.channels
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

    pub fn channel(&self, c: usize) -> &[f64] {
        let m = self.lattice.num_edges();
        &self.values[c * m..(c + 1) * m]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let m = self.lattice.num_edges();
        &mut self.values[c * m..(c + 1) * m]
    }

    pub fn channel_field(&self, c: usize) -> EdgeField {
        EdgeField {
            lattice: self.lattice,
            channels: 1,
            values: self.channel(c).to_vec(),
        }
    }

    /// Value on edge `{x, x + e_i}` of channel 0.
    #[inline]
    pub fn get(&self, x: usize, i: usize) -> f64 {
        self.values[x * self.lattice.dim() + i]
    }

    #[inline]
    pub fn at(&self, c: usize, x: usize, i: usize) -> f64 {
        self.values[c * self.lattice.num_edges() + x * self.lattice.dim() + i]
    }

    pub fn max_abs(&self) -> f64 {
        numeric::max_abs(&self.values)
    }

    pub fn inner(&self, other: &EdgeField) -> Result<f64> {
        self.expect_lattice(&other.lattice)?;
        if self.channels != other.channels {
            return Err(Error::shape(
                format!("{} channels", self.channels),
                other.channels,
            ));
        }
        Ok(numeric::dot(&self.values, &other.values))
    }

    pub fn expect_lattice(&self, lat: &TorusLattice) -> Result<()> {
        if &self.lattice != lat {
            return Err(Error::shape(
                format!("{lat:?}"),
                format!("{:?}", self.lattice),
            ));
        }
        Ok(())
    }
}

pub(crate) fn gradient_into(lat: &TorusLattice, f: &[f64], out: &mut [f64]) {
    let d = lat.dim();
    for x in 0..lat.num_vertices() {
        let fx = f[x];
        for i in 0..d {
            out[x * d + i] = f[lat.forward(x, i)] - fx;
        }
    }
}

pub(crate) fn divergence_into(lat: &TorusLattice, g: &[f64], out: &mut [f64]) {
    let d = lat.dim();
    for (x, o) in out.iter_mut().enumerate().take(lat.num_vertices()) {
        let mut acc = 0.0;
        for i in 0..d {
            acc += g[lat.backward(x, i) * d + i] - g[x * d + i];
        }
        *o = acc;
    }
}

/// Discrete gradient `(grad f)(x, i) = f(x + e_i) - f(x)`, channel by channel.
pub fn gradient(f: &VertexField, lat: &TorusLattice) -> Result<EdgeField> {
    f.expect_lattice(lat)?;
    let mut out = EdgeField::zeros(lat, f.channels());
    for c in 0..f.channels() {
        gradient_into(lat, f.channel(c), out.channel_mut(c));
    }
    Ok(out)
}

/// Discrete divergence `(div* F)(x) = sum_i F(x - e_i, i) - F(x, i)`, the
/// adjoint of [`gradient`].
pub fn divergence(g: &EdgeField, lat: &TorusLattice) -> Result<VertexField> {
    g.expect_lattice(lat)?;
    let mut out = VertexField::zeros(lat, g.channels());
    for c in 0..g.channels() {
        divergence_into(lat, g.channel(c), out.channel_mut(c));
    }
    Ok(out)
}

/// `|F(x)|^2_omega = sum_i omega(x, x + e_i) |F(x, i)|^2`.
pub fn weighted_edge_norm_sq(field: &EdgeField, omega: &EdgeField, x: usize) -> Result<f64> {
    omega.expect_lattice(field.lattice())?;
    let lat = field.lattice();
    if x >= lat.num_vertices() {
        return Err(Error::InvalidParameter(format!("vertex {x} out of range")));
    }
    let mut acc = CompensatedSum::new();
    for i in 0..lat.dim() {
        let v = field.get(x, i);
        acc.add(omega.get(x, i) * v * v);
    }
    Ok(acc.value())
}

/// Space-time weight `m(t, x) = ((|x| + 1)^2 / (t + 1) + 1)^{1/2}`, `|x|` being
/// the l1 norm.
pub fn weight_m(t: f64, x_norm: f64) -> Result<f64> {
    ensure(t >= 0.0 && t.is_finite(), || {
        format!("time must be finite and >= 0, got {t}")
    })?;
    ensure(x_norm >= 0.0, || format!("norm must be >= 0, got {x_norm}"))?;
    Ok(((x_norm + 1.0).powi(2) / (t + 1.0) + 1.0).sqrt())
}

/// `m(t, .)^alpha` evaluated around a base point of a torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceTimeWeight {
    pub t: f64,
    pub alpha: f64,
}

impl SpaceTimeWeight {
    pub fn new(t: f64, alpha: f64) -> Result<Self> {
        ensure(t >= 0.0 && t.is_finite(), || {
            format!("time must be >= 0, got {t}")
        })?;
        ensure(alpha >= 0.0, || format!("alpha must be >= 0, got {alpha}"))?;
        Ok(Self { t, alpha })
    }

    /// `m(t, x - base)` with the minimal periodic l1 distance.
    pub fn m(&self, lat: &TorusLattice, base: usize, x: usize) -> f64 {
        let r = lat.torus_distance(x, base) as f64;
        ((r + 1.0).powi(2) / (self.t + 1.0) + 1.0).sqrt()
    }

    /// `m(t, x - base)^alpha`.
    pub fn value(&self, lat: &TorusLattice, base: usize, x: usize) -> f64 {
        self.m(lat, base, x).powf(self.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fields(lat: &TorusLattice, seed: u64) -> (VertexField, EdgeField) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = VertexField::from_fn(lat, |_| rng.gen_range(-1.0..1.0));
        let g = EdgeField::from_fn(lat, |_, _| rng.gen_range(-1.0..1.0));
        (f, g)
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let lat = TorusLattice::new(3, 4).unwrap();
        let g = gradient(&VertexField::constant(&lat, 2.5), &lat).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_delta_in_one_dimension() {
        let lat = TorusLattice::new(1, 4).unwrap();
        let g = gradient(&VertexField::delta(&lat, 0), &lat).unwrap();
        // edge {3,0} is owned by vertex 3
        assert_eq!(g.values(), &[-1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn divergence_of_delta_gradient() {
        let lat = TorusLattice::new(1, 4).unwrap();
        let g = gradient(&VertexField::delta(&lat, 0), &lat).unwrap();
        let dv = divergence(&g, &lat).unwrap();
        assert_eq!(dv.values(), &[2.0, -1.0, 0.0, -1.0]);
        assert!(divergence(&EdgeField::zeros(&lat, 1), &lat)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn adjointness_by_double_sum() {
        let lat = TorusLattice::new(2, 4).unwrap();
        let (f, g) = random_fields(&lat, 7);
        // brute-force double sums straight from the definitions
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for x in 0..lat.num_vertices() {
            for i in 0..2 {
                let up = lat.forward(x, i);
                lhs += (f.get(up) - f.get(x)) * g.get(x, i);
                let down = lat.backward(x, i);
                rhs += f.get(x) * (g.get(down, i) - g.get(x, i));
            }
        }
        let grad = gradient(&f, &lat).unwrap();
        let div = divergence(&g, &lat).unwrap();
        assert!((grad.inner(&g).unwrap() - lhs).abs() < 1e-12);
        assert!((f.inner(&div).unwrap() - rhs).abs() < 1e-12);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = TorusLattice::new(2, 4).unwrap();
        let b = TorusLattice::new(2, 5).unwrap();
        assert!(matches!(
            gradient(&VertexField::zeros(&a, 1), &b),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(divergence(&EdgeField::zeros(&a, 1), &b).is_err());
        assert!(VertexField::from_values(&a, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn weighted_norm_examples() {
        let lat = TorusLattice::new(3, 3).unwrap();
        let ones = EdgeField::constant(&lat, 1.0);
        assert_eq!(weighted_edge_norm_sq(&ones, &ones, 5).unwrap(), 3.0);
        let zero = EdgeField::zeros(&lat, 1);
        assert_eq!(weighted_edge_norm_sq(&zero, &ones, 5).unwrap(), 0.0);

        let (_, f) = random_fields(&lat, 3);
        let (_, w) = random_fields(&lat, 4);
        for x in 0..lat.num_vertices() {
            let brute: f64 = (0..3).map(|i| w.get(x, i) * f.get(x, i).powi(2)).sum();
            assert!((weighted_edge_norm_sq(&f, &w, x).unwrap() - brute).abs() < 1e-14);
        }
    }

    #[test]
    fn weight_examples() {
        assert!((weight_m(0.0, 0.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((weight_m(3.0, 2.0).unwrap() - 13f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((weight_m(1e12, 5.0).unwrap() - 1.0).abs() < 1e-10);
        assert!(weight_m(-1.0, 0.0).is_err());
        let lat = TorusLattice::new(2, 8).unwrap();
        let w = SpaceTimeWeight::new(3.0, 1.0).unwrap();
        let x = lat.index_of(&[7, 1]);
        assert!((w.m(&lat, 0, x) - 13f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn torus_norm_uses_minimal_representative() {
        let lat = TorusLattice::new(2, 8).unwrap();
        assert_eq!(lat.torus_norm(lat.index_of(&[7, 5])), 4);
        assert_eq!(lat.minimal_offset(lat.index_of(&[7, 4])), vec![-1, 4]);
    }

    proptest! {
        #[test]
        fn indexing_round_trips(d in 1usize..4, side in 2usize..6, seed in any::<u64>()) {
            let lat = TorusLattice::new(d, side).unwrap();
            let x = (seed as usize) % lat.num_vertices();
            prop_assert_eq!(lat.index_of(&lat.coords(x)), x);
            let i = (seed as usize / 7) % d;
            let e = lat.edge_index(x, i);
            prop_assert_eq!(lat.edge_of(e), (x, i));
            prop_assert_eq!(lat.backward(lat.forward(x, i), i), x);
            let off: Vec<i64> = (0..d).map(|k| (seed >> (8 * k)) as i8 as i64).collect();
            let neg: Vec<i64> = off.iter().map(|v| -v).collect();
            prop_assert_eq!(lat.translate(lat.translate(x, &off), &neg), x);
        }

        #[test]
        fn divergence_has_zero_torus_mass(d in 1usize..4, side in 2usize..6, seed in any::<u64>()) {
            let lat = TorusLattice::new(d, side).unwrap();
            let (_, g) = random_fields(&lat, seed);
            let dv = divergence(&g, &lat).unwrap();
            prop_assert!(dv.sum().abs() < 1e-12);
        }

        #[test]
        fn product_rule_holds_pointwise(seed in any::<u64>()) {
            let lat = TorusLattice::new(2, 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = VertexField::from_fn(&lat, |_| rng.gen_range(-2.0..2.0));
            let g = VertexField::from_fn(&lat, |_| rng.gen_range(-2.0..2.0));
            let fg = VertexField::from_fn(&lat, |x| f.get(x) * g.get(x));
            let dfg = gradient(&fg, &lat).unwrap();
            let df = gradient(&f, &lat).unwrap();
            let dg = gradient(&g, &lat).unwrap();
            for x in 0..lat.num_vertices() {
                for i in 0..2 {
                    let rhs = f.get(lat.forward(x, i)) * dg.get(x, i) + g.get(x) * df.get(x, i);
                    prop_assert!((dfg.get(x, i) - rhs).abs() < 1e-13);
                }
            }
        }
    }
}
