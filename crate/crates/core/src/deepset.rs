//! Permutation-invariant support-set encoder.
//!
//! `z = outer(mean_j inner(x_j ⊕ y_j))`. Elements are pooled in a canonical
//! order (lexicographic on `x` then `y`), so any permutation of the same
//! support set produces a bit-identical `z`.

use std::cmp::Ordering;
use std::io::{Read, Write};

use crate::error::{check_finite, check_len, Error, Result};
use crate::nn::{Activation, AdamState, ForwardCache, GradBundle, MlpParams};

/// Observed `(x, y)` pairs that condition the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportSet {
    dim: usize,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
}

impl SupportSet {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptySupport);
        }
        check_len("support targets", xs.len(), ys.len())?;
        let dim = xs[0].len();
        for x in &xs {
            check_len("support point", dim, x.len())?;
            check_finite("support point", x)?;
        }
        check_finite("support targets", &ys)?;
        Ok(Self { dim, xs, ys })
    }

    pub fn from_pairs(pairs: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let (xs, ys) = pairs.into_iter().unzip();
        Self::new(xs, ys)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Support built from the listed element indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.xs[i].clone()).collect(),
            indices.iter().map(|&i| self.ys[i]).collect(),
        )
    }

    fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.xs[a]
                .iter()
                .zip(&self.xs[b])
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
                .then(self.ys[a].total_cmp(&self.ys[b]))
        });
        order
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaFeatures {
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepSetParams {
    inner: MlpParams,
    outer: MlpParams,
}

#[derive(Clone, Debug)]
pub struct DeepSetCache {
    count: usize,
    inner: ForwardCache,
    outer: ForwardCache,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepSetGrads {
    pub inner: GradBundle,
    pub outer: GradBundle,
}

impl DeepSetGrads {
    pub fn zeros(params: &DeepSetParams) -> Self {
        Self {
            inner: GradBundle::zeros(&params.inner),
            outer: GradBundle::zeros(&params.outer),
        }
    }

    pub fn accumulate(&mut self, other: &DeepSetGrads) {
        self.inner.accumulate(&other.inner);
        self.outer.accumulate(&other.outer);
    }

    pub fn scale(&mut self, factor: f64) {
        self.inner.scale(factor);
        self.outer.scale(factor);
    }
}

impl DeepSetParams {
    pub fn new(inner: MlpParams, outer: MlpParams) -> Result<Self> {
        if inner.input_dim() < 2 {
            return Err(Error::InvalidArchitecture(
                "encoder input must hold at least one coordinate plus the target".into(),
            ));
        }
        check_len("encoder pooled dimension", inner.output_dim(), outer.input_dim())?;
        Ok(Self { inner, outer })
    }

    /// `inner = [x_dim + 1, hidden.., pool_dim]`, `outer = [pool_dim, hidden.., output_dim]`.
    pub fn init(
        x_dim: usize,
        hidden: &[usize],
        pool_dim: usize,
        output_dim: usize,
        activation: Activation,
        inner_seed: u64,
        outer_seed: u64,
    ) -> Result<Self> {
        let inner_dims: Vec<usize> = std::iter::once(x_dim + 1)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(pool_dim))
            .collect();
        let outer_dims: Vec<usize> = std::iter::once(pool_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output_dim))
            .collect();
        Self::new(
            MlpParams::init(&inner_dims, activation, inner_seed)?,
            MlpParams::init(&outer_dims, activation, outer_seed)?,
        )
    }

    pub fn inner(&self) -> &MlpParams {
        &self.inner
    }

    pub fn outer(&self) -> &MlpParams {
        &self.outer
    }

    pub fn inner_mut(&mut self) -> &mut MlpParams {
        &mut self.inner
    }

    pub fn outer_mut(&mut self) -> &mut MlpParams {
        &mut self.outer
    }

    /// Dimension of the configuration part of each support element.
    pub fn x_dim(&self) -> usize {
        self.inner.input_dim() - 1
    }

    pub fn output_dim(&self) -> usize {
        self.outer.output_dim()
    }

    pub fn encode(&self, support: &SupportSet) -> Result<(MetaFeatures, DeepSetCache)> {
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        check_len("support dimension", self.x_dim(), support.dim())?;
        let order = support.canonical_order();
        let mut rows = Vec::with_capacity(order.len() * (support.dim() + 1));
        for &i in &order {
            rows.extend_from_slice(&support.xs[i]);
            rows.push(support.ys[i]);
        }
        let count = order.len();
        let (embedded, inner_cache) = self.inner.forward_batch(&rows, count)?;
        let pool_dim = self.inner.output_dim();
        let mut pooled = vec![0.0; pool_dim];
        for row in embedded.chunks_exact(pool_dim) {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        let inv = 1.0 / count as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);
        let (z, outer_cache) = self.outer.forward(&pooled)?;
        Ok((
            MetaFeatures { z },
            DeepSetCache {
                count,
                inner: inner_cache,
                outer: outer_cache,
            },
        ))
    }

    pub fn backward(&self, cache: &DeepSetCache, z_grad: &[f64]) -> Result<DeepSetGrads> {
        check_len("meta-feature gradient", self.output_dim(), z_grad.len())?;
        let outer = self.outer.backward(&cache.outer, z_grad)?;
        let inv = 1.0 / cache.count as f64;
        let element_grad: Vec<f64> = outer.input.iter().map(|g| g * inv).collect();
        let mut per_element = Vec::with_capacity(cache.count * element_grad.len());
        for _ in 0..cache.count {
            per_element.extend_from_slice(&element_grad);
        }
        let inner = self.inner.backward(&cache.inner, &per_element)?;
        Ok(DeepSetGrads { inner, outer })
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        self.inner.write_to(out)?;
        self.outer.write_to(out)
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let inner = MlpParams::read_from(input)?;
        let outer = MlpParams::read_from(input)?;
        Self::new(inner, outer)
    }
}

/// Adam moments for both encoder sub-networks.
#[derive(Clone, Debug)]
pub struct DeepSetAdam {
    inner: AdamState,
    outer: AdamState,
}

impl DeepSetAdam {
    pub fn new(params: &DeepSetParams) -> Self {
        Self {
            inner: AdamState::new(&params.inner),
            outer: AdamState::new(&params.outer),
        }
    }

    pub fn step(&mut self, params: &mut DeepSetParams, grads: &DeepSetGrads, lr: f64) -> Result<()> {
        // Reject before touching either half so a failed step leaves both intact.
        if !(grads.inner.is_finite() && grads.outer.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.inner.step(&mut params.inner, &grads.inner, lr)?;
        self.outer.step(&mut params.outer, &grads.outer, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DeepSetParams {
        DeepSetParams::init(2, &[8, 8], 6, 4, Activation::Relu, 1, 2).unwrap()
    }

    fn support() -> SupportSet {
        SupportSet::new(
            vec![vec![0.1, 0.7], vec![0.4, 0.2], vec![0.9, 0.5], vec![0.3, 0.3]],
            vec![0.5, -0.2, 0.8, 0.1],
        )
        .unwrap()
    }

    #[test]
    fn empty_support_is_rejected() {
        assert!(matches!(
            SupportSet::new(vec![], vec![]),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = SupportSet::new(vec![vec![0.1, 0.2, 0.3]], vec![1.0]).unwrap();
        assert!(matches!(params().encode(&s), Err(Error::Shape { .. })));
    }

    #[test]
    fn single_element_is_plain_composition() {
        let p = params();
        let s = SupportSet::new(vec![vec![0.3, -0.4]], vec![0.9]).unwrap();
        let (z, _) = p.encode(&s).unwrap();
        let (h, _) = p.inner().forward(&[0.3, -0.4, 0.9]).unwrap();
        let (expected, _) = p.outer().forward(&h).unwrap();
        assert_eq!(z.z, expected);
    }

    #[test]
    fn permutation_is_bit_identical() {
        let p = params();
        let s = support();
        let (z, _) = p.encode(&s).unwrap();
        let permuted = s.subset(&[2, 0, 3, 1]).unwrap();
        let (zp, _) = p.encode(&permuted).unwrap();
        assert_eq!(z.z, zp.z);
    }

    #[test]
    fn duplicated_support_matches_original() {
        let p = params();
        let s = support();
        let (z, _) = p.encode(&s).unwrap();
        let doubled = s.subset(&[0, 1, 2, 3, 0, 1, 2, 3]).unwrap();
        let (zd, _) = p.encode(&doubled).unwrap();
        for (a, b) in z.z.iter().zip(&zd.z) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_length_is_independent_of_support_size() {
        let p = params();
        for n in 1..=4 {
            let idx: Vec<usize> = (0..n).collect();
            let (z, _) = p.encode(&support().subset(&idx).unwrap()).unwrap();
            assert_eq!(z.z.len(), 4);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let p = params();
        let (_, cache) = p.encode(&support()).unwrap();
        let g = p.backward(&cache, &[0.0; 4]).unwrap();
        assert!(g.inner.to_flat().iter().all(|&v| v == 0.0));
        assert!(g.outer.to_flat().iter().all(|&v| v == 0.0));
        assert!(p.backward(&cache, &[0.0; 3]).is_err());
    }

    #[test]
    fn single_element_gradient_is_direct_chain_rule() {
        let p = params();
        let s = SupportSet::new(vec![vec![0.3, -0.4]], vec![0.9]).unwrap();
        let (_, cache) = p.encode(&s).unwrap();
        let z_grad = [0.5, -1.0, 0.25, 2.0];
        let g = p.backward(&cache, &z_grad).unwrap();

        let (h, inner_cache) = p.inner().forward(&[0.3, -0.4, 0.9]).unwrap();
        let (_, outer_cache) = p.outer().forward(&h).unwrap();
        let go = p.outer().backward(&outer_cache, &z_grad).unwrap();
        let gi = p.inner().backward(&inner_cache, &go.input).unwrap();
        assert_eq!(g.outer.to_flat(), go.to_flat());
        assert_eq!(g.inner.to_flat(), gi.to_flat());
    }

    #[test]
    fn serialization_round_trips() {
        let p = params();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(DeepSetParams::read_from(&mut buf.as_slice()).unwrap(), p);
    }
}
