use rand::Rng;

use crate::models::Family;
use crate::scalar::Scalar;

/// Flat storage for every subject and item parameter of one model.
///
/// Layout: all subject abilities, then all item discriminations, then all
/// item difficulties. Gradients share the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<F> {
    family: Family,
    n_subjects: usize,
    n_items: usize,
    data: Vec<F>,
}

impl<F: Scalar> Params<F> {
    pub fn zeros(family: Family, n_subjects: usize, n_items: usize) -> Self {
        let len = n_subjects * family.subject_dim()
            + n_items * (family.item_a_dim() + family.item_b_dim());
        Params {
            family,
            n_subjects,
            n_items,
            data: vec![F::zero(); len],
        }
    }

    /// Uniform draw in `[lo_k, min(1, q)]`, where `lo_k` is each block's lower bound.
    pub fn random(family: Family, n_subjects: usize, n_items: usize, q: F, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(family, n_subjects, n_items);
        let hi = q.min(F::one());
        for x in p.data.iter_mut() {
            *x = F::lit(rng.gen::<f64>()) * hi;
        }
        p.project(q);
        p
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    fn a_offset(&self) -> usize {
        self.n_subjects * self.family.subject_dim()
    }

    fn b_offset(&self) -> usize {
        self.a_offset() + self.n_items * self.family.item_a_dim()
    }

    #[inline]
    pub fn theta_range(&self, i: usize) -> std::ops::Range<usize> {
        let d = self.family.subject_dim();
        i * d..(i + 1) * d
    }

    #[inline]
    pub fn a_range(&self, j: usize) -> std::ops::Range<usize> {
        let d = self.family.item_a_dim();
        let o = self.a_offset() + j * d;
        o..o + d
    }

    #[inline]
    pub fn b_range(&self, j: usize) -> std::ops::Range<usize> {
        let d = self.family.item_b_dim();
        let o = self.b_offset() + j * d;
        o..o + d
    }

    #[inline]
    pub fn theta(&self, i: usize) -> &[F] {
        &self.data[self.theta_range(i)]
    }

    #[inline]
    pub fn a(&self, j: usize) -> &[F] {
        &self.data[self.a_range(j)]
    }

    #[inline]
    pub fn b(&self, j: usize) -> &[F] {
        &self.data[self.b_range(j)]
    }

    pub fn theta_mut(&mut self, i: usize) -> &mut [F] {
        let r = self.theta_range(i);
        &mut self.data[r]
    }

    pub fn a_mut(&mut self, j: usize) -> &mut [F] {
        let r = self.a_range(j);
        &mut self.data[r]
    }

    pub fn b_mut(&mut self, j: usize) -> &mut [F] {
        let r = self.b_range(j);
        &mut self.data[r]
    }

    /// Clamps every component onto its box: `[0, q]`, or
    /// `[MIN_CLASSIC_DISCRIMINATION, q]` for IRT/MIRT discriminations.
    pub fn project(&mut self, q: F) {
        let (ao, bo) = (self.a_offset(), self.b_offset());
        let a_lo = self.family.a_lower::<F>();
        for (k, x) in self.data.iter_mut().enumerate() {
            let lo = if k >= ao && k < bo { a_lo } else { F::zero() };
            *x = x.max(lo).min(q);
        }
    }

    /// True when every component lies in its box.
    pub fn in_bounds(&self, q: F) -> bool {
        let (ao, bo) = (self.a_offset(), self.b_offset());
        let a_lo = self.family.a_lower::<F>();
        self.data.iter().enumerate().all(|(k, &x)| {
            let lo = if k >= ao && k < bo { a_lo } else { F::zero() };
            x >= lo && x <= q
        })
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = F::zero());
    }
}
