//! Selected sets keyed by point id.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::point::Point;
use crate::value::CoreError;

/// A selected point together with its revealed label and insertion time.
#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    point: Arc<Point>,
    label: Option<usize>,
    t: usize,
}

impl Member {
    pub fn point(&self) -> &Point {
        &self.point
    }

    pub fn id(&self) -> u64 {
        self.point.id()
    }

    /// Label revealed at selection time, if the stream carried one.
    pub fn label(&self) -> Option<usize> {
        self.label
    }

    /// 1-based arrival index of the point in its stream (0 for points added
    /// offline).
    pub fn t(&self) -> usize {
        self.t
    }
}

/// Ordered collection of selected points. Two points with equal payloads
/// but different ids are distinct members.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectedSet {
    members: Vec<Member>,
    ids: BTreeSet<u64>,
}

impl SelectedSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from points with all their labels revealed. Meant for
    /// offline evaluation (oracle, property checks); duplicates are an error.
    pub fn revealed<'a, I>(points: I) -> Result<Self, CoreError>
    where
        I: IntoIterator<Item = &'a Point>,
    {
        let mut s = SelectedSet::new();
        for p in points {
            s.insert(Arc::new(p.clone()), p.reveal_label(), 0)?;
        }
        Ok(s)
    }

    pub(crate) fn revealed_arcs<'a, I>(points: I) -> Result<Self, CoreError>
    where
        I: IntoIterator<Item = &'a Arc<Point>>,
    {
        let mut s = SelectedSet::new();
        for p in points {
            s.insert(Arc::clone(p), p.reveal_label(), 0)?;
        }
        Ok(s)
    }

    pub fn insert(&mut self, point: Arc<Point>, label: Option<usize>, t: usize) -> Result<(), CoreError> {
        if !self.ids.insert(point.id()) {
            return Err(CoreError::AlreadyMember(point.id()));
        }
        self.members.push(Member { point, label, t });
        Ok(())
    }

    pub fn push(&mut self, point: Point, label: Option<usize>, t: usize) -> Result<(), CoreError> {
        self.insert(Arc::new(point), label, t)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.contains(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Member> {
        self.members.iter()
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> Vec<u64> {
        self.members.iter().map(Member::id).collect()
    }

    /// Ids in ascending order.
    pub fn sorted_ids(&self) -> Vec<u64> {
        self.ids.iter().copied().collect()
    }

    /// Set union keyed by id; members of `self` keep their position and
    /// members of `other` not already present are appended in order.
    pub fn union(&self, other: &SelectedSet) -> SelectedSet {
        let mut out = self.clone();
        for m in &other.members {
            if out.ids.insert(m.id()) {
                out.members.push(m.clone());
            }
        }
        out
    }

    /// Copy of the set extended by `point` (label as given).
    pub fn with(&self, point: Point, label: Option<usize>) -> Result<SelectedSet, CoreError> {
        let mut out = self.clone();
        out.push(point, label, 0)?;
        Ok(out)
    }

    /// Number of members whose ids also appear in `ids`.
    pub fn overlap(&self, ids: &[u64]) -> usize {
        ids.iter().filter(|id| self.ids.contains(id)).count()
    }
}

impl<'a> IntoIterator for &'a SelectedSet {
    type Item = &'a Member;
    type IntoIter = std::slice::Iter<'a, Member>;

    fn into_iter(self) -> Self::IntoIter {
        self.members.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: u64) -> Point {
        Point::with_features(id, vec![1.0])
    }

    #[test]
    fn duplicates_are_rejected() {
        let mut s = SelectedSet::new();
        s.push(p(1), None, 1).unwrap();
        assert!(matches!(s.push(p(1), None, 2), Err(CoreError::AlreadyMember(1))));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn equal_payloads_with_different_ids_are_distinct() {
        let s = SelectedSet::revealed(&[p(1), p(2)]).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn union_keys_by_id() {
        let a = SelectedSet::revealed(&[p(1), p(3)]).unwrap();
        let b = SelectedSet::revealed(&[p(2), p(3)]).unwrap();
        let u = a.union(&b);
        assert_eq!(u.ids(), vec![1, 3, 2]);
        assert_eq!(u.sorted_ids(), vec![1, 2, 3]);
        assert_eq!(u.overlap(&[2, 9]), 1);
    }
}
