//! Finitely supported offspring laws given as a probability table.

use num_rational::Ratio;
use rand::Rng;

use super::FiniteConfiguration;
use crate::error::{Error, Result};

/// Displacements within this distance of a multiple of the detected step
/// are snapped to it.
const LATTICE_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub probability: Ratio<i64>,
    pub displacements: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTable {
    entries: Vec<TableEntry>,
    probs: Vec<f64>,
    lattice: Option<(f64, Vec<Vec<i64>>)>,
    /// (entry, child, weight `p_c e^{-x_i}`) for spine sampling.
    spine_slots: Vec<(usize, usize, f64)>,
}

fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl UserTable {
    /// Probabilities must be positive and sum to exactly one.
    pub fn new(entries: Vec<TableEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("offspring table is empty"));
        }
        let mut total = Ratio::from_integer(0i64);
        for e in &entries {
            if e.probability <= Ratio::from_integer(0) {
                return Err(Error::invalid(format!("non-positive probability {}", e.probability)));
            }
            if e.displacements.iter().any(|d| !d.is_finite()) {
                return Err(Error::invalid("table displacements must be finite"));
            }
            total += e.probability;
        }
        if total != Ratio::from_integer(1) {
            return Err(Error::invalid(format!("table probabilities sum to {total}, not 1")));
        }
        let probs: Vec<f64> = entries.iter().map(|e| ratio_to_f64(e.probability)).collect();
        let lattice = detect_lattice(&entries);
        let mut entries = entries;
        if let Some((h, steps)) = &lattice {
            for (e, ks) in entries.iter_mut().zip(steps) {
                e.displacements = ks.iter().map(|&k| k as f64 * h).collect();
            }
        }
        let mut spine_slots = Vec::new();
        for (c, e) in entries.iter().enumerate() {
            for (i, d) in e.displacements.iter().enumerate() {
                spine_slots.push((c, i, probs[c] * (-d).exp()));
            }
        }
        Ok(UserTable { entries, probs, lattice, spine_slots })
    }

    pub fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    pub fn lattice_step(&self) -> Option<f64> {
        self.lattice.as_ref().map(|l| l.0)
    }

    pub fn has_empty_configuration(&self) -> bool {
        self.entries.iter().any(|e| e.displacements.is_empty())
    }

    pub(crate) fn moments(&self) -> (f64, f64, f64) {
        let mut m = (0.0, 0.0, 0.0);
        for (e, p) in self.entries.iter().zip(&self.probs) {
            for &d in &e.displacements {
                let w = p * (-d).exp();
                m.0 += w;
                m.1 += w * d;
                m.2 += w * d * d;
            }
        }
        m
    }

    pub(crate) fn mean_offspring(&self) -> f64 {
        self.entries
            .iter()
            .zip(&self.probs)
            .map(|(e, p)| p * e.displacements.len() as f64)
            .sum()
    }

    pub(crate) fn finite_configurations(&self) -> Option<Vec<FiniteConfiguration>> {
        let (_, steps) = self.lattice.as_ref()?;
        Some(
            self.entries
                .iter()
                .zip(&self.probs)
                .zip(steps)
                .map(|((e, &p), ks)| FiniteConfiguration {
                    probability: p,
                    steps: ks.clone(),
                    displacements: e.displacements.clone(),
                    xi: e.displacements.iter().map(|d| (-d).exp()).sum::<f64>().ln(),
                })
                .collect(),
        )
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[f64] {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (e, p) in self.entries.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return &e.displacements;
            }
        }
        &self.entries[self.entries.len() - 1].displacements
    }

    /// Spine displacement and sibling displacements.
    pub(crate) fn sample_spine<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, Vec<f64>) {
        let total: f64 = self.spine_slots.iter().map(|s| s.2).sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = self.spine_slots[self.spine_slots.len() - 1];
        for &s in &self.spine_slots {
            acc += s.2;
            if u < acc {
                pick = s;
                break;
            }
        }
        let (c, i, _) = pick;
        let ds = &self.entries[c].displacements;
        let sibs = ds.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).collect();
        (ds[i], sibs)
    }
}

/// Smallest nonzero |displacement| as the candidate step; accepted if every
/// displacement is within [`LATTICE_SNAP`] of an integer multiple.
fn detect_lattice(entries: &[TableEntry]) -> Option<(f64, Vec<Vec<i64>>)> {
    let all = entries.iter().flat_map(|e| e.displacements.iter().copied());
    let h = all.filter(|d| d.abs() > LATTICE_SNAP).map(f64::abs).fold(f64::INFINITY, f64::min);
    if !h.is_finite() {
        // every displacement is zero
        let steps = entries.iter().map(|e| vec![0; e.displacements.len()]).collect();
        return Some((1.0, steps));
    }
    let mut steps = Vec::with_capacity(entries.len());
    for e in entries {
        let mut ks = Vec::with_capacity(e.displacements.len());
        for &d in &e.displacements {
            let k = (d / h).round();
            if (d - k * h).abs() > LATTICE_SNAP || k.abs() > 1e12 {
                return None;
            }
            ks.push(k as i64);
        }
        steps.push(ks);
    }
    // refit the step on all points so the snap is not biased by one entry
    let (mut num, mut den) = (0.0, 0.0);
    for (e, ks) in entries.iter().zip(&steps) {
        for (&d, &k) in e.displacements.iter().zip(ks) {
            num += d * k as f64;
            den += (k * k) as f64;
        }
    }
    Some((num / den, steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(n: i64, d: i64, ds: &[f64]) -> TableEntry {
        TableEntry { probability: Ratio::new(n, d), displacements: ds.to_vec() }
    }

    #[test]
    fn probabilities_must_sum_to_one_exactly() {
        let bad = UserTable::new(vec![entry(1, 3, &[0.0]), entry(1, 3, &[1.0, 2.0]), entry(1, 4, &[])]);
        assert!(bad.is_err());
        let ok = UserTable::new(vec![entry(1, 3, &[0.0]), entry(2, 3, &[1.0, 2.0])]);
        assert!(ok.is_ok());
    }

    #[test]
    fn lattice_detection_and_snapping() {
        let h = 2f64.ln();
        let t = UserTable::new(vec![entry(1, 4, &[h, -h + 1e-12]), entry(3, 4, &[3.0 * h])]).unwrap();
        let step = t.lattice_step().unwrap();
        assert!((step - h).abs() < 1e-12);
        assert_eq!(t.entries()[0].displacements[1], -step);
        let t = UserTable::new(vec![entry(1, 2, &[1.0]), entry(1, 2, &[2f64.sqrt()])]).unwrap();
        assert_eq!(t.lattice_step(), None);
    }

    #[test]
    fn spine_sampling_frequencies() {
        let h = 2f64.ln();
        let t = UserTable::new(vec![entry(1, 4, &[h, -h]), entry(3, 4, &[h])]).unwrap();
        let mut rng = crate::rng::StreamKey::new(5, crate::rng::ModuleId::Laws).rng();
        let n = 100_000;
        let down = (0..n).filter(|_| t.sample_spine(&mut rng).0 < 0.0).count() as f64 / n as f64;
        // weights: 1/8, 1/2, 3/8
        assert!((down - 0.5).abs() < 0.01, "{down}");
    }
}
