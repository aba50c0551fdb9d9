//! Response data storage shared by estimation, simulation, and ingestion.

use crate::error::{Error, Result};

pub(crate) const MISSING: u8 = u8::MAX;

/// Persons-by-items binary response matrix with a missingness mask,
/// per-person group labels, and optional cluster metadata.
///
/// Group labels are 0 (control) and 1 (treatment). Missing entries are
/// skipped by every likelihood computation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDataset {
    item_names: Vec<String>,
    group: Vec<u8>,
    cells: Vec<u8>,
    n_items: usize,
    cluster: Option<Vec<String>>,
    dropped_empty_persons: usize,
}

impl ResponseDataset {
    /// Builds a dataset from per-person rows. `None` marks a missing response.
    pub fn from_rows(
        item_names: Vec<String>,
        group: Vec<u8>,
        rows: &[Vec<Option<u8>>],
    ) -> Result<Self> {
        let m = item_names.len();
        if m == 0 {
            return Err(Error::InvalidData("no items".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &item_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate item name `{name}`")));
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyData("no persons".into()));
        }
        if group.len() != rows.len() {
            return Err(Error::InvalidData(format!(
                "{} group labels for {} rows",
                group.len(),
                rows.len()
            )));
        }
        for (j, &g) in group.iter().enumerate() {
            if g > 1 {
                return Err(Error::InvalidData(format!(
                    "row {j}: group label {g} not in {{0,1}}"
                )));
            }
        }
        let mut cells = Vec::with_capacity(rows.len() * m);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidData(format!(
                    "row {j} has {} cells, expected {m}",
                    row.len()
                )));
            }
            for (i, cell) in row.iter().enumerate() {
                match cell {
                    None => cells.push(MISSING),
                    Some(x @ (0 | 1)) => cells.push(*x),
                    Some(x) => {
                        return Err(Error::InvalidData(format!(
                            "row {j}, item {i}: value {x} not binary"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            item_names,
            group,
            cells,
            n_items: m,
            cluster: None,
            dropped_empty_persons: 0,
        })
    }

    /// Internal constructor for callers that already hold validated cells.
    pub(crate) fn from_parts(item_names: Vec<String>, group: Vec<u8>, cells: Vec<u8>) -> Self {
        let n_items = item_names.len();
        debug_assert_eq!(cells.len(), group.len() * n_items);
        Self {
            item_names,
            group,
            cells,
            n_items,
            cluster: None,
            dropped_empty_persons: 0,
        }
    }

    /// Attaches a cluster label per person. Carried as metadata only.
    pub fn with_cluster(mut self, cluster: Vec<String>) -> Result<Self> {
        if cluster.len() != self.n_persons() {
            return Err(Error::InvalidData(format!(
                "{} cluster labels for {} persons",
                cluster.len(),
                self.n_persons()
            )));
        }
        self.cluster = Some(cluster);
        Ok(self)
    }

    pub fn n_persons(&self) -> usize {
        self.group.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Response of `person` to `item`; `None` when missing.
    pub fn get(&self, person: usize, item: usize) -> Option<u8> {
        match self.cells[person * self.n_items + item] {
            MISSING => None,
            x => Some(x),
        }
    }

    pub fn group_label(&self, person: usize) -> u8 {
        self.group[person]
    }

    pub fn group_labels(&self) -> &[u8] {
        &self.group
    }

    /// Number of persons carrying group label `g`.
    pub fn n_group(&self, g: u8) -> usize {
        self.group.iter().filter(|&&x| x == g).count()
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn cluster(&self) -> Option<&[String]> {
        self.cluster.as_deref()
    }

    /// Number of all-missing persons removed by `drop_unobserved_persons`.
    pub fn dropped_empty_persons(&self) -> usize {
        self.dropped_empty_persons
    }

    /// Total count of observed (non-missing) cells.
    pub fn observed_total(&self) -> usize {
        self.cells.iter().filter(|&&c| c != MISSING).count()
    }

    /// Count of persons with an observed response to `item`.
    pub fn observed_count(&self, item: usize) -> usize {
        (0..self.n_persons())
            .filter(|&j| self.get(j, item).is_some())
            .count()
    }

    pub fn observed_count_in_group(&self, item: usize, g: u8) -> usize {
        (0..self.n_persons())
            .filter(|&j| self.group[j] == g && self.get(j, item).is_some())
            .count()
    }

    /// Mean observed response for `item` over both groups; `None` when the
    /// item has no observed responses.
    pub fn endorsement_rate(&self, item: usize) -> Option<f64> {
        let mut sum = 0.0;
        let mut cnt = 0usize;
        for j in 0..self.n_persons() {
            if let Some(x) = self.get(j, item) {
                sum += f64::from(x);
                cnt += 1;
            }
        }
        if cnt == 0 {
            None
        } else {
            Some(sum / cnt as f64)
        }
    }

    /// Fraction of the total sample with an observed response to `item`.
    pub fn coverage(&self, item: usize) -> f64 {
        self.observed_count(item) as f64 / self.n_persons() as f64
    }

    /// Rows with group label `g`, keeping all items and metadata.
    pub fn restrict_to_group(&self, g: u8) -> Self {
        let keep: Vec<usize> = (0..self.n_persons())
            .filter(|&j| self.group[j] == g)
            .collect();
        self.select_persons(&keep)
    }

    fn select_persons(&self, keep: &[usize]) -> Self {
        let mut cells = Vec::with_capacity(keep.len() * self.n_items);
        let mut group = Vec::with_capacity(keep.len());
        for &j in keep {
            group.push(self.group[j]);
            let row = &self.cells[j * self.n_items..(j + 1) * self.n_items];
            cells.extend_from_slice(row);
        }
        let cluster = self
            .cluster
            .as_ref()
            .map(|c| keep.iter().map(|&j| c[j].clone()).collect());
        Self {
            item_names: self.item_names.clone(),
            group,
            cells,
            n_items: self.n_items,
            cluster,
            dropped_empty_persons: self.dropped_empty_persons,
        }
    }

    /// Keeps the item columns listed in `keep`, in the given order.
    pub fn select_items(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::InvalidData("select_items: empty selection".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &i in keep {
            if i >= self.n_items {
                return Err(Error::InvalidData(format!(
                    "select_items: index {i} out of range for {} items",
                    self.n_items
                )));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidData(format!(
                    "select_items: duplicate index {i}"
                )));
            }
        }
        let mut cells = Vec::with_capacity(self.n_persons() * keep.len());
        for j in 0..self.n_persons() {
            let row = &self.cells[j * self.n_items..(j + 1) * self.n_items];
            for &i in keep {
                cells.push(row[i]);
            }
        }
        Ok(Self {
            item_names: keep.iter().map(|&i| self.item_names[i].clone()).collect(),
            group: self.group.clone(),
            cells,
            n_items: keep.len(),
            cluster: self.cluster.clone(),
            dropped_empty_persons: self.dropped_empty_persons,
        })
    }

    /// Removes persons with no observed responses, recording the count.
    pub fn drop_unobserved_persons(self) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n_persons())
            .filter(|&j| (0..self.n_items).any(|i| self.get(j, i).is_some()))
            .collect();
        if keep.is_empty() {
            return Err(Error::EmptyData("every person is all-missing".into()));
        }
        let dropped = self.n_persons() - keep.len();
        let mut out = self.select_persons(&keep);
        out.dropped_empty_persons = self.dropped_empty_persons + dropped;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn toy() -> ResponseDataset {
        ResponseDataset::from_rows(
            vec!["x".into(), "y".into(), "z".into()],
            vec![0, 0, 1, 1],
            &[
                vec![Some(1), Some(0), None],
                vec![Some(0), Some(0), Some(1)],
                vec![Some(1), None, Some(1)],
                vec![Some(1), Some(1), Some(0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn shape_and_access() {
        let d = toy();
        assert_eq!(d.n_persons(), 4);
        assert_eq!(d.n_items(), 3);
        assert_eq!(d.n_group(0), 2);
        assert_eq!(d.n_group(1), 2);
        assert_eq!(d.get(0, 2), None);
        assert_eq!(d.get(3, 1), Some(1));
        assert_eq!(d.observed_total(), 10);
    }

    #[test]
    fn endorsement_and_coverage() {
        let d = toy();
        assert!((d.endorsement_rate(0).unwrap() - 0.75).abs() < 1e-15);
        assert!((d.coverage(1) - 0.75).abs() < 1e-15);
        assert!((d.coverage(2) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn group_restriction() {
        let d = toy().restrict_to_group(1);
        assert_eq!(d.n_persons(), 2);
        assert!(d.group_labels().iter().all(|&g| g == 1));
        assert_eq!(d.get(0, 0), Some(1));
        assert_eq!(d.get(0, 1), None);
    }

    #[test]
    fn item_selection_reorders() {
        let d = toy().select_items(&[2, 0]).unwrap();
        assert_eq!(d.item_names(), &["z".to_string(), "x".to_string()]);
        assert_eq!(d.get(1, 0), Some(1));
        assert_eq!(d.get(1, 1), Some(0));
    }

    #[test]
    fn drops_empty_persons() {
        let d = ResponseDataset::from_rows(
            vec!["x".into(), "y".into()],
            vec![0, 1, 1],
            &[
                vec![None, None],
                vec![Some(1), Some(0)],
                vec![Some(0), None],
            ],
        )
        .unwrap();
        let d = d.drop_unobserved_persons().unwrap();
        assert_eq!(d.n_persons(), 2);
        assert_eq!(d.dropped_empty_persons(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        let e =
            ResponseDataset::from_rows(vec!["x".into()], vec![0], &[vec![Some(2)]]).unwrap_err();
        assert!(matches!(e, Error::InvalidData(_)));

        let e = ResponseDataset::from_rows(
            vec!["x".into(), "x".into()],
            vec![0],
            &[vec![Some(1), Some(0)]],
        )
        .unwrap_err();
        assert!(matches!(e, Error::InvalidData(_)));

        let e = ResponseDataset::from_rows(vec!["x".into()], vec![], &[]).unwrap_err();
        assert!(matches!(e, Error::EmptyData(_)));

        let e =
            ResponseDataset::from_rows(vec!["x".into()], vec![3], &[vec![Some(1)]]).unwrap_err();
        assert!(matches!(e, Error::InvalidData(_)));
    }
}
