//! Transition datasets: rows of (state, action, next state) with provenance
//! metadata. CSV layout: header `s1..s|S|,a1..a|A|,s1'..s|S|'`.

use serde::{Deserialize, Serialize};

use crate::error::NnError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub domain: String,
    pub policy: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Row layout: state ++ action ++ next_state.
    pub rows: Vec<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(state_dim: usize, action_dim: usize, meta: DatasetMeta) -> Self {
        Dataset { state_dim, action_dim, rows: Vec::new(), meta }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_width(&self) -> usize {
        2 * self.state_dim + self.action_dim
    }

    pub fn push(&mut self, state: &[f64], action: &[f64], next: &[f64]) {
        debug_assert_eq!(state.len(), self.state_dim);
        debug_assert_eq!(action.len(), self.action_dim);
        debug_assert_eq!(next.len(), self.state_dim);
        let mut row = Vec::with_capacity(self.row_width());
        row.extend_from_slice(state);
        row.extend_from_slice(action);
        row.extend_from_slice(next);
        self.rows.push(row);
    }

    pub fn inputs(&self, row: usize) -> &[f64] {
        &self.rows[row][..self.state_dim + self.action_dim]
    }

    pub fn targets(&self, row: usize) -> &[f64] {
        &self.rows[row][self.state_dim + self.action_dim..]
    }

    pub fn validate(&self) -> Result<(), NnError> {
        for row in &self.rows {
            if row.len() != self.row_width() {
                return Err(NnError::DimensionMismatch { expected: self.row_width(), got: row.len() });
            }
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteInput(i));
            }
        }
        Ok(())
    }

    /// gamma_i = 1 / max_n |next_state_i|, floored at 1e-9 so the weight
    /// stays positive and finite.
    pub fn compute_loss_weights(&self) -> Result<Vec<f64>, NnError> {
        if self.is_empty() {
            return Err(NnError::DatasetTooSmall { got: 0, need: 1 });
        }
        let mut maxima = vec![0.0f64; self.state_dim];
        for r in 0..self.len() {
            for (i, v) in self.targets(r).iter().enumerate() {
                maxima[i] = maxima[i].max(v.abs());
            }
        }
        maxima
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                if m < 1e-9 {
                    Err(NnError::ZeroOutputDimension(i))
                } else {
                    Ok(1.0 / m)
                }
            })
            .collect()
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<(), NnError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = Vec::new();
        for i in 1..=self.state_dim {
            header.push(format!("s{i}"));
        }
        for i in 1..=self.action_dim {
            header.push(format!("a{i}"));
        }
        for i in 1..=self.state_dim {
            header.push(format!("s{i}'"));
        }
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:.17e}"))).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(
        path: &std::path::Path,
        state_dim: usize,
        action_dim: usize,
        meta: DatasetMeta,
    ) -> Result<Dataset, NnError> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut ds = Dataset::new(state_dim, action_dim, meta);
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let row: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| NnError::Serde(e.to_string())))
                .collect::<Result<_, _>>()?;
            if row.len() != ds.row_width() {
                return Err(NnError::DimensionMismatch { expected: ds.row_width(), got: row.len() });
            }
            ds.rows.push(row);
        }
        ds.validate()?;
        Ok(ds)
    }
}

fn csv_err(e: csv::Error) -> NnError {
    NnError::Serde(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_weights_reciprocal_of_maxima() {
        let mut ds = Dataset::new(2, 1, DatasetMeta::default());
        ds.push(&[0.0, 0.0], &[0.0], &[100.0, -10.0]);
        ds.push(&[0.0, 0.0], &[0.0], &[-50.0, 5.0]);
        let g = ds.compute_loss_weights().unwrap();
        assert_eq!(g, vec![0.01, 0.1]);
    }

    #[test]
    fn loss_weights_of_unit_maxima() {
        let mut ds = Dataset::new(2, 0, DatasetMeta::default());
        ds.push(&[0.0, 0.0], &[], &[1.0, -1.0]);
        assert_eq!(ds.compute_loss_weights().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn zero_output_dimension_is_an_error() {
        let mut ds = Dataset::new(2, 0, DatasetMeta::default());
        ds.push(&[0.0, 0.0], &[], &[1.0, 0.0]);
        assert!(matches!(ds.compute_loss_weights(), Err(NnError::ZeroOutputDimension(1))));
    }

    #[test]
    fn csv_round_trip() {
        let mut ds = Dataset::new(1, 1, DatasetMeta { domain: "d".into(), policy: "p".into(), seed: 3 });
        ds.push(&[1.5], &[-0.25], &[2.75]);
        ds.push(&[0.1], &[0.2], &[0.3]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        ds.save_csv(&path).unwrap();
        let back = Dataset::load_csv(&path, 1, 1, ds.meta.clone()).unwrap();
        assert_eq!(back.rows, ds.rows);
    }
}
