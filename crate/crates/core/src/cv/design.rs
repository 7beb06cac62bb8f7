//! Row gathering: turns stimulus id lists into design and target matrices.

use nalgebra::DMatrix;

use crate::data::{RatingTable, SiteId, SiteMatrix, Store};
use crate::error::{Error, Result};

/// One site's features with its row layout.
#[derive(Debug, Clone)]
pub struct SiteData {
    pub site: SiteId,
    pub matrix: SiteMatrix,
    /// Rows per stimulus (1 for text-encoder sites).
    pub per_stimulus: usize,
}

impl SiteData {
    pub fn load(store: &Store, site: SiteId) -> Result<Self> {
        let matrix = store.load(&site)?;
        Ok(SiteData {
            site,
            per_stimulus: store.manifest().seeds_per_stimulus(site.kind),
            matrix,
        })
    }

    pub fn n_stimuli(&self) -> usize {
        self.matrix.rows() / self.per_stimulus.max(1)
    }

    /// Feature rows of the given stimuli (in the given order), as f64.
    pub fn rows(&self, stimuli: &[usize]) -> DMatrix<f64> {
        let d = self.matrix.d();
        let per = self.per_stimulus;
        let mut out = DMatrix::zeros(stimuli.len() * per, d);
        let mut r = 0;
        for &s in stimuli {
            for src in s * per..(s + 1) * per {
                for (c, v) in self.matrix.row(src).iter().enumerate() {
                    out[(r, c)] = f64::from(*v);
                }
                r += 1;
            }
        }
        out
    }

    /// For each gathered row, its position in `stimuli`.
    pub fn row_groups(&self, stimuli: &[usize]) -> Vec<usize> {
        (0..stimuli.len())
            .flat_map(|g| std::iter::repeat_n(g, self.per_stimulus))
            .collect()
    }
}

/// Ratings of the analysed attributes, aligned to store stimulus order.
#[derive(Debug, Clone)]
pub struct Targets {
    /// Ids (columns of the rating table) of the analysed attributes.
    pub attribute_ids: Vec<usize>,
    pub questions: Vec<String>,
    /// `n_stimuli x attributes`.
    pub values: DMatrix<f64>,
}

impl Targets {
    /// Aligns `ratings` to the store's stimulus list by exact text match.
    /// `attributes` selects columns (all when `None`).
    pub fn align(store: &Store, ratings: &RatingTable, attributes: Option<&[usize]>) -> Result<Self> {
        let rows = ratings.rows_for(&store.manifest().stimuli)?;
        let ids: Vec<usize> = match attributes {
            Some(a) => a.to_vec(),
            None => (0..ratings.m()).collect(),
        };
        if ids.is_empty() {
            return Err(Error::InvalidArgument("no attributes selected".into()));
        }
        if let Some(bad) = ids.iter().find(|&&a| a >= ratings.m()) {
            return Err(Error::InvalidArgument(format!("attribute id {bad} out of range")));
        }
        let values = DMatrix::from_fn(rows.len(), ids.len(), |i, j| f64::from(ratings.get(rows[i], ids[j])));
        Ok(Targets {
            questions: ids.iter().map(|&a| ratings.attributes()[a].question.clone()).collect(),
            attribute_ids: ids,
            values,
        })
    }

    pub fn m(&self) -> usize {
        self.attribute_ids.len()
    }

    /// Target rows matching [`SiteData::rows`] for the same stimuli.
    pub fn rows(&self, stimuli: &[usize], per_stimulus: usize) -> DMatrix<f64> {
        let m = self.m();
        let mut out = DMatrix::zeros(stimuli.len() * per_stimulus, m);
        let mut r = 0;
        for &s in stimuli {
            for _ in 0..per_stimulus {
                for j in 0..m {
                    out[(r, j)] = self.values[(s, j)];
                }
                r += 1;
            }
        }
        out
    }

    /// Per-stimulus targets of one attribute column.
    pub fn stimulus_values(&self, stimuli: &[usize], column: usize) -> Vec<f64> {
        stimuli.iter().map(|&s| self.values[(s, column)]).collect()
    }
}
