use rand::Rng;

use super::{DenseMatrix, Tape, Var};
use crate::error::{Error, Result};

/// Index of a matrix inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of parameter matrices belonging to one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<DenseMatrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Adds a `rows x cols` matrix drawn from `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, DenseMatrix::random_uniform(rows, cols, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[DenseMatrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.values
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.as_slice().len()).sum()
    }

    /// Puts every matrix on the tape. Trainable bindings receive gradients;
    /// frozen ones are constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|m| {
                if trainable {
                    tape.param(m)
                } else {
                    tape.constant(m.into())
                }
            })
            .collect()
    }

    fn check_same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape {
                op: "param layout",
                left: (self.len(), 0),
                right: (other.len(), 0),
            });
        }
        for (a, b) in self.values.iter().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: "param layout",
                    left: a.shape(),
                    right: b.shape(),
                });
            }
        }
        Ok(())
    }

    /// `self <- tau * source + (1 - tau) * self`, entrywise.
    pub fn soft_update_from(&mut self, source: &ParamSet, tau: f64) -> Result<()> {
        self.check_same_layout(source)?;
        for (t, s) in self.values.iter_mut().zip(&source.values) {
            for (tv, sv) in t.as_mut_slice().iter_mut().zip(s.as_slice()) {
                *tv = tau * sv + (1.0 - tau) * *tv;
            }
        }
        Ok(())
    }

    /// Copies values from a set with an identical layout.
    pub fn copy_from(&mut self, source: &ParamSet) -> Result<()> {
        self.check_same_layout(source)?;
        self.values.clone_from(&source.values);
        Ok(())
    }

    /// Replaces values from named entries; every name must be present with
    /// a matching shape.
    pub fn load_named<'a, I>(&mut self, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a DenseMatrix)>,
    {
        let mut seen = vec![false; self.len()];
        for (name, m) in entries {
            let Some(i) = self.names.iter().position(|n| n == name) else {
                continue;
            };
            if self.values[i].shape() != m.shape() {
                return Err(Error::Shape {
                    op: "load_named",
                    left: self.values[i].shape(),
                    right: m.shape(),
                });
            }
            self.values[i] = m.clone();
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::format(
                "checkpoint",
                format!("missing parameter {}", self.names[i]),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("w", DenseMatrix::from_rows(&[[v, v]]));
        p
    }

    #[test]
    fn soft_update_edges() {
        let src = one(1.0);
        let mut t = one(0.0);
        t.soft_update_from(&src, 0.001).unwrap();
        assert_eq!(t.values()[0].as_slice(), &[0.001, 0.001]);

        let mut t = one(0.3);
        t.soft_update_from(&src, 0.0).unwrap();
        assert_eq!(t, one(0.3));
        t.soft_update_from(&src, 1.0).unwrap();
        assert_eq!(t, src);
    }

    #[test]
    fn soft_update_rejects_mismatched_layout() {
        let mut t = one(0.0);
        let mut other = ParamSet::new();
        other.add("w", DenseMatrix::zeros(2, 2));
        assert!(t.soft_update_from(&other, 0.5).is_err());
    }
}
