//! Accumulated evaluations `(θ, s, j, g)` and their CSV checkpoint format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::IoError;
use crate::scalar::Real;

/// Which observed quantity a surrogate is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSelector {
    Objective,
    Constraint,
}

/// One evaluated row.
#[derive(Debug, Clone, PartialEq)]
pub struct Record<T> {
    pub theta: Vec<T>,
    pub context: T,
    pub objective: T,
    pub constraint: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    param_dim: usize,
    params: Vec<Vec<T>>,
    objectives: Vec<T>,
    constraints: Vec<T>,
    contexts: Vec<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(param_dim: usize) -> Self {
        Dataset { param_dim, params: Vec::new(), objectives: Vec::new(), constraints: Vec::new(), contexts: Vec::new() }
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }

    pub fn push(&mut self, theta: &[T], context: T, objective: T, constraint: T) {
        assert_eq!(theta.len(), self.param_dim, "parameter dimension mismatch");
        self.params.push(theta.to_vec());
        self.contexts.push(context);
        self.objectives.push(objective);
        self.constraints.push(constraint);
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn contexts(&self) -> &[T] {
        &self.contexts
    }

    pub fn objectives(&self) -> &[T] {
        &self.objectives
    }

    pub fn constraints(&self) -> &[T] {
        &self.constraints
    }

    pub fn targets(&self, selector: TargetSelector) -> &[T] {
        match selector {
            TargetSelector::Objective => &self.objectives,
            TargetSelector::Constraint => &self.constraints,
        }
    }

    /// Joint surrogate inputs: θ with the context appended.
    pub fn inputs(&self) -> Vec<Vec<T>> {
        self.params
            .iter()
            .zip(&self.contexts)
            .map(|(p, &s)| {
                let mut x = p.clone();
                x.push(s);
                x
            })
            .collect()
    }

    pub fn record(&self, i: usize) -> Record<T> {
        Record {
            theta: self.params[i].clone(),
            context: self.contexts[i],
            objective: self.objectives[i],
            constraint: self.constraints[i],
        }
    }

    /// First index violating the box or context bounds, if any.
    pub fn first_out_of_bounds(&self, theta_min: &[T], theta_max: &[T], s_min: T, s_max: T) -> Option<usize> {
        (0..self.len()).find(|&i| {
            let p = &self.params[i];
            let s = self.contexts[i];
            s < s_min
                || s > s_max
                || p.iter().zip(theta_min.iter().zip(theta_max)).any(|(&v, (&lo, &hi))| v < lo || v > hi)
        })
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (1..=self.param_dim).map(|i| format!("theta{i}")).collect();
        h.extend(["s", "j", "g"].map(String::from));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), IoError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.params[i].iter().map(|v| v.to_string()).collect();
            row.push(self.contexts[i].to_string());
            row.push(self.objectives[i].to_string());
            row.push(self.constraints[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, IoError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let ncols = header.len();
        if ncols < 4 {
            return Err(IoError::Format(format!("dataset needs at least 4 columns, found {ncols}")));
        }
        let param_dim = ncols - 3;
        let mut expected: Vec<String> = (1..=param_dim).map(|i| format!("theta{i}")).collect();
        expected.extend(["s", "j", "g"].map(String::from));
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(IoError::Format(format!("unexpected dataset header {:?}", header)));
        }
        let mut ds = Dataset::new(param_dim);
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: Vec<T> = rec
                .iter()
                .map(|f| parse_real(f).ok_or_else(|| IoError::Format(format!("row {}: bad number {f:?}", line + 2))))
                .collect::<Result<_, _>>()?;
            ds.push(&vals[..param_dim], vals[param_dim], vals[param_dim + 1], vals[param_dim + 2]);
        }
        Ok(ds)
    }
}

pub(crate) fn parse_real<T: Real>(s: &str) -> Option<T> {
    s.trim().parse::<T>().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_inputs_append_context() {
        let mut ds = Dataset::new(2);
        ds.push(&[1.0, 2.0], 50.0, 3.0, 0.1);
        assert_eq!(ds.inputs(), vec![vec![1.0, 2.0, 50.0]]);
        assert_eq!(ds.targets(TargetSelector::Constraint), &[0.1]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut ds = Dataset::new(2);
        ds.push(&[0.1 + 0.2, -1e-300], 123.456_789_012_345_67, 1.0 / 3.0, f64::MIN_POSITIVE);
        ds.push(&[2.0, -3.0], 40.0, 0.0, 7.5);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("theta1,theta2,s,j,g\n"));
        let back = Dataset::<f64>::read_csv(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_wrong_header() {
        let err = Dataset::<f64>::read_csv("a,b,c,d\n1,2,3,4\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("header"));
    }

    #[test]
    fn bounds_check_flags_first_violation() {
        let mut ds = Dataset::new(1);
        ds.push(&[0.5], 0.5, 0.0, 0.0);
        ds.push(&[1.5], 0.5, 0.0, 0.0);
        assert_eq!(ds.first_out_of_bounds(&[0.0], &[1.0], 0.0, 1.0), Some(1));
    }
}
