//! JSON and CSV serialization of instances, solver results and traces.
//!
//! Instance files carry everything needed to rebuild the problem: the
//! configuration, the link, the design and basis descriptors (operators are
//! regenerated from their seeds rather than stored) and the ground truth.
//! Floating-point arrays are written as decimal text with 17 significant
//! digits, which round-trips every `f64` exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::ser::{Error as _, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::links::Link;
use crate::model::{SignalConfig, StackedCoefficients, SuperpositionInstance};
use crate::operators::{BasisDescriptor, BasisPair, DesignDescriptor, DesignOperator};
use crate::solvers::{SolveResult, TraceKind};

/// Serializes a float slice as numbers with 17 significant digits.
pub fn digits17<S: Serializer>(
    values: &[f64],
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = serializer.serialize_seq(Some(values.len()))?;
    for v in values {
        if !v.is_finite() {
            return Err(S::Error::custom(format!(
                "cannot serialize non-finite value {v}"
            )));
        }
        let raw = RawValue::from_string(format!("{v:.16e}")).map_err(S::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

/// On-disk form of a [`SuperpositionInstance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub config: SignalConfig,
    pub seed: u64,
    pub link_name: String,
    pub design_descriptor: DesignDescriptor,
    pub basis_descriptor: BasisDescriptor,
    #[serde(serialize_with = "digits17")]
    pub theta1: Vec<f64>,
    #[serde(serialize_with = "digits17")]
    pub theta2: Vec<f64>,
    #[serde(serialize_with = "digits17")]
    pub beta: Vec<f64>,
    #[serde(serialize_with = "digits17")]
    pub y: Vec<f64>,
    #[serde(serialize_with = "digits17")]
    pub noise: Vec<f64>,
}

impl InstanceFile {
    pub fn new(
        inst: &SuperpositionInstance,
        design: &DesignDescriptor,
        bases: &BasisDescriptor,
    ) -> Self {
        InstanceFile {
            config: inst.config.clone(),
            seed: inst.seed,
            link_name: inst.link.name().to_string(),
            design_descriptor: design.clone(),
            basis_descriptor: *bases,
            theta1: inst.theta_true.theta1().as_slice().to_vec(),
            theta2: inst.theta_true.theta2().as_slice().to_vec(),
            beta: inst.beta.as_slice().to_vec(),
            y: inst.y.as_slice().to_vec(),
            noise: inst.e.as_slice().to_vec(),
        }
    }

    pub fn link(&self) -> Result<Link> {
        self.link_name.parse()
    }

    /// Checks array lengths against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let (n, m) = (self.config.n, self.config.m);
        let checks = [
            ("theta1", self.theta1.len(), n),
            ("theta2", self.theta2.len(), n),
            ("beta", self.beta.len(), n),
            ("y", self.y.len(), m),
            ("noise", self.noise.len(), m),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Config(format!(
                    "{name} has length {got}, expected {want}"
                )));
            }
        }
        self.link()?;
        Ok(())
    }

    pub fn to_instance(&self) -> Result<SuperpositionInstance> {
        self.validate()?;
        Ok(SuperpositionInstance {
            config: self.config.clone(),
            theta_true: StackedCoefficients::new(
                &DVector::from_column_slice(&self.theta1),
                &DVector::from_column_slice(&self.theta2),
            ),
            beta: DVector::from_column_slice(&self.beta),
            y: DVector::from_column_slice(&self.y),
            e: DVector::from_column_slice(&self.noise),
            link: self.link()?,
            seed: self.seed,
        })
    }

    /// Regenerates the design operator and the basis pair.
    pub fn operators(&self) -> Result<(DesignOperator, BasisPair)> {
        let design = self.design_descriptor.build()?;
        let bases = BasisPair::from_descriptor(self.config.n, &self.basis_descriptor)?;
        Ok((design, bases))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

pub fn write_instance(path: &Path, file: &InstanceFile) -> Result<()> {
    write_json(path, file)
}

pub fn read_instance(path: &Path) -> Result<InstanceFile> {
    let file: InstanceFile = read_json(path)?;
    file.validate()?;
    Ok(file)
}

/// On-disk form of a [`SolveResult`].
#[derive(Debug, Clone, Serialize)]
pub struct SolveResultFile<'a> {
    pub algorithm: &'a str,
    #[serde(serialize_with = "digits17")]
    pub theta1_hat: &'a [f64],
    #[serde(serialize_with = "digits17")]
    pub theta2_hat: &'a [f64],
    #[serde(serialize_with = "digits17")]
    pub beta_hat: &'a [f64],
    pub iterations: usize,
    pub sparsity_enforced: bool,
    pub trace_kind: TraceKind,
    #[serde(serialize_with = "digits17")]
    pub trace: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_error: Option<f64>,
}

impl<'a> SolveResultFile<'a> {
    pub fn new(algorithm: &'a str, result: &'a SolveResult) -> Self {
        SolveResultFile {
            algorithm,
            theta1_hat: &result.theta1_hat,
            theta2_hat: &result.theta2_hat,
            beta_hat: &result.beta_hat,
            iterations: result.iterations,
            sparsity_enforced: result.sparsity_enforced,
            trace_kind: result.trace_kind,
            trace: &result.error_trace,
            normalized_error: None,
        }
    }
}

/// Writes `iter,<error|loss>` rows; iterations are numbered from 1.
pub fn write_trace_csv<W: Write>(writer: W, kind: TraceKind, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let label = match kind {
        TraceKind::Error => "error",
        TraceKind::Loss => "loss",
    };
    w.write_record(["iter", label])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{v:.16e}")])?;
    }
    w.flush()?;
    Ok(())
}
