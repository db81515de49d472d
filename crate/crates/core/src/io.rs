//! File formats: position arrays in JSON and the CSV series.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::equilibria::FamilyStep;
use crate::scalar::Real;

/// Serde adapter storing positions as arrays of `f64` arrays.
pub mod positions_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Real;

    pub fn serialize<T: Real, S: Serializer>(q: &[DVector<T>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = q.iter().map(|x| x.iter().map(|v| v.as_f64()).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<T>>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|r| DVector::from_iterator(r.len(), r.into_iter().map(T::lit)))
            .collect())
    }
}

/// Convert `f64` rows into position vectors.
pub fn positions_from_rows<T: Real>(rows: &[Vec<f64>]) -> Vec<DVector<T>> {
    rows.iter()
        .map(|r| DVector::from_iterator(r.len(), r.iter().map(|v| T::lit(*v))))
        .collect()
}

/// Header of the trajectory CSV for ambient dimension `d`:
/// `t, body, q0..q{d-1}, v0..v{d-1}`.
pub fn trajectory_header(d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "body".to_string()];
    h.extend((0..d).map(|c| format!("q{c}")));
    h.extend((0..d).map(|c| format!("v{c}")));
    h
}

/// One row per sample and body.
pub fn write_trajectory_csv<T: Real, W: Write>(traj: &Trajectory<T>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = traj.space().ambient_dim();
    w.write_record(trajectory_header(d))?;
    for ((t, qs), vs) in traj.times().iter().zip(traj.positions()).zip(traj.velocities()) {
        for (b, (q, v)) in qs.iter().zip(vs).enumerate() {
            let mut row = vec![format!("{:e}", t.as_f64()), b.to_string()];
            row.extend(q.iter().map(|x| format!("{:e}", x.as_f64())));
            row.extend(v.iter().map(|x| format!("{:e}", x.as_f64())));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sweep CSV columns, in order.
pub const FAMILY_COLUMNS: [&str; 6] = [
    "step",
    "param_value",
    "residual_norm",
    "min_separation",
    "max_norm",
    "newton_iterations",
];

pub fn write_family_csv<W: Write>(steps: &[FamilyStep], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FAMILY_COLUMNS)?;
    for s in steps {
        w.write_record([
            s.step.to_string(),
            format!("{:e}", s.param_value),
            format!("{:e}", s.residual_norm),
            format!("{:e}", s.min_separation),
            format!("{:e}", s.max_norm),
            s.newton_iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read back a sweep CSV written by [`write_family_csv`].
pub fn read_family_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<FamilyStep>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().collect()
}

/// Write any serializable table of records with its derived header.
pub fn write_records_csv<S: Serialize, W: Write>(rows: &[S], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Flatten positions to `f64` rows.
pub fn rows_of<T: Real>(q: &[DVector<T>]) -> Vec<Vec<f64>> {
    q.iter().map(|x| x.iter().map(|v| v.as_f64()).collect()).collect()
}
