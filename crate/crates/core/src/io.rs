//! Plain-text formats: trajectory and curve CSV files, model and parameter
//! TOML files.
//!
//! Floats are written as `{:.16e}`, which round-trips every `f64`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::constructs::{ParamSlice, ParamVector};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::odesolve::Trajectory;
use crate::train::IterationRecord;

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header `t, x_1..x_n, u_1..u_k, y_1..y_p`.
pub fn trajectory_header(n: usize, k: usize, p: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x_{i}")));
    h.extend((1..=k).map(|i| format!("u_{i}")));
    h.extend((1..=p).map(|i| format!("y_{i}")));
    h
}

pub fn write_trajectory_csv<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    traj.validate()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(traj.state_dim(), traj.input_dim(), traj.output_dim()))?;
    for k in 0..traj.len() {
        let row = std::iter::once(traj.times[k])
            .chain(traj.states[k].iter().copied())
            .chain(traj.inputs[k].iter().copied())
            .chain(traj.outputs[k].iter().copied())
            .map(fmt);
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Column counts implied by a trajectory header.
fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize, usize)> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.first() != Some(&"t") {
        return Err(Error::Parse("trajectory header must start with `t`".into()));
    }
    let mut counts = [0usize; 3];
    let mut group = 0usize;
    for name in &names[1..] {
        let (prefix, index) = name
            .split_once('_')
            .ok_or_else(|| Error::Parse(format!("unexpected column `{name}`")))?;
        let g = match prefix {
            "x" => 0,
            "u" => 1,
            "y" => 2,
            _ => return Err(Error::Parse(format!("unexpected column `{name}`"))),
        };
        if g < group {
            return Err(Error::Parse(format!("column `{name}` out of order")));
        }
        group = g;
        let expected = counts[g] + 1;
        if index.parse::<usize>().ok() != Some(expected) {
            return Err(Error::Parse(format!("expected `{prefix}_{expected}`, found `{name}`")));
        }
        counts[g] = expected;
    }
    Ok((counts[0], counts[1], counts[2]))
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let (n, k, p) = parse_header(r.headers()?)?;
    let mut traj = Trajectory::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 1 + n + k + p {
            return Err(Error::Parse(format!(
                "row {}: expected {} fields, found {}",
                line + 1,
                1 + n + k + p,
                rec.len()
            )));
        }
        let vals = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: `{s}`: {e}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        traj.times.push(vals[0]);
        traj.states.push(vals[1..1 + n].to_vec());
        traj.inputs.push(vals[1 + n..1 + n + k].to_vec());
        traj.outputs.push(vals[1 + n + k..].to_vec());
    }
    traj.validate().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(traj)
}

/// Loss curve with columns `iter, J, R, lambda, wall_ms`.
pub fn write_loss_csv<W: Write>(out: W, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "J", "R", "lambda", "wall_ms"])?;
    for r in records {
        w.write_record([r.iter.to_string(), fmt(r.j), fmt(r.r), fmt(r.lambda), fmt(r.wall_ms)])?;
    }
    w.flush()?;
    Ok(())
}

/// Generic numeric table with a header.
pub fn write_table_csv<W: Write>(out: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::dim("table row", header.len(), row.len()));
        }
        w.write_record(row.iter().map(|v| fmt(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table_csv<R: Read>(input: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::dim("table row", header.len(), row.len()));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn parse_model_toml(text: &str) -> Result<Network> {
    let net: Network = toml::from_str(text)?;
    net.validate()?;
    Ok(net)
}

pub fn model_to_toml(net: &Network) -> Result<String> {
    Ok(toml::to_string(net)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    values: Vec<f64>,
    #[serde(default)]
    slices: Vec<ParamSlice>,
}

/// Parameter file: the flat vector plus an optional named slice layout.
pub fn params_to_toml(values: &[f64], slices: &[ParamSlice]) -> Result<String> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Structure("parameter file values must be finite".into()));
    }
    let file = ParamsFile {
        values: values.to_vec(),
        slices: slices.to_vec(),
    };
    Ok(toml::to_string(&file)?)
}

pub fn parse_params(text: &str) -> Result<ParamVector> {
    let file: ParamsFile = toml::from_str(text)?;
    if file.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse("parameter values must be finite".into()));
    }
    if file.slices.is_empty() {
        let len = file.values.len();
        let slices = if len == 0 {
            Vec::new()
        } else {
            vec![ParamSlice {
                name: "w".into(),
                start: 0,
                len,
            }]
        };
        return ParamVector::from_parts(file.values, slices);
    }
    ParamVector::from_parts(file.values, file.slices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_layered_network, msd_network, LayeredSpec, MsdSpec};
    use proptest::prelude::*;

    fn sample() -> Trajectory {
        Trajectory {
            times: vec![0.0, 0.1, 0.2],
            states: vec![vec![1.0, 2.0], vec![0.1, 1.0 / 3.0], vec![-1e-300, 7.5e200]],
            inputs: vec![vec![0.5], vec![0.25], vec![std::f64::consts::PI]],
            outputs: vec![vec![1.0], vec![2.0], vec![3.0]],
        }
    }

    #[test]
    fn trajectory_round_trip() {
        let t = sample();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x_1,x_2,u_1,y_1\n"));
        assert_eq!(read_trajectory_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn header_must_be_ordered() {
        assert!(read_trajectory_csv("t,y_1,x_1\n0,1,2\n".as_bytes()).is_err());
        assert!(read_trajectory_csv("t,x_2\n0,1\n".as_bytes()).is_err());
        assert!(read_trajectory_csv("time,x_1\n0,1\n".as_bytes()).is_err());
        assert!(read_trajectory_csv("t,x_1\n0,1,2\n".as_bytes()).is_err());
        assert!(read_trajectory_csv("t,x_1\n0,abc\n".as_bytes()).is_err());
    }

    #[test]
    fn model_round_trip() {
        for net in [
            msd_network(&MsdSpec::default()),
            build_layered_network(&LayeredSpec {
                layers: 2,
                ..LayeredSpec::default()
            })
            .unwrap(),
        ] {
            let text = model_to_toml(&net).unwrap();
            assert_eq!(parse_model_toml(&text).unwrap(), net);
        }
    }

    #[test]
    fn params_round_trip() {
        let pv = msd_network(&MsdSpec::default()).param_vector().unwrap();
        let text = params_to_toml(pv.values(), pv.slices()).unwrap();
        assert_eq!(parse_params(&text).unwrap(), pv);
        assert!(parse_params("values = [1.0]\nslices = [{ name = \"a\", start = 1, len = 1 }]").is_err());
        assert_eq!(parse_params("values = [1.0, 2.0]").unwrap().len(), 2);
    }

    #[test]
    fn loss_csv_has_expected_columns() {
        let mut buf = Vec::new();
        let rec = IterationRecord {
            iter: 3,
            j: 0.5,
            r: 0.0,
            lambda: 0.1,
            wall_ms: 2.0,
        };
        write_loss_csv(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,J,R,lambda,wall_ms\n3,5.0000000000000000e-1,"));
    }

    proptest! {
        #[test]
        fn csv_floats_round_trip(vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..20)) {
            let t = Trajectory {
                times: (0..vals.len()).map(|k| k as f64).collect(),
                states: vals.iter().map(|v| vec![*v]).collect(),
                inputs: vec![vec![]; vals.len()],
                outputs: vals.iter().map(|v| vec![-*v]).collect(),
            };
            let mut buf = Vec::new();
            write_trajectory_csv(&mut buf, &t).unwrap();
            let back = read_trajectory_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
