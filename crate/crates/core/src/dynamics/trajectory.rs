use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Uniformly sampled states `Y` (N × n) and inputs `U` (N × m).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Array2<f64>,
    inputs: Array2<f64>,
    dt: f64,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Array2<f64>, inputs: Array2<f64>, dt: f64) -> Result<Self> {
        let n_rows = times.len();
        if states.nrows() != n_rows || inputs.nrows() != n_rows {
            return Err(Error::contract(format!(
                "trajectory rows disagree: {} times, {} state rows, {} input rows",
                n_rows,
                states.nrows(),
                inputs.nrows()
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::contract(format!("sampling step must be positive, got {dt}")));
        }
        for (i, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            // accept the rounding error already present in the stored times
            let slack = 1e-12 * dt + 4.0 * f64::EPSILON * w[1].abs().max(w[0].abs());
            if (step - dt).abs() > slack {
                return Err(Error::contract(format!("non-uniform sampling between rows {i} and {}", i + 1)));
            }
        }
        Ok(Trajectory { times, states, inputs, dt })
    }

    /// Times `t0 + i·dt` for `states.nrows()` rows.
    pub fn uniform(t0: f64, dt: f64, states: Array2<f64>, inputs: Array2<f64>) -> Result<Self> {
        let times = (0..states.nrows()).map(|i| t0 + i as f64 * dt).collect();
        Trajectory::new(times, states, inputs, dt)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.states.ncols()
    }

    pub fn m(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn with_states(&self, states: Array2<f64>) -> Result<Self> {
        Trajectory::new(self.times.clone(), states, self.inputs.clone(), self.dt)
    }

    /// Rows `start..end` as a new trajectory.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::contract(format!("bad slice {start}..{end} of {} rows", self.len())));
        }
        Trajectory::new(
            self.times[start..end].to_vec(),
            self.states.slice(s![start..end, ..]).to_owned(),
            self.inputs.slice(s![start..end, ..]).to_owned(),
            self.dt,
        )
    }

    /// Writes `t,y1..yn[,u1..um]` with one row per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header = vec!["t".to_owned()];
        header.extend((1..=self.n()).map(|i| format!("y{i}")));
        header.extend((1..=self.m()).map(|i| format!("u{i}")));
        w.write_record(&header).map_err(csv_io)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.states.row(i).iter().map(f64::to_string));
            rec.extend(self.inputs.row(i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(rec) => rec.map_err(|e| csv_parse(e, 1))?,
            None => return Err(Error::parse(1, None, "empty trajectory file")),
        };
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(Error::parse(1, Some("t"), "first column must be `t`"));
        }
        let n = cols.iter().skip(1).take_while(|c| c.starts_with('y')).count();
        let m = cols.len() - 1 - n;
        for (i, c) in cols[1..=n].iter().enumerate() {
            if *c != format!("y{}", i + 1) {
                return Err(Error::parse(1, Some(c), format!("expected column `y{}`", i + 1)));
            }
        }
        for (i, c) in cols[1 + n..].iter().enumerate() {
            if *c != format!("u{}", i + 1) {
                return Err(Error::parse(1, Some(c), format!("expected column `u{}`", i + 1)));
            }
        }
        if n == 0 {
            return Err(Error::parse(1, None, "no state columns"));
        }

        let width = 1 + n + m;
        let mut times = Vec::new();
        let mut flat_y = Vec::new();
        let mut flat_u = Vec::new();
        for (idx, rec) in records.enumerate() {
            let line = idx + 2;
            let rec = rec.map_err(|e| csv_parse(e, line))?;
            if rec.len() == 1 && rec.get(0).is_some_and(|f| f.trim().is_empty()) {
                continue;
            }
            if rec.len() != width {
                return Err(Error::parse(line, None, format!("expected {width} fields, found {}", rec.len())));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::parse(line, Some(cols[j]), format!("`{field}` is not a number"))
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(line, Some(cols[j]), "non-finite value"));
                }
                match j {
                    0 => times.push(v),
                    j if j <= n => flat_y.push(v),
                    _ => flat_u.push(v),
                }
            }
        }
        let rows = times.len();
        if rows < 2 {
            return Err(Error::parse(rows + 1, None, "need at least two samples"));
        }
        let dt = (times[rows - 1] - times[0]) / (rows - 1) as f64;
        let states = Array2::from_shape_vec((rows, n), flat_y).expect("row-major fill");
        let inputs = Array2::from_shape_vec((rows, m), flat_u).expect("row-major fill");
        Trajectory::new(times, states, inputs, dt).map_err(|e| match e {
            Error::Contract(msg) => Error::parse(0, Some("t"), msg),
            other => other,
        })
    }

    pub fn states_view(&self) -> ArrayView2<'_, f64> {
        self.states.view()
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn csv_parse(e: csv::Error, line: usize) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    Error::parse(line, None, e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> Trajectory {
        Trajectory::uniform(0.0, 0.1, array![[1.0, 2.0], [1.5, 2.5], [2.0, 3.25]], array![[0.5], [0.25], [0.0]]).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        let text = t.to_csv_string();
        assert!(text.starts_with("t,y1,y2,u1\n0,1,2,0.5\n"));
        assert!(!text.contains('\r'));
        let back = Trajectory::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.states(), t.states());
        assert_eq!(back.inputs(), t.inputs());
        assert_eq!(back.times(), t.times());
    }

    #[test]
    fn invariants_checked() {
        assert!(Trajectory::new(vec![0.0, 0.1], array![[1.0]], Array2::zeros((2, 0)), 0.1).is_err());
        assert!(Trajectory::new(vec![0.0, 0.1, 0.3], Array2::zeros((3, 1)), Array2::zeros((3, 0)), 0.1).is_err());
        assert!(Trajectory::new(vec![0.0], Array2::zeros((1, 1)), Array2::zeros((1, 0)), 0.0).is_err());
    }

    #[test]
    fn truncated_row_names_line() {
        let text = "t,y1,y2\n0,1,2\n0.1,1.5\n";
        match Trajectory::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "t,y1\n0,1\n0.1,abc\n";
        match Trajectory::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field.as_deref(), Some("y1"));
            }
            other => panic!("{other:?}"),
        }
    }
}
