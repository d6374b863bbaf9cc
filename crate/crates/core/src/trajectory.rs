//! Per-run time series and its CSV form.

use std::io::Write;

use crate::error::Result;

pub const CSV_HEADER: [&str; 13] = [
    "step",
    "t",
    "loss",
    "test_loss",
    "lambda_min_KW",
    "lambda_min_K",
    "det_KW",
    "oppenheim_lower",
    "omega",
    "gen_bound_rhs_delta0p1",
    "xi_mass_min",
    "mean_disp",
    "sup_disp",
];

/// One log point. Optional quantities are written as empty fields when they
/// were not computed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub loss: f64,
    pub test_loss: Option<f64>,
    pub lambda_min_kw: Option<f64>,
    pub lambda_min_k: Option<f64>,
    pub det_kw: Option<f64>,
    pub oppenheim_lower: Option<f64>,
    pub omega: f64,
    pub gen_bound_rhs: f64,
    pub xi_mass_min: f64,
    pub mean_disp: f64,
    pub sup_disp: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub rows: Vec<TrajectoryRow>,
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// `lambda_min(K_W)` at every row; `None` if any row lacks a snapshot.
    pub fn lambda_min_kw(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.lambda_min_kw).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CSV_HEADER)?;
        for r in &self.rows {
            wtr.write_record([
                r.step.to_string(),
                fmt(r.t),
                fmt(r.loss),
                fmt_opt(r.test_loss),
                fmt_opt(r.lambda_min_kw),
                fmt_opt(r.lambda_min_k),
                fmt_opt(r.det_kw),
                fmt_opt(r.oppenheim_lower),
                fmt(r.omega),
                fmt(r.gen_bound_rhs),
                fmt(r.xi_mass_min),
                fmt(r.mean_disp),
                fmt(r.sup_disp),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_empty_optionals() {
        let rec = TrajectoryRecord {
            rows: vec![TrajectoryRow {
                step: 3,
                t: 0.15,
                loss: 0.5,
                test_loss: None,
                lambda_min_kw: Some(1e-3),
                lambda_min_k: Some(1e-3),
                det_kw: Some(0.0),
                oppenheim_lower: Some(0.0),
                omega: 0.1,
                gen_bound_rhs: 1.0,
                xi_mass_min: 0.5,
                mean_disp: 0.01,
                sup_disp: 0.02,
            }],
        };
        let s = rec.to_csv_string().unwrap();
        let mut lines = s.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,t,loss,test_loss,lambda_min_KW,lambda_min_K,det_KW,oppenheim_lower,omega,gen_bound_rhs_delta0p1,xi_mass_min,mean_disp,sup_disp"
        );
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 13);
        assert_eq!(fields[0], "3");
        assert_eq!(fields[3], "");
        assert_eq!(fields[2].parse::<f64>().unwrap(), 0.5);
    }
}
