//! Plain-text result rendering shared by the CLI and the test harness.
//!
//! Three CSV views of an (eps, T) grid are produced:
//!
//! * a table of estimates laid out eps-rows by T-columns,
//! * the same layout for per-sample relative errors,
//! * one long-format row per cell with all estimator fields.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! parsing an emitted CSV reproduces the in-memory values exactly; any
//! rounding happens at presentation time only. The two table views contain
//! no timing information and are bit-identical across worker counts for a
//! fixed seed; wall times appear only in the long format.

use crate::sampler::CellResult;

/// Marker for cells whose simulation failed.
pub const FAILED_CELL: &str = "NA";

fn table_csv<F>(eps: &[f64], horizons: &[f64], results: &[CellResult], field: F) -> String
where
    F: Fn(&CellResult) -> Option<f64>,
{
    let mut out = String::from("eps");
    for t in horizons {
        out.push(',');
        out.push_str(&t.to_string());
    }
    out.push('\n');
    for (i, e) in eps.iter().enumerate() {
        out.push_str(&e.to_string());
        for j in 0..horizons.len() {
            out.push(',');
            match results
                .get(i * horizons.len() + j)
                .and_then(|cell| field(cell))
            {
                Some(v) => out.push_str(&v.to_string()),
                None => out.push_str(FAILED_CELL),
            }
        }
        out.push('\n');
    }
    out
}

/// Estimates theta_hat, eps-rows by T-columns.
pub fn estimates_csv(eps: &[f64], horizons: &[f64], results: &[CellResult]) -> String {
    table_csv(eps, horizons, results, |c| {
        c.report.as_ref().ok().map(|r| r.estimate)
    })
}

/// Per-sample relative errors, eps-rows by T-columns.
pub fn rel_errors_csv(eps: &[f64], horizons: &[f64], results: &[CellResult]) -> String {
    table_csv(eps, horizons, results, |c| {
        c.report.as_ref().ok().map(|r| r.rel_error_per_sample)
    })
}

/// Long format: one row per cell with every estimator field.
pub fn cells_csv(results: &[CellResult], scheme: &str) -> String {
    let mut out = String::from(
        "epsilon,T,scheme,N,estimate,second_moment,rel_error,std_error,hits,wall_time_s\n",
    );
    for c in results {
        match &c.report {
            Ok(r) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.eps,
                c.horizon,
                scheme,
                r.n,
                r.estimate,
                r.second_moment,
                r.rel_error_per_sample,
                r.std_error,
                r.hits,
                c.wall_time_s
            )),
            Err(e) => out.push_str(&format!(
                "{},{},{},{FAILED_CELL},{FAILED_CELL},{FAILED_CELL},{FAILED_CELL},{FAILED_CELL},{FAILED_CELL},{} # {e}\n",
                c.eps, c.horizon, scheme, c.wall_time_s
            )),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::sampler::EstimatorReport;

    fn cell(eps: f64, horizon: f64, estimate: f64) -> CellResult {
        CellResult {
            eps,
            horizon,
            cell: 0,
            report: Ok(EstimatorReport {
                n: 10,
                hits: 3,
                estimate,
                second_moment: estimate * estimate * 2.0,
                rel_error_per_sample: 1.0,
                std_error: estimate / 3.0,
            }),
            wall_time_s: 0.5,
        }
    }

    #[test]
    fn round_trip_exact() {
        let eps = [0.2, 0.13];
        let horizons = [1.0, 2.5, 5.0];
        let mut results = Vec::new();
        for (i, &e) in eps.iter().enumerate() {
            for (j, &t) in horizons.iter().enumerate() {
                let v = (0.1 + 0.07 * i as f64) * (1.0 + j as f64) / 3.0;
                let mut c = cell(e, t, v);
                c.cell = (i * horizons.len() + j) as u64;
                results.push(c);
            }
        }
        let csv = estimates_csv(&eps, &horizons, &results);
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        for (j, &t) in horizons.iter().enumerate() {
            assert_eq!(header[j + 1].parse::<f64>().unwrap(), t);
        }
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[0].parse::<f64>().unwrap(), eps[i]);
            for (j, f) in fields[1..].iter().enumerate() {
                let expect = results[i * horizons.len() + j]
                    .report
                    .as_ref()
                    .unwrap()
                    .estimate;
                assert_eq!(f.parse::<f64>().unwrap(), expect);
            }
        }
    }

    #[test]
    fn failed_cells_marked() {
        let results = vec![CellResult {
            eps: 0.1,
            horizon: 1.0,
            cell: 0,
            report: Err(Error::ZeroHits),
            wall_time_s: 0.1,
        }];
        let csv = estimates_csv(&[0.1], &[1.0], &results);
        assert!(csv.contains(FAILED_CELL));
        let long = cells_csv(&results, "mollified-linear");
        assert!(long.contains(FAILED_CELL));
        assert!(long.lines().count() == 2);
    }
}
