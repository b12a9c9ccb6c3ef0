//! CSV writers. Floats use the shortest round-trip representation, so
//! output is byte-stable for identical inputs.

use std::fmt::{Display, Write};

use crate::coupling::CouplingResult;
use crate::harnack::HarnackReport;
use crate::md::MdReport;
use crate::sde::Path;
use crate::tv::TvCurve;

/// `t,x1,...,xd,path_id`, one row per grid node.
pub fn paths_csv(paths: &[Path]) -> String {
    let d = paths.first().map_or(1, |p| p.dim());
    let mut s = String::from("t");
    for i in 1..=d {
        let _ = write!(s, ",x{i}");
    }
    s.push_str(",path_id\n");
    for (id, p) in paths.iter().enumerate() {
        for k in 0..p.len() {
            let _ = write!(s, "{}", p.times()[k]);
            for v in p.state(k) {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{id}");
        }
    }
    s
}

/// `pair_id,x1,x2,coalesced,tau`; `tau` is empty when the pair never met.
pub fn couplings_csv<T: Display>(draws: &[CouplingResult<T>]) -> String {
    let mut s = String::from("pair_id,x1,x2,coalesced,tau\n");
    for (id, d) in draws.iter().enumerate() {
        let tau = d.meeting_time.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{id},{},{},{},{tau}", d.first, d.second, u8::from(d.coalesced));
    }
    s
}

/// Pairwise overlap matrix with a header of start-point indices.
pub fn md_matrix_csv(report: &MdReport) -> String {
    let k = report.matrix.len();
    let mut s = String::from("start");
    for j in 0..k {
        let _ = write!(s, ",{j}");
    }
    s.push('\n');
    for (i, row) in report.matrix.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// `t,tv,stderr`.
pub fn tv_curve_csv(curve: &TvCurve) -> String {
    let mut s = String::from("t,tv,stderr\n");
    for i in 0..curve.len() {
        let _ = writeln!(s, "{},{},{}", curve.times[i], curve.values[i], curve.stderr[i]);
    }
    s
}

/// Two whitespace-separated columns `t tv` for gnuplot.
pub fn tv_curve_columns(curve: &TvCurve) -> String {
    let mut s = String::new();
    for i in 0..curve.len() {
        let _ = writeln!(s, "{} {}", curve.times[i], curve.values[i]);
    }
    s
}

/// `cell,label,ratio,numerator,denominator,i,j`; excluded cells have an
/// empty ratio.
pub fn ratio_table_csv(report: &HarnackReport) -> String {
    let mut s = String::from("cell,label,ratio,numerator,denominator,i,j\n");
    for r in &report.rows {
        let ratio = r.ratio.map(|v| v.to_string()).unwrap_or_default();
        let (i, j) = r.pair.map(|[i, j]| (i.to_string(), j.to_string())).unwrap_or_default();
        let _ = writeln!(s, "{},\"{}\",{ratio},{},{},{i},{j}", r.cell, r.label, r.numerator, r.denominator);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::Provenance;

    #[test]
    fn path_rows() {
        let prov = Provenance { seed: 0, substream: 0, lane: 0, index: 0 };
        let p = Path::from_parts(2, vec![0.0, 0.5], vec![1.0, 2.0, 3.0, 4.0], None, prov).unwrap();
        assert_eq!(paths_csv(&[p]), "t,x1,x2,path_id\n0,1,2,0\n0.5,3,4,0\n");
    }

    #[test]
    fn coupling_rows() {
        let d = vec![
            CouplingResult { first: 0.5, second: 0.5, coalesced: true, meeting_time: Some(0.25) },
            CouplingResult { first: 1.0, second: -1.0, coalesced: false, meeting_time: None },
        ];
        assert_eq!(couplings_csv(&d), "pair_id,x1,x2,coalesced,tau\n0,0.5,0.5,1,0.25\n1,1,-1,0,\n");
    }

    #[test]
    fn tv_rows() {
        let c = TvCurve {
            times: vec![0.0, 1.0],
            values: vec![0.5, 0.2],
            stderr: vec![0.0, 0.01],
            exact: false,
            convention: String::new(),
            resolution: None,
        };
        assert_eq!(tv_curve_csv(&c), "t,tv,stderr\n0,0.5,0\n1,0.2,0.01\n");
        assert_eq!(tv_curve_columns(&c), "0 0.5\n1 0.2\n");
    }
}
