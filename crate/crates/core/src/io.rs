//! CSV import and export.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::curve::BoundaryState;
use crate::error::{Error, Result};
use crate::expansion::{SegmentOutcome, TraceRow, VerificationReport};
use crate::feasibility::SegmentCertificate;
use crate::geom::Vec2;
use crate::kernel::KernelGrid;
use crate::safety_filter::TrajectoryRow;
use crate::scalar::Real;

fn num<T: Real>(field: &str, line: usize) -> Result<T> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Format(format!("row {line}: `{field}` is not a number")))?;
    T::from_f64(v).ok_or_else(|| Error::Format(format!("row {line}: `{field}` out of range")))
}

fn expect_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Format(format!("expected header `{}`, found `{}`", expected.join(","), got.join(","))));
    }
    Ok(())
}

/// Reads `index,x1,x2` rows; rows are ordered by index.
pub fn read_boundary<T: Real, R: Read>(reader: R, beta: T) -> Result<BoundaryState<T>> {
    let mut rdr = csv::Reader::from_reader(reader);
    expect_header(rdr.headers()?, &["index", "x1", "x2"])?;
    let mut rows: Vec<(usize, Vec2<T>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Format(format!("row {}: expected 3 fields, found {}", line + 1, rec.len())));
        }
        let index: usize = rec[0].trim().parse().map_err(|_| Error::Format(format!("row {}: bad index `{}`", line + 1, &rec[0])))?;
        rows.push((index, Vec2::new(num(&rec[1], line + 1)?, num(&rec[2], line + 1)?)));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(k, r)| r.0 != k) {
        return Err(Error::Format("indices must be 0..N without gaps or repeats".into()));
    }
    BoundaryState::new(rows.into_iter().map(|r| r.1).collect(), beta)
}

pub fn read_boundary_file<T: Real>(path: &Path, beta: T) -> Result<BoundaryState<T>> {
    read_boundary(File::open(path)?, beta)
}

pub fn write_boundary<T: Real, W: Write>(writer: W, boundary: &BoundaryState<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "x1", "x2"])?;
    for (i, p) in boundary.points().iter().enumerate() {
        w.write_record([i.to_string(), p.x.to_string(), p.y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_boundary_file<T: Real>(path: &Path, boundary: &BoundaryState<T>) -> Result<()> {
    write_boundary(File::create(path)?, boundary)
}

fn certificate_header(inputs: usize) -> Vec<String> {
    let mut h: Vec<String> = ["segment", "b_star", "L_b", "half_width", "margin"].iter().map(|s| s.to_string()).collect();
    h.extend((0..inputs).map(|k| format!("u_star_{k}")));
    h
}

fn certificate_row<T: Real>(c: &SegmentCertificate<T>) -> Vec<String> {
    let mut r = vec![c.index.to_string(), c.b_star.to_string(), c.l_b_tau.to_string(), c.half_width.to_string(), c.margin.to_string()];
    r.extend(c.u_star.iter().map(|u| u.to_string()));
    r
}

/// `segment,b_star,L_b,half_width,margin,u_star_0..`
pub fn write_certificates<T: Real, W: Write>(writer: W, certificates: &[SegmentCertificate<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(certificate_header(certificates.first().map_or(0, |c| c.u_star.len())))?;
    for c in certificates {
        w.write_record(certificate_row(c))?;
    }
    w.flush()?;
    Ok(())
}

/// Certificate columns plus a `status` column; degenerate segments leave numbers empty.
pub fn write_report<T: Real, W: Write>(writer: W, report: &VerificationReport<T>, inputs: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = certificate_header(inputs);
    header.push("status".into());
    w.write_record(&header)?;
    for s in &report.segments {
        let row = match s {
            SegmentOutcome::Certified(c) => {
                let mut r = certificate_row(c);
                r.push(if c.certified() { "pass" } else { "fail" }.into());
                r
            }
            SegmentOutcome::Degenerate { index, .. } => {
                let mut r = vec![index.to_string()];
                r.extend(std::iter::repeat(String::new()).take(header.len() - 2));
                r.push("degenerate".into());
                r
            }
        };
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `step,area,min_margin,dt`
pub fn write_trace<T: Real, W: Write>(writer: W, trace: &[TraceRow<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "area", "min_margin", "dt"])?;
    for r in trace {
        w.write_record([r.step.to_string(), r.area.to_string(), r.min_margin.to_string(), r.dt.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,x1,x2,u_0..,delta,h`
pub fn write_trajectory<T: Real, W: Write>(writer: W, rows: &[TrajectoryRow<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let inputs = rows.first().map_or(0, |r| r.u.len());
    let mut header: Vec<String> = vec!["t".into(), "x1".into(), "x2".into()];
    header.extend((0..inputs).map(|k| format!("u_{k}")));
    header.extend(["delta".into(), "h".into()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.t.to_string(), r.x.x.to_string(), r.x.y.to_string()];
        rec.extend(r.u.iter().map(|u| u.to_string()));
        rec.extend([r.delta.to_string(), r.h.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `x1,x2,h`
pub fn write_sdf_grid<T: Real, W: Write>(writer: W, samples: &[(Vec2<T>, T)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x1", "x2", "h"])?;
    for (x, h) in samples {
        w.write_record([x.x.to_string(), x.y.to_string(), h.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `i,j,x1,x2,member`
pub fn write_kernel<T: Real, W: Write>(writer: W, grid: &KernelGrid<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["i", "j", "x1", "x2", "member"])?;
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let c = grid.cell_center(i, j);
            w.write_record([i.to_string(), j.to_string(), c.x.to_string(), c.y.to_string(), u8::from(grid.member(i, j)).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
