//! Curve, trajectory and heatmap files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use kmyriad::envs::{OccupancyGrid, ParallelTrajectory};
use kmyriad::{Error, Result};

pub const ENTROPY_HEADER: [&str; 4] = ["epoch", "entropy_nats", "lr", "seed"];
pub const JUMPSTART_HEADER: [&str; 4] = ["update", "success_rate", "seed", "init"];
pub const DIVERSITY_HEADER: [&str; 4] = ["head", "kl_nats", "k", "n"];
pub const TRAJECTORY_HEADER: [&str; 7] = ["replica", "head", "t", "x", "y", "vx", "vy"];

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{other:?}"))),
    }
}

fn bad_data(msg: impl Into<String>) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into()))
}

/// CSV file opened fresh with a header; every row is flushed as written.
pub struct CurveWriter {
    inner: csv::Writer<File>,
}

impl CurveWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(File::create(path)?);
        inner.write_record(header).map_err(csv_err)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.inner.write_record(fields).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Header and rows of a curve file.
pub fn read_curve(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(csv_err)).collect::<Result<_>>()?;
    Ok((header, rows))
}

pub fn write_trajectory(path: &Path, trajectory: &ParallelTrajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for i in 0..trajectory.replicas() {
        for t in 0..=trajectory.horizon() {
            let s = trajectory.state(i, t);
            let mut rec = vec![i.to_string(), trajectory.heads()[i].to_string(), t.to_string()];
            rec.extend(s.iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One visited state read back from a trajectory file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub replica: usize,
    pub head: usize,
    pub t: usize,
    pub state: [f64; 4],
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let (header, rows) = read_curve(path)?;
    if header != TRAJECTORY_HEADER {
        return Err(bad_data(format!("{} is not a trajectory file", path.display())));
    }
    rows.iter()
        .enumerate()
        .map(|(n, r)| {
            let bad = || bad_data(format!("{}: malformed row {}", path.display(), n + 2));
            let int = |s: &String| s.parse::<usize>().map_err(|_| bad());
            let real = |s: &String| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
            Ok(TrajectoryRow {
                replica: int(&r[0])?,
                head: int(&r[1])?,
                t: int(&r[2])?,
                state: [real(&r[3])?, real(&r[4])?, real(&r[5])?, real(&r[6])?],
            })
        })
        .collect()
}

pub fn write_heatmap(path: &Path, grid: &OccupancyGrid, half_width: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# bins={} arena={}", grid.bins, half_width)?;
    for row in grid.counts.chunks(grid.bins) {
        let line: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_heatmap(path: &Path) -> Result<(OccupancyGrid, f64)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let parse_header = || -> Option<(usize, f64)> {
        let rest = header.strip_prefix("# bins=")?;
        let (bins, arena) = rest.split_once(" arena=")?;
        Some((bins.parse().ok()?, arena.parse().ok()?))
    };
    let (bins, arena) = parse_header().ok_or_else(|| bad_data("bad heatmap header"))?;
    let mut grid = OccupancyGrid::new(bins)?;
    let mut counts = Vec::with_capacity(bins * bins);
    for line in lines {
        for v in line?.split(',') {
            counts.push(v.trim().parse::<u64>().map_err(|_| bad_data("bad heatmap cell"))?);
        }
    }
    if counts.len() != bins * bins {
        return Err(bad_data("heatmap cell count does not match bins"));
    }
    grid.counts = counts;
    Ok((grid, arena))
}
