//! CSV grids, policy and trajectory tables, and PGM heatmaps.
//!
//! Grid CSV: header `grid_i,grid_j,x_center,y_center,value`, one row per
//! ordinary cell in row-major grid order, then the sink row (when the vector
//! covers it) and the attractor row, both with grid indices `-1`. The sink
//! row has empty centers; the attractor row carries the attractor center.
//! Values use the shortest representation that parses back exactly.

use std::fmt::Write;

use pfstab_core::models::ControlGrid;
use pfstab_core::partition::Partition;
use pfstab_core::policy::Policy;
use pfstab_core::verify::Trajectory;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExportError {
    #[error(
        "vector has length {got}, expected {ordinary} (ordinary cells) or {restricted} (with sink)"
    )]
    Length {
        got: usize,
        ordinary: usize,
        restricted: usize,
    },
    #[error("grid exports need a one- or two-dimensional partition, got {0} dimensions")]
    Dimension(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub const GRID_HEADER: &str = "grid_i,grid_j,x_center,y_center,value";

fn plane(partition: &Partition) -> Result<(), ExportError> {
    match partition.dim() {
        1 | 2 => Ok(()),
        d => Err(ExportError::Dimension(d)),
    }
}

/// `(grid_i, grid_j, x, y)` of an ordinary cell.
fn cell_position(partition: &Partition, index: usize) -> (usize, usize, f64, f64) {
    let flat = partition.grid_of_index(index).expect("ordinary index");
    let c = partition.grid_coords(flat);
    let x = partition.grid_cell_center(flat);
    match c.len() {
        1 => (c[0], 0, x[0], 0.0),
        _ => (c[0], c[1], x[0], x[1]),
    }
}

pub fn grid_csv(
    partition: &Partition,
    values: &[f64],
    attractor_value: f64,
) -> Result<String, ExportError> {
    plane(partition)?;
    let n = partition.n_ordinary();
    if values.len() != n && values.len() != partition.restricted_len() {
        return Err(ExportError::Length {
            got: values.len(),
            ordinary: n,
            restricted: partition.restricted_len(),
        });
    }
    let mut out = String::with_capacity(48 * (n + 3));
    writeln!(out, "{GRID_HEADER}").unwrap();
    for (j, v) in values.iter().enumerate().take(n) {
        let (gi, gj, x, y) = cell_position(partition, j);
        writeln!(out, "{gi},{gj},{x},{y},{v}").unwrap();
    }
    if values.len() > n {
        writeln!(out, "-1,-1,,,{}", values[n]).unwrap();
    }
    let c = &partition.attractor_region().center;
    let cy = c.get(1).copied().unwrap_or(0.0);
    writeln!(out, "-1,-1,{},{cy},{attractor_value}", c[0]).unwrap();
    Ok(out)
}

/// One parsed grid row; sentinel rows have `None` grid indices.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub grid: Option<(usize, usize)>,
    pub center: Option<(f64, f64)>,
    pub value: f64,
}

pub fn parse_grid_csv(text: &str) -> Result<Vec<GridRow>, ExportError> {
    let mut lines = text.lines();
    if lines.next() != Some(GRID_HEADER) {
        return Err(ExportError::Parse {
            line: 1,
            message: format!("expected header `{GRID_HEADER}`"),
        });
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let err = |message: &str| ExportError::Parse {
                line: k + 2,
                message: message.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err("expected 5 fields"));
            }
            let gi: i64 = f[0].parse().map_err(|_| err("bad grid_i"))?;
            let gj: i64 = f[1].parse().map_err(|_| err("bad grid_j"))?;
            let grid = (gi >= 0 && gj >= 0).then_some((gi as usize, gj as usize));
            let center = if f[2].is_empty() {
                None
            } else {
                let x: f64 = f[2].parse().map_err(|_| err("bad x_center"))?;
                let y: f64 = f[3].parse().map_err(|_| err("bad y_center"))?;
                Some((x, y))
            };
            let value: f64 = f[4].parse().map_err(|_| err("bad value"))?;
            Ok(GridRow {
                grid,
                center,
                value,
            })
        })
        .collect()
}

/// Values of the ordinary rows followed by the sink row, if present.
pub fn values_from_grid_csv(text: &str) -> Result<Vec<f64>, ExportError> {
    let rows = parse_grid_csv(text)?;
    let mut out: Vec<f64> = rows
        .iter()
        .filter(|r| r.grid.is_some())
        .map(|r| r.value)
        .collect();
    out.extend(
        rows.iter()
            .filter(|r| r.grid.is_none() && r.center.is_none())
            .map(|r| r.value),
    );
    Ok(out)
}

/// `cell_index,grid_i,grid_j,action_index,control_value` for every ordinary
/// cell; action indices are 0-based. Vector controls are `;`-separated.
pub fn policy_csv(
    partition: &Partition,
    policy: &Policy,
    controls: &ControlGrid,
) -> Result<String, ExportError> {
    plane(partition)?;
    let mut out = String::from("cell_index,grid_i,grid_j,action_index,control_value\n");
    for j in 0..partition.n_ordinary() {
        let (gi, gj, _, _) = cell_position(partition, j);
        match policy.action(j) {
            Some(a) => {
                let u: Vec<String> = controls.get(a).iter().map(|v| v.to_string()).collect();
                writeln!(out, "{j},{gi},{gj},{a},{}", u.join(";")).unwrap();
            }
            None => writeln!(out, "{j},{gi},{gj},,").unwrap(),
        }
    }
    Ok(out)
}

/// `trajectory,step,x,xdot,u,xi`; the last state of each run has empty
/// control and noise fields.
pub fn trajectories_csv(trajectories: &[Trajectory]) -> String {
    let mut out = String::from("trajectory,step,x,xdot,u,xi\n");
    for (t, traj) in trajectories.iter().enumerate() {
        for (k, s) in traj.states.iter().enumerate() {
            let xdot = s.get(1).copied().unwrap_or(0.0);
            match (traj.controls.get(k), traj.noise.get(k)) {
                (Some(u), Some(xi)) => writeln!(
                    out,
                    "{t},{k},{},{xdot},{},{}",
                    s[0],
                    u.first().copied().unwrap_or(0.0),
                    xi.first().copied().unwrap_or(0.0)
                )
                .unwrap(),
                _ => writeln!(out, "{t},{k},{},{xdot},,", s[0]).unwrap(),
            }
        }
    }
    out
}

/// Binary greyscale PGM of a 2-D grid vector: first dimension left to right,
/// second dimension bottom to top, linear scale from the smallest (black) to
/// the largest (white) finite ordinary value. Attractor cells are black.
pub fn grid_pgm(partition: &Partition, values: &[f64]) -> Result<Vec<u8>, ExportError> {
    if partition.dim() != 2 {
        return Err(ExportError::Dimension(partition.dim()));
    }
    let n = partition.n_ordinary();
    if values.len() < n {
        return Err(ExportError::Length {
            got: values.len(),
            ordinary: n,
            restricted: partition.restricted_len(),
        });
    }
    let (w, h) = (partition.counts()[0], partition.counts()[1]);
    let finite = values[..n].iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut pixels = vec![0u8; w * h];
    for (j, &v) in values.iter().enumerate().take(n) {
        let c = partition.grid_coords(partition.grid_of_index(j).expect("ordinary index"));
        let level = if v.is_finite() {
            (255.0 * (v - lo) / span).round() as u8
        } else {
            0
        };
        pixels[(h - 1 - c[1]) * w + c[0]] = level;
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}
