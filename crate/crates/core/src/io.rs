//! CSV and flat key=value text for every study artifact. Floats are written
//! with 17 significant digits, so reading a file back reproduces the exact
//! bits that were computed.

use crate::binaryctrl::FeedbackRun;
use crate::error::{Error, Result};
use crate::gamma_limit::GammaRow;
use crate::kinetic::KineticSweepRow;
use crate::meanfield::StudyRow;
use crate::measures::{MeasureKind, WeightedMeasure};
use crate::microdynamics::{ControlSignal, Trajectory};
use std::fmt::Write as _;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(field: &str, line_no: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::input(format!("line {line_no}: `{field}` is not a number")))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// `t, Y_1_1..Y_m_d, X_1_1..X_N_d`, one row per grid node.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let first = &traj.states[0];
    let (m, n, d) = (first.num_leaders(), first.num_followers(), first.dim());
    let mut out = String::from("t");
    for k in 1..=m {
        for c in 1..=d {
            let _ = write!(out, ",Y_{k}_{c}");
        }
    }
    for i in 1..=n {
        for c in 1..=d {
            let _ = write!(out, ",X_{i}_{c}");
        }
    }
    out.push('\n');
    for state in &traj.states {
        out.push_str(&fmt_f64(state.time));
        for y in &state.leaders {
            for v in y {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
        }
        for x in &state.followers {
            for v in x {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// `w, x_1..x_d`, one row per atom.
pub fn measure_csv(mu: &WeightedMeasure) -> String {
    let mut out = String::from("w");
    for c in 1..=mu.dim() {
        let _ = write!(out, ",x_{c}");
    }
    out.push('\n');
    for (w, x) in mu.weights.iter().zip(&mu.atoms) {
        out.push_str(&fmt_f64(*w));
        for v in x {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Inverse of `measure_csv`. Weights that are nonnegative and sum to one
/// load as a probability measure, anything else as a signed one.
pub fn read_measure_csv(text: &str) -> Result<WeightedMeasure> {
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (line_no, line) in data_lines(text) {
        if line.starts_with('w') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::input(format!(
                "line {line_no}: need a weight and at least one coordinate"
            )));
        }
        weights.push(parse_f64(fields[0], line_no)?);
        let point = fields[1..]
            .iter()
            .map(|f| parse_f64(f, line_no))
            .collect::<Result<Vec<f64>>>()?;
        atoms.push(point);
    }
    if atoms.is_empty() {
        return Err(Error::input("measure file holds no atoms"));
    }
    let mass: f64 = weights.iter().sum();
    let kind = if weights.iter().all(|w| *w >= 0.0) && (mass - 1.0).abs() <= 1e-9 {
        MeasureKind::Probability
    } else {
        MeasureKind::Signed
    };
    WeightedMeasure::new(atoms, weights, kind)
}

/// `t_start, t_end, u_1_1..u_m_d`, one row per constant piece.
pub fn control_csv(u: &ControlSignal) -> String {
    let (m, d) = (u.num_leaders(), u.dim());
    let mut out = String::from("t_start,t_end");
    for k in 1..=m {
        for c in 1..=d {
            let _ = write!(out, ",u_{k}_{c}");
        }
    }
    out.push('\n');
    for (piece, window) in u.values.iter().zip(u.breakpoints.windows(2)) {
        let _ = write!(out, "{},{}", fmt_f64(window[0]), fmt_f64(window[1]));
        for leader in piece {
            for v in leader {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// Inverse of `control_csv` for `m` leaders in dimension `d`. Pieces must
/// tile [0, T] in order; `u_max` is not stored in the file and is supplied
/// by the caller.
pub fn read_control_csv(text: &str, m: usize, d: usize, u_max: f64) -> Result<ControlSignal> {
    let mut breakpoints: Vec<f64> = Vec::new();
    let mut values = Vec::new();
    for (line_no, line) in data_lines(text) {
        if line.starts_with("t_start") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + m * d {
            return Err(Error::input(format!(
                "line {line_no}: expected {} fields, found {}",
                2 + m * d,
                fields.len()
            )));
        }
        let start = parse_f64(fields[0], line_no)?;
        let end = parse_f64(fields[1], line_no)?;
        match breakpoints.last() {
            None => {
                breakpoints.push(start);
                breakpoints.push(end);
            }
            Some(last) if *last == start => breakpoints.push(end),
            Some(last) => {
                return Err(Error::input(format!(
                    "line {line_no}: piece starts at {start} but the previous one ended at {last}"
                )))
            }
        }
        let mut piece = Vec::with_capacity(m);
        for k in 0..m {
            let row = fields[2 + k * d..2 + (k + 1) * d]
                .iter()
                .map(|f| parse_f64(f, line_no))
                .collect::<Result<Vec<f64>>>()?;
            piece.push(row);
        }
        values.push(piece);
    }
    if values.is_empty() {
        return Err(Error::input("control file holds no pieces"));
    }
    ControlSignal::new(breakpoints, values, u_max)
}

/// `N, max_W1, max_leader_err, runtime_s`.
pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("N,max_W1,max_leader_err,runtime_s\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.n,
            fmt_f64(row.max_w1),
            fmt_f64(row.max_leader_err),
            fmt_f64(row.runtime_s)
        );
    }
    out
}

/// `N, J_opt, ctrl_gap, J_limit_est, converged`.
pub fn gamma_csv(rows: &[GammaRow]) -> String {
    let mut out = String::from("N,J_opt,ctrl_gap,J_limit_est,converged\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.n,
            fmt_f64(row.optimal_cost),
            fmt_f64(row.control_distance_to_largest),
            fmt_f64(row.limit_cost_estimate),
            row.converged
        );
    }
    out
}

/// `eps, seed, max_W1, runtime_s`.
pub fn kinetic_csv(rows: &[KineticSweepRow]) -> String {
    let mut out = String::from("eps,seed,max_W1,runtime_s\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(row.eps),
            row.seed,
            fmt_f64(row.max_w1),
            fmt_f64(row.runtime_s)
        );
    }
    out
}

/// `t, state_cost, control_cost, cumulative_discounted_cost`.
pub fn feedback_csv(run: &FeedbackRun) -> String {
    let mut out = String::from("t,state_cost,control_cost,cumulative_discounted_cost\n");
    for (((t, s), c), cum) in run
        .times
        .iter()
        .zip(&run.state_costs)
        .zip(&run.control_costs)
        .zip(&run.cumulative_discounted)
    {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(*t),
            fmt_f64(*s),
            fmt_f64(*c),
            fmt_f64(*cum)
        );
    }
    out
}

/// Flat `key=value` lines for run summaries.
pub fn summary_text(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}
