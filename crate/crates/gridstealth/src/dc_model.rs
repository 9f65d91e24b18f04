//! DC observation matrix construction.
//!
//! Under the DC approximation (unit voltage magnitudes, lossless branches)
//! the measurements are linear in the bus phase angles. The state vector
//! holds the angles of the non-slack buses; the slack angle is the zero
//! reference and its column is removed. The measurement set is all bus
//! injections plus all in-service branch from-end flows, so
//! M = n_bus + n_branch and N = n_bus - 1.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matpower::CaseFile;

/// What a row of the observation matrix measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementDescriptor {
    /// Net power injection at a bus.
    Injection(usize),
    /// Power flow on a branch, measured at the from end.
    Flow { from_bus: usize, to_bus: usize },
}

/// The linearized measurement matrix together with its row and column
/// bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    pub row_meta: Vec<MeasurementDescriptor>,
    /// Bus ids indexing the state vector, in case order, slack excluded.
    pub state_buses: Vec<usize>,
    pub slack_bus: usize,
}

impl Jacobian {
    pub fn num_measurements(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_states(&self) -> usize {
        self.matrix.ncols()
    }

    /// Debug export: one CSV row per measurement, row descriptor first.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "measurement")?;
        for bus in &self.state_buses {
            write!(w, ",theta_{bus}")?;
        }
        writeln!(w)?;
        for (i, meta) in self.row_meta.iter().enumerate() {
            match meta {
                MeasurementDescriptor::Injection(bus) => write!(w, "injection_{bus}")?,
                MeasurementDescriptor::Flow { from_bus, to_bus } => {
                    write!(w, "flow_{from_bus}_{to_bus}")?
                }
            }
            for j in 0..self.matrix.ncols() {
                write!(w, ",{:e}", self.matrix[(i, j)])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Build the DC observation matrix from a validated case.
pub fn build_jacobian(case: &CaseFile) -> Result<Jacobian> {
    let n_bus = case.buses.len();
    if n_bus < 2 {
        return Err(Error::DegenerateSystem);
    }
    check_connected(case)?;

    let slack_bus = case.slack_bus();
    // Position of each bus id in case order, over all buses.
    let bus_pos: HashMap<usize, usize> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();
    // Column of each non-slack bus in the state vector.
    let state_buses: Vec<usize> = case
        .buses
        .iter()
        .filter(|b| b.id != slack_bus)
        .map(|b| b.id)
        .collect();
    let state_col: HashMap<usize, usize> = state_buses
        .iter()
        .enumerate()
        .map(|(j, &id)| (id, j))
        .collect();

    // Full bus susceptance matrix over all buses.
    let mut b_full = DMatrix::<f64>::zeros(n_bus, n_bus);
    for br in case.in_service_branches() {
        let b = 1.0 / br.reactance;
        let f = bus_pos[&br.from_bus];
        let t = bus_pos[&br.to_bus];
        b_full[(f, f)] += b;
        b_full[(t, t)] += b;
        b_full[(f, t)] -= b;
        b_full[(t, f)] -= b;
    }

    let branches: Vec<_> = case.in_service_branches().collect();
    let m = n_bus + branches.len();
    let n = n_bus - 1;
    let mut h = DMatrix::<f64>::zeros(m, n);
    let mut row_meta = Vec::with_capacity(m);

    // Injection rows: the susceptance matrix with the slack column deleted.
    for (i, bus) in case.buses.iter().enumerate() {
        for (&id, &j) in &state_col {
            h[(i, j)] = b_full[(i, bus_pos[&id])];
        }
        row_meta.push(MeasurementDescriptor::Injection(bus.id));
    }

    // Flow rows: (theta_f - theta_t) / x, slack column deleted.
    for (k, br) in branches.iter().enumerate() {
        let row = n_bus + k;
        let b = 1.0 / br.reactance;
        if let Some(&j) = state_col.get(&br.from_bus) {
            h[(row, j)] = b;
        }
        if let Some(&j) = state_col.get(&br.to_bus) {
            h[(row, j)] = -b;
        }
        row_meta.push(MeasurementDescriptor::Flow {
            from_bus: br.from_bus,
            to_bus: br.to_bus,
        });
    }

    Ok(Jacobian {
        matrix: h,
        row_meta,
        state_buses,
        slack_bus,
    })
}

/// Breadth-first search over in-service branches; every bus must be reachable.
fn check_connected(case: &CaseFile) -> Result<()> {
    let mut adjacency: HashMap<usize, Vec<usize>> = HashMap::new();
    for br in case.in_service_branches() {
        adjacency.entry(br.from_bus).or_default().push(br.to_bus);
        adjacency.entry(br.to_bus).or_default().push(br.from_bus);
    }
    let start = case.buses[0].id;
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(bus) = queue.pop_front() {
        for &next in adjacency.get(&bus).into_iter().flatten() {
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    if seen.len() == case.buses.len() {
        Ok(())
    } else {
        Err(Error::IslandedNetwork)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matpower::parse_case;
    use approx::assert_abs_diff_eq;

    fn two_bus() -> CaseFile {
        parse_case(include_str!("../fixtures/case2.m")).unwrap()
    }

    #[test]
    fn two_bus_matrix_is_hand_computed() {
        // x = 0.5 so 1/x = 2; slack at bus 1 leaves a single state column.
        let jac = build_jacobian(&two_bus()).unwrap();
        assert_eq!(jac.matrix.shape(), (3, 1));
        assert_eq!(jac.state_buses, vec![2]);
        assert_eq!(jac.slack_bus, 1);
        assert_abs_diff_eq!(jac.matrix[(0, 0)], -2.0);
        assert_abs_diff_eq!(jac.matrix[(1, 0)], 2.0);
        assert_abs_diff_eq!(jac.matrix[(2, 0)], -2.0);
        assert_eq!(jac.row_meta[0], MeasurementDescriptor::Injection(1));
        assert_eq!(
            jac.row_meta[2],
            MeasurementDescriptor::Flow {
                from_bus: 1,
                to_bus: 2
            }
        );
    }

    #[test]
    fn case30_shape_and_rank() {
        let case = parse_case(include_str!("../fixtures/case30.m")).unwrap();
        let jac = build_jacobian(&case).unwrap();
        assert_eq!(jac.matrix.shape(), (71, 29));
        assert_eq!(jac.matrix.clone().rank(1e-9), 29);
    }

    #[test]
    fn out_of_service_branch_islands_network() {
        let mut case = two_bus();
        case.branches[0].in_service = false;
        assert!(matches!(build_jacobian(&case), Err(Error::IslandedNetwork)));
    }

    #[test]
    fn single_bus_is_degenerate() {
        let mut case = two_bus();
        case.buses.truncate(1);
        case.branches.clear();
        assert!(matches!(build_jacobian(&case), Err(Error::DegenerateSystem)));
    }

    // Each injection row must equal the signed sum of its incident flow rows,
    // and appending the implicit slack column must restore zero row sums on
    // injection rows.
    #[test]
    fn injection_rows_are_sums_of_incident_flows() {
        for text in [
            include_str!("../fixtures/case3.m"),
            include_str!("../fixtures/case5.m"),
            include_str!("../fixtures/case30.m"),
        ] {
            let case = parse_case(text).unwrap();
            let jac = build_jacobian(&case).unwrap();
            let n_bus = case.buses.len();
            for (i, bus) in case.buses.iter().enumerate() {
                let mut expected = nalgebra::DVector::<f64>::zeros(jac.num_states());
                for (k, meta) in jac.row_meta.iter().enumerate().skip(n_bus) {
                    let MeasurementDescriptor::Flow { from_bus, to_bus } = meta else {
                        continue;
                    };
                    if *from_bus == bus.id {
                        expected += jac.matrix.row(k).transpose();
                    } else if *to_bus == bus.id {
                        expected -= jac.matrix.row(k).transpose();
                    }
                }
                let actual = jac.matrix.row(i).transpose();
                assert_abs_diff_eq!((&actual - &expected).norm(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn slack_column_reconstruction_zeroes_injection_row_sums() {
        let case = parse_case(include_str!("../fixtures/case30.m")).unwrap();
        let jac = build_jacobian(&case).unwrap();
        // The implicit slack entry of an injection row is minus its row sum
        // over the incident susceptances; reconstruct it from the branches.
        for (i, bus) in case.buses.iter().enumerate() {
            let mut slack_entry = 0.0;
            for br in case.in_service_branches() {
                let b = 1.0 / br.reactance;
                if bus.id == jac.slack_bus
                    && (br.from_bus == bus.id || br.to_bus == bus.id)
                {
                    slack_entry += b;
                } else if (br.from_bus == bus.id && br.to_bus == jac.slack_bus)
                    || (br.to_bus == bus.id && br.from_bus == jac.slack_bus)
                {
                    slack_entry -= b;
                }
            }
            let row_sum: f64 = jac.matrix.row(i).iter().sum();
            assert_abs_diff_eq!(row_sum + slack_entry, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn csv_export_has_header_and_all_rows() {
        let jac = build_jacobian(&two_bus()).unwrap();
        let mut buf = Vec::new();
        jac.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "measurement,theta_2");
        assert!(lines[3].starts_with("flow_1_2,"));
    }
}
