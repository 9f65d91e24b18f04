//! Parser for a restricted MATPOWER-style case file format.
//!
//! Only the columns needed for the DC model are interpreted: bus id and
//! type from the `bus` matrix, and from/to/x/status from the `branch`
//! matrix. Everything else is parsed positionally and ignored. `%`
//! comments and arbitrary whitespace are permitted; numbers accept
//! scientific notation.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Role of a bus in the case, mapped from the MATPOWER type code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusRole {
    /// Type 3: reference bus, angle fixed to zero.
    Slack,
    /// Type 2: generator bus.
    Pv,
    /// Type 1: load bus.
    Pq,
}

impl BusRole {
    fn from_code(code: i64) -> Option<Self> {
        match code {
            3 => Some(BusRole::Slack),
            2 => Some(BusRole::Pv),
            1 => Some(BusRole::Pq),
            _ => None,
        }
    }

    fn code(self) -> i64 {
        match self {
            BusRole::Slack => 3,
            BusRole::Pv => 2,
            BusRole::Pq => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusRecord {
    pub id: usize,
    pub role: BusRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Per-unit series reactance. Resistance is ignored (DC approximation).
    pub reactance: f64,
    pub in_service: bool,
}

/// A validated grid case: unique bus ids, exactly one slack bus, and
/// every branch endpoint resolving to a defined bus.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseFile {
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
}

impl CaseFile {
    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .find(|b| b.role == BusRole::Slack)
            .map(|b| b.id)
            .expect("validated case has exactly one slack bus")
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = &BranchRecord> {
        self.branches.iter().filter(|b| b.in_service)
    }

    fn validate(self) -> Result<Self> {
        if !(self.base_mva > 0.0) {
            return Err(Error::MalformedCase(format!(
                "baseMVA must be positive, got {}",
                self.base_mva
            )));
        }
        let mut seen = HashSet::new();
        for bus in &self.buses {
            if bus.id < 1 {
                return Err(Error::MalformedCase(format!("bus id {} < 1", bus.id)));
            }
            if !seen.insert(bus.id) {
                return Err(Error::MalformedCase(format!("duplicate bus id {}", bus.id)));
            }
        }
        let slack_count = self
            .buses
            .iter()
            .filter(|b| b.role == BusRole::Slack)
            .count();
        if slack_count != 1 {
            return Err(Error::SlackBusViolation(format!(
                "expected exactly one type-3 bus, found {slack_count}"
            )));
        }
        for br in &self.branches {
            if !seen.contains(&br.from_bus) {
                return Err(Error::UnknownBus(br.from_bus));
            }
            if !seen.contains(&br.to_bus) {
                return Err(Error::UnknownBus(br.to_bus));
            }
            if br.from_bus == br.to_bus {
                return Err(Error::MalformedCase(format!(
                    "self-loop branch at bus {}",
                    br.from_bus
                )));
            }
            if br.in_service && br.reactance == 0.0 {
                return Err(Error::DegenerateBranch {
                    from: br.from_bus,
                    to: br.to_bus,
                });
            }
        }
        Ok(self)
    }
}

/// Parse a MATPOWER-style case text into a validated [`CaseFile`].
pub fn parse_case(text: &str) -> Result<CaseFile> {
    let stripped = strip_comments(text);

    let base_mva = find_scalar(&stripped, "baseMVA")?
        .ok_or_else(|| Error::MalformedCase("missing baseMVA section".into()))?;
    let bus_rows = find_matrix(&stripped, "bus")?
        .ok_or_else(|| Error::MalformedCase("missing bus section".into()))?;
    let branch_rows = find_matrix(&stripped, "branch")?
        .ok_or_else(|| Error::MalformedCase("missing branch section".into()))?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        if row.len() < 2 {
            return Err(Error::MalformedCase(format!(
                "bus row has {} columns, need at least 2",
                row.len()
            )));
        }
        let id = as_index(row[0], "bus id")?;
        let code = row[1] as i64;
        let role = BusRole::from_code(code)
            .ok_or_else(|| Error::MalformedCase(format!("unknown bus type code {code}")))?;
        buses.push(BusRecord { id, role });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for row in &branch_rows {
        if row.len() < 4 {
            return Err(Error::MalformedCase(format!(
                "branch row has {} columns, need at least 4 (from, to, r, x)",
                row.len()
            )));
        }
        let from_bus = as_index(row[0], "branch from-bus")?;
        let to_bus = as_index(row[1], "branch to-bus")?;
        let reactance = row[3];
        // MATPOWER column 11 is the branch status; absent means in service.
        let in_service = row.get(10).map_or(true, |&s| s != 0.0);
        branches.push(BranchRecord {
            from_bus,
            to_bus,
            reactance,
            in_service,
        });
    }

    CaseFile {
        base_mva,
        buses,
        branches,
    }
    .validate()
}

/// Serialize a case back to canonical case text. Ignored MATPOWER columns
/// are written as zeros; re-parsing the output yields an identical case.
pub fn serialize_case(case: &CaseFile) -> String {
    let mut out = String::new();
    out.push_str("function mpc = case\n");
    out.push_str("mpc.version = '2';\n");
    let _ = writeln!(out, "mpc.baseMVA = {};", case.base_mva);
    out.push_str("mpc.bus = [\n");
    for bus in &case.buses {
        let _ = writeln!(
            out,
            "\t{}\t{}\t0\t0\t0\t0\t1\t1\t0\t0\t1\t1.05\t0.95;",
            bus.id,
            bus.role.code()
        );
    }
    out.push_str("];\n");
    out.push_str("mpc.branch = [\n");
    for br in &case.branches {
        let _ = writeln!(
            out,
            "\t{}\t{}\t0\t{}\t0\t0\t0\t0\t0\t0\t{}\t-360\t360;",
            br.from_bus,
            br.to_bus,
            br.reactance,
            if br.in_service { 1 } else { 0 }
        );
    }
    out.push_str("];\n");
    out
}

fn as_index(value: f64, what: &str) -> Result<usize> {
    if value.fract() != 0.0 || value < 1.0 || value > usize::MAX as f64 {
        return Err(Error::MalformedCase(format!(
            "{what} must be a positive integer, got {value}"
        )));
    }
    Ok(value as usize)
}

fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|line| line.split('%').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Find `<key> = <number>;`, where `<key>` may be qualified (`mpc.baseMVA`).
fn find_scalar(text: &str, key: &str) -> Result<Option<f64>> {
    let Some(rest) = find_assignment(text, key) else {
        return Ok(None);
    };
    let value_text: String = rest
        .chars()
        .take_while(|&c| c != ';' && c != '\n')
        .collect();
    let value = value_text.trim().parse::<f64>().map_err(|_| {
        Error::MalformedCase(format!("cannot parse {key} value '{}'", value_text.trim()))
    })?;
    Ok(Some(value))
}

/// Find `<key> = [ rows ];` and split the body into numeric rows. Rows are
/// separated by `;` or newlines; entries by whitespace or commas.
fn find_matrix(text: &str, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
    let Some(rest) = find_assignment(text, key) else {
        return Ok(None);
    };
    let rest = rest.trim_start();
    let Some(body) = rest.strip_prefix('[') else {
        return Err(Error::MalformedCase(format!(
            "expected '[' after '{key} ='"
        )));
    };
    let Some(end) = body.find(']') else {
        return Err(Error::MalformedCase(format!("unterminated {key} matrix")));
    };
    let mut rows = Vec::new();
    for raw_row in body[..end].split(|c| c == ';' || c == '\n') {
        let entries: Vec<f64> = raw_row
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::MalformedCase(format!("cannot parse number '{s}' in {key} matrix"))
                })
            })
            .collect::<Result<_>>()?;
        if !entries.is_empty() {
            rows.push(entries);
        }
    }
    if rows.is_empty() {
        return Err(Error::MalformedCase(format!("{key} matrix is empty")));
    }
    Ok(Some(rows))
}

/// Locate `key` as a whole identifier (optionally preceded by a `mpc.`-style
/// qualifier) followed by `=`, and return the text after the `=`.
fn find_assignment<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(pos) = text[start..].find(key) {
        let at = start + pos;
        let before_ok = at == 0 || {
            let c = bytes[at - 1] as char;
            !c.is_alphanumeric() && c != '_'
        };
        let after = at + key.len();
        let after_ok = after >= bytes.len() || {
            let c = bytes[after] as char;
            !c.is_alphanumeric() && c != '_'
        };
        if before_ok && after_ok {
            let rest = text[after..].trim_start();
            if let Some(stripped) = rest.strip_prefix('=') {
                return Some(stripped);
            }
        }
        start = at + key.len();
    }
    None
}
