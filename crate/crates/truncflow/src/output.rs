//! CSV tables for trajectories and events.
//!
//! Numbers are written as `{:.16e}`, 17 significant digits, so a value
//! survives a write/read cycle bit for bit.

use truncflow_core::flows::{Direction, Event, Trajectory};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// `s, cost`, then per layer `beta_gap_ℓ, omega_norm_ℓ, n_ℓ_r` for every
/// coordinate `r`.
pub fn trajectory_csv(traj: &Trajectory) -> CsvTable {
    let first = &traj.samples[0];
    let mut header = vec!["s".to_string(), "cost".to_string()];
    for (l, d) in first.per_layer.iter().enumerate() {
        header.push(format!("beta_gap_{l}"));
        header.push(format!("omega_norm_{l}"));
        header.extend((0..d.truncated_counts.len()).map(|r| format!("n_{l}_{r}")));
    }
    let mut table = CsvTable::new(header);
    for s in &traj.samples {
        let mut row = vec![fmt_f64(s.s), fmt_f64(s.cost)];
        for d in &s.per_layer {
            row.push(fmt_f64(d.beta_gap));
            row.push(fmt_f64(d.omega_norm));
            row.extend(d.truncated_counts.iter().map(|n| n.to_string()));
        }
        table.push(row);
    }
    table
}

pub fn events_csv(events: &[Event]) -> CsvTable {
    let header = ["s", "layer", "cluster", "point", "coordinate", "direction"];
    let mut table = CsvTable::new(header.iter().map(|h| h.to_string()).collect());
    for e in events {
        let direction = match e.direction {
            Direction::Entering => "entering",
            Direction::Leaving => "leaving",
        };
        table.push(vec![
            fmt_f64(e.s),
            e.layer.to_string(),
            e.cluster.to_string(),
            e.point.to_string(),
            e.coordinate.to_string(),
            direction.to_string(),
        ]);
    }
    table
}
