use std::io::Write;

use serde::Serialize;

/// Column order of the iteration log.
pub const CSV_HEADER: &str =
    "iter,e_prim,e_dual,energy,flips,phi,max_grad_norm,lambda_ratio,mu_min,mu_max,wall_ms";

/// Per-iteration solver diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub iter: usize,
    pub e_prim: f64,
    pub e_dual: f64,
    pub e_prim_max: f64,
    pub e_dual_max: f64,
    /// Thresholds the errors are compared against.
    pub prim_threshold: f64,
    pub dual_threshold: f64,
    pub energy: f64,
    pub flips: usize,
    pub phi: f64,
    /// `max_i ‖∇f(P_i)‖`
    pub max_grad_norm: f64,
    /// `max_i ‖∇f(P_i)‖ / B_i`; at most 1 while every gradient stays within
    /// the bound the penalties were derived from.
    pub max_grad_ratio: f64,
    /// Largest `γ^{1/2}` implied by the multiplier update, measured on the
    /// unscaled multipliers `μΛ`. Zero when undefined (first iteration).
    pub lambda_ratio: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub wall_ms: f64,
    pub rescaled: bool,
}

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e},{:.3}",
            self.iter,
            self.e_prim,
            self.e_dual,
            self.energy,
            self.flips,
            self.phi,
            self.max_grad_norm,
            self.lambda_ratio,
            self.mu_min,
            self.mu_max,
            self.wall_ms
        )
    }
}

/// Writes the header followed by one row per record.
pub fn write_csv<W: Write>(mut out: W, records: &[DiagnosticsRecord]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_matches_header() {
        let r = DiagnosticsRecord {
            iter: 3,
            e_prim: 0.5,
            e_dual: 0.25,
            e_prim_max: 0.1,
            e_dual_max: 0.1,
            prim_threshold: 1.0,
            dual_threshold: 1.0,
            energy: 2.0,
            flips: 1,
            phi: 2.5,
            max_grad_norm: 3.0,
            max_grad_ratio: 0.5,
            lambda_ratio: 0.0,
            mu_min: 1e-3,
            mu_max: 1.0,
            wall_ms: 12.0,
            rescaled: false,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1].split(',').count(), CSV_HEADER.split(',').count());
        let parsed: Vec<f64> = lines[1].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(parsed[1], 0.5);
        assert_eq!(parsed[4], 1.0);
    }
}
