//! Coefficient/rate tables in the row order
//! α_F, α_T, α_{1/τ}, I_s, σ, k_tot, k_rad, k_nrad, k_isc, k_ph, φ.

use std::fmt::Write as _;

use serde::Serialize;

use crate::model::IntensityUnit;
use crate::solver::{EnhancementReport, Measured, SolvedColumn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Row {
    AlphaF,
    AlphaT,
    AlphaInvTau,
    SaturationIntensity,
    Sigma,
    KTot,
    KRad,
    KNrad,
    KIsc,
    KPh,
    Phi,
}

impl Row {
    pub const ALL: [Row; 11] = [
        Row::AlphaF,
        Row::AlphaT,
        Row::AlphaInvTau,
        Row::SaturationIntensity,
        Row::Sigma,
        Row::KTot,
        Row::KRad,
        Row::KNrad,
        Row::KIsc,
        Row::KPh,
        Row::Phi,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Row::AlphaF => "alpha_F (1e3 s^-1 uW^-1)",
            Row::AlphaT => "alpha_T (1e-3 uW^-1)",
            Row::AlphaInvTau => "alpha_1/tau (1e-3 us^-1 uW^-1)",
            Row::SaturationIntensity => "I_s (1e24 ph s^-1 cm^-2)",
            Row::Sigma => "sigma (1e-16 cm^2)",
            Row::KTot => "k_tot (1e8 s^-1)",
            Row::KRad => "k_rad (1e8 s^-1)",
            Row::KNrad => "k_nrad (1e8 s^-1)",
            Row::KIsc => "k_isc (1e6 s^-1)",
            Row::KPh => "k_ph (1e6 s^-1)",
            Row::Phi => "phi",
        }
    }

    /// Multiplier from canonical units to the displayed unit.
    fn display_scale(self) -> f64 {
        match self {
            Row::AlphaF => 1e-3,
            Row::AlphaT => 1e3,
            // 1e-3 µs⁻¹ µW⁻¹ = 1e3 s⁻¹ µW⁻¹
            Row::AlphaInvTau => 1e-3,
            Row::SaturationIntensity => 1e-24,
            Row::Sigma => 1e16,
            Row::KTot | Row::KRad | Row::KNrad => 1e-8,
            Row::KIsc | Row::KPh => 1e-6,
            Row::Phi => 1.0,
        }
    }
}

/// Value of `row` for a column in canonical units (α's per µW, I_s in photon flux).
pub fn column_value(col: &SolvedColumn, row: Row) -> Measured {
    let ctx = &col.inputs.context;
    let uw = col.inputs.coeffs.to_unit(IntensityUnit::Microwatt, ctx);
    let flux = col.inputs.coeffs.to_unit(IntensityUnit::PhotonFlux, ctx);
    let (c, u) = (&col.solved.central, &col.solved.uncertainty);
    match row {
        Row::AlphaF => uw.alpha_f,
        Row::AlphaT => uw.alpha_t,
        Row::AlphaInvTau => uw.alpha_invtau,
        Row::SaturationIntensity => flux.i_s,
        Row::Sigma => Measured::new(c.sigma, u.sigma),
        Row::KTot => Measured::new(c.k_tot, u.k_tot),
        Row::KRad => Measured::new(c.k_rad, u.k_rad),
        Row::KNrad => Measured::new(c.k_nrad, u.k_nrad),
        Row::KIsc => Measured::new(c.k_isc, u.k_isc),
        Row::KPh => Measured::new(c.k_ph, u.k_ph),
        Row::Phi => Measured::new(c.phi, u.phi),
    }
}

pub fn enhancement_value(e: &EnhancementReport, row: Row) -> Measured {
    match row {
        Row::AlphaF => e.eta_f,
        Row::AlphaT => e.alpha_t,
        Row::AlphaInvTau => e.alpha_invtau,
        Row::SaturationIntensity => e.i_s,
        Row::Sigma => e.eta_sigma_ie,
        Row::KTot => e.k_tot,
        Row::KRad => e.k_rad,
        Row::KNrad => e.k_nrad,
        Row::KIsc => e.k_isc,
        Row::KPh => e.k_ph,
        Row::Phi => e.eta_phi,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub row: Row,
    pub solution: Measured,
    pub aperture: Option<Measured>,
    pub enhancement: Option<Measured>,
}

/// Table with a solution column and optional aperture/enhancement columns.
#[derive(Debug, Clone, Serialize)]
pub struct RateTable {
    pub rows: Vec<ReportRow>,
}

impl RateTable {
    pub fn new(
        solution: &SolvedColumn,
        aperture: Option<&SolvedColumn>,
        enhancement: Option<&EnhancementReport>,
    ) -> Self {
        let rows = Row::ALL
            .iter()
            .map(|&row| ReportRow {
                row,
                solution: column_value(solution, row),
                aperture: aperture.map(|a| column_value(a, row)),
                enhancement: enhancement.map(|e| enhancement_value(e, row)),
            })
            .collect();
        RateTable { rows }
    }

    fn cells(&self, r: &ReportRow) -> [String; 3] {
        let s = r.row.display_scale();
        let fmt = |m: Option<Measured>, scale: f64| match m {
            Some(m) => format!("{:.3} ± {:.3}", m.value * scale, m.sigma * scale),
            None => String::new(),
        };
        [
            fmt(Some(r.solution), s),
            fmt(r.aperture, s),
            fmt(r.enhancement, 1.0),
        ]
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| quantity | solution | nanoaperture | enhancement |\n");
        out.push_str("|---|---|---|---|\n");
        for r in &self.rows {
            let [a, b, c] = self.cells(r);
            let _ = writeln!(out, "| {} | {} | {} | {} |", r.row.label(), a, b, c);
        }
        out
    }

    /// CSV twin of the Markdown table; values and uncertainties in separate columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "quantity,solution,solution_err,nanoaperture,nanoaperture_err,enhancement,enhancement_err\n",
        );
        for r in &self.rows {
            let s = r.row.display_scale();
            let pair = |m: Option<Measured>, scale: f64| match m {
                Some(m) => format!("{:.6e},{:.6e}", m.value * scale, m.sigma * scale),
                None => ",".to_string(),
            };
            let _ = writeln!(
                out,
                "\"{}\",{},{},{}",
                r.row.label(),
                pair(Some(r.solution), s),
                pair(r.aperture, s),
                pair(r.enhancement, 1.0)
            );
        }
        out
    }
}
