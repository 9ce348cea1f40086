//! Checks applied to reproduced datasets; a failure makes `reproduce` exit with 4.

use std::f64::consts::PI;

use crate::commands::Table;
use crate::config::Figure;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        pass,
        detail,
    }
}

fn table<'a>(tables: &'a [Table], name: &str) -> &'a Table {
    tables.iter().find(|t| t.name == name).unwrap_or_else(|| panic!("no table {name}"))
}

/// Grid indices closest to the decoupling times `ωt = 2πn`, n ≥ 1, that lie
/// within half a grid step of one.
fn decoupling_indices(wt: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, &x) in wt.iter().enumerate() {
        let n = (x / (2.0 * PI)).round();
        let spacing = if i + 1 < wt.len() { wt[i + 1] - x } else { x - wt[i.saturating_sub(1)] };
        if n >= 1.0 && (x - 2.0 * PI * n).abs() < 0.5 * spacing.abs() {
            out.push(i);
        }
    }
    out
}

pub fn run(figure: Figure, tables: &[Table]) -> Vec<Check> {
    match figure {
        Figure::Fig1b => fig1b(tables),
        Figure::Fig2 => fig2(tables),
        Figure::Fig3 => fig3(tables),
        Figure::Fig4 => fig4(tables),
        Figure::Fig5 => fig5(tables),
    }
}

fn fig1b(tables: &[Table]) -> Vec<Check> {
    let t = table(tables, "trap");
    let d = t.values("d");
    let f = t.values("f");
    let k = (0..d.len()).min_by(|&a, &b| (d[a] - 2.5e-4).abs().total_cmp(&(d[b] - 2.5e-4).abs())).unwrap();
    vec![check(
        "trap frequency at d = 0.25 mm within a factor 2 of 117 Hz",
        (117.0 / 2.0..=234.0).contains(&f[k]) && (d[k] - 2.5e-4).abs() < 1e-9,
        format!("f({:.3e} m) = {:.2} Hz", d[k], f[k]),
    )]
}

fn fig2(tables: &[Table]) -> Vec<Check> {
    let fits = table(tables, "scaling_fits");
    let mut out = Vec::new();
    for row in &fits.rows {
        let (lo, hi, e) = (row[0], row[1], row[2]);
        let expected = if hi <= 1e5 {
            Some(1.0)
        } else if lo >= 1e9 {
            Some(3.0)
        } else {
            None
        };
        if let Some(x) = expected {
            out.push(check(
                &format!("exponent {x} on [{lo:e}, {hi:e}]"),
                (e - x).abs() <= 0.05,
                format!("fitted {e:.4}"),
            ));
        }
    }
    let c = table(tables, "scaling_crossovers");
    let n = c.values("sql_linear_slope")[0];
    out.push(check(
        "SQL-to-linear crossover within a factor 3 of 1e7",
        (1e7 / 3.0..=3e7).contains(&n),
        format!("slope-1.5 point N = {n:.3e}, term balance N = {:.3e}", c.values("sql_linear_balance")[0]),
    ));
    out
}

fn fig3(tables: &[Table]) -> Vec<Check> {
    let t = table(tables, "evolve");
    let wt = t.values("omega_t");
    let phase = t.values("phase_qfi");
    let inf = t.values("infidelity");
    let idx = decoupling_indices(&wt);
    let local_max = |v: &[f64], i: usize, greater: bool| {
        let neighbours = [i.checked_sub(1), (i + 1 < v.len()).then_some(i + 1)];
        neighbours.into_iter().flatten().all(|j| if greater { v[i] > v[j] } else { v[i] <= v[j] })
    };
    let worst = inf.iter().cloned().fold(0.0, f64::max);
    vec![
        check(
            "phase QFI peaks at decoupling times",
            !idx.is_empty() && idx.iter().all(|&i| local_max(&phase, i, true)),
            format!("{} decoupling points on the grid", idx.len()),
        ),
        check("closed-form infidelity <= 1e-5", worst <= 1e-5, format!("max {worst:.2e}")),
        check(
            "infidelity minimal at decoupling times",
            idx.iter().all(|&i| local_max(&inf, i, false)),
            idx.iter().map(|&i| format!("{:.1e}", inf[i])).collect::<Vec<_>>().join(", "),
        ),
    ]
}

fn fig4(tables: &[Table]) -> Vec<Check> {
    let peaks = table(tables, "decohere_peaks");
    let mut out = Vec::new();
    let ns: Vec<f64> = {
        let mut v = peaks.values("n");
        v.dedup();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    for &n in &ns {
        let mut rows: Vec<&Vec<f64>> = peaks.rows.iter().filter(|r| r[0] == n).collect();
        rows.sort_by(|a, b| a[1].total_cmp(&b[1]));
        let decreasing = rows.windows(2).all(|w| w[1][3] < w[0][3]);
        out.push(check(
            &format!("QFI strictly decreasing in gamma at t_{n}"),
            decreasing,
            rows.iter().map(|r| format!("{:.3e}", r[3])).collect::<Vec<_>>().join(" > "),
        ));
    }
    let at = |g: f64| peaks.rows.iter().find(|r| r[0] == 2.0 && (r[1] - g).abs() < 1e-12).map(|r| r[3]);
    if let (Some(f0), Some(f1)) = (at(0.0), at(0.01)) {
        let ratio = f0 / f1;
        out.push(check("second-peak ratio F(0)/F(0.01) = 1.2 +- 0.15", (ratio - 1.2).abs() <= 0.15, format!("{ratio:.4}")));
    }
    out
}

fn fig5(tables: &[Table]) -> Vec<Check> {
    let t = table(tables, "cfi");
    let (wt, th, hom, sld, qfi) = (t.values("omega_t"), t.values("theta"), t.values("homodyne_cfi"), t.values("sld_cfi"), t.values("qfi"));
    let bounded = (0..t.rows.len()).all(|i| hom[i] <= qfi[i] * (1.0 + 1e-9) + 1e-15);
    let worst_sld = (0..t.rows.len())
        .filter(|&i| qfi[i] > 0.0)
        .map(|i| (sld[i] / qfi[i] - 1.0).abs())
        .fold(0.0, f64::max);
    let mut out = vec![
        check("homodyne CFI <= QFI on every row", bounded, String::new()),
        check("SLD-basis CFI = QFI within 1e-4", worst_sld <= 1e-4, format!("max relative deviation {worst_sld:.1e}")),
    ];
    let rows: Vec<usize> = (0..t.rows.len()).filter(|&i| (wt[i] - 2.0 * PI).abs() < 1e-9).collect();
    if let Some(&best) = rows.iter().max_by(|&&a, &&b| hom[a].total_cmp(&hom[b])) {
        let half = rows.iter().find(|&&i| (th[i] - PI / 2.0).abs() < 1e-12);
        let ratio = half.map(|&i| hom[i] / qfi[i]).unwrap_or(f64::NAN);
        out.push(check(
            "theta = pi/2 maximal at t = 2pi/omega with F/QFI >= 0.9",
            half == Some(&best) && ratio >= 0.9,
            format!("best theta {:.4}, F/QFI at pi/2 = {ratio:.4}", th[best]),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoupling_points_on_coarse_and_fine_grids() {
        let grid: Vec<f64> = (0..=12).map(|k| k as f64 * PI / 2.0).collect();
        assert_eq!(decoupling_indices(&grid), vec![4, 8, 12]);
        assert!(decoupling_indices(&[0.0, 1.0, 2.0]).is_empty());
    }

    #[test]
    fn fig4_detects_misordering() {
        let mut peaks = Table::new("decohere_peaks", &["n [1]", "gamma [omega]", "omega_t [rad]", "qfi [1/omega^2]"]);
        peaks.rows = vec![vec![2.0, 0.0, 4.0 * PI, 1.2], vec![2.0, 0.01, 4.0 * PI, 1.0], vec![2.0, 0.03, 4.0 * PI, 1.1]];
        let checks = fig4(&[peaks]);
        assert!(!checks[0].pass);
        assert!(checks[1].pass, "{checks:?}");
    }

    #[test]
    fn fig5_requires_half_pi_maximum() {
        let mut t = Table::new("cfi", &["omega_t [rad]", "theta [rad]", "homodyne_cfi [1]", "sld_cfi [1]", "qfi [1]"]);
        t.rows = vec![vec![2.0 * PI, 0.0, 0.95, 1.0, 1.0], vec![2.0 * PI, PI / 2.0, 0.92, 1.0, 1.0]];
        let checks = fig5(&[t.clone()]);
        assert!(checks[0].pass && checks[1].pass && !checks[2].pass);
        t.rows[0][2] = 0.1;
        assert!(fig5(&[t]).iter().all(|c| c.pass));
    }
}
