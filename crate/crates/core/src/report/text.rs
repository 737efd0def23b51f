//! Aligned plain-text rendering of a report bundle.

use std::fmt::Write;

use super::ReportBundle;

/// Two significant digits, trailing zeros dropped.
fn short(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = (1 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `p < 1/N` when no null value reached the observed one, else `p = …`.
pub fn format_p(p: f64, n_ok: usize, exceedances: usize) -> String {
    if exceedances == 0 && n_ok > 0 {
        format!("p < {}", short(1.0 / n_ok as f64))
    } else {
        format!("p = {}", short(p))
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn opt(x: Option<f64>, f: impl Fn(f64) -> String) -> String {
    x.map(f).unwrap_or_else(|| "-".into())
}

/// First column left-aligned, the rest right-aligned.
fn table(out: &mut String, title: &str, header: &[&str], rows: &[Vec<String>]) {
    let width = |s: &str| s.chars().count();
    let mut w: Vec<usize> = header.iter().map(|h| width(h)).collect();
    for r in rows {
        for (k, cell) in r.iter().enumerate() {
            w[k] = w[k].max(width(cell));
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (k, c) in cells.iter().enumerate() {
            let pad = " ".repeat(w[k] - width(c));
            if k == 0 {
                s.push_str(c);
                s.push_str(&pad);
            } else {
                s.push_str("  ");
                s.push_str(&pad);
                s.push_str(c);
            }
        }
        s.trim_end().to_string()
    };
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{}", line(header.to_vec()));
    let _ = writeln!(out, "{}", "-".repeat(w.iter().sum::<usize>() + 2 * (w.len() - 1)));
    for r in rows {
        let _ = writeln!(out, "{}", line(r.iter().map(|s| s.as_str()).collect()));
    }
    out.push('\n');
}

pub fn render_text(b: &ReportBundle) -> String {
    let mut out = String::new();
    if !b.fits.is_empty() {
        let rows: Vec<Vec<String>> = b
            .fits
            .iter()
            .map(|f| {
                let p = f.proportions;
                vec![
                    f.norm.clone(),
                    opt(p.map(|p| p.tau), pct),
                    opt(p.map(|p| p.beta), pct),
                    opt(p.map(|p| p.iota), pct),
                    opt(p.map(|p| p.residual), pct),
                    f.n_obs.to_string(),
                    if f.converged { "yes" } else { "no" }.into(),
                ]
            })
            .collect();
        table(
            &mut out,
            "Variance decomposition",
            &["norm", "trait", "bias", "idiosyncrasy", "residual", "n_obs", "converged"],
            &rows,
        );
    }
    if !b.dimensions.is_empty() {
        let rows: Vec<Vec<String>> = b
            .dimensions
            .iter()
            .map(|g| {
                let p = g.proportions;
                vec![
                    g.group.clone(),
                    pct(p.tau),
                    pct(p.beta),
                    pct(p.iota),
                    pct(p.residual),
                    g.members.len().to_string(),
                ]
            })
            .collect();
        table(&mut out, "Dimensions", &["group", "trait", "bias", "idiosyncrasy", "residual", "norms"], &rows);
    }
    if !b.null_tests.is_empty() {
        let rows: Vec<Vec<String>> = b
            .null_tests
            .iter()
            .map(|n| {
                vec![
                    n.norm.clone(),
                    format!("{:.4}", n.observed),
                    format!("{}/{}", n.n_ok, n.n_iter),
                    opt(n.max_null_proportion, |x| format!("{:.3}%", 100.0 * x)),
                    n.display.clone(),
                ]
            })
            .collect();
        table(&mut out, "Interaction null tests", &["norm", "sigma2_iota", "refits", "max null share", "p"], &rows);
    }
    for (title, results) in [("Specificity (BLUPs)", &b.specificity), ("Specificity (raw means)", &b.specificity_raw)] {
        if results.is_empty() {
            continue;
        }
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|r| {
                let defined = r.per_norm.iter().filter(|n| n.ratio.is_some()).count();
                vec![
                    r.model.clone(),
                    opt(r.mean_ratio, |x| format!("{x:.2}")),
                    format!("{defined}/{}", r.per_norm.len()),
                    r.vocab_size.to_string(),
                ]
            })
            .collect();
        table(&mut out, title, &["model", "mean ratio", "norms", "words"], &rows);
    }
    if !b.alignment.is_empty() {
        let rows: Vec<Vec<String>> = b
            .alignment
            .iter()
            .map(|a| {
                let n = a.per_norm.len();
                let mean_delta =
                    if n == 0 { None } else { Some(a.per_norm.iter().map(|x| x.delta_r).sum::<f64>() / n as f64) };
                let positive = a.per_norm.iter().filter(|x| x.delta_r > 0.0).count();
                vec![
                    a.model.clone(),
                    opt(a.r_bar, |x| format!("{x:.3}")),
                    opt(mean_delta, |x| format!("{x:+.3}")),
                    format!("{positive}/{n}"),
                ]
            })
            .collect();
        table(&mut out, "Human alignment", &["model", "r_bar", "mean delta_r", "delta_r > 0"], &rows);
    }
    out
}
