use std::fmt::Write;

use super::{LinearModel, RowSense, VarKind};

fn sanitize(name: &str, fallback: &str, idx: usize) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        s = format!("{fallback}{idx}_{s}");
    }
    s
}

fn num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

fn terms(out: &mut String, names: &[String], terms: impl Iterator<Item = (usize, f64)>) {
    let mut any = false;
    for (v, c) in terms {
        let sign = if c < 0.0 { "-" } else { "+" };
        let _ = write!(out, " {sign} {} {}", num(c.abs()), names[v]);
        any = true;
    }
    if !any {
        out.push_str(" 0");
    }
}

/// Render a model in CPLEX LP format (readable by HiGHS, CPLEX, Gurobi).
pub fn write_lp(model: &LinearModel) -> String {
    let names: Vec<String> = model
        .vars()
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{}_{i}", sanitize(&v.name, "x", i)))
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "\\ {}", model.name);
    out.push_str("Minimize\n obj:");
    let costs = model.objective_coefficients();
    terms(&mut out, &names, costs.iter().copied().enumerate().filter(|(_, c)| *c != 0.0));
    let k = model.objective_constant();
    if k != 0.0 {
        let _ = write!(out, " {} {}", if k < 0.0 { "-" } else { "+" }, num(k.abs()));
    }
    out.push_str("\nSubject To\n");
    for (i, r) in model.rows().iter().enumerate() {
        let _ = write!(out, " {}_{i}:", sanitize(&r.name, "c", i));
        terms(&mut out, &names, r.terms.iter().map(|(v, c)| (v.0, *c)));
        let op = match r.sense {
            RowSense::Le => "<=",
            RowSense::Ge => ">=",
            RowSense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", num(r.rhs));
    }
    out.push_str("Bounds\n");
    for (v, n) in model.vars().iter().zip(&names) {
        let _ = writeln!(out, " {} <= {n} <= {}", num(v.lower), num(v.upper));
    }
    let ints: Vec<&String> = model
        .vars()
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind != VarKind::Continuous)
        .map(|(_, n)| n)
        .collect();
    if !ints.is_empty() {
        out.push_str("General\n");
        for n in ints {
            let _ = writeln!(out, " {n}");
        }
    }
    out.push_str("End\n");
    out
}
