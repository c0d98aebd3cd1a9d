//! SDPA sparse format export and import.
//!
//! Every constraint becomes one block `F_0 = −s·M_0`, `F_j = s·M_j` with
//! `s` the sense sign, so that `Σ x_j F_j − F_0 ⪰ 0` reads `s·M(x) ⪰ 0`.
//! 1×1 constraints are written as diagonal blocks. Labels, senses and the
//! variable layout travel in `*` comment lines so the problem can be rebuilt.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{NcsError, Result};
use crate::lmi::{Constraint, DecisionLayout, LmiParams, LmiProblem, Sense, VarSpec};

const TAG: &str = "* ncs";

fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn export_sdpa(p: &LmiProblem) -> String {
    let mut out = String::new();
    let m = p.layout.len();
    if let Some(params) = &p.params {
        let _ = writeln!(
            out,
            "{TAG} params {}",
            serde_json::to_string(params).expect("params serialize")
        );
    }
    for v in p.layout.vars() {
        let _ = writeln!(out, "{TAG} var {}", serde_json::to_string(v).expect("var serialize"));
    }
    for (k, c) in p.constraints.iter().enumerate() {
        let vertex = c.vertex.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(out, "{TAG} block {} {} {} {}", k + 1, c.sense.tag(), vertex, c.label);
    }
    let _ = writeln!(out, "{m}");
    let _ = writeln!(out, "{}", p.constraints.len());
    let sizes: Vec<String> = p
        .constraints
        .iter()
        .map(|c| {
            if c.dim() == 1 {
                "-1".to_string()
            } else {
                c.dim().to_string()
            }
        })
        .collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let _ = writeln!(out, "{}", vec!["0"; m].join(" "));
    for (k, c) in p.constraints.iter().enumerate() {
        let s = c.sense.sign();
        let mut emit = |mat: usize, a: &DMatrix<f64>, scale: f64| {
            for i in 0..a.nrows() {
                for j in i..a.ncols() {
                    let v = a[(i, j)] * scale;
                    if v != 0.0 {
                        let _ = writeln!(out, "{mat} {} {} {} {}", k + 1, i + 1, j + 1, num(v));
                    }
                }
            }
        };
        emit(0, &c.constant, -s);
        for (j, a) in &c.coeffs {
            emit(j + 1, a, s);
        }
    }
    out
}

struct Meta {
    sense: Sense,
    vertex: Option<usize>,
    label: String,
}

fn perr(line: usize, msg: impl Into<String>) -> NcsError {
    NcsError::Parse { line, msg: msg.into() }
}

pub fn import_sdpa(text: &str) -> Result<LmiProblem> {
    let mut params: Option<LmiParams> = None;
    let mut vars: Vec<VarSpec> = Vec::new();
    let mut metas: Vec<(usize, Meta)> = Vec::new();
    let mut body: Vec<(usize, &str)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let ln = ln + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(TAG) {
            let rest = rest.trim_start();
            if let Some(js) = rest.strip_prefix("params ") {
                params = Some(serde_json::from_str(js).map_err(|e| perr(ln, e.to_string()))?);
            } else if let Some(js) = rest.strip_prefix("var ") {
                vars.push(serde_json::from_str(js).map_err(|e| perr(ln, e.to_string()))?);
            } else if let Some(b) = rest.strip_prefix("block ") {
                let mut it = b.splitn(4, ' ');
                let k: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| perr(ln, "bad block index"))?;
                let sense = it
                    .next()
                    .and_then(Sense::from_tag)
                    .ok_or_else(|| perr(ln, "bad block sense"))?;
                let vertex = match it.next() {
                    Some("-") => None,
                    Some(v) => Some(v.parse().map_err(|_| perr(ln, "bad vertex"))?),
                    None => return Err(perr(ln, "missing vertex")),
                };
                let label = it.next().unwrap_or("").to_string();
                metas.push((k, Meta { sense, vertex, label }));
            }
            continue;
        }
        if line.starts_with('*') || line.starts_with('"') {
            continue;
        }
        body.push((ln, line));
    }
    let mut it = body.into_iter();
    let mut next = |what: &str| it.next().ok_or_else(|| perr(0, format!("missing {what}")));
    let (ln, l) = next("variable count")?;
    let m: usize = first_token(l).parse().map_err(|_| perr(ln, "bad variable count"))?;
    let (ln, l) = next("block count")?;
    let nb: usize = first_token(l).parse().map_err(|_| perr(ln, "bad block count"))?;
    let (ln, l) = next("block structure")?;
    let sizes: Vec<usize> = tokens(l)
        .take(nb)
        .map(|s| s.parse::<i64>().map(|v| v.unsigned_abs() as usize))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| perr(ln, "bad block structure"))?;
    if sizes.len() != nb {
        return Err(perr(ln, "block structure too short"));
    }
    let (ln, l) = next("objective")?;
    if tokens(l).count() < m {
        return Err(perr(ln, "objective too short"));
    }
    let mut constant: Vec<DMatrix<f64>> = sizes.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    let mut coeffs: Vec<Vec<Option<DMatrix<f64>>>> = vec![vec![None; m]; nb];
    for (ln, l) in it {
        let t: Vec<&str> = tokens(l).collect();
        if t.len() < 5 {
            return Err(perr(ln, "entry needs 5 fields"));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| perr(ln, format!("bad index '{s}'")));
        let (mat, blk, i, j) = (idx(t[0])?, idx(t[1])?, idx(t[2])?, idx(t[3])?);
        let v: f64 = t[4].parse().map_err(|_| perr(ln, format!("bad value '{}'", t[4])))?;
        if blk == 0 || blk > nb || mat > m {
            return Err(perr(ln, "index out of range"));
        }
        let d = sizes[blk - 1];
        if i == 0 || j == 0 || i > d || j > d {
            return Err(perr(ln, "entry outside block"));
        }
        let target = if mat == 0 {
            &mut constant[blk - 1]
        } else {
            coeffs[blk - 1][mat - 1].get_or_insert_with(|| DMatrix::zeros(d, d))
        };
        target[(i - 1, j - 1)] = v;
        target[(j - 1, i - 1)] = v;
    }
    let layout = if vars.is_empty() {
        let mut l = DecisionLayout::new();
        for j in 0..m {
            l.add_symmetric(&format!("x{}", j + 1), 1, false);
        }
        l
    } else {
        let mut l = DecisionLayout::new();
        for v in &vars {
            match v.kind {
                crate::lmi::VarKind::Symmetric => l.add_symmetric(&v.name, v.dim, v.positive),
                crate::lmi::VarKind::Full => l.add_full(&v.name, v.dim),
            };
        }
        if l.len() != m {
            return Err(NcsError::LayoutMismatch(format!(
                "variables cover {} scalars, file has {m}",
                l.len()
            )));
        }
        l
    };
    let mut constraints = Vec::with_capacity(nb);
    for (k, (f0, fk)) in constant.into_iter().zip(coeffs).enumerate() {
        let meta = metas.iter().find(|(i, _)| *i == k + 1).map(|(_, m)| m);
        let sense = meta.map_or(Sense::PsdNonstrict, |m| m.sense);
        let s = sense.sign();
        constraints.push(Constraint {
            label: meta.map_or_else(|| format!("block{}", k + 1), |m| m.label.clone()),
            sense,
            vertex: meta.and_then(|m| m.vertex),
            constant: f0 * (-s),
            coeffs: fk
                .into_iter()
                .enumerate()
                .filter_map(|(j, a)| a.map(|a| (j, a * s)))
                .collect(),
        });
    }
    Ok(LmiProblem {
        layout,
        constraints,
        params,
    })
}

fn tokens(l: &str) -> impl Iterator<Item = &str> {
    l.split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}' || c == '(' || c == ')')
        .filter(|s| !s.is_empty())
}

fn first_token(l: &str) -> &str {
    tokens(l).next().unwrap_or("")
}

/// Largest entrywise difference between two problems' constraint data;
/// infinite when their shapes differ.
pub fn max_difference(a: &LmiProblem, b: &LmiProblem) -> f64 {
    if a.layout.len() != b.layout.len() || a.constraints.len() != b.constraints.len() {
        return f64::INFINITY;
    }
    let n = a.layout.len();
    let mut worst: f64 = 0.0;
    for (ca, cb) in a.constraints.iter().zip(&b.constraints) {
        if ca.dim() != cb.dim() || ca.sense != cb.sense {
            return f64::INFINITY;
        }
        worst = worst.max((&ca.constant - &cb.constant).amax());
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            let da = ca.eval(&e) - &ca.constant;
            let db = cb.eval(&e) - &cb.constant;
            worst = worst.max((da - db).amax());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::AffineBuilder;

    fn small() -> LmiProblem {
        let mut layout = DecisionLayout::new();
        let p = layout.add_symmetric("P", 2, true);
        let k = layout.add_full("K", 2);
        let mut b = AffineBuilder::new(&layout, 2);
        b.add_congruence(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, -1.0]), p);
        b.add(
            &DMatrix::identity(2, 2),
            k,
            &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.1, 3.0]),
        );
        b.add_constant(&DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 0.2, 0.2, -7.0]));
        let c1 = b.finish("Main@v0", Sense::NdStrict, Some(0));
        let mut b = AffineBuilder::new(&layout, 1);
        b.add_constant(&DMatrix::from_element(1, 1, 0.1));
        let c2 = b.finish("scalar", Sense::PsdNonstrict, None);
        LmiProblem {
            layout,
            constraints: vec![c1, c2],
            params: None,
        }
    }

    #[test]
    fn round_trip_exact() {
        let p = small();
        let q = import_sdpa(&export_sdpa(&p)).unwrap();
        assert_eq!(max_difference(&p, &q), 0.0);
        assert_eq!(q.constraints[0].label, "Main@v0");
        assert_eq!(q.constraints[0].vertex, Some(0));
        assert_eq!(q.layout, p.layout);
    }

    #[test]
    fn bare_file_without_metadata() {
        let text = "\"plain\"\n2\n1\n2\n0 0\n0 1 1 1 1.0\n1 1 1 2 -0.5\n2 1 2 2 2\n";
        let q = import_sdpa(text).unwrap();
        assert_eq!(q.layout.len(), 2);
        assert_eq!(q.constraints[0].constant[(0, 0)], -1.0);
        assert_eq!(q.constraints[0].coeffs[0].1[(1, 0)], -0.5);
    }

    #[test]
    fn malformed_entry() {
        assert!(matches!(
            import_sdpa("1\n1\n1\n0\n0 1 1 x 1\n"),
            Err(NcsError::Parse { line: 5, .. })
        ));
    }
}
