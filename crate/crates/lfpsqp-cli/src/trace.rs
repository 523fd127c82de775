//! Trace serialization: CSV and JSON writers plus parsers for round-trip
//! tests. Floating values use the shortest representation that parses
//! back to the identical bits.

use lfpsqp::{DirectionKind, TraceRecord};

pub const CSV_HEADER: &str = "iter,f,proj_grad_norm,constraint_viol_inf,step_norm,alpha,\
direction_kind,cg_iters,retract_inner_iters,cum_f_evals,cum_grad_evals,cum_jac_evals,\
cum_w_actions";

pub fn to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.iter,
            r.f,
            r.proj_grad_norm,
            r.constraint_viol_inf,
            r.step_norm,
            r.alpha,
            r.direction_kind,
            r.cg_iters,
            r.retract_inner_iters,
            r.cum_f_evals,
            r.cum_grad_evals,
            r.cum_jac_evals,
            r.cum_w_actions
        ));
    }
    out
}

pub fn from_csv(text: &str) -> Result<Vec<TraceRecord>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty trace file")?;
    if header != CSV_HEADER {
        return Err(format!("unexpected header: {header}"));
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(format!("line {}: expected 13 fields", lineno + 2));
        }
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| format!("bad float {s}: {e}"));
        let parse_u = |s: &str| s.parse::<u64>().map_err(|e| format!("bad count {s}: {e}"));
        records.push(TraceRecord {
            iter: fields[0].parse().map_err(|e| format!("bad iter: {e}"))?,
            f: parse_f(fields[1])?,
            proj_grad_norm: parse_f(fields[2])?,
            constraint_viol_inf: parse_f(fields[3])?,
            step_norm: parse_f(fields[4])?,
            alpha: parse_f(fields[5])?,
            direction_kind: fields[6].parse::<DirectionKind>()?,
            cg_iters: fields[7].parse().map_err(|e| format!("bad cg_iters: {e}"))?,
            retract_inner_iters: fields[8]
                .parse()
                .map_err(|e| format!("bad retract_inner_iters: {e}"))?,
            cum_f_evals: parse_u(fields[9])?,
            cum_grad_evals: parse_u(fields[10])?,
            cum_jac_evals: parse_u(fields[11])?,
            cum_w_actions: parse_u(fields[12])?,
        });
    }
    Ok(records)
}

pub fn to_json(records: &[TraceRecord]) -> serde_json::Result<String> {
    serde_json::to_string_pretty(records)
}

pub fn from_json(text: &str) -> serde_json::Result<Vec<TraceRecord>> {
    serde_json::from_str(text)
}
