use super::{AuditEntry, AuditEventKind, CompensationStatement, Verdict};

fn kind_str(k: AuditEventKind) -> &'static str {
    match k {
        AuditEventKind::Registration => "registration",
        AuditEventKind::Execution => "execution",
        AuditEventKind::Feedback => "feedback",
        AuditEventKind::Settlement => "settlement",
    }
}

/// Columns: kind, tick, block_height, tx_index, actor, tx_hash, verdict.
pub fn audit_trail_csv(entries: &[AuditEntry]) -> csv::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "kind",
        "tick",
        "block_height",
        "tx_index",
        "actor",
        "tx_hash",
        "verdict",
    ])?;
    for e in entries {
        let verdict = match e.verdict {
            Some(Verdict::Pass) => "pass",
            Some(Verdict::Fail) => "fail",
            None => "",
        };
        w.write_record([
            kind_str(e.kind),
            &e.tick.to_string(),
            &e.block_height.to_string(),
            &e.tx_index.to_string(),
            &e.actor.to_hex(),
            &e.tx_hash.to_hex(),
            verdict,
        ])?;
    }
    finish(w)
}

pub fn compensation_csv(statements: &[CompensationStatement]) -> csv::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "tester",
        "from_height",
        "to_height",
        "executed",
        "matched",
        "amount",
        "contribution_ppm",
    ])?;
    for s in statements {
        w.write_record([
            s.tester.to_hex(),
            s.window.0.to_string(),
            s.window.1.to_string(),
            s.executed.to_string(),
            s.matched.to_string(),
            s.amount.to_string(),
            s.contribution_ppm.to_string(),
        ])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> csv::Result<String> {
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv of ascii fields"))
}
