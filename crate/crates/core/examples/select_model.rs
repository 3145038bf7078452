//! Ranks a grid of evaluation rows and prints the report table.
//!
//! cargo run --example select_model

use lark::harness::{EvalReport, EvalRow, Metrics};

fn main() -> lark::Result<()> {
    let rows = [
        ("D0-C3", 0.0954, 0.0045, 0.0073),
        ("D0-C5", 0.0945, 0.0042, 0.0071),
        ("D40-C3", 0.0932, 0.0039, 0.0068),
        ("D40-C5", 0.0921, 0.0032, 0.0065),
        ("D80-C3", 0.0946, 0.0044, 0.0072),
        ("D80-C5", 0.0944, 0.0043, 0.0069),
    ]
    .into_iter()
    .map(|(id, p, d1, d2)| EvalRow {
        model_id: id.into(),
        metrics: Metrics {
            rmse_position: p,
            rmse_first_diff: d1,
            rmse_second_diff: d2,
        },
    })
    .collect();
    let report = EvalReport::new(rows)?;
    print!("{}", report.to_table());
    Ok(())
}
