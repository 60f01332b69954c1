//! Matplotlib script generation for bench and quality CSV files.
//!
//! The emitted script embeds the data, so it runs without the CSV.

use std::collections::BTreeMap;
use std::fmt::Write;

use fewha::bench::CSV_HEADER;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlotError {
    #[error("no data rows")]
    NoData,
    #[error("schema mismatch: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Bench,
    /// Quality series with `n` per-direction columns.
    Quality(usize),
}

pub fn detect_schema(header: &str) -> Result<Schema, PlotError> {
    let header = header.trim_end();
    if header == CSV_HEADER {
        return Ok(Schema::Bench);
    }
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.len();
    let dirs_ok = n >= 4
        && cols[1..n - 3]
            .iter()
            .enumerate()
            .all(|(k, c)| *c == format!("dir_{k:02}"));
    if cols[0] == "step" && dirs_ok && cols[n - 3..] == ["field_rms", "layer_rel_error", "rho"] {
        return Ok(Schema::Quality(n - 4));
    }
    Err(PlotError::Schema(format!("unrecognized header {header:?}")))
}

fn parse_rows(text: &str) -> Result<(Schema, Vec<Vec<String>>), PlotError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(PlotError::NoData)?;
    let schema = detect_schema(header)?;
    let width = header.split(',').count();
    let rows: Vec<Vec<String>> = lines
        .enumerate()
        .map(|(i, l)| {
            let row: Vec<String> = l.split(',').map(str::to_owned).collect();
            if row.len() == width {
                Ok(row)
            } else {
                Err(PlotError::Schema(format!(
                    "row {} has {} fields, expected {width}",
                    i + 1,
                    row.len()
                )))
            }
        })
        .collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(PlotError::NoData);
    }
    Ok((schema, rows))
}

fn number(field: &str, what: &str) -> Result<f64, PlotError> {
    field
        .parse()
        .map_err(|_| PlotError::Schema(format!("{what} {field:?} is not a number")))
}

fn py_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
    format!("[{}]", items.join(", "))
}

const PRELUDE: &str =
    "import pathlib\n\nimport matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\n";

/// Builds a plotting script from CSV text.
pub fn plot_script(csv: &str) -> Result<String, PlotError> {
    let (schema, rows) = parse_rows(csv)?;
    match schema {
        Schema::Bench => bench_script(&rows),
        Schema::Quality(n) => quality_script(&rows, n),
    }
}

fn bench_script(rows: &[Vec<String>]) -> Result<String, PlotError> {
    // param -> value -> per-rep columns
    let mut groups: BTreeMap<&str, BTreeMap<u64, Vec<[f64; 5]>>> = BTreeMap::new();
    for r in rows {
        let value = number(&r[1], "value")? as u64;
        let mut cols = [0.0; 5];
        for (c, f) in cols.iter_mut().zip(&r[3..8]) {
            *c = number(f, "timing")?;
        }
        groups
            .entry(r[0].as_str())
            .or_default()
            .entry(value)
            .or_default()
            .push(cols);
    }
    let mut s = String::from(PRELUDE);
    s.push_str("DATA = {\n");
    for (param, points) in &groups {
        let xs: Vec<f64> = points.keys().map(|&v| v as f64).collect();
        let _ = writeln!(s, "    {param:?}: {{\n        \"x\": {},", py_list(&xs));
        let names = ["step", "stage1", "stage2", "stage3", "pcg"];
        for (k, name) in names.iter().enumerate() {
            let med: Vec<f64> = points
                .values()
                .map(|reps| median(reps.iter().map(|r| r[k]).collect()))
                .collect();
            let _ = writeln!(s, "        {name:?}: {},", py_list(&med));
        }
        let lo: Vec<f64> = points
            .values()
            .map(|reps| reps.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min))
            .collect();
        let hi: Vec<f64> = points
            .values()
            .map(|reps| reps.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let _ = writeln!(
            s,
            "        \"step_min\": {},\n        \"step_max\": {},\n    }},",
            py_list(&lo),
            py_list(&hi)
        );
    }
    s.push_str("}\n\n");
    s.push_str(
        r#"fig, axes = plt.subplots(1, len(DATA), figsize=(5 * len(DATA), 4), squeeze=False)
for ax, (param, d) in zip(axes[0], DATA.items()):
    err = [
        [m - lo for m, lo in zip(d["step"], d["step_min"])],
        [hi - m for m, hi in zip(d["step"], d["step_max"])],
    ]
    ax.errorbar(d["x"], [v / 1e3 for v in d["step"]], yerr=[[v / 1e3 for v in e] for e in err],
                marker="o", capsize=3, label="reconstruction step")
    for key, label in [("pcg", "PCG"), ("stage1", "stage 1"), ("stage2", "stage 2"), ("stage3", "stage 3")]:
        ax.plot(d["x"], [v / 1e3 for v in d[key]], marker=".", linestyle="--", label=label)
    ax.set_xlabel(param)
    ax.set_ylabel("time per step [ms]")
    ax.grid(True, alpha=0.3)
    ax.legend()
fig.tight_layout()
fig.savefig(pathlib.Path(__file__).with_suffix(".png"), dpi=150)
"#,
    );
    Ok(s)
}

fn quality_script(rows: &[Vec<String>], n_dirs: usize) -> Result<String, PlotError> {
    let col =
        |k: usize, what: &str| -> Result<Vec<f64>, PlotError> { rows.iter().map(|r| number(&r[k], what)).collect() };
    let steps = col(0, "step")?;
    let field = col(n_dirs + 1, "field_rms")?;
    let layer = col(n_dirs + 2, "layer_rel_error")?;
    let mut s = String::from(PRELUDE);
    let _ = writeln!(s, "STEP = {}", py_list(&steps));
    let _ = writeln!(s, "FIELD = {}", py_list(&field));
    let _ = writeln!(s, "LAYER = {}", py_list(&layer));
    s.push_str("DIRS = [\n");
    for k in 0..n_dirs {
        let _ = writeln!(s, "    {},", py_list(&col(k + 1, "direction rms")?));
    }
    s.push_str("]\n\n");
    s.push_str(
        r#"fig, (ax, bx) = plt.subplots(1, 2, figsize=(10, 4))
for d in DIRS:
    ax.semilogy(STEP, d, color="0.7", linewidth=0.8)
ax.semilogy(STEP, FIELD, color="C0", marker="o", label="field average")
ax.set_xlabel("step")
ax.set_ylabel("residual RMS")
ax.grid(True, which="both", alpha=0.3)
ax.legend()
bx.semilogy(STEP, LAYER, color="C1", marker="o")
bx.set_xlabel("step")
bx.set_ylabel("layer relative error")
bx.grid(True, which="both", alpha=0.3)
fig.tight_layout()
fig.savefig(pathlib.Path(__file__).with_suffix(".png"), dpi=150)
"#,
    );
    Ok(s)
}

fn median(mut v: Vec<f64>) -> f64 {
    fewha::bench::median(&mut v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_inputs_have_no_data_rows() {
        assert_eq!(plot_script(""), Err(PlotError::NoData));
        assert_eq!(plot_script(&format!("{CSV_HEADER}\n")), Err(PlotError::NoData));
    }

    #[test]
    fn headers_are_recognized() {
        assert_eq!(detect_schema(CSV_HEADER), Ok(Schema::Bench));
        assert_eq!(
            detect_schema("step,dir_00,dir_01,field_rms,layer_rel_error,rho"),
            Ok(Schema::Quality(2))
        );
        assert!(matches!(detect_schema("a,b,c"), Err(PlotError::Schema(_))));
        assert!(matches!(
            detect_schema("step,dir_01,field_rms,layer_rel_error,rho"),
            Err(PlotError::Schema(_))
        ));
    }

    #[test]
    fn bench_script_has_one_series_per_param() {
        let csv = format!(
            "{CSV_HEADER}\npcg_iters,4,0,10,1,2,3,8\npcg_iters,4,1,12,1,2,3,9\npcg_iters,8,0,20,1,2,3,18\nthreads,1,0,5,1,1,1,4\n"
        );
        let s = plot_script(&csv).unwrap();
        assert!(s.contains("\"pcg_iters\": {"));
        assert!(s.contains("\"threads\": {"));
        assert!(s.contains("\"step\": [1.1e1, 2e1]"));
        assert!(s.contains("savefig"));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let csv = format!("{CSV_HEADER}\npcg_iters,4,0\n");
        assert!(matches!(plot_script(&csv), Err(PlotError::Schema(_))));
    }

    #[test]
    fn quality_script_embeds_series() {
        let csv = "step,dir_00,field_rms,layer_rel_error,rho\n0,1e0,1e0,5e-1,\n1,5e-1,5e-1,2e-1,1e0;2e-1\n";
        let s = plot_script(csv).unwrap();
        assert!(s.contains("FIELD = [1e0, 5e-1]"));
        assert!(s.contains("DIRS = [\n    [1e0, 5e-1],\n]"));
    }
}
