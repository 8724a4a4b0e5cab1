use std::path::{Path, PathBuf};

use super::StatsRow;

pub const TABLE_HEADER: [&str; 7] = [
    "fps_skip_ratio",
    "AVG",
    "MED",
    "STD",
    "AVG TKN CMP",
    "AVG TKN PMT",
    "AVG TKN TOT",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Markdown => "md",
        }
    }
}

fn cells(row: &StatsRow) -> [String; 7] {
    [
        row.label.clone(),
        format!("{:.3}", row.avg),
        format!("{:.3}", row.med),
        format!("{:.3}", row.std),
        format!("{:.3}", row.avg_tkn_cmp),
        format!("{:.3}", row.avg_tkn_pmt),
        format!("{:.3}", row.avg_tkn_tot),
    ]
}

pub fn render_table(rows: &[StatsRow], format: TableFormat) -> String {
    match format {
        TableFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record(TABLE_HEADER).expect("in-memory write");
            for row in rows {
                writer.write_record(cells(row)).expect("in-memory write");
            }
            String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 cells")
        }
        TableFormat::Markdown => {
            let mut out = format!("| {} |\n", TABLE_HEADER.join(" | "));
            out.push_str(&format!("|{}\n", "---|".repeat(TABLE_HEADER.len())));
            for row in rows {
                out.push_str(&format!("| {} |\n", cells(row).join(" | ")));
            }
            if !rows.is_empty() {
                let counts: Vec<String> = rows.iter().map(|r| format!("{}: n={}", r.label, r.n)).collect();
                out.push_str(&format!("\nScored records per row: {}.\n", counts.join(", ")));
            }
            out
        }
    }
}

pub fn emit_table(rows: &[StatsRow], format: TableFormat, path: &Path) -> std::io::Result<PathBuf> {
    std::fs::write(path, render_table(rows, format))?;
    Ok(path.to_path_buf())
}
