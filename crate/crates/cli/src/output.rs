use std::io::Write;

use obk_core::model::{detector_mask_format, RunHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

pub const RUN_COLUMNS: [&str; 10] = [
    "Partition", "Run", "Start", "End", "Status", "Events", "MaxEvents", "Trigger", "DetectorMask", "Beam",
];

pub fn run_row(h: &RunHeader) -> Vec<String> {
    vec![
        h.partition.clone(),
        h.run_number.to_string(),
        h.start_time.to_string(),
        h.end_time.map(|t| t.to_string()).unwrap_or_default(),
        h.status.to_string(),
        h.num_events.to_string(),
        h.max_events.to_string(),
        h.trigger_type.to_string(),
        detector_mask_format(h.detector_mask),
        h.beam_type.clone(),
    ]
}

/// Left-aligned columns separated by two spaces.
pub fn write_table(out: &mut impl Write, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |out: &mut dyn Write, cells: &mut dyn Iterator<Item = &str>| -> std::io::Result<()> {
        let text: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(out, "{}", text.join("  ").trim_end())
    };
    line(out, &mut header.iter().copied())?;
    for row in rows {
        line(out, &mut row.iter().map(String::as_str))?;
    }
    Ok(())
}

pub fn write_csv(out: impl Write, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One canonical JSON object per line.
pub fn write_json_lines<T: serde::Serialize>(out: &mut impl Write, items: &[T]) -> anyhow::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn write(format: Format, header: &[&str], rows: &[Vec<String>], json: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    match format {
        Format::Table => write_table(&mut out, header, rows)?,
        Format::Csv => write_csv(&mut out, header, rows)?,
        Format::Json => json(&mut out)?,
    }
    out.flush()?;
    Ok(())
}
