//! CSV and PNG writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use image::GrayImage;
use polyseg_core::metrics::{ImageMetrics, MetricsReport};
use polyseg_core::training::StepRecord;
use polyseg_core::Tensor;

use crate::dataset::quantize;

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per image, then a `mean` row.
pub fn write_metrics_csv(path: &Path, rows: &[ImageMetrics], mean: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["image_id"];
    header.extend(MetricsReport::COLUMNS);
    w.write_record(&header)?;
    let line = |id: &str, r: &MetricsReport| {
        std::iter::once(id.to_string()).chain(r.values().iter().map(|&v| fmt(v))).collect::<Vec<_>>()
    };
    for row in rows {
        w.write_record(line(&row.id, &row.report))?;
    }
    w.write_record(line("mean", mean))?;
    w.flush()?;
    Ok(())
}

/// Training log with `# key=value` comment lines ahead of the CSV header.
pub fn write_train_log(path: &Path, header: &[(&str, String)], records: &[StepRecord]) -> Result<()> {
    let mut file = create(path)?;
    for (k, v) in header {
        writeln!(file, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["step", "seg_loss", "adv_term", "g_total", "d_loss", "wall_clock_s"])?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            fmt(r.seg_loss),
            fmt(r.adv_term),
            fmt(r.g_total),
            fmt(r.d_loss),
            format!("{:.3}", r.wall_clock_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the numeric rows of a training log.
pub fn read_train_log(path: &Path) -> Result<Vec<StepRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> { Ok(row.get(i).context("short row")?.parse()?) };
        out.push(StepRecord {
            step: row.get(0).context("short row")?.parse()?,
            seg_loss: f(1)?,
            adv_term: f(2)?,
            g_total: f(3)?,
            d_loss: f(4)?,
            wall_clock_s: f(5)?,
        });
    }
    Ok(out)
}

/// Writes a header and rows of string cells.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn save_gray(path: &Path, t: &Tensor, f: impl Fn(f32) -> u8) -> Result<()> {
    let s = t.shape();
    assert_eq!((s.n, s.c), (1, 1), "single-channel map expected");
    let px: Vec<u8> = t.data().iter().map(|&v| f(v)).collect();
    let img = GrayImage::from_raw(s.w as u32, s.h as u32, px).expect("buffer matches shape");
    create(path)?;
    img.save(path).with_context(|| format!("cannot write {}", path.display()))
}

/// 8-bit probability map, pixel = round(255·p).
pub fn write_probability_png(path: &Path, probs: &Tensor) -> Result<()> {
    save_gray(path, probs, quantize)
}

/// Binary mask as 0/255.
pub fn write_mask_png(path: &Path, mask: &Tensor) -> Result<()> {
    save_gray(path, mask, |v| if v > 0.5 { 255 } else { 0 })
}

/// Min-max normalized grayscale; a constant map is written as black.
pub fn write_heatmap_png(path: &Path, heat: &Tensor) -> Result<()> {
    let (lo, hi) = heat.min_max();
    let span = hi - lo;
    save_gray(path, heat, |v| if span > 0.0 { quantize((v - lo) / span) } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use polyseg_core::metrics::{compute_metrics, ConfusionCounts};
    use polyseg_core::Shape;

    #[test]
    fn metrics_csv_has_one_row_per_image_plus_mean() {
        let dir = tempfile::tempdir().unwrap();
        let r = compute_metrics(ConfusionCounts { tp: 3, fp: 1, fn_: 0, tn: 4 });
        let rows = vec![ImageMetrics { id: "a".into(), report: r }, ImageMetrics { id: "b".into(), report: r }];
        let path = dir.path().join("m.csv");
        write_metrics_csv(&path, &rows, &r).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "image_id,dice,iou,recall,precision,accuracy,f2");
        assert!(lines[3].starts_with("mean,0.857143,0.750000,1.000000,0.750000,0.875000"));
    }

    #[test]
    fn train_log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let recs = vec![
            StepRecord { step: 1, seg_loss: 0.5, adv_term: 0.7, g_total: 0.57, d_loss: 0.69, wall_clock_s: 1.25 },
            StepRecord { step: 2, seg_loss: 0.25, ..Default::default() },
        ];
        write_train_log(&path, &[("loss.combo", "bdice".into())], &recs).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with("# loss.combo=bdice\nstep,"));
        assert_eq!(read_train_log(&path).unwrap(), recs);
    }

    #[test]
    fn probability_png_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = Tensor::from_vec(Shape::new(1, 1, 4, 1), vec![0.0, 0.5, 0.998, 1.0]).unwrap();
        let path = dir.path().join("p.png");
        write_probability_png(&path, &p).unwrap();
        assert_eq!(image::open(&path).unwrap().to_luma8().into_raw(), vec![0, 128, 254, 255]);

        write_heatmap_png(&path, &p.map(|v| 3.0 * v - 1.0)).unwrap();
        assert_eq!(image::open(&path).unwrap().to_luma8().into_raw(), vec![0, 128, 254, 255]);
    }
}
