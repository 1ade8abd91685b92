//! Plot-data emission: turns a run directory's metrics stream into flat CSV
//! series under `<run>/plots/`.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use shiro_core::diagnostics::KlRecord;

use crate::config::RunConfig;
use crate::metrics::{read_metrics, MetricsRecord};
use crate::TrainError;

fn write(path: &Path, content: String) -> Result<(), TrainError> {
    std::fs::write(path, content)
        .map_err(|e| TrainError::Other(format!("cannot write {}: {e}", path.display())))
}

/// Trailing moving average over up to `window` records.
fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let lo = i.saturating_sub(window - 1);
        let span = &values[lo..=i];
        out.push(span.iter().sum::<f64>() / span.len() as f64);
    }
    out
}

/// Emits success-rate (raw and 10-point moving average), KL, temperature,
/// loss, and final-position series. Returns the paths written.
pub fn export_plots(run_dir: &Path) -> Result<Vec<PathBuf>, TrainError> {
    let config = RunConfig::load(&run_dir.join("run_config.json"))?;
    let metrics_path = run_dir.join("metrics.jsonl");
    let file = std::fs::File::open(&metrics_path)
        .map_err(|e| TrainError::Other(format!("cannot open {}: {e}", metrics_path.display())))?;
    let records: Vec<MetricsRecord> = read_metrics(BufReader::new(file))?;

    let plots = run_dir.join("plots");
    std::fs::create_dir_all(&plots)
        .map_err(|e| TrainError::Other(format!("cannot create {}: {e}", plots.display())))?;
    let mut written = Vec::new();

    let success: Vec<f64> = records.iter().map(|r| r.success_rate).collect();
    let smoothed = moving_average(&success, 10);
    let mut text = String::from("step,success_rate,success_rate_ma10\n");
    for (r, ma) in records.iter().zip(&smoothed) {
        text.push_str(&format!("{},{},{}\n", r.step, r.success_rate, ma));
    }
    let path = plots.join("success_rate.csv");
    write(&path, text)?;
    written.push(path);

    let kl_records: Vec<KlRecord> = records
        .iter()
        .map(|r| {
            KlRecord::new(r.step, r.kl_mean, r.kl_max, config.c)
                .map_err(|e| TrainError::Other(format!("step {}: {e}", r.step)))
        })
        .collect::<Result<_, _>>()?;
    let mut buf = Vec::new();
    shiro_core::diagnostics::write_kl_csv(&kl_records, &mut buf)
        .map_err(|e| TrainError::Other(e.to_string()))?;
    let path = plots.join("kl.csv");
    write(&path, String::from_utf8(buf).expect("csv is utf-8"))?;
    written.push(path);

    let mut text = String::from("step,alpha_high,alpha_low\n");
    for r in &records {
        text.push_str(&format!("{},{},{}\n", r.step, r.alpha_high, r.alpha_low));
    }
    let path = plots.join("alpha.csv");
    write(&path, text)?;
    written.push(path);

    let mut text = String::from("step,critic_loss_high,critic_loss_low,actor_loss_high,actor_loss_low\n");
    for r in &records {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.critic_loss_high, r.critic_loss_low, r.actor_loss_high, r.actor_loss_low
        ));
    }
    let path = plots.join("losses.csv");
    write(&path, text)?;
    written.push(path);

    let positions_src = run_dir.join("final_positions.csv");
    if positions_src.exists() {
        let path = plots.join("final_positions.csv");
        std::fs::copy(&positions_src, &path)
            .map_err(|e| TrainError::Other(format!("cannot copy final positions: {e}")))?;
        written.push(path);
    }

    Ok(written)
}
