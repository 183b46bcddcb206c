//! CSV reports. Floats are written in their shortest round-trip form, so
//! identical runs give byte-identical files.

use std::path::Path;

use crate::balancer::BalanceReport;
use crate::diagnostics::EnergyProfile;
use crate::error::{Error, Result};
use crate::trainer::{EpochMetrics, StepMetrics};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns `cycle, lp_norm, max_dev`, one row per cycle starting at 1.
pub fn write_balance_report(path: impl AsRef<Path>, report: &BalanceReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["cycle", "lp_norm", "max_dev"])?;
    for (i, (norm, dev)) in report.lp_norm_per_cycle.iter().zip(&report.max_dev_per_cycle).enumerate() {
        w.write_record([(i + 1).to_string(), norm.to_string(), dev.to_string()])?;
    }
    finish(w, path)
}

/// Columns `step, epoch, lr, train_loss, global_l2_norm, wall_ms`.
pub fn write_step_metrics(path: impl AsRef<Path>, steps: &[StepMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["step", "epoch", "lr", "train_loss", "global_l2_norm", "wall_ms"])?;
    for s in steps {
        w.write_record([
            s.step.to_string(),
            s.epoch.to_string(),
            s.lr.to_string(),
            s.train_loss.to_string(),
            s.global_l2_norm.to_string(),
            s.wall_ms.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Columns `epoch, train_loss, train_accuracy, global_l2_norm`; accuracy is
/// empty for regression.
pub fn write_epoch_metrics(path: impl AsRef<Path>, epochs: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["epoch", "train_loss", "train_accuracy", "global_l2_norm"])?;
    for e in epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.train_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            e.global_l2_norm.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Columns `layer, label, neuron, norm`.
pub fn write_energy_profile(path: impl AsRef<Path>, profile: &EnergyProfile) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["layer", "label", "neuron", "norm"])?;
    for (k, layer) in profile.layers.iter().enumerate() {
        for (i, n) in layer.norms.iter().enumerate() {
            w.write_record([k.to_string(), layer.label.clone(), i.to_string(), n.to_string()])?;
        }
    }
    finish(w, path)
}

/// Columns `epoch, layer, label, neuron, norm`.
pub fn write_energy_trace(path: impl AsRef<Path>, profiles: &[(usize, EnergyProfile)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["epoch", "layer", "label", "neuron", "norm"])?;
    for (epoch, profile) in profiles {
        for (k, layer) in profile.layers.iter().enumerate() {
            for (i, n) in layer.norms.iter().enumerate() {
                w.write_record([epoch.to_string(), k.to_string(), layer.label.clone(), i.to_string(), n.to_string()])?;
            }
        }
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balancer::NetworkRescaling;
    use crate::diagnostics::LayerProfile;

    #[test]
    fn balance_report_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rep = BalanceReport {
            cycles_run: 2,
            initial_lp_norm: 22.0,
            lp_norm_per_cycle: vec![12.0, 12.0],
            max_dev_per_cycle: vec![1.0, 0.0],
            max_coeff_deviation: 0.0,
            converged: true,
            rescaling: NetworkRescaling { boundaries: vec![] },
        };
        write_balance_report(&path, &rep).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "cycle,lp_norm,max_dev\n1,12,1\n2,12,0\n");
    }

    #[test]
    fn energy_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let prof = EnergyProfile { layers: vec![LayerProfile { label: "layer 0 (linear)".into(), norms: vec![5.0, 0.0] }] };
        write_energy_profile(&path, &prof).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "layer,label,neuron,norm\n0,layer 0 (linear),0,5\n0,layer 0 (linear),1,0\n"
        );
    }
}
