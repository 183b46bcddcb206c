use std::fs;
use std::process::ExitCode;

use enorm::balancer::{balance as run_balance, AsymmetricMode, BalanceOptions};
use enorm::diagnostics::{
    canonicalization_check, check_equivalence, count_normalized_elements, energy_profile, global_lp_norm,
    random_batch,
};
use enorm::io::{
    load_network, save_network, write_balance_report, write_energy_profile, write_energy_trace,
    write_epoch_metrics, write_step_metrics, RunConfig,
};
use enorm::model::{appendix_a_network, mlp, resnet18c};
use enorm::trainer::train_loop_with;
use enorm::{Dtype, Error, Network, Result};

use crate::{Arch, BalanceArgs, Builtin, CanonArgs, CheckArgs, GenerateArgs, InspectArgs, TrainArgs};

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

pub fn balance(a: BalanceArgs) -> Result<ExitCode> {
    let mut net = load_network(&a.net)?;
    let mode = match (a.uniform_c, a.adaptive) {
        (Some(c), _) => AsymmetricMode::Uniform { c },
        (None, true) => AsymmetricMode::Adaptive,
        (None, false) => AsymmetricMode::Off,
    };
    let opts = BalanceOptions {
        p: a.p,
        mode,
        max_cycles: a.cycles,
        tol: a.tol,
    };
    let report = run_balance(&mut net, &opts)?;
    save_network(&net, &a.out)?;
    if let Some(path) = &a.report {
        write_balance_report(path, &report)?;
    }
    println!("cycles: {}", report.cycles_run);
    println!("initial_lp_norm: {}", report.initial_lp_norm);
    println!("final_lp_norm: {}", report.lp_norm_per_cycle.last().unwrap_or(&report.initial_lp_norm));
    println!("max_dev: {:e}", report.max_coeff_deviation);
    println!("converged: {}", report.converged);
    Ok(ExitCode::SUCCESS)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = RunConfig::load(&a.config)?;
    let out = a
        .out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    fs::create_dir_all(&out).map_err(|source| Error::Io { path: out.clone(), source })?;
    let data = cfg.load_dataset()?;
    let mut net = cfg.build_network(&data)?;
    let train_cfg = cfg.train_config()?;
    let mut profiles = vec![(0, energy_profile(&net)?)];
    let report = train_loop_with(&mut net, &data, &train_cfg, |m, n| {
        profiles.push((m.epoch + 1, energy_profile(n)?));
        Ok(())
    })?;
    save_network(&net, out.join("network.enorm"))?;
    write_step_metrics(out.join("metrics.csv"), &report.steps)?;
    write_epoch_metrics(out.join("epochs.csv"), &report.epochs)?;
    write_energy_trace(out.join("energy.csv"), &profiles)?;
    println!("steps: {}", report.steps.len());
    println!("final_loss: {}", report.final_loss);
    if let Some(acc) = report.final_accuracy {
        println!("final_accuracy: {acc}");
    }
    println!("global_l2_norm: {}", global_lp_norm(&net, 2.0, AsymmetricMode::Off)?);
    Ok(ExitCode::SUCCESS)
}

fn builtin(b: Builtin) -> Result<Network> {
    match b {
        Builtin::Resnet18c => {
            let mut net = resnet18c(1000, &mut enorm::rng(0))?;
            net.round_to_dtype();
            Ok(net)
        }
    }
}

pub fn inspect(a: InspectArgs) -> Result<ExitCode> {
    let net = match (&a.net, a.arch) {
        (Some(path), _) => load_network(path)?,
        (None, Some(b)) => builtin(b)?,
        (None, None) => return Err(Error::Config("pass --net or --arch".into())),
    };
    println!("layers: {}", net.layers.len());
    println!("parameters: {}", net.num_params());
    println!("global_l2_norm: {}", global_lp_norm(&net, 2.0, AsymmetricMode::Off)?);
    if a.count_elements {
        let n = count_normalized_elements(&net)?;
        println!("normalized_elements: {n}");
        println!("normalized_elements_millions: {:.1}", n as f64 / 1e6);
    }
    if let Some(path) = &a.energy {
        write_energy_profile(path, &energy_profile(&net)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn check(a: CheckArgs) -> Result<ExitCode> {
    let na = load_network(&a.net_a)?;
    let nb = load_network(&a.net_b)?;
    if !na.same_architecture(&nb) {
        println!("equivalent: false (architectures differ)");
        return Ok(verdict(false));
    }
    let tol = a.tol.unwrap_or(if na.dtype == Dtype::F32 || nb.dtype == Dtype::F32 { 1e-4 } else { 1e-10 });
    let x = random_batch(na.input_shape, a.samples, a.seed);
    let v = check_equivalence(&na, &nb, &x, tol, None)?;
    println!("max_abs_output_diff: {:e}", v.max_abs_output_diff);
    println!("tolerance: {tol:e}");
    println!("equivalent: {}", v.pass);
    Ok(verdict(v.pass))
}

pub fn canon(a: CanonArgs) -> Result<ExitCode> {
    let net = load_network(&a.net)?;
    let opts = BalanceOptions {
        p: a.p,
        max_cycles: a.max_cycles,
        tol: 1e-12,
        ..Default::default()
    };
    let r = canonicalization_check(&net, a.rescalings, a.seed, a.tol, &opts)?;
    println!("max_deviation: {:e}", r.max_deviation);
    println!("all_converged: {}", r.all_converged);
    println!("canonical: {}", r.pass);
    Ok(verdict(r.pass))
}

pub fn generate(a: GenerateArgs) -> Result<ExitCode> {
    let mut rng = enorm::rng(a.seed);
    let mut net = match a.arch {
        Arch::Mlp => mlp(&a.widths, a.bias, &mut rng)?,
        Arch::Resnet18c => resnet18c(a.classes, &mut rng)?,
        Arch::AppendixA => appendix_a_network(a.depth, a.width, &mut rng)?,
    };
    net.round_to_dtype();
    save_network(&net, &a.out)?;
    println!("parameters: {}", net.num_params());
    Ok(ExitCode::SUCCESS)
}
