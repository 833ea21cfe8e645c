use fgseg::gradcheck::{
    full_model, gradient_check, layer_suite, CheckConfig, CheckReport, ConvOp, Corrupted, Differentiable, LAYER_TOL,
    MODEL_TOL,
};
use fgseg::{Rng, Shape};

use crate::error::{CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    /// Number of random draws of the layer suite
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Width multiplier of the end-to-end check
    #[arg(long, default_value_t = 0.125)]
    pub width_mult: f64,
    /// Spatial size of the end-to-end check input
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-6)]
    pub perturbation: f64,
    /// Skip the end-to-end model check
    #[arg(long)]
    pub layers_only: bool,
    /// Check a convolution whose backward pass is deliberately scaled by 1.1;
    /// the command is expected to fail
    #[arg(long)]
    pub negative_control: bool,
    /// Print reports as JSON lines
    #[arg(long)]
    pub json: bool,
}

fn report(rep: &CheckReport, tol: f64, json: bool) -> bool {
    let pass = rep.passes(tol);
    if json {
        let mut v = serde_json::to_value(rep).expect("report serialises");
        v["tolerance"] = tol.into();
        v["pass"] = pass.into();
        println!("{v}");
    } else {
        println!(
            "{:<40} max rel {:.3e}  tol {:.0e}  probes {:>5}  skipped {:>3}  {}",
            rep.name,
            rep.max_rel_error,
            tol,
            rep.checked(),
            rep.skipped(),
            if pass { "PASS" } else { "FAIL" }
        );
    }
    pass
}

pub fn run(args: GradcheckArgs) -> CliResult<()> {
    if args.size == 0 || args.size % 4 != 0 {
        return Err(CliError::usage(format!("--size {} must be a positive multiple of 4", args.size)));
    }
    if !(args.perturbation > 0.0) {
        return Err(CliError::usage("--perturbation must be > 0"));
    }
    let cfg = |seed| CheckConfig { seed, perturbation: args.perturbation, ..Default::default() };
    let mut failed = 0;
    let mut check = |op: &dyn Differentiable, seed: u64, tol: f64| -> CliResult<()> {
        let rep = gradient_check(op, &cfg(seed))?;
        if !report(&rep, tol, args.json) {
            failed += 1;
        }
        Ok(())
    };

    if args.negative_control {
        let op = Corrupted {
            inner: ConvOp::random(Shape::new(1, 2, 8, 8), 2, 3, 4, &mut Rng::new(0)),
            factor: 1.1,
        };
        check(&op, 0, LAYER_TOL)?;
    } else {
        for seed in 0..args.seeds {
            for op in layer_suite(seed) {
                check(op.as_ref(), seed, LAYER_TOL)?;
            }
        }
        if !args.layers_only {
            let model = full_model(args.width_mult, args.size, 0)?;
            check(&model, 0, MODEL_TOL)?;
        }
    }
    if failed > 0 {
        return Err(CliError::numeric(format!("{failed} gradient checks exceeded their tolerance")));
    }
    Ok(())
}
