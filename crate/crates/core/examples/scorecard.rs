//! End to end: synthetic two-party data, federated scorecard training,
//! host-only baseline and re-evaluation of the saved model.

use fl_lrbc::pipeline::{
    cmd_evaluate, cmd_gen_synth, cmd_train, EvaluateArgs, Mode, Overrides, RunConfig, RUN_TOML,
    TEST_IDS,
};
use fl_lrbc::synth::SynthSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    cmd_gen_synth(
        &SynthSpec {
            n_samples: 4000,
            ..SynthSpec::default()
        },
        dir.path(),
    )?;
    let base = RunConfig::load(&dir.path().join(RUN_TOML))?;

    let mut aucs = Vec::new();
    for mode in [Mode::Federated, Mode::HostOnly] {
        let mut config = base.clone();
        config.apply(&Overrides {
            mode: Some(mode),
            out: Some(dir.path().join(mode.to_string())),
            key_bits: Some(512),
            max_iter: Some(80),
            eta: Some(0.5),
            ..Overrides::default()
        })?;
        config.train.batch_size = 128;
        let run = cmd_train(&config)?;
        if mode == Mode::Federated {
            print!("{}", run.report.to_text(config.woe.iv_threshold));
        }
        aucs.push((mode, run.report.test.auc));
    }
    for (mode, auc) in &aucs {
        println!("{mode:<12} test AUC {auc:.4}");
    }

    let model_dir = dir.path().join("federated");
    let eval = cmd_evaluate(&EvaluateArgs {
        data: base.data.clone(),
        ids: Some(model_dir.join(TEST_IDS)),
        out: dir.path().join("eval"),
        name: "holdout".into(),
        model_dir,
    })?;
    println!(
        "re-evaluated holdout: {} rows, AUC {:.4}, KS {:.4}",
        eval.rows, eval.auc, eval.ks
    );
    Ok(())
}
