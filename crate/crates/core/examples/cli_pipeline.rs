//! Drive the command-line front end in-process on the bundled fixture.
//!
//! ```bash
//! cargo run -p molm --release --example cli_pipeline
//! ```

use molm::cli::run;

const MODEL: &str = "[model]
encoder_layers = 1
encoder_dim = 16
encoder_heads = 2
gaussian_kernels = 8
num_queries = 4
projector_blocks = 1
projector_dim = 16
projector_heads = 2
contrast_dim = 16
lm_layers = 1
lm_dim = 16
lm_heads = 2

[pretrain]
lm_steps = 40
encoder_steps = 40

[train]
max_steps = 30
warmup_steps = 5
peak_lr = 0.003
batch_size = 8

[eval]
batch_size = 10
k = 3
max_new = 40
";

fn main() -> std::io::Result<()> {
    let dir = std::env::temp_dir().join(format!("molm-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let config = dir.join("run.conf");
    std::fs::write(
        &config,
        format!(
            "seed = 7\nout = {out}\n\n[data]\nmolecules = {mol}\ninstructions = {out}/instructions.jsonl\n\n{MODEL}",
            out = dir.display(),
            mol = concat!(env!("CARGO_MANIFEST_DIR"), "/data/molecules.jsonl"),
        ),
    )?;
    let config = config.to_str().expect("utf-8 temp dir");
    for args in [["dataset", "build"], ["train", "stage1"], ["train", "stage2"], ["eval", "caption"], ["eval", "qa"]] {
        let code = run(["molm", args[0], args[1], "--config", config]);
        println!("molm {} {} -> exit {code}", args[0], args[1]);
        if code != 0 {
            std::process::exit(code.into());
        }
    }
    println!("{}", std::fs::read_to_string(dir.join("report.json"))?);
    std::fs::remove_dir_all(&dir)
}
