use std::io::Write;

use anyhow::Context;

fn main() -> anyhow::Result<()> {
    let code = codec_lm::cli::dispatch(std::env::args_os());
    std::io::stdout().flush().context("flushing stdout")?;
    std::process::exit(code)
}
