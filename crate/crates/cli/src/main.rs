use std::io::Write;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("GGC_LOG")).init();
    let cli = match ggc_cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let out = ggc_cli::run(&cli);
    let _ = std::io::stdout().write_all(&out.stdout);
    let _ = std::io::stderr().write_all(&out.stderr);
    std::process::exit(out.code);
}
